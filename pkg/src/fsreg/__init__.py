"""Image-to-point-cloud registration with focus/sweep state-space interaction
and a learned per-scale interaction depth, on a self-contained autodiff core."""

__version__ = "0.1.0"
