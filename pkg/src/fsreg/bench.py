"""Wall-time scaling and feature-spread benchmarks.

Two probes: (1) forward wall time of the sweep kernel versus a dense
attention block over a geometric grid of token counts, summarized as
fitted log-log slopes, with an exact-arithmetic self-calibration of the
slope fitter; (2) the maximum-mean-discrepancy between refined image and
point features as a function of nested attention depth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .embedding import attention_block, init_attention, mha
from .geometry import mmd_rbf
from .interaction import init_level, make_layout, sweep
from .synthgen import SceneSpec, gen_scene
from .tensor import Tensor

TOKEN_GRID = (256, 512, 1024, 2048, 4096)
TOKEN_SHAPES = {256: (16, 16), 512: (16, 32), 1024: (32, 32),
                2048: (32, 64), 4096: (64, 64)}


def fit_loglog_slope(ns, ts) -> float:
    """Least-squares slope of log(t) against log(n)."""
    ns = np.asarray(ns, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    if len(ns) != len(ts) or len(ns) < 2:
        raise ValueError("fit_loglog_slope: need two or more (n, t) pairs")
    if np.any(ns <= 0) or np.any(ts <= 0):
        raise ValueError("fit_loglog_slope: sizes and times must be positive")
    return float(np.polyfit(np.log(ns), np.log(ts), 1)[0])


def calibration_slopes() -> tuple:
    """Fit the slope estimator on exact linear and quadratic curves.

    Returns (linear, quadratic); these must come out at 1.0 and 2.0 or the
    measured-slope numbers below cannot be trusted.
    """
    ns = np.asarray(TOKEN_GRID, dtype=np.float64)
    return (fit_loglog_slope(ns, 3.7e-6 * ns),
            fit_loglog_slope(ns, 1.3e-9 * ns**2))


def median_time(fn, repeats: int = 3) -> float:
    """Median wall time of fn() over `repeats` runs after one warmup."""
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_scaling(seed: int = 0, repeats: int = 3, channels: int = 16,
                  heads: int = 1, n_points: int = 16, o: int = 4,
                  state_dim: int = 16, log=None):
    """Time one sweep pass and one self-attention pass per token count.

    Returns (rows, sweep_slope, attention_slope) where rows are
    (kernel, n_tokens, seconds) triples.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    unit = init_attention(rng, channels, heads).img_self
    unit.wo.data = rng.normal(0.0, channels**-0.5, (channels, channels))

    rows = []
    sweep_ts, attn_ts = [], []
    for n in TOKEN_GRID:
        h, w = TOKEN_SHAPES[n]
        layout = make_layout(h, w, o, n_points)
        lp = init_level(rng, channels, state_dim, (h // o) * (w // o))
        f_img = Tensor(rng.normal(size=(h, w, channels)))
        f_pt = Tensor(rng.normal(size=(n_points, channels)))
        x = Tensor(rng.normal(size=(n, channels)))

        with T.no_grad():
            t_sweep = median_time(lambda: sweep(f_img, f_pt, lp, layout), repeats)
            t_attn = median_time(lambda: mha(x, x, unit, heads), repeats)
        rows.append(("sweep", n, t_sweep))
        rows.append(("attention", n, t_attn))
        sweep_ts.append(t_sweep)
        attn_ts.append(t_attn)
        if log is not None:
            log(f"n={n}: sweep {t_sweep * 1e3:.2f} ms, attention {t_attn * 1e3:.2f} ms")

    return (rows, fit_loglog_slope(TOKEN_GRID, sweep_ts),
            fit_loglog_slope(TOKEN_GRID, attn_ts))


def mmd_depth_curve(seed: int = 0, max_depth: int = 6, channels: int = 16,
                    heads: int = 2):
    """Image/point feature MMD after k nested attention blocks, k = 1..max.

    The blocks use randomized output maps (a zero output map would make
    every block an identity at init and the curve flat).  The kernel
    bandwidth is re-fit per depth with the median-distance heuristic so
    each reading compares distributions at their own scale.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    spec = SceneSpec(point_count=32, grid_h=24, grid_w=32, channels=channels,
                     feature_noise=0.02)
    sample = gen_scene(spec, seed=seed)

    img = sample.image.reshape(-1, channels).astype(np.float64)
    img = img[rng.choice(len(img), size=96, replace=False)]
    pt = sample.point_feats.astype(np.float64)

    blocks = []
    for _ in range(max_depth):
        block = init_attention(rng, channels, heads)
        for unit in block.units().values():
            unit.wo.data = rng.normal(0.0, channels**-0.5, (channels, channels))
        blocks.append(block)

    curve = []
    fi, fp = Tensor(img), Tensor(pt)
    with T.no_grad():
        for depth in range(1, max_depth + 1):
            fi, fp = attention_block(fi, fp, blocks[depth - 1])
            both = np.concatenate([fi.data, fp.data], axis=0)
            sq = np.sum((both[:, None, :] - both[None, :, :]) ** 2, axis=2)
            bw = float(np.median(np.sqrt(sq[np.triu_indices(len(both), k=1)])))
            curve.append((depth, mmd_rbf(fi.data, fp.data, bandwidth=max(bw, 1e-9))))
    return curve


def is_non_monotone(values) -> bool:
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    return bool(np.any(diffs > 0) and np.any(diffs < 0))


@dataclass
class BenchReport:
    calibration_linear: float
    calibration_quadratic: float
    scaling_rows: list
    sweep_slope: float
    attention_slope: float
    mmd_curve: list
    mmd_non_monotone: bool
    mmd_argmin_depth: int
    files: list = field(default_factory=list)


def run_bench(seed: int = 0, out: str | None = None, repeats: int = 3,
              log=None) -> BenchReport:
    cal_lin, cal_quad = calibration_slopes()
    if log is not None:
        log(f"slope fitter calibration: linear {cal_lin:.4f}, "
            f"quadratic {cal_quad:.4f}")
    rows, s_sweep, s_attn = bench_scaling(seed=seed, repeats=repeats, log=log)
    curve = mmd_depth_curve(seed=seed)
    mmds = [m for _, m in curve]
    report = BenchReport(
        calibration_linear=cal_lin, calibration_quadratic=cal_quad,
        scaling_rows=rows, sweep_slope=s_sweep, attention_slope=s_attn,
        mmd_curve=curve, mmd_non_monotone=is_non_monotone(mmds),
        mmd_argmin_depth=curve[int(np.argmin(mmds))][0])
    if log is not None:
        log(f"fitted slopes: sweep {s_sweep:.3f}, attention {s_attn:.3f}")
        log("mmd curve: " + " ".join(f"{d}:{m:.4f}" for d, m in curve))

    if out is not None:
        import os

        os.makedirs(out, exist_ok=True)
        scaling_path = os.path.join(out, "bench_scaling.csv")
        with open(scaling_path, "w") as f:
            f.write("kernel,n_tokens,seconds\n")
            for kernel, n, secs in rows:
                f.write(f"{kernel},{n},{secs!r}\n")
        mmd_path = os.path.join(out, "bench_mmd.csv")
        with open(mmd_path, "w") as f:
            f.write("attention_depth,mmd\n")
            for depth, m in curve:
                f.write(f"{depth},{m!r}\n")
        summary_path = os.path.join(out, "bench_summary.txt")
        with open(summary_path, "w") as f:
            f.write(f"slope fitter calibration: linear {cal_lin:.6f} "
                    f"quadratic {cal_quad:.6f}\n")
            f.write(f"sweep log-log slope: {s_sweep:.4f}\n")
            f.write(f"attention log-log slope: {s_attn:.4f}\n")
            f.write(f"mmd non-monotone: {report.mmd_non_monotone}\n")
            f.write(f"mmd argmin depth: {report.mmd_argmin_depth}\n")
        report.files = [scaling_path, mmd_path, summary_path]
    return report
