"""Focus/sweep state-space interaction over an image pyramid.

Focus recalibrates the image token stream globally: modulation vectors pooled
from the point features gate a selective scan of the image tokens,

    F' = F + x2 * scan(x1 * F + y),        x1 = 1 + dx1, x2 = 1 + dx2.

Sweep is the cross-modal pass: the image is split into t = h*w/o^2 tiles of
o^2 tokens, the full point stream is interleaved after every tile, the hybrid
stream of length h*w + t*N is scanned, and the halves are separated again --
image tokens reorganized back onto the grid, the t updated point-stream
instances aggregated by a softmax-weighted sum. Sweep returns raw scan
contributions; the MLayer applies the residual adds and threads the scan
hidden state through its iterations so later passes start from the earlier
context (carry is per pyramid level and never crosses levels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .ssm import ScanState, SsmParams, init_ssm, selective_scan
from .tensor import Tensor

ORDERINGS = ("raster", "reverse", "column")


@dataclass
class SweepLayout:
    """Token layout shared by focus and sweep at one pyramid level."""

    h: int
    w: int
    o: int
    n_points: int
    ordering: str
    t: int
    perm: np.ndarray  # stream position -> row-major token index, (h*w,)
    inv_perm: np.ndarray  # row-major token index -> stream position
    hybrid_idx: np.ndarray  # hybrid position -> row in [image tokens; points]
    img_positions: np.ndarray  # hybrid positions holding image tokens, stream order
    pt_positions: np.ndarray  # hybrid positions of the t point blocks, (t*N,)

    @property
    def hybrid_len(self) -> int:
        return self.h * self.w + self.t * self.n_points


def make_layout(h: int, w: int, o: int, n_points: int, ordering: str = "raster") -> SweepLayout:
    if ordering not in ORDERINGS:
        raise ValueError(f"unknown ordering {ordering!r}; choose from {ORDERINGS}")
    if h % o or w % o:
        raise T.ShapeError(f"sweep layout: window {o} must divide grid {h}x{w}")
    tr, tc = h // o, w // o
    t = tr * tc
    idx = np.arange(h * w).reshape(h, w)
    blocks = idx.reshape(tr, o, tc, o)
    if ordering == "raster":
        # tiles row-major, tokens within a tile row-major
        perm = blocks.transpose(0, 2, 1, 3).reshape(-1)
    elif ordering == "reverse":
        perm = blocks.transpose(0, 2, 1, 3).reshape(-1)[::-1].copy()
    else:  # column
        # tiles column by column, tokens within a tile column-major
        perm = blocks.transpose(2, 0, 3, 1).reshape(-1)
    inv_perm = np.argsort(perm)

    block = o * o + n_points
    hybrid_idx = np.empty(h * w + t * n_points, dtype=np.intp)
    img_positions = np.empty(h * w, dtype=np.intp)
    pt_positions = np.empty(t * n_points, dtype=np.intp)
    for u in range(t):
        base = u * block
        img_positions[u * o * o : (u + 1) * o * o] = np.arange(base, base + o * o)
        pt_positions[u * n_points : (u + 1) * n_points] = np.arange(
            base + o * o, base + block
        )
        hybrid_idx[base : base + o * o] = perm[u * o * o : (u + 1) * o * o]
        hybrid_idx[base + o * o : base + block] = h * w + np.arange(n_points)
    return SweepLayout(
        h=h, w=w, o=o, n_points=n_points, ordering=ordering, t=t,
        perm=perm, inv_perm=inv_perm, hybrid_idx=hybrid_idx,
        img_positions=img_positions, pt_positions=pt_positions,
    )


# -- parameters ----------------------------------------------------------------


@dataclass
class ModulationParams:
    w1: Tensor  # (C, hidden)
    b1: Tensor
    w2: Tensor  # (hidden, 3C)
    b2: Tensor

    def tensors(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class LevelParams:
    focus_ssm: SsmParams
    sweep_ssm: SsmParams
    modulation: ModulationParams
    lambda_raw: Tensor  # (t,) aggregation logits

    def tensors(self) -> dict:
        out = {f"focus.{k}": v for k, v in self.focus_ssm.tensors().items()}
        out.update({f"sweep.{k}": v for k, v in self.sweep_ssm.tensors().items()})
        out.update({f"mod.{k}": v for k, v in self.modulation.tensors().items()})
        out["lambda_raw"] = self.lambda_raw
        return out


def init_modulation(rng: np.random.Generator, channels: int, hidden: int) -> ModulationParams:
    # final layer zero so x1 = x2 = 1, y = 0 at init
    return ModulationParams(
        w1=Tensor(rng.normal(0.0, channels**-0.5, (channels, hidden)), requires_grad=True),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=Tensor(np.zeros((hidden, 3 * channels)), requires_grad=True),
        b2=Tensor(np.zeros(3 * channels), requires_grad=True),
    )


def init_level(rng, channels: int, state_dim: int, t: int, hidden: int = 64) -> LevelParams:
    return LevelParams(
        focus_ssm=init_ssm(rng, channels, state_dim),
        sweep_ssm=init_ssm(rng, channels, state_dim),
        modulation=init_modulation(rng, channels, hidden),
        lambda_raw=Tensor(np.zeros(t), requires_grad=True),
    )


# -- pyramid ----------------------------------------------------------------------


@dataclass
class PyramidParams:
    mixers: list  # [w (C,C)] per level, coarse-to-fine order a, b, c

    def tensors(self) -> dict:
        return {f"mix{i}.w": w for i, w in enumerate(self.mixers)}


def init_pyramid(rng: np.random.Generator, channels: int, levels: int = 3) -> PyramidParams:
    # near-identity channel mixing keeps the fresh pyramid well-conditioned.
    # deliberately bias-free: the downstream losses compare features by
    # cosine, and a learnable shared offset per level is a degenerate way to
    # raise every similarity at once (it stalls training at a collapsed
    # solution long before the maps themselves align).
    return PyramidParams([
        Tensor(np.eye(channels) + rng.normal(0.0, 0.02, (channels, channels)),
               requires_grad=True)
        for _ in range(levels)
    ])


def avg_pool2(f: Tensor) -> Tensor:
    h, w, c = f.shape
    if h % 2 or w % 2:
        raise T.ShapeError(f"avg_pool2: grid {h}x{w} not divisible by 2")
    return T.reduce_mean(T.reshape(f, (h // 2, 2, w // 2, 2, c)), axis=(1, 3))


def _mix(f: Tensor, w: Tensor) -> Tensor:
    h, wd, c = f.shape
    return T.reshape(T.reshape(f, (h * wd, c)) @ w, (h, wd, c))


def build_pyramid(f_img: Tensor, params: PyramidParams) -> list[Tensor]:
    """Three-level feature pyramid: mix, then successive 2x mean-pool + mix."""
    levels = [_mix(f_img, params.mixers[0])]
    for mixer in params.mixers[1:]:
        levels.append(_mix(avg_pool2(levels[-1]), mixer))
    return levels


# -- focus -------------------------------------------------------------------------


def derive_modulation(f_pt: Tensor, mp: ModulationParams):
    """Mean-pool the point features, run the 2-layer MLP, split into (x1, y, x2)."""
    c = f_pt.shape[1]
    pooled = T.reduce_mean(f_pt, axis=0)
    hidden = T.relu(pooled @ mp.w1 + mp.b1)
    out = hidden @ mp.w2 + mp.b2
    dx1, y, dx2 = out[:c], out[c : 2 * c], out[2 * c :]
    return 1.0 + dx1, y, 1.0 + dx2


def focus(f_img: Tensor, f_pt: Tensor, lp: LevelParams, layout: SweepLayout,
          h0: ScanState | None = None):
    """Point-conditioned global recalibration of the image tokens."""
    h, w, c = f_img.shape
    x1, y_shift, x2 = derive_modulation(f_pt, lp.modulation)
    seq = T.index_rows(T.reshape(f_img, (h * w, c)), layout.perm)
    z = seq * x1 + y_shift
    ys, h_last = selective_scan(z, lp.focus_ssm, h0)
    out_seq = seq + x2 * ys
    out = T.reshape(T.index_rows(out_seq, layout.inv_perm), (h, w, c))
    return out, h_last


# -- sweep sub-operations -------------------------------------------------------------


def sweep_split(f_img: Tensor, layout: SweepLayout) -> list[Tensor]:
    """Cut the image into t streams of o^2 tokens following the layout order."""
    h, w, c = f_img.shape
    seq = T.index_rows(T.reshape(f_img, (h * w, c)), layout.perm)
    oo = layout.o * layout.o
    return [seq[u * oo : (u + 1) * oo] for u in range(layout.t)]


def interleave_hybrid(streams: list[Tensor], f_pt: Tensor, layout: SweepLayout) -> Tensor:
    """[S_0, P, S_1, P, ..., S_{t-1}, P] -> (h*w + t*N, C)."""
    if len(streams) != layout.t:
        raise T.ShapeError(f"interleave: expected {layout.t} streams, got {len(streams)}")
    parts = []
    for s in streams:
        parts.append(s)
        parts.append(f_pt)
    return T.concat(parts, axis=0)


def separate_hybrid(f_hybrid: Tensor, layout: SweepLayout):
    """Inverse of interleave: (streams list, point instances list)."""
    oo = layout.o * layout.o
    block = oo + layout.n_points
    streams, instances = [], []
    for u in range(layout.t):
        base = u * block
        streams.append(f_hybrid[base : base + oo])
        instances.append(f_hybrid[base + oo : base + block])
    return streams, instances


def reorganize(streams: list[Tensor], layout: SweepLayout) -> Tensor:
    """Place stream tokens back onto the (h, w) grid, inverting the layout."""
    seq = T.concat(streams, axis=0)
    flat = T.index_rows(seq, layout.inv_perm)
    return T.reshape(flat, (layout.h, layout.w, seq.shape[1]))


def aggregate_points(instances, lambda_raw: Tensor) -> Tensor:
    """Softmax(lambda)-weighted sum of the t updated point-stream instances."""
    if isinstance(instances, (list, tuple)):
        instances = T.concat([T.reshape(s, (1,) + tuple(s.shape)) for s in instances], axis=0)
    t = instances.shape[0]
    w = T.reshape(T.softmax(lambda_raw, axis=0), (t, 1, 1))
    return T.reduce_sum(instances * w, axis=0)


def sweep(f_img: Tensor, f_pt: Tensor, lp: LevelParams, layout: SweepLayout,
          h0: ScanState | None = None):
    """One cross-modal sweep; returns raw (image, point) scan contributions.

    Equals the explicit composition split -> interleave -> scan -> separate ->
    reorganize/aggregate; implemented with a single gather for speed.
    """
    h, w, c = f_img.shape
    base = T.concat([T.reshape(f_img, (h * w, c)), f_pt], axis=0)
    hybrid = T.index_rows(base, layout.hybrid_idx)
    ys, h_last = selective_scan(hybrid, lp.sweep_ssm, h0)
    img_seq = T.index_rows(ys, layout.img_positions)
    d_img = T.reshape(T.index_rows(img_seq, layout.inv_perm), (h, w, c))
    inst = T.reshape(T.index_rows(ys, layout.pt_positions), (layout.t, layout.n_points, c))
    d_pt = aggregate_points(inst, lp.lambda_raw)
    return d_img, d_pt, h_last


# -- MLayer ------------------------------------------------------------------------------


def mlayer_stack(f_img: Tensor, f_pt: Tensor, depth: int, lp: LevelParams,
                 layout: SweepLayout, carry: ScanState | None = None):
    """depth iterations of (focus; sweep) with residuals and hidden-state carry.

    The scan state threads focus -> sweep -> next iteration's focus; depth 0
    returns the inputs and carry untouched.
    """
    if depth < 0:
        raise ValueError(f"mlayer_stack: depth must be >= 0, got {depth}")
    for _ in range(depth):
        f_img, h = focus(f_img, f_pt, lp, layout, carry)
        d_img, d_pt, carry = sweep(f_img, f_pt, lp, layout, h)
        f_img = f_img + d_img
        f_pt = f_pt + d_pt
    return f_img, f_pt, carry
