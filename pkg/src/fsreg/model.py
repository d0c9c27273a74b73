"""Full registration model: feature projections, positional encoding, one
self/cross-attention block, the image pyramid, per-scale depth-controlled
Focus-Sweep stacks, and the coarse/fine matching heads.

Forward flow: project both branches, add Fourier positions, pool the image to
the coarsest grid, run attention, build the pyramid, choose a per-scale
interaction depth (policy-sampled, greedy, or fixed), run each scale's MLayer
stack, then score unified image tokens against each scale's point features.
Fine features come from dedicated linear heads over the full-resolution image
tokens (augmented with upsampled refined scale-a tokens) and the scale-a
refined point tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .embedding import (
    AttentionParams,
    FourierEmbedding,
    attention_block,
    init_attention,
    normalized_grid,
    positional_padded,
)
from .interaction import (
    LevelParams,
    PyramidParams,
    SweepLayout,
    avg_pool2,
    build_pyramid,
    init_level,
    init_pyramid,
    make_layout,
    mlayer_stack,
)
from .matching import (
    CoarseMatch,
    FineMatch,
    RowMeta,
    aggregate_max,
    fine_refine,
    make_row_meta,
    score_map,
    topk_matches,
)
from .objective import normalize_features
from .policy import (
    PolicyDecision,
    PolicyParams,
    build_state,
    init_policy,
    policy_forward,
    select_action,
)
from .tensor import Tensor

# Positional fields ride in the same channels as content features, so their
# amplitude sets the content-to-carrier ratio everywhere downstream.  Kept
# well below the unit-scale content features: 4x4 pooling already dilutes a
# cell's content 16-fold, and full-strength sin/cos carriers would swamp it
# (they are common-mode across samples, which stalls the metric losses).
# Location remains linearly recoverable; maps can amplify it where needed.
POS_FIELD_SCALE = 0.1


@dataclass
class LinearHead:
    """Bias-free channel map.

    All downstream comparisons are cosines, and a learnable bias is a
    degenerate shortcut there: one shared offset per branch raises every
    similarity at once, so training collapses onto it instead of aligning
    the maps.  Keeping the heads pure-linear removes that route.
    """

    w: Tensor

    def tensors(self) -> dict:
        return {"w": self.w}

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w


@dataclass
class ModelParams:
    img_proj: LinearHead
    pt_proj: LinearHead
    attn: AttentionParams
    pyramid: PyramidParams
    levels: list  # [LevelParams] x 3
    fine_img: LinearHead
    fine_pt: LinearHead
    policy: PolicyParams

    def tensors(self) -> dict:
        """Flat name -> Tensor registry covering every learnable parameter."""
        out = {}
        for prefix, head in (("img_proj", self.img_proj), ("pt_proj", self.pt_proj),
                             ("fine_img", self.fine_img), ("fine_pt", self.fine_pt)):
            for k, v in head.tensors().items():
                out[f"{prefix}.{k}"] = v
        for uname, unit in self.attn.units().items():
            for k, v in unit.tensors().items():
                out[f"attn.{uname}.{k}"] = v
        for k, v in self.pyramid.tensors().items():
            out[f"pyramid.{k}"] = v
        for i, lp in enumerate(self.levels):
            for k, v in lp.tensors().items():
                out[f"level{i}.{k}"] = v
        for k, v in self.policy.tensors().items():
            out[f"policy.{k}"] = v
        return out


def _linear(rng: np.random.Generator, c: int) -> LinearHead:
    return LinearHead(w=Tensor(rng.normal(0.0, c**-0.5, (c, c)), requires_grad=True))


def init_model(cfg: RunConfig, rng: np.random.Generator) -> ModelParams:
    c = cfg.channels
    levels = []
    for (lh, lw), o in zip(cfg.level_shapes(), cfg.windows()):
        t = (lh * lw) // (o * o)
        levels.append(init_level(rng, c, cfg.state_dim, t))
    return ModelParams(
        img_proj=_linear(rng, c),
        pt_proj=_linear(rng, c),
        attn=init_attention(rng, c, cfg.heads),
        pyramid=init_pyramid(rng, c),
        levels=levels,
        fine_img=_linear(rng, c),
        fine_pt=_linear(rng, c),
        policy=init_policy(rng, 4 * c, hidden=cfg.policy_hidden,
                           n_actions=cfg.n_actions),
    )


def normalize_point_coords(points: np.ndarray) -> np.ndarray:
    """Per-axis min/max normalization into [-1, 1] for positional encoding."""
    pts = np.asarray(points, dtype=np.float64)
    mn, mx = pts.min(axis=0), pts.max(axis=0)
    span = np.maximum(mx - mn, 1e-9)
    return 2.0 * (pts - mn) / span - 1.0


def upsample_index(fine_h: int, fine_w: int, lh: int, lw: int) -> np.ndarray:
    """Row indices mapping each fine pixel to its covering coarse cell."""
    sy, sx = fine_h // lh, fine_w // lw
    rows = np.arange(fine_h)[:, None] // sy
    cols = np.arange(fine_w)[None, :] // sx
    return (rows * lw + cols).reshape(-1)


@dataclass
class ModelContext:
    """Shape-dependent constants reused across forward passes."""
    cfg: RunConfig
    layouts: list
    row_meta: RowMeta
    pos_img: np.ndarray  # (Hf*Wf, C)
    ups_idx: np.ndarray  # (Hf*Wf,)
    fourier3d: FourierEmbedding


def make_context(cfg: RunConfig) -> ModelContext:
    shapes = cfg.level_shapes()
    layouts = [make_layout(lh, lw, o, cfg.n_points, cfg.ordering)
               for (lh, lw), o in zip(shapes, cfg.windows())]
    emb2 = FourierEmbedding(levels=cfg.emb_levels, input_dim=2)
    emb3 = FourierEmbedding(levels=cfg.emb_levels, input_dim=3)
    grid = normalized_grid(cfg.grid_h, cfg.grid_w)
    return ModelContext(
        cfg=cfg,
        layouts=layouts,
        row_meta=make_row_meta(shapes),
        pos_img=POS_FIELD_SCALE * positional_padded(grid, emb2, cfg.channels),
        ups_idx=upsample_index(cfg.grid_h, cfg.grid_w, *shapes[0]),
        fourier3d=emb3,
    )


@dataclass
class ForwardResult:
    level_img: list       # refined image tokens per level, (lh*lw, C) Tensors
    level_pt: list        # refined point tokens per level, (N, C) Tensors
    unified: Tensor       # (sum lh*lw, C) concatenated image tokens
    fine_img: Tensor      # (Hf*Wf, C)
    fine_pt: Tensor       # (N, C)
    decisions: list       # [PolicyDecision] x 3
    coarse: list = field(default_factory=list)   # [CoarseMatch]
    fine: list = field(default_factory=list)     # [FineMatch]

    @property
    def depths(self) -> tuple:
        return tuple(d.action for d in self.decisions)


def forward(params: ModelParams, ctx: ModelContext, sample, *,
            sampled: bool, rng: np.random.Generator | None = None,
            depth_override: tuple | None = None,
            with_matches: bool = True) -> ForwardResult:
    """One full pass over a sample.

    `sampled` picks stochastic (training) vs greedy (inference) depth
    selection; `depth_override` bypasses the policy entirely (fixed-depth
    ablations). Matching is numpy-only and sits outside the gradient tape.
    """
    cfg = ctx.cfg
    c = cfg.channels
    h, w = sample.grid_shape
    shapes = cfg.level_shapes()

    img_fine = params.img_proj(Tensor(sample.image.reshape(-1, c))) + Tensor(ctx.pos_img)
    pos_pt = POS_FIELD_SCALE * positional_padded(
        normalize_point_coords(sample.points), ctx.fourier3d, c)
    pt_base = params.pt_proj(Tensor(sample.point_feats)) + Tensor(pos_pt)

    a0 = avg_pool2(avg_pool2(T.reshape(img_fine, (h, w, c))))
    ha, wa = shapes[0]
    img_a, pt_att = attention_block(T.reshape(a0, (ha * wa, c)), pt_base, params.attn)
    pyramid = build_pyramid(T.reshape(img_a, (ha, wa, c)), params.pyramid)

    if cfg.fixed_depth >= 0 and depth_override is None:
        depth_override = (cfg.fixed_depth,) * len(shapes)

    decisions, level_img, level_pt = [], [], []
    for k, (grid_feats, layout) in enumerate(zip(pyramid, ctx.layouts)):
        if depth_override is not None:
            dec = PolicyDecision(scale=k, action=int(depth_override[k]),
                                 log_prob_value=0.0, sampled=False)
        else:
            state = build_state(grid_feats, pt_att)
            probs = policy_forward(state, params.policy)
            dec = select_action(probs, sampled, rng, scale=k)
        fi, fp, _ = mlayer_stack(grid_feats, pt_att, dec.action,
                                 params.levels[k], layout)
        lh, lw = shapes[k]
        decisions.append(dec)
        level_img.append(T.reshape(fi, (lh * lw, c)))
        level_pt.append(fp)

    unified = T.concat(level_img, axis=0)
    # unit-normalize the coarse context before spreading it over each cell's
    # pixels: the losses are cosine-based, so refined token norms are free to
    # grow, and unnormalized context would drown the per-pixel signal
    ups = T.index_rows(normalize_features(level_img[0]), ctx.ups_idx)
    fine_img = params.fine_img(img_fine + ups)
    fine_pt = params.fine_pt(level_pt[0])

    result = ForwardResult(level_img=level_img, level_pt=level_pt,
                           unified=unified, fine_img=fine_img, fine_pt=fine_pt,
                           decisions=decisions)
    if with_matches:
        maps = [score_map(unified.data, lp.data) for lp in level_pt]
        agg = aggregate_max(maps)
        result.coarse = topk_matches(agg, ctx.row_meta, cfg.top_k)
        result.fine = fine_refine(result.coarse, fine_img.data.reshape(h, w, c),
                                  fine_pt.data, sample.points, shapes,
                                  cfg.radius, cfg.tau)
    return result
