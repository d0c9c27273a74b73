"""Supervision: overlap-aware labels and the self-weighted circle loss.

Coarse labels mark a (patch, point-neighborhood) pair positive when both the
2D and 3D overlap ratios reach 0.30 and negative when both fall below 0.20;
positives carry lambda_p = min(overlap_2d, overlap_3d). Fine labels gate on
metric distances instead: positive under 3.75 cm and 8 px, negative beyond
10 cm or 12 px. Everything in between is ignored.

The loss per anchor i over feature distances d (computed on L2-normalized
features, so margins 0.1 / 1.4 refer to unit-sphere distances):

    L_i = (1/zeta) log[1 + sum_pos e^{beta_p (d - dp)} * sum_neg e^{beta_n (dn - d)}]

with detached weights beta_p = zeta * lambda_p * max(d - dp, 0) and
beta_n = zeta * lambda_n * max(dn - d, 0). Anchors lacking a positive or a
negative are skipped; the loss averages over the remainder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class CircleParams:
    zeta: float = 10.0
    delta_p: float = 0.1
    delta_n: float = 1.4


COARSE_POS_OVERLAP = 0.30
COARSE_NEG_OVERLAP = 0.20
FINE_POS_3D = 0.0375  # meters
FINE_POS_2D = 8.0  # pixels
FINE_NEG_3D = 0.10
FINE_NEG_2D = 12.0


def label_coarse(overlap_2d: np.ndarray, overlap_3d: np.ndarray):
    """(pos_mask, neg_mask, lambda_p) from per-pair overlap ratios."""
    o2, o3 = np.asarray(overlap_2d), np.asarray(overlap_3d)
    if o2.shape != o3.shape:
        raise ValueError(f"label_coarse: shape mismatch {o2.shape} vs {o3.shape}")
    pos = (o2 >= COARSE_POS_OVERLAP) & (o3 >= COARSE_POS_OVERLAP)
    neg = (o2 < COARSE_NEG_OVERLAP) & (o3 < COARSE_NEG_OVERLAP)
    lam = np.minimum(o2, o3)
    return pos, neg, lam


def label_fine(dist_3d: np.ndarray, dist_2d: np.ndarray):
    """(pos_mask, neg_mask) from 3D (meters) and 2D (pixels) distances."""
    d3, d2 = np.asarray(dist_3d), np.asarray(dist_2d)
    if d3.shape != d2.shape:
        raise ValueError(f"label_fine: shape mismatch {d3.shape} vs {d2.shape}")
    pos = (d3 < FINE_POS_3D) & (d2 < FINE_POS_2D)
    neg = (d3 > FINE_NEG_3D) | (d2 > FINE_NEG_2D)
    return pos, neg


def normalize_features(f: Tensor) -> Tensor:
    norms = T.sqrt(T.reduce_sum(f * f, axis=1, keepdims=True) + 1e-24)
    return f / norms


def pairwise_l2(a: Tensor, b: Tensor) -> Tensor:
    """Unit-sphere L2 distance matrix between row-normalized feature sets."""
    an, bn = normalize_features(a), normalize_features(b)
    sim = an @ T.transpose(bn)
    sq = T.relu(2.0 - 2.0 * sim)
    return T.sqrt(sq + 1e-24)


def circle_loss(dists: Tensor, pos_mask: np.ndarray, neg_mask: np.ndarray,
                lambda_p: np.ndarray | None = None,
                lambda_n: np.ndarray | float = 1.0,
                params: CircleParams | None = None,
                beta_p: np.ndarray | None = None,
                beta_n: np.ndarray | None = None) -> Tensor:
    """Anchor-averaged circle loss over a (n_anchor, n_other) distance tensor.

    beta_p / beta_n may be passed explicitly (they are detached either way);
    by default they are recomputed from the current distances.
    """
    cp = params or CircleParams()
    d = dists.data
    pos = np.asarray(pos_mask, dtype=bool)
    neg = np.asarray(neg_mask, dtype=bool)
    if pos.shape != d.shape or neg.shape != d.shape:
        raise ValueError(
            f"circle_loss: mask shapes {pos.shape}/{neg.shape} vs dists {d.shape}"
        )
    lam_p = np.ones_like(d) if lambda_p is None else np.asarray(lambda_p, dtype=np.float64)
    lam_n = np.broadcast_to(np.asarray(lambda_n, dtype=np.float64), d.shape)
    if beta_p is None:
        beta_p = cp.zeta * lam_p * np.maximum(d - cp.delta_p, 0.0)
    if beta_n is None:
        beta_n = cp.zeta * lam_n * np.maximum(cp.delta_n - d, 0.0)

    valid = pos.any(axis=1) & neg.any(axis=1)
    if not valid.any():
        return Tensor(0.0)
    rows = np.flatnonzero(valid)

    # exponent masked pre-exp so ignored pairs underflow to exactly zero
    pos_f, neg_f = pos.astype(np.float64), neg.astype(np.float64)
    e_pos = T.exp((dists - cp.delta_p) * Tensor(beta_p * pos_f) - Tensor(1e3 * (1.0 - pos_f)))
    e_neg = T.exp((cp.delta_n - dists) * Tensor(beta_n * neg_f) - Tensor(1e3 * (1.0 - neg_f)))
    pos_sum = T.reduce_sum(e_pos, axis=1)
    neg_sum = T.reduce_sum(e_neg, axis=1)
    per_anchor = T.log(1.0 + pos_sum * neg_sum) * (1.0 / cp.zeta)
    return T.reduce_mean(T.index_rows(per_anchor, rows))


def circle_loss_symmetric(feats_a: Tensor, feats_b: Tensor, pos_mask, neg_mask,
                          lambda_p=None, params: CircleParams | None = None) -> Tensor:
    """Average of the a-anchored and b-anchored circle losses on one pairing."""
    d = pairwise_l2(feats_a, feats_b)
    la = circle_loss(d, pos_mask, neg_mask, lambda_p, params=params)
    pos_t = np.asarray(pos_mask).T
    neg_t = np.asarray(neg_mask).T
    lam_t = None if lambda_p is None else np.asarray(lambda_p).T
    lb = circle_loss(T.transpose(d), pos_t, neg_t, lam_t, params=params)
    return (la + lb) * 0.5


def total_loss(l_coarse: Tensor, l_fine: Tensor, l_r: Tensor | float,
               xi1: float = 1.0, xi2: float = 1.0) -> Tensor:
    return (l_coarse + l_fine) * xi1 + T.as_tensor(l_r) * xi2
