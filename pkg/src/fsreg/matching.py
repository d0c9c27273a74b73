"""Hierarchical matching: multi-scale cosine score maps, global top-k patch
selection, and fine pixel-to-point refinement inside the selected regions.

Matching is a selection step, not a training path: everything here runs on
plain numpy arrays (use `.data` of refined feature tensors).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RowMeta:
    """Where each row of the unified score map lives: level and grid cell."""

    level: np.ndarray  # (M,) level index, 0 = finest coarse level
    ys: np.ndarray  # (M,) cell row within the level grid
    xs: np.ndarray  # (M,) cell col within the level grid


@dataclass
class CoarseMatch:
    row: int
    level: int
    y: int
    x: int
    point: int
    score: float


@dataclass
class FineMatch:
    py: int
    px: int
    point: int
    score: float


def make_row_meta(level_shapes: list[tuple[int, int]]) -> RowMeta:
    levels, ys, xs = [], [], []
    for li, (h, w) in enumerate(level_shapes):
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        levels.append(np.full(h * w, li))
        ys.append(yy.reshape(-1))
        xs.append(xx.reshape(-1))
    return RowMeta(
        level=np.concatenate(levels), ys=np.concatenate(ys), xs=np.concatenate(xs)
    )


def _normalize_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, a / safe, 0.0)


def cosine_scores(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity (M, N); zero-norm rows score 0 everywhere."""
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"cosine_scores: channel mismatch {a.shape} vs {b.shape}")
    return _normalize_rows(a) @ _normalize_rows(b).T


def score_map(unified_img: np.ndarray, f_pt_level: np.ndarray) -> np.ndarray:
    """One level's score map: all M unified image tokens vs that level's points."""
    return cosine_scores(unified_img, f_pt_level)


def aggregate_max(maps: list[np.ndarray]) -> np.ndarray:
    """Elementwise max over the per-level score maps."""
    out = maps[0]
    for m in maps[1:]:
        if m.shape != out.shape:
            raise ValueError(f"aggregate_max: shape mismatch {m.shape} vs {out.shape}")
        out = np.maximum(out, m)
    return out


def topk_matches(scores: np.ndarray, meta: RowMeta, k: int) -> list[CoarseMatch]:
    """Global top-k entries; ties broken toward lower row, then lower column."""
    m, n = scores.shape
    flat = scores.reshape(-1)
    rows = np.repeat(np.arange(m), n)
    cols = np.tile(np.arange(n), m)
    order = np.lexsort((cols, rows, -flat))  # primary: score desc, then row, col
    picked = order[: min(k, flat.size)]
    return [
        CoarseMatch(
            row=int(rows[i]),
            level=int(meta.level[rows[i]]),
            y=int(meta.ys[rows[i]]),
            x=int(meta.xs[rows[i]]),
            point=int(cols[i]),
            score=float(flat[i]),
        )
        for i in picked
    ]


def fine_refine(
    coarse: list[CoarseMatch],
    fine_img: np.ndarray,  # (Hf, Wf, Cf)
    fine_pt: np.ndarray,  # (N, Cf)
    points: np.ndarray,  # (N, 3)
    level_shapes: list[tuple[int, int]],
    radius: float,
    tau: float,
) -> list[FineMatch]:
    """Mutual-nearest cosine matching inside each coarse match's patch and
    point neighborhood; one match per pixel, best score wins on dedupe."""
    hf, wf, _ = fine_img.shape
    fine_flat = _normalize_rows(fine_img.reshape(hf * wf, -1))
    pt_norm = _normalize_rows(fine_pt)
    dists = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)

    best: dict[int, tuple[float, int]] = {}
    for cm in coarse:
        lh, lw = level_shapes[cm.level]
        sy, sx = hf // lh, wf // lw
        y0, x0 = cm.y * sy, cm.x * sx
        pix_rows = (
            np.arange(y0, y0 + sy)[:, None] * wf + np.arange(x0, x0 + sx)[None, :]
        ).reshape(-1)
        nbhd = np.flatnonzero(dists[cm.point] <= radius)
        if pix_rows.size == 0 or nbhd.size == 0:
            continue
        sim = fine_flat[pix_rows] @ pt_norm[nbhd].T  # (P, Q)
        ri = sim.argmax(axis=1)  # best point per pixel
        ci = sim.argmax(axis=0)  # best pixel per point
        for p in range(sim.shape[0]):
            j = ri[p]
            if ci[j] != p:
                continue
            s = sim[p, j]
            if s < tau:
                continue
            pixel = int(pix_rows[p])
            point = int(nbhd[j])
            if pixel not in best or s > best[pixel][0]:
                best[pixel] = (float(s), point)

    return [
        FineMatch(py=pix // wf, px=pix % wf, point=pt, score=s)
        for pix, (s, pt) in sorted(best.items())
    ]
