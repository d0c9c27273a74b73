"""Deterministic synthetic scenes for image-to-point-cloud registration.

Each scene is a random camera pose observing N points sampled in its frustum.
Every point carries a unit-norm latent code; image pixels copy the code of
the nearest projected point (within 1 px), other pixels get small independent
noise codes. The hard-repetitive mode makes several spatially disjoint point
groups share one code, so appearance alone cannot disambiguate matches —
context has to.

Counter-based (Philox) randomness keyed by an integer seed makes every sample
reproducible in isolation, and file regeneration byte-identical.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import back_project, project

MAGIC = b"FSIP-SYN1"
FOCAL = 100.0
BACKGROUND_DEPTH = 10.0  # far-plane depth assigned to pixels with no point
MIN_PIXEL_SEPARATION = 2.0  # projected points keep this many px apart
MODES = ("easy", "hard-repetitive")


@dataclass(frozen=True)
class SceneSpec:
    point_count: int = 128
    grid_h: int = 96
    grid_w: int = 128
    channels: int = 32
    max_rotation: float = math.radians(30.0)
    max_translation: float = 0.5
    feature_noise: float = 0.01
    mode: str = "easy"
    repetition_groups: int = 4
    depth_near: float = 1.0
    depth_far: float = 3.0
    bg_scale: float = 0.05  # norm of background noise codes

    def validate(self) -> None:
        if self.point_count < 6:
            raise ValueError(f"SceneSpec: point_count must be >= 6, got {self.point_count}")
        if self.grid_h % 4 or self.grid_w % 4:
            raise ValueError(
                f"SceneSpec: grid must be divisible by 4, got {self.grid_h}x{self.grid_w}")
        if self.feature_noise < 0.0:
            raise ValueError(f"SceneSpec: feature_noise must be >= 0, got {self.feature_noise}")
        if self.mode not in MODES:
            raise ValueError(f"SceneSpec: mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "hard-repetitive" and not 2 <= self.repetition_groups <= self.point_count:
            raise ValueError(
                f"SceneSpec: repetition_groups must be in [2, N], got {self.repetition_groups}")
        if not 0.0 < self.depth_near < self.depth_far:
            raise ValueError("SceneSpec: need 0 < depth_near < depth_far")


@dataclass
class SyntheticSample:
    image: np.ndarray        # (h, w, C)
    points: np.ndarray       # (N, 3) world coordinates, meters
    point_feats: np.ndarray  # (N, C) latent codes
    K: np.ndarray            # (3, 3)
    R: np.ndarray            # (3, 3) ground-truth rotation
    t: np.ndarray            # (3,) ground-truth translation
    corr: np.ndarray         # (M, 2) uint32: pixel row-major index, point index
    depth: np.ndarray        # (h, w)
    _corr_lookup: dict | None = field(default=None, repr=False)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]

    def gt_points_for_pixels(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """(n,) pixel coords -> (n, 3) ground-truth 3-D locations.

        Pixels in the correspondence table return their point exactly; the
        rest back-project the stored depth (background hits the far plane).
        """
        if self._corr_lookup is None:
            self._corr_lookup = {int(p): int(j) for p, j in self.corr}
        h, w = self.grid_shape
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.empty((len(rows), 3))
        for i, (r, c) in enumerate(zip(rows, cols)):
            j = self._corr_lookup.get(int(r * w + c))
            if j is not None:
                out[i] = self.points[j]
            else:
                out[i] = back_project(
                    np.array([float(c), float(r)]), np.array(self.depth[r, c]),
                    self.K, self.R, self.t)
        return out


def _rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    kx = np.array([[0.0, -axis[2], axis[1]],
                   [axis[2], 0.0, -axis[0]],
                   [-axis[1], axis[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)


def _unit_rows(rng: np.random.Generator, n: int, c: int) -> np.ndarray:
    v = rng.normal(size=(n, c))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_pixels(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """N pixel positions, pairwise at least MIN_PIXEL_SEPARATION apart."""
    kept: list[np.ndarray] = []
    for _ in range(200):
        cand = rng.uniform([0.0, 0.0], [spec.grid_w - 1.0, spec.grid_h - 1.0],
                           size=(spec.point_count, 2))
        for uv in cand:
            if len(kept) == spec.point_count:
                break
            if all(np.linalg.norm(uv - k) >= MIN_PIXEL_SEPARATION for k in kept):
                kept.append(uv)
        if len(kept) == spec.point_count:
            return np.stack(kept)
    raise ValueError(
        f"gen_scene: cannot place {spec.point_count} points "
        f"{MIN_PIXEL_SEPARATION} px apart in a {spec.grid_h}x{spec.grid_w} frustum")


def default_intrinsics(spec: SceneSpec) -> np.ndarray:
    return np.array([[FOCAL, 0.0, (spec.grid_w - 1) / 2.0],
                     [0.0, FOCAL, (spec.grid_h - 1) / 2.0],
                     [0.0, 0.0, 1.0]])


def gen_scene(spec: SceneSpec, seed: int) -> SyntheticSample:
    spec.validate()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    h, w, C, N = spec.grid_h, spec.grid_w, spec.channels, spec.point_count

    K = default_intrinsics(spec)
    R = _rotation(rng, spec.max_rotation)
    t = rng.uniform(-spec.max_translation, spec.max_translation, 3)

    pix = _sample_pixels(rng, spec)  # (N, 2) as (u, v)
    depths = rng.uniform(spec.depth_near, spec.depth_far, N)
    points = back_project(pix, depths, K, R, t)

    if spec.mode == "easy":
        codes = _unit_rows(rng, N, C)
    else:
        group_codes = _unit_rows(rng, spec.repetition_groups, C)
        order = np.argsort(pix[:, 0], kind="stable")  # disjoint vertical bands
        group_of = np.empty(N, dtype=np.int64)
        for g, chunk in enumerate(np.array_split(order, spec.repetition_groups)):
            group_of[chunk] = g
        codes = group_codes[group_of]

    # pixel -> nearest projected point (min separation 2 px guarantees that
    # at most one point lies within 1 px of any pixel center)
    grid_u, grid_v = np.meshgrid(np.arange(w, dtype=np.float64),
                                 np.arange(h, dtype=np.float64))
    centers = np.stack([grid_u.ravel(), grid_v.ravel()], axis=1)  # (h*w, 2)
    d2 = ((centers[:, None, :] - pix[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    nearest_dist = np.sqrt(d2[np.arange(h * w), nearest])

    bg_codes = spec.bg_scale * _unit_rows(rng, h * w, C)
    flat = np.where((nearest_dist <= 1.0)[:, None], codes[nearest], bg_codes)
    if spec.feature_noise > 0.0:
        flat = flat + spec.feature_noise * rng.normal(size=(h * w, C))
    image = flat.reshape(h, w, C)

    corr_mask = nearest_dist <= 0.499  # strict margin under the 0.5 px contract
    corr = np.stack([np.flatnonzero(corr_mask).astype(np.uint32),
                     nearest[corr_mask].astype(np.uint32)], axis=1)

    depth = np.full(h * w, BACKGROUND_DEPTH)
    fg1 = nearest_dist <= 1.0
    depth[fg1] = depths[nearest[fg1]]

    return SyntheticSample(image=image, points=points, point_feats=codes,
                           K=K, R=R, t=t, corr=corr.reshape(-1, 2),
                           depth=depth.reshape(h, w))


def gt_overlap(sample: SyntheticSample, level_shapes: list[tuple[int, int]],
               radius: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-level (2D, 3D) overlap ratios, each (cells, N).

    For patch i and the radius-`radius` neighborhood of point j:
    2D = fraction of the patch's ground-truth-labeled pixels whose point lies
    in the neighborhood (0 when the patch has none); 3D = fraction of
    neighborhood points whose projection falls inside the patch.
    """
    h, w = sample.grid_shape
    N = len(sample.points)
    nb = (np.linalg.norm(sample.points[:, None] - sample.points[None, :], axis=2)
          <= radius)  # (N, N), includes self
    nb_size = nb.sum(axis=1)

    proj = project(sample.points, sample.K, sample.R, sample.t)
    pr = np.clip(np.rint(proj[:, 1]).astype(np.int64), 0, h - 1)
    pc = np.clip(np.rint(proj[:, 0]).astype(np.int64), 0, w - 1)

    fg_pix = sample.corr[:, 0].astype(np.int64)
    fg_pt = sample.corr[:, 1].astype(np.int64)
    fg_r, fg_c = fg_pix // w, fg_pix % w

    out = []
    for lh, lw in level_shapes:
        sy, sx = h // lh, w // lw
        cells = lh * lw
        point_cell = (pr // sy) * lw + (pc // sx)
        cell_onehot = np.zeros((N, cells))
        cell_onehot[np.arange(N), point_cell] = 1.0
        o3d = (nb @ cell_onehot).T / np.maximum(nb_size, 1)[None, :]

        pix_cell = (fg_r // sy) * lw + (fg_c // sx)
        pix_onehot = np.zeros((len(fg_pix), cells))
        if len(fg_pix):
            pix_onehot[np.arange(len(fg_pix)), pix_cell] = 1.0
        counts = (nb[:, fg_pt] @ pix_onehot).T  # (cells, N)
        denom = np.maximum(pix_onehot.sum(axis=0), 1.0)[:, None]
        o2d = counts / denom
        out.append((o2d, o3d))
    return out


def write_sample(sample: SyntheticSample, path: Path) -> None:
    h, w, C = sample.image.shape
    N = len(sample.points)
    parts = [
        MAGIC,
        struct.pack("<4I", h, w, C, N),
        sample.K.astype("<f4").tobytes(),
        sample.R.astype("<f4").tobytes(),
        sample.t.astype("<f4").tobytes(),
        sample.image.astype("<f4").tobytes(),
        sample.points.astype("<f4").tobytes(),
        sample.point_feats.astype("<f4").tobytes(),
        struct.pack("<I", len(sample.corr)),
        sample.corr.astype("<u4").tobytes(),
        sample.depth.astype("<f4").tobytes(),
    ]
    path = Path(path)
    try:
        path.write_bytes(b"".join(parts))
    except OSError as e:
        raise OSError(f"failed writing sample to {path}: {e}") from e


def load_sample(path: Path) -> SyntheticSample:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise OSError(f"failed reading sample from {path}: {e}") from e
    if buf[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a synthetic-sample file (bad magic)")
    off = len(MAGIC)

    def take(fmt_or_count, dtype=None, shape=None):
        nonlocal off
        if dtype is None:
            vals = struct.unpack_from("<" + fmt_or_count, buf, off)
            off += struct.calcsize("<" + fmt_or_count)
            return vals
        n = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype=dtype, count=n, offset=off)
        off += arr.nbytes
        return arr.reshape(shape)

    h, w, C, N = take("4I")
    K = take(None, "<f4", (3, 3)).astype(np.float64)
    R = take(None, "<f4", (3, 3)).astype(np.float64)
    t = take(None, "<f4", (3,)).astype(np.float64)
    image = take(None, "<f4", (h, w, C)).astype(np.float64)
    points = take(None, "<f4", (N, 3)).astype(np.float64)
    feats = take(None, "<f4", (N, C)).astype(np.float64)
    (m,) = take("I")
    corr = take(None, "<u4", (m, 2)).copy()
    depth = take(None, "<f4", (h, w)).astype(np.float64)
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes")
    return SyntheticSample(image=image, points=points, point_feats=feats,
                           K=K, R=R, t=t, corr=corr, depth=depth)


SPLITS = ("train", "val", "test")


def split_counts(count: int) -> tuple[int, int, int]:
    """70/15/15 by floor; the remainder goes to test."""
    n_train = int(count * 0.70)
    n_val = int(count * 0.15)
    return n_train, n_val, count - n_train - n_val


def gen_dataset(spec: SceneSpec, count: int, seed: int, out_dir: Path) -> dict:
    """Write `count` samples under seeds seed..seed+count-1, split by seed order."""
    if count < 1:
        raise ValueError(f"gen_dataset: count must be >= 1, got {count}")
    out_dir = Path(out_dir)
    n_train, n_val, _ = split_counts(count)
    written = {s: [] for s in SPLITS}
    for i in range(count):
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        d = out_dir / split
        d.mkdir(parents=True, exist_ok=True)
        p = d / f"sample_{seed + i:08d}.bin"
        write_sample(gen_scene(spec, seed + i), p)
        written[split].append(p)
    return written


def list_split(data_dir: Path, split: str) -> list[Path]:
    if split not in SPLITS:
        raise ValueError(f"list_split: split must be one of {SPLITS}, got {split!r}")
    return sorted((Path(data_dir) / split).glob("sample_*.bin"))
