"""Pinhole geometry: projection, DLT-based PnP, RANSAC, and registration metrics.

Pose convention: a world point X maps to camera coordinates as R @ X + t, and
to pixels by applying K and dividing by depth. Rotations live in SO(3); the
DLT solver projects its least-squares estimate back onto SO(3) via the
orthogonal polar factor.

All of this is plain numpy — pose solving and metric computation sit outside
every gradient path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BehindCameraError(ValueError):
    """A point has non-positive camera-frame depth."""


class DegenerateConfigurationError(ValueError):
    """PnP input points are coplanar/collinear: the DLT system is rank-deficient."""


@dataclass
class Pose:
    R: np.ndarray  # (3, 3) rotation
    t: np.ndarray  # (3,) translation, meters

    def apply(self, points: np.ndarray) -> np.ndarray:
        """World -> camera coordinates for (n, 3) or (3,) points."""
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t


@dataclass
class RansacResult:
    success: bool
    pose: Pose | None
    inliers: np.ndarray  # (n,) bool mask; all-False on failure
    n_inliers: int


def project(points: np.ndarray, K: np.ndarray, R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Project world points (..., 3) to pixel coordinates (..., 2)."""
    pts = np.asarray(points, dtype=np.float64)
    cam = pts @ np.asarray(R).T + np.asarray(t)
    depth = cam[..., 2]
    if np.any(depth <= 0.0):
        raise BehindCameraError(
            f"project: non-positive camera depth (min {float(np.min(depth)):.6g})")
    homo = cam @ np.asarray(K).T
    return homo[..., :2] / homo[..., 2:3]


def back_project(pixels: np.ndarray, depths: np.ndarray, K: np.ndarray,
                 R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Invert `project` along the ray: pixels (..., 2) + depths (...) -> world (..., 3)."""
    px = np.asarray(pixels, dtype=np.float64)
    ones = np.ones(px.shape[:-1] + (1,))
    rays = np.concatenate([px, ones], axis=-1) @ np.linalg.inv(K).T
    cam = rays * np.asarray(depths, dtype=np.float64)[..., None]
    return (cam - np.asarray(t)) @ np.asarray(R)


def _reprojection_errors(pose: Pose, points: np.ndarray, pixels: np.ndarray,
                         K: np.ndarray) -> np.ndarray:
    """Per-correspondence pixel error; points behind the camera get +inf."""
    cam = pose.apply(points)
    depth = cam[:, 2]
    errs = np.full(len(points), np.inf)
    ok = depth > 1e-12
    if np.any(ok):
        homo = cam[ok] @ np.asarray(K).T
        proj = homo[:, :2] / homo[:, 2:3]
        errs[ok] = np.linalg.norm(proj - pixels[ok], axis=1)
    return errs


def pnp_dlt(points: np.ndarray, pixels: np.ndarray, K: np.ndarray) -> Pose:
    """Solve camera pose from >= 6 pixel<->3D correspondences by DLT.

    Pixels are normalized by K^-1 and the 3-D points by a similarity
    (centroid to origin, mean norm sqrt(3)) before building the homogeneous
    2n x 12 system; the smallest right singular vector gives the projection
    matrix, whose left 3x3 block is snapped to SO(3) by its polar factor.
    """
    pts = np.asarray(points, dtype=np.float64)
    pix = np.asarray(pixels, dtype=np.float64)
    n = len(pts)
    if n < 6:
        raise ValueError(f"pnp_dlt: need at least 6 correspondences, got {n}")

    ones = np.ones((n, 1))
    norm_pix = np.concatenate([pix, ones], axis=1) @ np.linalg.inv(K).T
    xn, yn = norm_pix[:, 0], norm_pix[:, 1]

    centroid = pts.mean(axis=0)
    spread = float(np.mean(np.linalg.norm(pts - centroid, axis=1)))
    scale = np.sqrt(3.0) / max(spread, 1e-12)
    T = np.eye(4)
    T[:3, :3] *= scale
    T[:3, 3] = -scale * centroid
    Xh = np.concatenate([(pts - centroid) * scale, ones], axis=1)  # (n, 4)

    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, None] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -yn[:, None] * Xh

    _, sv, Vt = np.linalg.svd(A)
    if sv[-2] <= 1e-7 * sv[0]:
        raise DegenerateConfigurationError(
            "pnp_dlt: rank-deficient system (coplanar or collinear points)")
    P = Vt[-1].reshape(3, 4) @ T  # undo the 3-D normalization

    # Fix the overall sign so (most) projective depths come out positive.
    w = np.concatenate([pts, ones], axis=1) @ P[2]
    if np.count_nonzero(w < 0.0) * 2 > n:
        P = -P

    M, p4 = P[:, :3], P[:, 3]
    U, _, Vt3 = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, float(np.linalg.det(U @ Vt3))])
    Rb = U @ D @ Vt3
    lam = float(np.trace(M.T @ Rb)) / 3.0
    if lam < 0.0:  # majority vote can still land on the flipped sheet
        Rb = U @ np.diag([-1.0, -1.0, float(np.linalg.det(U @ Vt3))]) @ Vt3
        lam = float(np.trace(M.T @ Rb)) / 3.0
    return Pose(R=Rb, t=p4 / lam)


def ransac_pose(points: np.ndarray, pixels: np.ndarray, K: np.ndarray,
                iterations: int = 500, thresh_px: float = 2.0,
                rng: np.random.Generator | None = None) -> RansacResult:
    """Robust pose: repeated 6-point DLT hypotheses, inliers by reprojection.

    The best hypothesis (most inliers; earlier iteration wins ties) is re-fit
    on its full inlier set. Returns a failure result, not an exception, when
    no hypothesis explains >= 6 correspondences.
    """
    pts = np.asarray(points, dtype=np.float64)
    pix = np.asarray(pixels, dtype=np.float64)
    n = len(pts)
    if n < 6:
        raise ValueError(f"ransac_pose: need at least 6 correspondences, got {n}")
    if rng is None:
        rng = np.random.default_rng(0)

    best_count, best_mask = 0, None
    for _ in range(iterations):
        idx = rng.choice(n, size=6, replace=False)
        try:
            hyp = pnp_dlt(pts[idx], pix[idx], K)
        except DegenerateConfigurationError:
            continue
        mask = _reprojection_errors(hyp, pts, pix, K) <= thresh_px
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask

    if best_count < 6:
        return RansacResult(False, None, np.zeros(n, dtype=bool), 0)

    try:
        pose = pnp_dlt(pts[best_mask], pix[best_mask], K)
    except DegenerateConfigurationError:
        return RansacResult(False, None, np.zeros(n, dtype=bool), 0)
    final_mask = _reprojection_errors(pose, pts, pix, K) <= thresh_px
    return RansacResult(True, pose, final_mask, int(final_mask.sum()))


INLIER_DIST_M = 0.05   # a match counts as an inlier within 5 cm
FMR_IR_THRESH = 0.10   # a pair counts for feature-matching recall above 10% IR
RR_RMSE_M = 0.10       # a registration counts as recalled below 10 cm RMSE


def inlier_ratio(matched_points: np.ndarray, gt_points: np.ndarray,
                 thresh: float = INLIER_DIST_M) -> float:
    """Fraction of matches whose point lies within `thresh` meters of the
    pixel's ground-truth 3-D location. Empty match sets score 0 by definition."""
    a = np.asarray(matched_points, dtype=np.float64).reshape(-1, 3)
    if a.shape[0] == 0:
        return 0.0
    b = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape:
        raise ValueError(f"inlier_ratio: shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=1) <= thresh))


def fmr_flag(ir: float, thresh: float = FMR_IR_THRESH) -> bool:
    return ir > thresh


def pose_rmse(points: np.ndarray, est: Pose, gt: Pose) -> float:
    """RMSE between the point cloud under the estimated and true transforms."""
    diff = est.apply(points) - gt.apply(points)
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))


def rr_flag(points: np.ndarray, est: Pose, gt: Pose,
            thresh: float = RR_RMSE_M) -> bool:
    return pose_rmse(points, est, gt) < thresh


@dataclass
class Metrics:
    ir: float
    fmr: bool
    rr: bool
    rmse: float


def compute_metrics(matched_points: np.ndarray, gt_points: np.ndarray,
                    cloud: np.ndarray, est: Pose | None, gt: Pose) -> Metrics:
    """Registration metrics for one image/point-cloud pair.

    A missing pose (RANSAC failure) fails registration outright.
    """
    ir = inlier_ratio(matched_points, gt_points)
    if est is None:
        return Metrics(ir=ir, fmr=fmr_flag(ir), rr=False, rmse=float("inf"))
    rmse = pose_rmse(cloud, est, gt)
    return Metrics(ir=ir, fmr=fmr_flag(ir), rr=rmse < RR_RMSE_M, rmse=rmse)


def rotation_angle_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    cos = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def mmd_rbf(X: np.ndarray, Y: np.ndarray, bandwidth: float = 1.0) -> float:
    """Biased empirical MMD with Gaussian kernel exp(-||a-b||^2 / (2 bw^2)).

    Returns sqrt(max(estimate, 0)).
    """
    Xa = np.asarray(X, dtype=np.float64)
    Ya = np.asarray(Y, dtype=np.float64)
    if Xa.size == 0 or Ya.size == 0:
        raise ValueError("mmd_rbf: sample sets must be non-empty")
    if bandwidth <= 0.0:
        raise ValueError(f"mmd_rbf: bandwidth must be > 0, got {bandwidth}")

    def kernel_mean(A, B):
        sq = (np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2.0 * A @ B.T)
        return float(np.mean(np.exp(-np.maximum(sq, 0.0) / (2.0 * bandwidth**2))))

    est = kernel_mean(Xa, Xa) + kernel_mean(Ya, Ya) - 2.0 * kernel_mean(Xa, Ya)
    return float(np.sqrt(max(est, 0.0)))
