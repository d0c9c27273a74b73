"""Training and evaluation loops for the registration model.

Training alternates plain SGD-with-momentum updates on the metric losses
with REINFORCE updates on the depth policy; both flow through one backward
pass over the shared graph.  Evaluation reloads a checkpoint, runs the
model greedily, and registers each sample with RANSAC.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import OPT_PREFIX, load_checkpoint, restore_into, save_checkpoint
from .config import RunConfig, config_to_text
from .geometry import compute_metrics, inlier_ratio, mmd_rbf, project, ransac_pose
from .model import ModelContext, init_model, make_context
from .objective import (CircleParams, circle_loss_symmetric, label_coarse,
                        label_fine, total_loss)
from .policy import compute_reward, reinforce_loss, update_baseline
from .synthgen import SyntheticSample, gt_overlap, list_split, load_sample

CSV_HEADER = ("step,loss_coarse,loss_fine,loss_rl,reward,baseline,"
              "depth_a,depth_b,depth_c,wall_ms")

EVAL_CSV_HEADER = "index,file,n_fine,ir,fmr,rr,rmse,depth_a,depth_b,depth_c"


class TrainingDivergedError(RuntimeError):
    """Raised when a loss term stops being finite; names the step and term."""


class SgdMomentum:
    """Plain SGD with heavy-ball momentum over a named tensor registry.

    Velocity buffers are keyed by parameter name so they can be carried
    through checkpoints.  Parameters that receive no gradient in a given
    step are left untouched (their velocity does not decay either, which
    matches the usual sparse-update convention for this optimizer).
    """

    def __init__(self, named: dict, lr: float, momentum: float = 0.9):
        self.named = named
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = {name: np.zeros_like(t.data) for name, t in named.items()}

    def step(self, table: dict) -> None:
        for name, tens in self.named.items():
            g = table.get(tens.tid)
            if g is None:
                continue
            v = self.momentum * self.velocity[name] + g
            self.velocity[name] = v
            tens.data -= self.lr * v


def substreams(seed: int) -> dict:
    """Independent named RNG streams all derived from the one run seed."""
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("data", "policy", "ransac", "init")
    return {n: np.random.Generator(np.random.Philox(c))
            for n, c in zip(names, children)}


# ---------------------------------------------------------------------------
# per-sample supervision, cached once per file
# ---------------------------------------------------------------------------

@dataclass
class SampleBundle:
    """A loaded sample plus every label array the losses need."""
    sample: SyntheticSample
    coarse_labels: list      # per level: (pos (cells,N), neg, lambda_p)
    fine_anchor_rows: np.ndarray   # (M,) flat fine-pixel indices with GT points
    fine_pos: np.ndarray           # (M, N)
    fine_neg: np.ndarray           # (M, N)


def prepare_bundle(sample: SyntheticSample, cfg: RunConfig) -> SampleBundle:
    overlaps = gt_overlap(sample, cfg.level_shapes(), cfg.radius)
    coarse = [label_coarse(o2, o3) for o2, o3 in overlaps]

    anchor = sample.corr[:, 0].astype(np.int64)
    pt_idx = sample.corr[:, 1].astype(np.int64)
    if len(anchor):
        gt3 = sample.points[pt_idx]                      # (M, 3)
        d3 = np.linalg.norm(gt3[:, None, :] - sample.points[None, :, :], axis=2)
        h, w = sample.grid_shape
        uv = np.stack([(anchor % w).astype(np.float64),
                       (anchor // w).astype(np.float64)], axis=1)
        proj = project(sample.points, sample.K, sample.R, sample.t)
        d2 = np.linalg.norm(uv[:, None, :] - proj[None, :, :], axis=2)
        pos, neg = label_fine(d3, d2)
    else:
        n = len(sample.points)
        pos = np.zeros((0, n), dtype=bool)
        neg = np.zeros((0, n), dtype=bool)
    return SampleBundle(sample=sample, coarse_labels=coarse,
                        fine_anchor_rows=anchor, fine_pos=pos, fine_neg=neg)


def compute_losses(result, bundle: SampleBundle, cfg: RunConfig):
    """(loss_coarse, loss_fine) Tensors for one forward pass."""
    params = CircleParams(zeta=cfg.zeta, delta_p=cfg.delta_p, delta_n=cfg.delta_n)
    per_level = []
    for k, (pos, neg, lam) in enumerate(bundle.coarse_labels):
        per_level.append(circle_loss_symmetric(
            result.level_img[k], result.level_pt[k], pos, neg, lam, params=params))
    l_coarse = (per_level[0] + per_level[1] + per_level[2]) * (1.0 / len(per_level))

    if len(bundle.fine_anchor_rows):
        anchors = T.index_rows(result.fine_img, bundle.fine_anchor_rows)
        l_fine = circle_loss_symmetric(anchors, result.fine_pt,
                                       bundle.fine_pos, bundle.fine_neg,
                                       params=params)
    else:
        l_fine = T.Tensor(np.asarray(0.0))
    return l_coarse, l_fine


def _check_finite(step: int, **terms) -> None:
    for name, value in terms.items():
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"step {step}: {name} is not finite ({value!r})")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    csv_path: str
    checkpoint_path: str
    rows: list = field(default_factory=list)
    final_baseline: float = 0.0


def _format_row(values) -> str:
    out = []
    for v in values:
        out.append(str(v) if isinstance(v, (int, np.integer)) else repr(float(v)))
    return ",".join(out)


def run_train(cfg: RunConfig, log=None) -> TrainReport:
    """Train from scratch; writes a metrics CSV and a final checkpoint."""
    import os

    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    streams = substreams(cfg.seed)
    ctx = make_context(cfg)
    params = init_model(cfg, streams["init"])
    named = params.tensors()
    opt = SgdMomentum(named, cfg.lr, cfg.momentum)

    files = list_split(cfg.dataset, "train")
    if not files:
        raise ValueError(f"no training samples under {cfg.dataset!r}")
    bundles: dict = {}

    def bundle(i: int) -> SampleBundle:
        if i not in bundles:
            bundles[i] = prepare_bundle(load_sample(files[i]), cfg)
        return bundles[i]

    baseline = 0.0
    rows = []
    learn_depth = cfg.fixed_depth < 0
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        idx = int(streams["data"].integers(len(files)))
        b = bundle(idx)
        res = forward_for_train(params, ctx, b.sample, learn_depth, streams["policy"])
        l_coarse, l_fine = compute_losses(res, b, cfg)
        _check_finite(step, loss_coarse=float(l_coarse.data),
                      loss_fine=float(l_fine.data))

        if learn_depth:
            reward = compute_reward(float(l_coarse.data), cfg.reward_delta)
            baseline = update_baseline(baseline, reward, cfg.baseline_eps)
            l_rl = reinforce_loss(res.decisions, reward, baseline)
        else:
            reward = 0.0
            l_rl = T.Tensor(np.asarray(0.0))
        _check_finite(step, loss_rl=float(l_rl.data))

        loss = total_loss(l_coarse, l_fine, l_rl, cfg.xi1, cfg.xi2)
        _check_finite(step, loss_total=float(loss.data))
        table = T.backward(loss)
        opt.step(table)

        wall_ms = (time.perf_counter() - t0) * 1e3
        d = res.depths
        rows.append((step, float(l_coarse.data), float(l_fine.data),
                     float(l_rl.data), reward, baseline, d[0], d[1], d[2], wall_ms))
        if log is not None and (step % 50 == 0 or step == cfg.steps - 1):
            log(f"step {step}: coarse {float(l_coarse.data):.4f} "
                f"fine {float(l_fine.data):.4f} depths {d}")
        if cfg.checkpoint_interval > 0 and (step + 1) % cfg.checkpoint_interval == 0 \
                and step + 1 < cfg.steps:
            _save(os.path.join(cfg.out, f"checkpoint_step{step + 1}.bin"),
                  named, opt, baseline, step + 1, cfg)

    csv_path = os.path.join(cfg.out, "train_metrics.csv")
    with open(csv_path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for row in rows:
            f.write(_format_row(row) + "\n")

    ckpt_path = os.path.join(cfg.out, "checkpoint.bin")
    _save(ckpt_path, named, opt, baseline, cfg.steps, cfg)
    return TrainReport(csv_path=csv_path, checkpoint_path=ckpt_path,
                       rows=rows, final_baseline=baseline)


def forward_for_train(params, ctx: ModelContext, sample, learn_depth: bool, rng):
    from .model import forward
    return forward(params, ctx, sample, sampled=learn_depth,
                   rng=rng if learn_depth else None, with_matches=False)


def _save(path, named, opt: SgdMomentum, baseline, step, cfg) -> None:
    payload = {name: t.data for name, t in named.items()}
    for name, v in opt.velocity.items():
        payload[OPT_PREFIX + name] = v
    save_checkpoint(path, payload, baseline=baseline, step=step,
                    config_text=config_to_text(cfg))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalRow:
    index: int
    file: str
    n_fine: int
    ir: float
    rr: bool
    rmse: float
    depths: tuple
    naive_ir: float


@dataclass
class EvalReport:
    rows: list
    mean_ir: float
    fmr: float
    rr_rate: float
    depth_hist: dict
    mmd: float
    csv_path: str = ""
    summary_path: str = ""


def naive_ceiling_ir(sample: SyntheticSample) -> float:
    """Inlier ratio of a cosine nearest-code matcher on the raw arrays.

    This is a solvability certificate: the score an oracle that reads the
    generator's own feature codes achieves, i.e. the ceiling a learned
    matcher could reach on this sample.
    """
    h, w, _ = sample.image.shape
    flat = sample.image.reshape(h * w, -1).astype(np.float64)
    norms = np.linalg.norm(flat, axis=1)
    cos = (sample.point_feats.astype(np.float64) @ flat.T) / np.maximum(norms, 1e-12)
    best = np.argmax(cos, axis=1)
    gt = sample.gt_points_for_pixels(best // w, best % w)
    return inlier_ratio(sample.points, gt)


def evaluate_sample(params, ctx: ModelContext, sample: SyntheticSample,
                    cfg: RunConfig, rng) -> tuple:
    """(EvalRow fields minus bookkeeping) for one greedy forward pass."""
    from .model import forward
    res = forward(params, ctx, sample, sampled=False, with_matches=True)
    n_fine = len(res.fine)
    if n_fine:
        py = np.array([m.py for m in res.fine])
        px = np.array([m.px for m in res.fine])
        pts = sample.points[np.array([m.point for m in res.fine])]
        gt3 = sample.gt_points_for_pixels(py, px)
        ir = inlier_ratio(pts, gt3)
    else:
        pts = np.zeros((0, 3))
        gt3 = pts
        ir = 0.0

    est = None
    if n_fine >= 6:
        uv = np.stack([px, py], axis=1).astype(np.float64)
        fit = ransac_pose(pts, uv, sample.K, iterations=cfg.ransac_iters,
                          thresh_px=cfg.ransac_thresh_px, rng=rng)
        if fit.success:
            est = fit.pose
    from .geometry import Pose
    metrics = compute_metrics(pts, gt3, sample.points, est,
                              Pose(sample.R, sample.t))
    return res, n_fine, ir, metrics


def run_eval(cfg: RunConfig, checkpoint_path: str, split: str = "test",
             with_mmd: bool = True, log=None) -> EvalReport:
    """Greedy evaluation of a checkpoint over one dataset split."""
    import os

    cfg.validate()
    stored = load_checkpoint(checkpoint_path)
    streams = substreams(cfg.seed)
    ctx = make_context(cfg)
    params = init_model(cfg, streams["init"])
    named = params.tensors()
    restore_into(named, stored.model_tensors())

    files = list_split(cfg.dataset, split)
    if not files:
        raise ValueError(f"no samples in split {split!r} under {cfg.dataset!r}")

    rows, mmds = [], []
    depth_counts = np.zeros(cfg.n_actions, dtype=np.int64)
    for i, path in enumerate(files):
        sample = load_sample(path)
        res, n_fine, ir, metrics = evaluate_sample(params, ctx, sample, cfg,
                                                   streams["ransac"])
        depths = res.depths
        for d in depths:
            depth_counts[d] += 1
        if with_mmd:
            pt_all = np.concatenate([p.data for p in res.level_pt], axis=0)
            mmds.append(mmd_rbf(res.unified.data, pt_all))
        rows.append(EvalRow(index=i, file=os.path.basename(path), n_fine=n_fine,
                            ir=ir, rr=metrics.rr, rmse=metrics.rmse,
                            depths=depths, naive_ir=naive_ceiling_ir(sample)))
        if log is not None:
            log(f"eval[{i}] {rows[-1].file}: fine={n_fine} ir={ir:.3f} "
                f"rr={int(metrics.rr)} depths={depths}")

    mean_ir = float(np.mean([r.ir for r in rows]))
    fmr = float(np.mean([r.ir > 0.10 for r in rows]))
    rr_rate = float(np.mean([r.rr for r in rows]))
    hist = {a: float(depth_counts[a] / depth_counts.sum())
            for a in range(cfg.n_actions)}
    mmd = float(np.mean(mmds)) if mmds else float("nan")

    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, f"eval_{split}.csv")
    with open(csv_path, "w") as f:
        f.write(EVAL_CSV_HEADER + "\n")
        for r in rows:
            f.write(f"{r.index},{r.file},{r.n_fine},{r.ir!r},"
                    f"{int(r.ir > 0.10)},{int(r.rr)},{r.rmse!r},"
                    f"{r.depths[0]},{r.depths[1]},{r.depths[2]}\n")

    summary_path = os.path.join(cfg.out, f"eval_{split}_summary.txt")
    ceiling = float(np.mean([r.naive_ir for r in rows]))
    with open(summary_path, "w") as f:
        f.write(f"samples: {len(rows)}\n")
        f.write(f"mean inlier ratio: {mean_ir:.4f}\n")
        f.write(f"feature match recall (IR > 0.10): {fmr:.4f}\n")
        f.write(f"registration recall (RMSE < 0.10 m): {rr_rate:.4f}\n")
        f.write(f"oracle nearest-code ceiling IR: {ceiling:.4f}\n")
        f.write("depth histogram: " +
                " ".join(f"{a}:{hist[a]:.3f}" for a in sorted(hist)) + "\n")
        if with_mmd:
            f.write(f"mean image/point feature MMD: {mmd:.6f}\n")
    return EvalReport(rows=rows, mean_ir=mean_ir, fmr=fmr, rr_rate=rr_rate,
                      depth_hist=hist, mmd=mmd, csv_path=csv_path,
                      summary_path=summary_path)
