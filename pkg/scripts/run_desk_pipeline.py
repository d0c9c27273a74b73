"""End-to-end desk-scale experiment: generate data, train, evaluate.

Writes the dataset, a training run, and held-out metrics under --root,
then prints the headline numbers next to the untrained baseline so the
improvement from training is visible in one screen of output.
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from fsreg.config import load_config
from fsreg.synthgen import gen_dataset
from fsreg.train import run_eval, run_train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="runs/desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=0.05,
                    help="metric losses separate far faster than the config "
                         "default at desk scale")
    ap.add_argument("--samples", type=int, default=50)
    args = ap.parse_args()

    cfg = load_config(None, dict(
        dataset=os.path.join(args.root, "data"),
        out=os.path.join(args.root, "out"),
        n_samples=args.samples, steps=args.steps, lr=args.lr, seed=args.seed))

    t0 = time.perf_counter()
    if not os.path.isdir(cfg.dataset):
        gen_dataset(cfg.scene_spec(), cfg.n_samples, cfg.seed, cfg.dataset)
        print(f"dataset written under {cfg.dataset}")

    init_cfg = load_config(None, dict(
        dataset=cfg.dataset, out=os.path.join(args.root, "out_init"),
        steps=0, lr=args.lr, seed=args.seed))
    r0 = run_train(init_cfg)
    e0 = run_eval(init_cfg, r0.checkpoint_path, with_mmd=False)
    print(f"untrained baseline: IR {e0.mean_ir:.4f}  RR {e0.rr_rate:.4f}")

    report = run_train(cfg, log=print)
    ev = run_eval(cfg, report.checkpoint_path, log=print)
    print(f"trained ({cfg.steps} steps): IR {ev.mean_ir:.4f}  "
          f"FMR {ev.fmr:.4f}  RR {ev.rr_rate:.4f}")
    print("depth histogram: " +
          " ".join(f"{a}:{v:.3f}" for a, v in sorted(ev.depth_hist.items())))
    print(f"eval rows: {ev.csv_path}")
    print(f"wall time: {time.perf_counter() - t0:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
