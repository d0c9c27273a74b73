import os, sys, time
from fsreg.config import load_config
from fsreg.synthgen import gen_dataset
from fsreg.train import run_train, run_eval

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-3
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
base = f"/tmp/r8_lr{lr}_s{seed}"
cfg = load_config(None, dict(dataset=f"{base}/data", out=f"{base}/out",
                             lr=lr, seed=seed))
t0 = time.perf_counter()
if not os.path.isdir(cfg.dataset):
    gen_dataset(cfg.scene_spec(), cfg.n_samples, cfg.seed, cfg.dataset)
print(f"gen done {time.perf_counter()-t0:.1f}s", flush=True)

zero = load_config(None, dict(dataset=cfg.dataset, out=cfg.out + "_init",
                              lr=lr, seed=seed, steps=0))
r0 = run_train(zero)
e0 = run_eval(zero, r0.checkpoint_path, with_mmd=False)
print(f"untrained: IR {e0.mean_ir:.4f} RR {e0.rr_rate:.4f} "
      f"(fine counts {[r.n_fine for r in e0.rows]})", flush=True)

rep = run_train(cfg, log=lambda m: print(m, flush=True))
print(f"train done {time.perf_counter()-t0:.1f}s", flush=True)
ev = run_eval(cfg, rep.checkpoint_path, with_mmd=False)
print(f"trained: IR {ev.mean_ir:.4f} RR {ev.rr_rate:.4f} hist {ev.depth_hist}")
for r in ev.rows:
    print(f"  {r.file} fine={r.n_fine} ir={r.ir:.3f} rr={int(r.rr)} "
          f"rmse={r.rmse:.4f} depths={r.depths} ceil={r.naive_ir:.2f}")
print(f"total {time.perf_counter()-t0:.1f}s")
