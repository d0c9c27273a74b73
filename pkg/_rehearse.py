"""Generic rehearsal driver: _rehearse.py tag key=val [key=val ...]

Generates the dataset if missing (keyed on scene-affecting fields), runs
train + eval, prints one summary line per stage.
"""
import os, sys, time
from fsreg.config import load_config
from fsreg.synthgen import gen_dataset
from fsreg.train import run_train, run_eval

tag = sys.argv[1]
overrides = {}
for kv in sys.argv[2:]:
    k, v = kv.split("=", 1)
    overrides[k] = v

base = f"/tmp/rh_{tag}"
data_dir = overrides.pop("dataset", f"{base}/data")
cfg = load_config(None, dict(dataset=data_dir, out=f"{base}/out", **overrides))

t0 = time.perf_counter()
if not os.path.isdir(cfg.dataset):
    gen_dataset(cfg.scene_spec(), cfg.n_samples, cfg.seed, cfg.dataset)
    print(f"[{tag}] gen done {time.perf_counter()-t0:.1f}s", flush=True)

try:
    rep = run_train(cfg)
except Exception as e:
    print(f"[{tag}] TRAIN FAILED: {type(e).__name__}: {e}", flush=True)
    raise SystemExit(1)
print(f"[{tag}] train done {time.perf_counter()-t0:.1f}s "
      f"final_baseline={rep.final_baseline:.4f}", flush=True)
ev = run_eval(cfg, rep.checkpoint_path, with_mmd=False)
print(f"[{tag}] IR {ev.mean_ir:.4f} FMR {ev.fmr:.4f} RR {ev.rr_rate:.4f} "
      f"hist {ev.depth_hist}", flush=True)
for r in ev.rows:
    print(f"[{tag}]   {os.path.basename(r.file)} fine={r.n_fine} ir={r.ir:.3f} "
          f"rr={int(r.rr)} depths={r.depths} ceil={r.naive_ir:.2f}", flush=True)
print(f"[{tag}] total {time.perf_counter()-t0:.1f}s", flush=True)
