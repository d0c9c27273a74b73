import os, tempfile, time
from fsreg.config import load_config
from fsreg.synthgen import gen_dataset
from fsreg.train import run_train

tmp = tempfile.mkdtemp()
cfg = load_config(None, dict(
    dataset=os.path.join(tmp, "data"), out=os.path.join(tmp, "out"),
    n_samples=8, steps=10, seed=1))
print("desk scale: grid", cfg.grid_h, "x", cfg.grid_w, "N", cfg.n_points,
      "C", cfg.channels, "windows", cfg.windows(), "levels", cfg.level_shapes())
t0 = time.perf_counter()
gen_dataset(cfg.scene_spec(), cfg.n_samples, cfg.seed, cfg.dataset)
print(f"gen 8 samples: {time.perf_counter()-t0:.2f}s")
rep = run_train(cfg, log=print)
walls = [r[-1] for r in rep.rows]
print("wall_ms per step:", [f"{w:.0f}" for w in walls])
print(f"mean after warmup: {sum(walls[2:])/len(walls[2:]):.0f} ms")
print("depths seen:", [r[6:9] for r in rep.rows])
