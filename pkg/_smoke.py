import shutil, tempfile, os
from fsreg.config import load_config
from fsreg.synthgen import gen_dataset
from fsreg.train import run_train, run_eval

tmp = tempfile.mkdtemp()
cfg = load_config(None, dict(
    dataset=os.path.join(tmp, "data"), out=os.path.join(tmp, "out"),
    n_samples=6, n_points=16, grid_h=32, grid_w=32, channels=32,
    steps=3, top_k=32, ransac_iters=50, seed=7))
paths = gen_dataset(cfg.scene_spec(), cfg.n_samples, cfg.seed, cfg.dataset)
print("gen:", len(paths), "samples")
report = run_train(cfg, log=print)
print("train rows:", len(report.rows))
print("row0:", report.rows[0])
ev = run_eval(cfg, report.checkpoint_path, log=print)
print("eval mean_ir:", ev.mean_ir, "rr:", ev.rr_rate, "hist:", ev.depth_hist)
print(open(ev.summary_path).read())
shutil.rmtree(tmp)
print("SMOKE OK")
