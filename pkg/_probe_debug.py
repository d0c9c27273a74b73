"""Trace one planted correspondence through coarse and fine matching."""
import numpy as np
from fsreg.config import load_config
from fsreg.model import init_model, make_context, forward
from fsreg.synthgen import gen_scene
from fsreg.train import substreams

cfg = load_config(None, dict(n_samples=1, fixed_depth=0))
ctx = make_context(cfg)
ctx.pos_img = np.zeros_like(ctx.pos_img)
params = init_model(cfg, substreams(0)["init"])
eye = np.eye(cfg.channels)
for head in (params.img_proj, params.pt_proj, params.fine_img, params.fine_pt):
    head.w.data = eye.copy(); head.b.data[:] = 0.0
for wkey, w in params.tensors().items():
    if wkey.startswith("pyramid.") and wkey.endswith(".w"):
        w.data = eye.copy()
    if wkey.startswith("pyramid.") and wkey.endswith(".b"):
        w.data[:] = 0.0

sample = gen_scene(cfg.scene_spec(), seed=123)
res = forward(params, ctx, sample, sampled=False)
h, w = sample.grid_shape

# true correspondence 0
flat, j = int(sample.corr[0, 0]), int(sample.corr[0, 1])
r, c = flat // w, flat % w
print(f"corr pixel ({r},{c}) -> point {j}")

fi = res.fine_img.data.reshape(h, w, -1)
fp = res.fine_pt.data
cos = lambda a, b: float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))
print("fine cosine at true pair:", cos(fi[r, c], fp[j]))
best_pt = int(np.argmax([cos(fi[r, c], fp[q]) for q in range(len(fp))]))
print("best point for that pixel:", best_pt, "(true", j, ")")

# which coarse matches mention point j?
cm = [m for m in res.coarse if m.point == j]
print("coarse matches for point j:", [(m.level, m.y, m.x, round(m.score, 3)) for m in cm[:5]])
print("expected level-a cell:", (r // 4, c // 4))

# all coarse matches: distribution of levels
from collections import Counter
print("coarse level counts:", Counter(m.level for m in res.coarse))

fm = [m for m in res.fine]
print("fine matches (first 8):", [(m.py, m.px, m.point, round(m.score, 3)) for m in fm[:8]])
gt = sample.gt_points_for_pixels(np.array([m.py for m in fm]), np.array([m.px for m in fm]))
est = sample.points[np.array([m.point for m in fm])]
d = np.linalg.norm(gt - est, axis=1)
print("per-match 3D error:", np.round(d, 3))

# check corr pixels' coarse cell scores directly
ulev = res.level_img[0].data  # (24*32, C)
cell = (r // 4) * 32 + (c // 4)
print("cell cosine vs point:", cos(ulev[cell], res.level_pt[0].data[j]))
