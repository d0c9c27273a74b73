"""If the maps are hand-aligned to the generator's codes, does eval see IR ~ 1?

Sets both input projections and both fine heads to identity, zeroes the
positional fields, and keeps depth 0 (init MLayers are identity).  Fine
features then equal raw codes for both branches, so the cosine matcher
should recover the planted correspondences almost perfectly.
"""
import numpy as np
from fsreg.config import load_config
from fsreg.model import init_model, make_context, forward
from fsreg.synthgen import gen_scene
from fsreg.geometry import inlier_ratio
from fsreg.train import substreams

cfg = load_config(None, dict(n_samples=1, fixed_depth=0))
ctx = make_context(cfg)
ctx.pos_img = np.zeros_like(ctx.pos_img)
params = init_model(cfg, substreams(0)["init"])
eye = np.eye(cfg.channels)
for head in (params.img_proj, params.pt_proj, params.fine_img, params.fine_pt):
    head.w.data = eye.copy()
    head.b.data[:] = 0.0
# zero the cross/self attention contribution: wo already zero at init => attention
# block is identity. pyramid mixers are near-identity (eye + noise); set exact.
for wkey, w in params.tensors().items():
    if wkey.startswith("pyramid.") and wkey.endswith(".w"):
        w.data = eye.copy()
    if wkey.startswith("pyramid.") and wkey.endswith(".b"):
        w.data[:] = 0.0

pos_back = None
sample = gen_scene(cfg.scene_spec(), seed=123)
res = forward(params, ctx, sample, sampled=False)
print("n_fine:", len(res.fine))
if res.fine:
    py = np.array([m.py for m in res.fine]); px = np.array([m.px for m in res.fine])
    pts = sample.points[np.array([m.point for m in res.fine])]
    gt3 = sample.gt_points_for_pixels(py, px)
    print("IR:", inlier_ratio(pts, gt3))
    scores = sorted(float(m.score) for m in res.fine)
    print("score range:", scores[0], scores[-1])
