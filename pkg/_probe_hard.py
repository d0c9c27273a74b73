"""Probe a trained hard-mode checkpoint: loss-vs-depth and policy sharpness."""
import numpy as np
from fsreg.config import load_config
from fsreg.checkpoint import load_checkpoint, restore_into
from fsreg.model import init_model, make_context, forward
from fsreg.policy import build_state, policy_forward
from fsreg.synthgen import list_split, load_sample
from fsreg.train import substreams, prepare_bundle, compute_losses
from fsreg.interaction import build_pyramid
from fsreg import tensor as T

cfg = load_config(None, dict(dataset="/tmp/rh_hard/data", out="/tmp/probe",
                             mode="hard-repetitive", lr=0.05, seed=0))
stored = load_checkpoint("/tmp/rh_hard_dla/out/checkpoint.bin")
streams = substreams(cfg.seed)
ctx = make_context(cfg)
params = init_model(cfg, streams["init"])
restore_into(params.tensors(), stored.model_tensors())

files = list_split(cfg.dataset, "test")[:4]
for path in files:
    s = load_sample(path)
    b = prepare_bundle(s, cfg)
    line = []
    for d in range(4):
        res = forward(params, ctx, s, sampled=False, depth_override=(d, d, d),
                      with_matches=False)
        lc, lf = compute_losses(res, b, cfg)
        line.append(f"d{d}: c={float(lc.data):.4f} f={float(lf.data):.4f}")
    print(path.name, " | ".join(line))

# policy probabilities per scale on one sample
s = load_sample(files[0])
res = forward(params, ctx, s, sampled=False, with_matches=False)
print("greedy depths:", res.depths)
# recompute states exactly as forward does
from fsreg.embedding import attention_block
from fsreg.tensor import Tensor
from fsreg.model import POS_FIELD_SCALE, normalize_point_coords
from fsreg.embedding import positional_padded
from fsreg.interaction import avg_pool2

c = cfg.channels
h, w = s.grid_shape
img_fine = params.img_proj(Tensor(s.image.reshape(-1, c))) + Tensor(ctx.pos_img)
pos_pt = POS_FIELD_SCALE * positional_padded(
    normalize_point_coords(s.points), ctx.fourier3d, c)
pt_base = params.pt_proj(Tensor(s.point_feats)) + Tensor(pos_pt)
a0 = avg_pool2(avg_pool2(T.reshape(img_fine, (h, w, c))))
ha, wa = cfg.level_shapes()[0]
img_a, pt_att = attention_block(T.reshape(a0, (ha * wa, c)), pt_base, params.attn)
pyr = build_pyramid(T.reshape(img_a, (ha, wa, c)), params.pyramid)
for k, g in enumerate(pyr):
    st = build_state(g, pt_att)
    pr = policy_forward(st, params.policy)
    print(f"scale {k} probs:", np.round(pr.data, 4))
