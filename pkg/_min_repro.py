"""Minimal coarse-alignment repro: two linear maps + circle loss + SGD.

Strips away scan/attention/policy.  Image side: 4x4-mean-pooled cells of the
raw feature grid.  Point side: raw codes.  Exactly the supervision the real
coarse level sees.  Question: which (lr, pos_scale, steps) separate
positives from negatives and make argmax-cell correct?
"""
import sys
import numpy as np
from fsreg import tensor as T
from fsreg.tensor import Tensor
from fsreg.objective import CircleParams, circle_loss_symmetric, label_coarse
from fsreg.embedding import FourierEmbedding, positional_padded, normalized_grid
from fsreg.model import normalize_point_coords
from fsreg.synthgen import gen_scene, gt_overlap
from fsreg.config import load_config
from fsreg.train import SgdMomentum

lr = float(sys.argv[1]); pos_scale = float(sys.argv[2]); steps = int(sys.argv[3])
zeta = float(sys.argv[4]) if len(sys.argv) > 4 else 10.0

cfg = load_config(None, dict(n_samples=1))
C = cfg.channels
rng = np.random.default_rng(0)
samples = [gen_scene(cfg.scene_spec(), seed=s) for s in range(8)]
emb2 = FourierEmbedding(levels=4, input_dim=2)
emb3 = FourierEmbedding(levels=4, input_dim=3)
pos_img = pos_scale * positional_padded(normalized_grid(96, 128), emb2, C)

data = []
for s in samples:
    img = s.image.reshape(-1, C) + pos_img
    cells = img.reshape(24, 4, 32, 4, C).mean(axis=(1, 3)).reshape(768, C)
    pos_pt = pos_scale * positional_padded(normalize_point_coords(s.points), emb3, C)
    codes = s.point_feats + pos_pt
    o2, o3 = gt_overlap(s, [(24, 32)], cfg.radius)[0]
    pos, neg, lam = label_coarse(o2, o3)
    data.append((cells, codes, pos, neg, lam))

Wi = Tensor(rng.normal(0, C**-0.5, (C, C)), requires_grad=True)
Wp = Tensor(rng.normal(0, C**-0.5, (C, C)), requires_grad=True)
named = {"wi": Wi, "wp": Wp}
opt = SgdMomentum(named, lr, 0.9)
cp = CircleParams(zeta=zeta, delta_p=cfg.delta_p, delta_n=cfg.delta_n)

def separation():
    accs, gaps = [], []
    for cells, codes, pos, neg, lam in data:
        a = cells @ Wi.data; b = codes @ Wp.data
        a = a / (np.linalg.norm(a, axis=1, keepdims=True) + 1e-12)
        b = b / (np.linalg.norm(b, axis=1, keepdims=True) + 1e-12)
        S = a @ b.T
        gaps.append(S[pos].mean() - S[neg].mean())
        # per-point argmax-cell accuracy among cells with a positive label
        ok = 0; tot = 0
        for j in range(S.shape[1]):
            prows = np.flatnonzero(pos[:, j])
            if len(prows):
                tot += 1
                ok += int(np.argmax(S[:, j]) in set(prows))
        accs.append(ok / max(tot, 1))
    return float(np.mean(gaps)), float(np.mean(accs))

print(f"lr={lr} pos={pos_scale} zeta={zeta}")
for step in range(steps):
    cells, codes, pos, neg, lam = data[step % len(data)]
    loss = circle_loss_symmetric(Tensor(cells) @ Wi, Tensor(codes) @ Wp,
                                 pos, neg, lam, params=cp)
    table = T.backward(loss)
    opt.step(table)
    if step % max(steps // 8, 1) == 0 or step == steps - 1:
        gap, acc = separation()
        print(f"  step {step:4d} loss {float(loss.data):.4f} "
              f"pos-neg gap {gap:+.3f} argmax acc {acc:.2f}")
