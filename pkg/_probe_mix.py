"""Loss-vs-depth per test sample for a trained checkpoint (grouped by name)."""
import sys
import numpy as np
from fsreg.config import load_config
from fsreg.checkpoint import load_checkpoint, restore_into
from fsreg.model import init_model, make_context, forward
from fsreg.synthgen import list_split, load_sample
from fsreg.train import substreams, prepare_bundle, compute_losses

data = sys.argv[1] if len(sys.argv) > 1 else "/tmp/rh_hardmix/data"
ckpt = sys.argv[2] if len(sys.argv) > 2 else "/tmp/rh_mix_dla/out/checkpoint.bin"

cfg = load_config(None, dict(dataset=data, out="/tmp/probe",
                             mode="hard-repetitive", lr=0.05, seed=0))
stored = load_checkpoint(ckpt)
streams = substreams(cfg.seed)
ctx = make_context(cfg)
params = init_model(cfg, streams["init"])
restore_into(params.tensors(), stored.model_tensors())

for path in list_split(cfg.dataset, "test"):
    s = load_sample(path)
    b = prepare_bundle(s, cfg)
    losses = []
    for d in range(4):
        res = forward(params, ctx, s, sampled=False, depth_override=(d, d, d),
                      with_matches=False)
        lc, _ = compute_losses(res, b, cfg)
        losses.append(float(lc.data))
    best = int(np.argmin(losses))
    print(f"{path.name} best d{best} | " +
          " ".join(f"d{d}:{v:.4f}" for d, v in enumerate(losses)))
