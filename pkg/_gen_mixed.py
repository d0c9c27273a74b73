"""Build a hard-repetitive dataset with mixed group counts (difficulty mix)."""
import sys
from fsreg.config import load_config
from fsreg.synthgen import gen_dataset

out = sys.argv[1] if len(sys.argv) > 1 else "/tmp/rh_hardmix/data"
groups = [int(g) for g in (sys.argv[2].split(",") if len(sys.argv) > 2
                           else ["2", "4", "8", "32"])]
per = int(sys.argv[3]) if len(sys.argv) > 3 else 13

for j, g in enumerate(groups):
    cfg = load_config(None, dict(mode="hard-repetitive", repetition_groups=g))
    written = gen_dataset(cfg.scene_spec(), per, 1000 * j, out)
    print(f"G={g}: " + " ".join(f"{s}:{len(p)}" for s, p in written.items()),
          flush=True)
