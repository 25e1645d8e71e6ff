"""
Choosing a rank from held-out reconstruction
============================================

Every grid value is distilled several times with different seeds. Runs that
never reach the distillation band are dropped, the rest are averaged on the
validation rows, and a value is picked by the minimum or one-SE rule.
"""

import tempfile

import numpy as np

from medal import TrainConfig, select, split
from medal.hashing import config_hash
from medal.sweeper import SweepConfig, plan, run, sweep_curve

rng = np.random.default_rng(1)
sd = np.linspace(3.0, 0.3, 8)
X = rng.normal(size=(300, 8)) * sd
sp = split(len(X), seed=0)

# %%
# The sweep configuration fixes one student and one training protocol for
# every teacher. Only the teacher changes between grid values.
cfg = SweepConfig(
    teachers=tuple((float(r), f"pca:{r}") for r in range(1, 9)),
    input_dim=8,
    split_hash=config_hash(sp.to_dict()),
    n_seeds=2,
    hidden=(16,),
    activation="linear",
    train=TrainConfig(max_epochs=5000),
)

with tempfile.TemporaryDirectory() as sweep_dir:
    outcomes = run(plan(cfg), X, sp, worker_limit=1, sweep_dir=sweep_dir, cfg=cfg)
    print(open(f"{sweep_dir}/summary.csv").read())

# %%
# Full-rank data keeps improving up to the last rank, so the minimum rule
# lands there. The one-SE rule may stop earlier if the gain is within noise.
curve = sweep_curve(outcomes, cfg)
print("min rule:", select(curve, "min"))
print("one-SE rule:", select(curve, "one_se"))
