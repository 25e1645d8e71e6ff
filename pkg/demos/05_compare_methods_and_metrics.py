"""
Comparing embeddings under one protocol
=======================================

Teachers from different methods are compared by validation error only when
they were distilled into the same student with the same training and split.
Neighbourhood metrics give a complementary, label-free view of the same
embeddings.
"""

import tempfile
from pathlib import Path

import numpy as np

from medal import TrainConfig, compare_methods, lcmc, split, triplet_accuracy
from medal.data import save_matrix
from medal.hashing import config_hash
from medal.sweeper import SweepConfig, plan, run, sweep_curve
from medal.validate import ProtocolMismatch

rng = np.random.default_rng(3)
X = rng.normal(size=(240, 6)) * np.linspace(2.0, 0.4, 6)
sp = split(len(X), seed=0)
base = dict(input_dim=6, split_hash=config_hash(sp.to_dict()), n_seeds=2, hidden=(16,), activation="linear",
            train=TrainConfig(max_epochs=4000))

# %%
# Two 2-D "methods": PCA, and a random projection stored as a teacher file
# whose rows line up with the training rows.
tmp = Path(tempfile.mkdtemp())
X_tr = X[list(sp.train_idx)]
save_matrix(tmp / "randproj.npy", X_tr @ rng.normal(size=(6, 2)))

curves = []
for name, source in (("pca", "pca:2"), ("randproj", str(tmp / "randproj.npy"))):
    cfg = SweepConfig(teachers=((2.0, source),), method=name, **base)
    curves.append((name, sweep_curve(run(plan(cfg), X, sp, worker_limit=1), cfg)))

for row in compare_methods(curves):
    print(f"{row.method}: {row.mean:.4f} +/- {row.se:.4f}")

# %%
# Changing the student for one entry breaks the comparison contract.
cfg = SweepConfig(teachers=((2.0, "pca:2"),), method="pca-wide", **{**base, "hidden": (32,)})
try:
    compare_methods(curves + [("pca-wide", sweep_curve(run(plan(cfg), X, sp, worker_limit=1), cfg))])
except ProtocolMismatch as exc:
    print("refused:", exc)

# %%
# LCMC and triplet accuracy of the raw 2-D PCA scores.
Xc = X - X.mean(0)
Z = Xc @ np.linalg.svd(Xc, full_matrices=False)[2][:2].T
per_k, mean = lcmc(X, Z, [5, 10, 20])
print("LCMC", {k: round(v, 3) for k, v in per_k.items()}, "mean", round(mean, 3))
print("triplet accuracy", triplet_accuracy(X, Z, 5000, seed=0))
