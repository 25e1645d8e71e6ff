"""
Linear students recover PCA
===========================

A student whose layers are all affine, distilled from a PCA teacher, should
reconstruct held-out rows exactly as well as truncated PCA does. This is the
cheapest end-to-end check that the objective, the optimizer and the stopping
rule fit together.
"""

import numpy as np

from medal import StudentSpec, TrainConfig, distill, heldout_errors, pca_teacher, split

# %%
# Gaussian data with a geometrically decaying spectrum in 20 dimensions.
rng = np.random.default_rng(0)
sd = np.geomspace(3.0, 0.1, 20)
Q, _ = np.linalg.qr(rng.normal(size=(20, 20)))
X = (rng.normal(size=(500, 20)) * sd) @ Q.T

sp = split(len(X), (0.8, 0.0, 0.2), seed=0)
X_tr, X_te = X[list(sp.train_idx)], X[list(sp.test_idx)]

# %%
# Distil each rank and compare with the PCA basis fitted on the same rows.
for r in (1, 2, 4, 8):
    teacher = pca_teacher(X_tr, r)
    spec = StudentSpec(20, r, encoder_hidden=(16,), hidden_activation="linear", init_seed=r)
    model, trace = distill(X_tr, teacher, spec, TrainConfig(max_epochs=5000, seed=r))
    student = heldout_errors(model, X_te).mean
    exact = teacher.basis.reconstruction_error(X_te)
    print(f"rank {r}: student {student:.4f}  pca {exact:.4f}  "
          f"({trace.stop_reason} after {len(trace.records)} epochs)")
