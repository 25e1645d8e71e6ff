"""
Which observations does an embedding distort?
=============================================

Held-out reconstruction error is defined per row, so it can be summarized by
any grouping of the rows. Here one cluster sits slightly off the plane the
teacher sees and shows up as the worst-represented group.
"""

import numpy as np

from medal import StudentSpec, TrainConfig, distill, distortion_by_group, heldout_errors, pca_teacher, split

rng = np.random.default_rng(2)
labels = rng.integers(0, 3, 600)
X = np.zeros((600, 10))
X[:, :2] = np.array([[0, 0], [4, 0], [0, 4]])[labels] + rng.normal(size=(600, 2))
X[:, 2:] = 0.05 * rng.normal(size=(600, 8))
# cluster 2 also spreads along a third axis that a rank-2 teacher ignores
X[labels == 2, 2] += 0.8 * rng.normal(size=(labels == 2).sum())

sp = split(len(X), (0.6, 0.4, 0.0), seed=0)
tr, va = list(sp.train_idx), list(sp.val_idx)

# %%
model, trace = distill(X[tr], pca_teacher(X[tr], 2), StudentSpec(10, 2, (64, 64)), TrainConfig(max_epochs=2000))
scores = heldout_errors(model, X[va])
print(f"validation error {scores.mean:.4f} +/- {scores.se:.4f} ({trace.stop_reason})")

# %%
for g in distortion_by_group(scores, [f"cluster {c}" for c in labels[va]]):
    print(f"{g.group}: mean {g.mean:.4f}  median {g.median:.4f}  n={g.count}")
