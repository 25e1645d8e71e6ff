"""
Flagging a shifted batch
========================

A student trained on one population reconstructs new rows from that
population about as well as its own held-out rows. Rows from a shifted
population reconstruct worse, and grouping the query scores points at the
part of the population that moved. Labels are used only for grouping.
"""

import numpy as np

from medal import StudentSpec, TrainConfig, distill, pca_teacher, shift_score, split

centers = np.array([[0, 0, 0], [5, 0, 0], [0, 5, 0]], dtype=float)


def draw(n, seed, shift=None):
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, 3, n)
    X = np.zeros((n, 10))
    X[:, :3] = centers[lab] + rng.normal(size=(n, 3))
    X[:, 3:] = 0.1 * rng.normal(size=(n, 7))
    if shift is not None:
        X[lab == 1, 6] += shift
    return X, [f"c{c}" for c in lab]


X, _ = draw(500, 0)
sp = split(len(X), (0.6, 0.4, 0.0), seed=0)
tr, ref = X[list(sp.train_idx)], X[list(sp.val_idx)]
model, _ = distill(tr, pca_teacher(tr, 3), StudentSpec(10, 3, (64, 64)), TrainConfig(max_epochs=300))

# %%
same, same_labels = draw(300, 1)
moved, moved_labels = draw(300, 2, shift=5.0)
for name, Xq, lab in (("same population", same, same_labels), ("component c1 moved", moved, moved_labels)):
    rep = shift_score(model, ref, Xq, lab)
    groups = ", ".join(f"{g} {v:.2f}" for g, v in sorted(rep.group_ratios.items()))
    print(f"{name}: ratio {rep.ratio:.2f}  ({groups})")
