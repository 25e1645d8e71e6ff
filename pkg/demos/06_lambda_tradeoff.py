"""
How large should the distillation weight be?
============================================

Small weights leave the student free to trade teacher fidelity for
reconstruction; large weights pin the bottleneck to the teacher. A
logarithmic grid shows the distillation loss falling as the weight grows.
"""

import numpy as np

from medal import StudentSpec, TrainConfig, lambda_sweep

rng = np.random.default_rng(4)
t = rng.uniform(-1, 1, size=(150, 2))
features = [np.cos(1.2 * t[:, 0]), np.sin(1.2 * t[:, 0]), np.cos(1.2 * t[:, 1]), np.sin(1.2 * t[:, 1]),
            0.5 * t[:, 0] * t[:, 1], 0.6 * rng.normal(size=150)]
X = np.column_stack(features)

# %%
# A short budget keeps this quick. Reaching the band on this surface takes
# roughly a thousand epochs at the larger weights.
runs = lambda_sweep(X, t, StudentSpec(6, 2, (64, 64)), TrainConfig(max_epochs=400), grid=(10, 1e2, 1e3, 1e4))
for r in runs:
    print(f"lambda_d={r.lambda_d:>7g}: L_dist {r.l_dist:.2e}  L_rec {r.l_rec:.3f}  in band: {r.success}")
