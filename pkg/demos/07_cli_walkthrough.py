"""
The command-line workflow
=========================

The same protocol driven through the ``medal`` command: fix a split, sweep
PCA ranks, select one, then score held-out rows of the chosen model. Every
output sits next to a manifest recording its inputs.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from medal.data import save_matrix


def medal(*args):
    # run through the interpreter so the demo works without the console script
    cmd = [sys.executable, "-m", "medal", *map(str, args)]
    print("$ medal", " ".join(map(str, args)))
    out = subprocess.run(cmd, capture_output=True, text=True, check=True)
    print(out.stdout, end="")


work = Path(tempfile.mkdtemp())
rng = np.random.default_rng(5)
save_matrix(work / "X.csv", rng.normal(size=(200, 6)) * np.linspace(2.0, 0.2, 6))

# %%
medal("split", "--n-from", work / "X.csv", "--seed", "0", "--out", work / "splits.json")

# %%
# Small linear students keep this fast.
medal("sweep", "--data", work / "X.csv", "--split", work / "splits.json", "--pca-ranks", "1,2,3,4",
      "--seeds", "2", "--hidden", "8", "--activation", "linear", "--max-epochs", "3000",
      "--workers", "2", "--out", work / "sweep")

# %%
medal("select", "--sweep", work / "sweep", "--rule", "one-se")

# %%
trial = sorted((work / "sweep" / "trials").iterdir())[0]
medal("score", "--model", trial, "--data", work / "X.csv", "--split", work / "splits.json", "--out", work / "scores.csv")
print(sorted(p.name for p in work.iterdir()))
