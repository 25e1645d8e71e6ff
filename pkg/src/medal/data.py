"""Observation matrices, label vectors, splits and PCA pre-reduction."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DataError",
    "DataMatrix",
    "LabelVector",
    "SplitAssignment",
    "PcaBasis",
    "load_matrix",
    "save_matrix",
    "load_labels",
    "split",
    "pca_reduce",
    "DEFAULT_FRACTIONS",
]

DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)


class DataError(ValueError):
    """Raised for malformed or invalid input data."""


@dataclass(frozen=True)
class DataMatrix:
    """Dense ``n x p`` float64 observation matrix with optional row ids."""

    values: np.ndarray
    row_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"expected a 2-D matrix, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError("empty matrix")
        bad = np.argwhere(~np.isfinite(values))
        if len(bad):
            i, j = bad[0]
            raise DataError(f"non-finite entry {values[i, j]!r} at row {i}, column {j}")
        if self.row_ids is not None and len(self.row_ids) != values.shape[0]:
            raise DataError("row_ids length does not match row count")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def take(self, idx: Sequence[int]) -> "DataMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        ids = None if self.row_ids is None else tuple(self.row_ids[i] for i in idx)
        return DataMatrix(self.values[idx], ids)


@dataclass(frozen=True)
class LabelVector:
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))

    def __len__(self):
        return len(self.labels)

    def take(self, idx: Sequence[int]) -> "LabelVector":
        return LabelVector(tuple(self.labels[i] for i in idx))


@dataclass(frozen=True)
class SplitAssignment:
    train_idx: tuple[int, ...]
    val_idx: tuple[int, ...]
    test_idx: tuple[int, ...]
    seed: int
    fractions: tuple[float, float, float]

    @property
    def n(self) -> int:
        return len(self.train_idx) + len(self.val_idx) + len(self.test_idx)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_idx), len(self.val_idx), len(self.test_idx)

    def indices(self, part: str) -> tuple[int, ...]:
        try:
            return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[part]
        except KeyError:
            raise DataError(f"unknown split part {part!r}") from None

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "seed": self.seed,
            "fractions": list(self.fractions),
            "train_idx": list(self.train_idx),
            "val_idx": list(self.val_idx),
            "test_idx": list(self.test_idx),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        out = cls(
            tuple(int(i) for i in d["train_idx"]),
            tuple(int(i) for i in d["val_idx"]),
            tuple(int(i) for i in d["test_idx"]),
            int(d["seed"]),
            tuple(float(f) for f in d["fractions"]),
        )
        allidx = sorted(out.train_idx + out.val_idx + out.test_idx)
        if allidx != list(range(len(allidx))):
            raise DataError("split indices do not partition 0..n-1")
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "SplitAssignment":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PcaBasis:
    """Mean, orthonormal component rows and descending eigenvalues."""

    mean: np.ndarray
    components: np.ndarray
    explained: np.ndarray

    @property
    def rank(self) -> int:
        return self.components.shape[0]

    def transform(self, X) -> np.ndarray:
        X = _as_array(X)
        return (X - self.mean) @ self.components.T

    def inverse_transform(self, scores) -> np.ndarray:
        return np.asarray(scores, dtype=np.float64) @ self.components + self.mean

    def reconstruction_error(self, X) -> float:
        """Mean squared row-norm residual of projecting ``X`` onto the basis."""
        X = _as_array(X)
        resid = X - self.inverse_transform(self.transform(X))
        return float(np.mean(np.sum(resid**2, axis=1)))


def _as_array(X) -> np.ndarray:
    if isinstance(X, DataMatrix):
        return X.values
    return np.asarray(X, dtype=np.float64)


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = path.suffix.lstrip(".").lower()
    if fmt not in ("csv", "npy"):
        raise DataError(f"unsupported matrix format {fmt!r} for {path}")
    return fmt


def _parse_row(row: list[str]) -> list[float] | None:
    try:
        return [float(cell) for cell in row]
    except ValueError:
        return None


def _read_csv(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty matrix")
    parsed = []
    for lineno, row in enumerate(rows):
        vals = _parse_row(row)
        if vals is None:
            if lineno == 0:
                continue  # header
            raise DataError(f"{path}: could not parse row {lineno} as numbers")
        if parsed and len(vals) != len(parsed[0]):
            raise DataError(f"{path}: row {lineno} has {len(vals)} columns, expected {len(parsed[0])}")
        parsed.append(vals)
    if not parsed:
        raise DataError(f"{path}: empty matrix")
    return np.array(parsed, dtype=np.float64)


def load_matrix(path: str | Path, format: str | None = None) -> DataMatrix:
    """Load a CSV or NPY matrix and validate that every entry is finite.

    A CSV header is detected when the first row fails to parse as numbers.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    fmt = _detect_format(path, format)
    if fmt == "csv":
        arr = _read_csv(path)
    else:
        try:
            arr = np.load(path, allow_pickle=False)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
        if arr.ndim == 1:
            arr = arr[:, None]
        arr = arr.astype(np.float64, copy=False)
    if arr.size == 0:
        raise DataError(f"{path}: empty matrix")
    try:
        return DataMatrix(arr)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_matrix(path: str | Path, X, format: str | None = None) -> None:
    path = Path(path)
    arr = np.ascontiguousarray(_as_array(X), dtype="<f8")
    if _detect_format(path, format) == "npy":
        with open(path, "wb") as fh:
            np.lib.format.write_array(fh, arr, version=(1, 0), allow_pickle=False)
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            for row in arr:
                w.writerow([repr(float(v)) for v in row])


def load_labels(path: str | Path, n: int | None = None) -> LabelVector:
    """One label per line; blank trailing lines are ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    labels = LabelVector(tuple(s.strip() for s in lines))
    if n is not None and len(labels) != n:
        raise DataError(f"{path}: {len(labels)} labels for {n} rows")
    return labels


def split(n: int, fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0) -> SplitAssignment:
    """Seeded shuffled partition of ``range(n)`` into train/val/test.

    Validation and test sizes are ``floor(f * n)`` (at least one row when the
    fraction is positive); the remainder goes to train.
    """
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3:
        raise DataError("fractions must have three entries (train, val, test)")
    if any(not (0.0 <= f <= 1.0) for f in fr):
        raise DataError(f"fractions must lie in [0, 1], got {fr}")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {sum(fr):.12g}")
    n = int(n)

    def size(f):
        return max(1, math.floor(f * n + 1e-9)) if f > 0 else 0

    n_val, n_te = size(fr[1]), size(fr[2])
    n_tr = n - n_val - n_te
    if n_tr < (1 if fr[0] > 0 else 0) or (fr[0] == 0 and n_tr != 0):
        raise DataError(f"n={n} is too small for non-empty splits with fractions {fr}")

    perm = np.random.default_rng(seed).permutation(n)
    tr = tuple(sorted(int(i) for i in perm[:n_tr]))
    va = tuple(sorted(int(i) for i in perm[n_tr : n_tr + n_val]))
    te = tuple(sorted(int(i) for i in perm[n_tr + n_val :]))
    return SplitAssignment(tr, va, te, int(seed), fr)


def pca_reduce(X, k: int) -> tuple[DataMatrix, PcaBasis]:
    """Project mean-centred ``X`` onto its top-``k`` principal axes.

    Returns the ``n x k`` score matrix and the fitted basis. Eigenvectors are
    sign-fixed so the largest-magnitude loading of each component is positive.
    """
    A = _as_array(X)
    n, p = A.shape
    k = int(k)
    if not 1 <= k <= min(n, p):
        raise DataError(f"rank k={k} out of range [1, {min(n, p)}]")
    mean = A.mean(axis=0)
    C = A - mean
    if not np.any(C):
        raise DataError("degenerate input: all rows are identical")

    if p <= n:
        evals, evecs = np.linalg.eigh(C.T @ C / n)
        order = np.argsort(evals)[::-1][:k]
        evals = evals[order]
        comps = evecs[:, order].T
    else:
        # Gram route: left vectors of C give components via C^T u / sqrt(n*lambda)
        evals, evecs = np.linalg.eigh(C @ C.T / n)
        order = np.argsort(evals)[::-1][:k]
        evals = evals[order]
        U = evecs[:, order]
        comps = np.zeros((k, p))
        null_tol = 1e-12 * max(evals[0], 0.0)
        for j in range(k):
            if evals[j] <= null_tol:
                continue
            v = C.T @ U[:, j]
            comps[j] = v / np.linalg.norm(v)
        comps = _complete_orthonormal(comps)

    comps = _fix_signs(comps)
    evals = np.clip(evals, 0.0, None)
    basis = PcaBasis(mean, comps, evals)
    return DataMatrix(C @ comps.T), basis


def _fix_signs(comps: np.ndarray) -> np.ndarray:
    comps = comps.copy()
    for j in range(comps.shape[0]):
        if comps[j, np.argmax(np.abs(comps[j]))] < 0:
            comps[j] = -comps[j]
    return comps


def _complete_orthonormal(comps: np.ndarray) -> np.ndarray:
    """Replace zero rows (null-space directions) with orthonormal fill-ins."""
    k, p = comps.shape
    good = [j for j in range(k) if np.any(comps[j])]
    if len(good) == k:
        return comps
    Q = comps[good].T
    for j in range(k):
        if j in good:
            continue
        for e in np.eye(p):
            v = e - Q @ (Q.T @ e) if Q.size else e
            if np.linalg.norm(v) > 1e-8:
                v /= np.linalg.norm(v)
                comps[j] = v
                Q = np.column_stack([Q, v]) if Q.size else v[:, None]
                break
    return comps
