"""Teacher embeddings: ingestion, the built-in PCA teacher, RMS-radius normalization."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import DataError, PcaBasis, load_matrix, pca_reduce, save_matrix

__all__ = [
    "TeacherEmbedding",
    "TeacherNorm",
    "ingest_teacher",
    "pca_teacher",
    "normalize_teacher",
    "denormalize",
    "save_teacher",
    "load_teacher",
]


@dataclass(frozen=True)
class TeacherNorm:
    mean: np.ndarray
    scale: float

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "TeacherNorm":
        return cls(np.asarray(d["mean"], dtype=np.float64), float(d["scale"]))


@dataclass(frozen=True)
class TeacherEmbedding:
    """Teacher coordinates ``Z`` (``n x r``) with provenance and normalization.

    ``norm`` is set once the coordinates have been centred and scaled; the
    original coordinates are ``coords * norm.scale + norm.mean``.
    """

    coords: np.ndarray
    method: str = "ingested"
    hyperparam: tuple[str, float] | None = None
    norm: TeacherNorm | None = None
    basis: PcaBasis | None = None

    def __post_init__(self):
        Z = np.ascontiguousarray(self.coords, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
            raise DataError(f"teacher coordinates must be a non-empty 2-D array, got {Z.shape}")
        if not np.all(np.isfinite(Z)):
            i, j = np.argwhere(~np.isfinite(Z))[0]
            raise DataError(f"non-finite teacher coordinate at row {i}, column {j}")
        Z.setflags(write=False)
        object.__setattr__(self, "coords", Z)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def r(self) -> int:
        return self.coords.shape[1]

    @property
    def normalized(self) -> bool:
        return self.norm is not None


def ingest_teacher(
    path,
    format: str | None = None,
    method: str = "ingested",
    hyperparam: tuple[str, float] | None = None,
    n_rows: int | None = None,
    input_dim: int | None = None,
) -> TeacherEmbedding:
    """Read precomputed teacher coordinates from CSV or NPY.

    ``n_rows`` and ``input_dim`` describe the training matrix the teacher will
    be paired with; a row-count mismatch or ``r >= p`` is rejected.
    """
    Z = load_matrix(path, format).values
    if n_rows is not None and Z.shape[0] != n_rows:
        raise DataError(f"{path}: teacher has {Z.shape[0]} rows but training data has {n_rows}")
    if input_dim is not None and Z.shape[1] >= input_dim:
        raise DataError(f"{path}: teacher dimension {Z.shape[1]} must be below input dimension {input_dim}")
    if hyperparam is not None:
        hyperparam = (str(hyperparam[0]), float(hyperparam[1]))
    return TeacherEmbedding(Z, method=method, hyperparam=hyperparam)


def pca_teacher(X, r: int) -> TeacherEmbedding:
    """Top-``r`` principal scores of ``X`` as an (un-normalized) teacher."""
    scores, basis = pca_reduce(X, r)
    return TeacherEmbedding(scores.values, method="pca", hyperparam=("rank", float(r)), basis=basis)


def normalize_teacher(Z: TeacherEmbedding) -> TeacherEmbedding:
    """Centre at the empirical mean and divide by the RMS radius.

    Reapplying to an already-normalized teacher composes the stored
    ``(mean, scale)`` so that denormalization still recovers the original.
    """
    coords = Z.coords
    if coords.shape[0] < 2:
        raise DataError("normalization needs at least two teacher rows")
    mu = coords.mean(axis=0)
    centered = coords - mu
    s = float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))
    if s == 0.0:
        raise DataError("degenerate teacher: all rows identical (RMS radius 0)")
    if Z.norm is None:
        norm = TeacherNorm(mu, s)
    else:
        norm = TeacherNorm(Z.norm.mean + Z.norm.scale * mu, Z.norm.scale * s)
    return replace(Z, coords=centered / s, norm=norm)


def denormalize(Z: TeacherEmbedding | np.ndarray, norm: TeacherNorm | None = None) -> np.ndarray:
    """Map normalized coordinates back to the teacher's original scale."""
    if isinstance(Z, TeacherEmbedding):
        norm = Z.norm if norm is None else norm
        Z = Z.coords
    if norm is None:
        return np.asarray(Z, dtype=np.float64)
    return np.asarray(Z) * norm.scale + norm.mean


def save_teacher(Z: TeacherEmbedding, path) -> None:
    """Write ``<path>.json`` metadata and a sibling ``<path>.npy`` of coordinates."""
    path = Path(path)
    meta = {
        "schema": 1,
        "method": Z.method,
        "hyperparam": None if Z.hyperparam is None else list(Z.hyperparam),
        "norm": None if Z.norm is None else Z.norm.to_dict(),
        "coords": path.with_suffix(".npy").name,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1))
    save_matrix(path.with_suffix(".npy"), Z.coords)


def load_teacher(path) -> TeacherEmbedding:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    coords = load_matrix(path.with_suffix(".npy")).values
    hp = meta.get("hyperparam")
    norm = meta.get("norm")
    return TeacherEmbedding(
        coords,
        method=meta["method"],
        hyperparam=None if hp is None else (hp[0], float(hp[1])),
        norm=None if norm is None else TeacherNorm.from_dict(norm),
    )

