"""Held-out sweep orchestration over teacher x hyperparameter x seed trials.

Trials are independent and seeded per spec, so outcomes do not depend on the
number of workers or the order they run in. With a sweep directory every
finished trial is persisted under ``trials/<hash>/`` and skipped on re-run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import multiprocessing as mp
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import SplitAssignment
from .distill import TrainConfig, TrainTrace, distill, heldout_errors
from .hashing import config_hash
from .student import StudentSpec, save_model
from .teacher import ingest_teacher, pca_teacher
from .validate import RunRecord, SweepFailure, SweepResult, build_curve, runs_csv

__all__ = [
    "SweepConfig",
    "TrialSpec",
    "TrialOutcome",
    "plan",
    "run",
    "run_trial",
    "default_workers",
    "load_outcomes",
    "sweep_curve",
    "teacher_dim",
]

log = logging.getLogger(__name__)


def default_workers() -> int:
    env = os.environ.get("MEDAL_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, (os.cpu_count() or 1) - 1)


def teacher_dim(ref: str) -> int:
    """Bottleneck dimension implied by a teacher reference (``pca:<r>`` or a file)."""
    if ref.startswith("pca:"):
        return int(ref.split(":", 1)[1])
    path = Path(ref)
    if not path.exists():
        raise FileNotFoundError(f"teacher file not found: {ref}")
    if path.suffix.lower() == ".npy":
        return int(np.load(path, mmap_mode="r").shape[1])
    from .data import load_matrix

    return load_matrix(path).p


@dataclass(frozen=True)
class SweepConfig:
    """Everything that defines a sweep.

    ``teachers`` pairs each hyperparameter value with a teacher reference,
    either ``"pca:<rank>"`` or a path to coordinates fitted on the training rows.
    ``student`` and ``train`` are templates: dimensions and seeds are filled in
    per trial.
    """

    teachers: tuple[tuple[float, str], ...]
    input_dim: int
    split_hash: str
    method: str = "pca"
    hyperparam: str = "rank"
    n_seeds: int = 5
    base_seed: int = 0
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "relu"
    train: TrainConfig = TrainConfig()

    def protocol(self) -> dict:
        train = self.train.to_dict()
        train.pop("seed")
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "train": train,
            "n_seeds": self.n_seeds,
            "base_seed": self.base_seed,
            "split": self.split_hash,
        }

    def protocol_hash(self) -> str:
        return config_hash(self.protocol())


@dataclass(frozen=True)
class TrialSpec:
    teacher: str
    value: float
    seed_index: int
    student: StudentSpec
    train: TrainConfig
    split_hash: str
    method: str = "pca"
    hyperparam: str = "rank"

    def to_dict(self) -> dict:
        return {
            "teacher": self.teacher,
            "value": self.value,
            "seed_index": self.seed_index,
            "student": self.student.to_dict(),
            "train": self.train.to_dict(),
            "split_hash": self.split_hash,
            "method": self.method,
            "hyperparam": self.hyperparam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialSpec":
        return cls(
            d["teacher"],
            float(d["value"]),
            int(d["seed_index"]),
            StudentSpec.from_dict(d["student"]),
            TrainConfig(**d["train"]),
            d["split_hash"],
            d.get("method", "pca"),
            d.get("hyperparam", "rank"),
        )

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _derive_seed(base_seed: int, value: float, seed_index: int, stream: str) -> int:
    key = f"{base_seed}|{value!r}|{seed_index}|{stream}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def plan(cfg: SweepConfig) -> list[TrialSpec]:
    """Cartesian product of teacher grid and seeds, in grid-then-seed order."""
    if not cfg.teachers:
        raise ValueError("teacher grid is empty")
    if cfg.n_seeds < 1:
        raise ValueError("need at least one seed")
    seen: dict[float, str] = {}
    for value, ref in cfg.teachers:
        value = float(value)
        if value in seen:
            warnings.warn(f"duplicate grid value {value!r} ignored", stacklevel=2)
            continue
        seen[value] = ref
    specs = []
    for value in sorted(seen):
        ref = seen[value]
        r = teacher_dim(ref)
        for s in range(cfg.n_seeds):
            student = StudentSpec(
                cfg.input_dim,
                r,
                tuple(cfg.hidden),
                None,
                cfg.activation,
                _derive_seed(cfg.base_seed, value, s, "init"),
            )
            train = replace(cfg.train, seed=_derive_seed(cfg.base_seed, value, s, "batches"))
            specs.append(TrialSpec(ref, value, s, student, train, cfg.split_hash, cfg.method, cfg.hyperparam))
    return specs


@dataclass
class TrialOutcome:
    spec_hash: str
    value: float
    seed_index: int
    trace: TrainTrace | None
    errors: dict[str, dict[str, float]] | None
    seconds: float
    error: str | None = None
    reused: bool = False

    @property
    def success(self) -> bool:
        return self.trace is not None and self.trace.distill_success and self.errors is not None

    def record(self) -> RunRecord:
        e = self.errors or {}
        get = lambda part: e.get(part, {}).get("mean", math.nan)
        return RunRecord(self.value, self.seed_index, get("val"), get("test"), get("train"), self.success)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "spec_hash": self.spec_hash,
            "value": self.value,
            "seed_index": self.seed_index,
            "distill_success": self.success,
            "verdict": None if self.trace is None else self.trace.verdict(),
            "errors": self.errors,
            "seconds": self.seconds,
            "error": self.error,
        }


_WORKER_DATA: dict = {}


def _init_worker(X: np.ndarray, split: SplitAssignment):
    _WORKER_DATA["X"] = X
    _WORKER_DATA["split"] = split


def run_trial(spec: TrialSpec, X, split: SplitAssignment, trial_dir: Path | None = None) -> TrialOutcome:
    """Fit the teacher on the training rows, distil, and score every split part."""
    t0 = time.perf_counter()
    h = spec.hash()
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    try:
        X_tr = X[list(split.train_idx)]
        if spec.teacher.startswith("pca:"):
            teacher = pca_teacher(X_tr, int(spec.teacher.split(":", 1)[1]))
        else:
            teacher = ingest_teacher(spec.teacher, method=spec.method, hyperparam=(spec.hyperparam, spec.value), n_rows=len(X_tr), input_dim=X.shape[1])
        model, trace = distill(X_tr, teacher, spec.student, spec.train)
        errors = None
        if trace.stop_reason != "diverged":
            errors = {}
            for part in ("train", "val", "test"):
                idx = split.indices(part)
                if idx:
                    sc = heldout_errors(model, X[list(idx)])
                    errors[part] = {"mean": sc.mean, "se": sc.se, "n": len(sc)}
        outcome = TrialOutcome(h, spec.value, spec.seed_index, trace, errors, time.perf_counter() - t0)
        if trial_dir is not None:
            _persist(outcome, trial_dir, model)
        return outcome
    except Exception as exc:  # a failed trial is data, never fatal to the sweep
        log.warning("trial %s failed: %s", h, exc)
        outcome = TrialOutcome(h, spec.value, spec.seed_index, None, None, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
        if trial_dir is not None:
            _persist(outcome, trial_dir, None)
        return outcome


def _run_in_worker(spec: TrialSpec, trial_dir: str | None) -> TrialOutcome:
    return run_trial(spec, _WORKER_DATA["X"], _WORKER_DATA["split"], None if trial_dir is None else Path(trial_dir))


def _persist(outcome: TrialOutcome, trial_dir: Path, model) -> None:
    trial_dir.mkdir(parents=True, exist_ok=True)
    if outcome.trace is not None:
        outcome.trace.save(trial_dir)
    if model is not None:
        save_model(model, trial_dir / "model")
    tmp = trial_dir / "outcome.json.tmp"
    tmp.write_text(json.dumps(outcome.to_dict(), indent=1))
    tmp.replace(trial_dir / "outcome.json")  # written last: marks the trial complete


def _load_outcome(trial_dir: Path) -> TrialOutcome | None:
    path = trial_dir / "outcome.json"
    if not path.exists():
        return None
    d = json.loads(path.read_text())
    trace = None
    if d.get("verdict") is not None and (trial_dir / "trace.csv").exists():
        trace = TrainTrace.from_files(trial_dir / "trace.csv", trial_dir / "verdict.json")
    return TrialOutcome(d["spec_hash"], float(d["value"]), int(d["seed_index"]), trace, d.get("errors"), float(d["seconds"]), d.get("error"), reused=True)


def run(
    specs: Sequence[TrialSpec],
    X,
    split: SplitAssignment,
    worker_limit: int | None = None,
    sweep_dir=None,
    cfg: SweepConfig | None = None,
) -> list[TrialOutcome]:
    """Execute every trial and return outcomes in spec order.

    Trials already completed in ``sweep_dir`` are loaded instead of re-run.
    """
    workers = default_workers() if worker_limit is None else int(worker_limit)
    if workers < 1:
        raise ValueError("worker_limit must be >= 1")
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    root = None if sweep_dir is None else Path(sweep_dir)
    hashes = [s.hash() for s in specs]
    if root is not None:
        (root / "trials").mkdir(parents=True, exist_ok=True)
        _write_plan(root, specs, hashes, cfg)

    results: dict[str, TrialOutcome] = {}
    pending = []
    for spec, h in zip(specs, hashes):
        prev = None if root is None else _load_outcome(root / "trials" / h)
        if prev is not None:
            results[h] = prev
        elif h not in results and all(h != p[1] for p in pending):
            pending.append((spec, h))
    log.info("%d trials, %d already complete, %d to run on %d workers", len(specs), len(results), len(pending), workers)

    def tdir(h):
        return None if root is None else root / "trials" / h

    if workers == 1 or len(pending) <= 1:
        for spec, h in pending:
            results[h] = run_trial(spec, X, split, tdir(h))
    else:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init_worker, initargs=(X, split)) as pool:
            futs = {h: pool.submit(_run_in_worker, spec, None if tdir(h) is None else str(tdir(h))) for spec, h in pending}
            for h, fut in futs.items():
                try:
                    results[h] = fut.result()
                except Exception as exc:  # worker crash
                    results[h] = TrialOutcome(h, math.nan, -1, None, None, 0.0, f"worker error: {exc!r}")

    outcomes = [results[h] for h in hashes]
    if root is not None:
        _write_summary(root, outcomes, cfg)
    return outcomes


def _write_plan(root: Path, specs, hashes, cfg: SweepConfig | None) -> None:
    doc = {
        "schema": 1,
        "method": None if cfg is None else cfg.method,
        "hyperparam": None if cfg is None else cfg.hyperparam,
        "protocol": None if cfg is None else cfg.protocol(),
        "protocol_hash": None if cfg is None else cfg.protocol_hash(),
        "trials": [{"hash": h, **s.to_dict()} for s, h in zip(specs, hashes)],
    }
    (root / "sweep.json").write_text(json.dumps(doc, indent=1))


def sweep_curve(outcomes: Sequence[TrialOutcome], cfg: SweepConfig | None = None, hyperparam: str | None = None) -> SweepResult:
    records = [o.record() for o in outcomes]
    hp = hyperparam or (cfg.hyperparam if cfg else "value")
    r = None
    if cfg is not None and cfg.teachers:
        r = teacher_dim(cfg.teachers[0][1])
    return build_curve(
        records,
        hp,
        method=cfg.method if cfg else "",
        protocol_hash=cfg.protocol_hash() if cfg else "",
        teacher_dim=r,
    )


def _write_summary(root: Path, outcomes: Sequence[TrialOutcome], cfg: SweepConfig | None) -> None:
    records = sorted((o.record() for o in outcomes), key=lambda r: (r.value, r.seed))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "n_runs", "n_success", "val_mean", "val_se", "test_mean", "test_se"])
    for v in sorted({r.value for r in records}):
        ok = [r for r in records if r.value == v and r.distill_success]
        n_runs = sum(1 for r in records if r.value == v)
        if ok:
            val = np.array([r.val_error for r in ok])
            te = np.array([r.test_error for r in ok])
            se = lambda a: float(np.std(a, ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0
            w.writerow([repr(v), n_runs, len(ok), repr(float(val.mean())), repr(se(val)), repr(float(te.mean())), repr(se(te))])
        else:
            w.writerow([repr(v), n_runs, 0, "", "", "", ""])
    (root / "summary.csv").write_text(buf.getvalue())
    (root / "runs.csv").write_text(runs_csv(records))
    try:
        curve = sweep_curve(outcomes, cfg)
    except SweepFailure:  # no curve when every run failed; the tables above still record it
        log.warning("no successful trials in %s", root)
        return
    (root / "curve.json").write_text(curve.to_json())


def load_outcomes(sweep_dir) -> tuple[dict, list[TrialOutcome]]:
    """Read ``sweep.json`` and every completed trial outcome from a sweep directory."""
    root = Path(sweep_dir)
    doc = json.loads((root / "sweep.json").read_text())
    outs = []
    for t in doc["trials"]:
        o = _load_outcome(root / "trials" / t["hash"])
        if o is not None:
            outs.append(o)
    return doc, outs
