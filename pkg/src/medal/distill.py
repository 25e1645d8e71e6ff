"""Training protocol: joint objective, plateau schedule and the in-band stopping rule."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DataMatrix
from .hashing import config_hash
from .student import (
    Adam,
    DivergenceError,
    PlateauScheduler,
    StudentModel,
    StudentSpec,
    grad_step,
    init_student,
    losses,
    reconstruct,
)
from .teacher import TeacherEmbedding, normalize_teacher

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "TrainTrace",
    "StabilityMonitor",
    "PointwiseScores",
    "check_stop",
    "replay_stop",
    "distill",
    "heldout_errors",
    "lambda_sweep",
    "DEFAULT_LAMBDA_GRID",
]

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (1e1, 1e2, 1e3, 1e4)

STABLE_IN_BAND = "stable_in_band"
BUDGET_EXHAUSTED = "budget_exhausted"
DIVERGED = "diverged"


@dataclass(frozen=True)
class TrainConfig:
    lambda_d: float = 1e3
    initial_lr: float = 1e-3
    max_epochs: int = 2000
    batch_size: int = 256
    success_threshold: float = 9e-6
    slope_eps_distill: float = 1e-7
    slope_eps_recon: float = 1e-3
    stability_window: int = 10
    stop_patience: int = 50
    sched_factor: float = 0.5
    sched_patience: int = 20
    sched_threshold: float = 1e-4
    min_lr: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.lambda_d < 0:
            raise ValueError("lambda_d must be non-negative")
        for name in ("initial_lr", "success_threshold", "slope_eps_distill", "slope_eps_recon", "min_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_epochs < 1 or self.stop_patience < 1 or self.stability_window < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, stop_patience, stability_window and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    l_dist: float
    l_rec: float
    lr: float


@dataclass
class TrainTrace:
    records: list[Checkpoint] = field(default_factory=list)
    distill_success: bool = False
    stop_reason: str = BUDGET_EXHAUSTED
    config_hash: str = ""

    @property
    def final(self) -> Checkpoint | None:
        return self.records[-1] if self.records else None

    @property
    def final_l_dist(self) -> float:
        return self.records[-1].l_dist if self.records else math.nan

    @property
    def final_l_rec(self) -> float:
        return self.records[-1].l_rec if self.records else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "L_dist", "L_rec", "lr"])
        for c in self.records:
            w.writerow([c.epoch, repr(c.l_dist), repr(c.l_rec), repr(c.lr)])
        return buf.getvalue()

    def verdict(self) -> dict:
        return {
            "schema": 1,
            "distill_success": self.distill_success,
            "stop_reason": self.stop_reason,
            "final_losses": {"L_dist": self.final_l_dist, "L_rec": self.final_l_rec},
            "epochs": self.final.epoch if self.records else 0,
            "config_hash": self.config_hash,
        }

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(self.to_csv())
        (out / "verdict.json").write_text(json.dumps(self.verdict(), indent=1))

    @classmethod
    def from_files(cls, trace_csv, verdict_json) -> "TrainTrace":
        rows = list(csv.DictReader(io.StringIO(Path(trace_csv).read_text())))
        records = [Checkpoint(int(r["epoch"]), float(r["L_dist"]), float(r["L_rec"]), float(r["lr"])) for r in rows]
        v = json.loads(Path(verdict_json).read_text())
        return cls(records, bool(v["distill_success"]), v["stop_reason"], v.get("config_hash", ""))


class StabilityMonitor:
    """Counts consecutive checkpoints that are in band with flat loss slopes.

    A checkpoint ``t`` is stable when ``L_dist(t) <= success_threshold`` and
    both ``|L(t) - L(t - w)| / w`` fall below their epsilons. Any violation
    resets the counter; fewer than ``w + 1`` checkpoints is never stable.
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.l_dist: list[float] = []
        self.l_rec: list[float] = []
        self.count = 0

    def is_stable(self) -> bool:
        cfg, w = self.cfg, self.cfg.stability_window
        if len(self.l_dist) < w + 1:
            return False
        if not self.l_dist[-1] <= cfg.success_threshold:
            return False
        slope_d = abs(self.l_dist[-1] - self.l_dist[-1 - w]) / w
        slope_r = abs(self.l_rec[-1] - self.l_rec[-1 - w]) / w
        return slope_d < cfg.slope_eps_distill and slope_r < cfg.slope_eps_recon

    def update(self, l_dist: float, l_rec: float) -> bool:
        """Record a checkpoint; return True when training should stop."""
        self.l_dist.append(l_dist)
        self.l_rec.append(l_rec)
        self.count = self.count + 1 if self.is_stable() else 0
        return self.count >= self.cfg.stop_patience


def check_stop(l_dist: Sequence[float], l_rec: Sequence[float], cfg: TrainConfig) -> str:
    """Replay a loss history through the stopping rule.

    Returns ``"stop"`` if the rule fires at the final checkpoint (or earlier),
    otherwise ``"continue"``.
    """
    if len(l_dist) != len(l_rec):
        raise ValueError("loss histories differ in length")
    mon = StabilityMonitor(cfg)
    for d, r in zip(l_dist, l_rec):
        if mon.update(float(d), float(r)):
            return "stop"
    return "continue"


def replay_stop(l_dist: Sequence[float], l_rec: Sequence[float], cfg: TrainConfig) -> tuple[int, str | None]:
    """Run a recorded loss history through the full termination logic.

    Returns ``(checkpoints_consumed, stop_reason)``. ``stop_reason`` is
    ``None`` when the history ends before any rule fires. A non-finite loss
    ends the run as diverged; reaching ``max_epochs`` checkpoints ends it as
    budget exhausted unless the stability rule fires on that same checkpoint.
    """
    if len(l_dist) != len(l_rec):
        raise ValueError("loss histories differ in length")
    mon = StabilityMonitor(cfg)
    for i, (d, r) in enumerate(zip(l_dist, l_rec), start=1):
        d, r = float(d), float(r)
        if not (math.isfinite(d) and math.isfinite(r)):
            return i, DIVERGED
        if mon.update(d, r):
            return i, STABLE_IN_BAND
        if i >= cfg.max_epochs:
            return i, BUDGET_EXHAUSTED
    return len(l_dist), None


def _teacher_coords(Z) -> tuple[np.ndarray, object]:
    if not isinstance(Z, TeacherEmbedding):
        Z = TeacherEmbedding(np.asarray(Z, dtype=np.float64))
    if not Z.normalized:
        Z = normalize_teacher(Z)
    return Z.coords, Z.norm


def distill(X_tr, Z, spec: StudentSpec, cfg: TrainConfig, *, callback=None) -> tuple[StudentModel, TrainTrace]:
    """Train a student on ``X_tr`` against teacher ``Z``.

    An un-normalized teacher (raw array or :class:`TeacherEmbedding`) is
    normalized first and its ``(mean, scale)`` is attached to the returned
    model. Losses are evaluated on the full training set after every epoch.
    """
    X = np.asarray(getattr(X_tr, "values", X_tr), dtype=np.float64)
    Zc, norm = _teacher_coords(Z)
    if Zc.shape[0] != X.shape[0]:
        raise ValueError(f"teacher has {Zc.shape[0]} rows, data has {X.shape[0]}")
    if X.shape[1] != spec.input_dim or Zc.shape[1] != spec.bottleneck_dim:
        raise ValueError(f"data {X.shape} / teacher {Zc.shape} do not match spec dims {spec.input_dim}->{spec.bottleneck_dim}")

    model = init_student(spec)
    model.teacher_norm = norm
    opt = Adam(lr=cfg.initial_lr)
    sched = PlateauScheduler(cfg.sched_factor, cfg.sched_patience, cfg.sched_threshold, cfg.min_lr)
    monitor = StabilityMonitor(cfg)
    trace = TrainTrace(config_hash=config_hash({"spec": spec.to_dict(), "train": cfg.to_dict()}))
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    bs = min(cfg.batch_size, n)

    for epoch in range(1, cfg.max_epochs + 1):
        lr_used = opt.lr
        try:
            if bs == n:
                grad_step(model, opt, X, Zc, cfg.lambda_d)
            else:
                perm = rng.permutation(n)
                for start in range(0, n, bs):
                    idx = perm[start : start + bs]
                    grad_step(model, opt, X[idx], Zc[idx], cfg.lambda_d)
            with np.errstate(over="ignore", invalid="ignore"):
                l_rec, l_dist = losses(model, X, Zc)
            if not (math.isfinite(l_rec) and math.isfinite(l_dist)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
        except DivergenceError as exc:
            log.warning("training diverged at epoch %d: %s", epoch, exc)
            trace.stop_reason = DIVERGED
            trace.distill_success = False
            return model, trace

        trace.records.append(Checkpoint(epoch, l_dist, l_rec, lr_used))
        if callback is not None:
            callback(trace.records[-1])
        if monitor.update(l_dist, l_rec):
            trace.stop_reason = STABLE_IN_BAND
            break
        opt.lr = sched.step(l_dist, opt.lr)
    else:
        trace.stop_reason = BUDGET_EXHAUSTED

    trace.distill_success = trace.final_l_dist <= cfg.success_threshold
    return model, trace


@dataclass
class PointwiseScores:
    """Per-row squared reconstruction errors with mean and standard error."""

    scores: np.ndarray
    row_ids: tuple[str, ...] | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def se(self) -> float:
        n = len(self.scores)
        return float(np.std(self.scores, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    def __len__(self):
        return len(self.scores)


def heldout_errors(model: StudentModel, X) -> PointwiseScores:
    """Per-row ``||x - d(e(x))||^2`` for held-out observations."""
    Xv = np.atleast_2d(np.asarray(getattr(X, "values", X), dtype=np.float64))
    if Xv.shape[1] != model.spec.input_dim:
        raise ValueError(f"expected {model.spec.input_dim} columns, got {Xv.shape[1]}")
    resid = Xv - reconstruct(model, Xv)
    ids = X.row_ids if isinstance(X, DataMatrix) else None
    return PointwiseScores(np.sum(resid**2, axis=1), ids)


@dataclass(frozen=True)
class LambdaRun:
    lambda_d: float
    seed: int
    l_dist: float
    l_rec: float
    success: bool
    stop_reason: str


def lambda_sweep(
    X_tr,
    Z,
    spec: StudentSpec,
    cfg: TrainConfig,
    grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    seeds: Sequence[int] = (0,),
) -> list[LambdaRun]:
    """One independent distillation per ``(lambda_d, seed)``; failures are recorded, not raised."""
    if not len(grid):
        raise ValueError("lambda grid is empty")
    out = []
    for lam in grid:
        for s in seeds:
            run_spec = replace(spec, init_seed=int(s))
            run_cfg = replace(cfg, lambda_d=float(lam), seed=int(s))
            _, trace = distill(X_tr, Z, run_spec, run_cfg)
            out.append(
                LambdaRun(float(lam), int(s), trace.final_l_dist, trace.final_l_rec, trace.distill_success, trace.stop_reason)
            )
    return out
