"""Downstream validation on distilled students.

Validation curves with min / one-standard-error selection, per-group
distortion summaries, distribution-shift ratios and cross-method ranking.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .distill import PointwiseScores, heldout_errors
from .student import StudentModel, encode

__all__ = [
    "RunRecord",
    "ValueSummary",
    "SweepResult",
    "SweepFailure",
    "ProtocolMismatch",
    "GroupSummary",
    "ShiftReport",
    "MethodEntry",
    "build_curve",
    "select",
    "distortion_by_group",
    "shift_score",
    "compare_methods",
    "runs_csv",
]


class SweepFailure(RuntimeError):
    """No successful run at any grid value."""


class ProtocolMismatch(RuntimeError):
    """Entries were not produced under the same student, training and split."""


@dataclass(frozen=True)
class RunRecord:
    value: float
    seed: int
    val_error: float
    test_error: float = math.nan
    train_error: float = math.nan
    distill_success: bool = True


@dataclass(frozen=True)
class ValueSummary:
    value: float
    mean: float
    se: float
    n_success: int


@dataclass
class SweepResult:
    hyperparam: str
    grid: list[float]
    records: list[RunRecord]
    summaries: dict[float, ValueSummary]
    method: str = ""
    protocol_hash: str = ""
    teacher_dim: int | None = None
    selected: dict[str, float] = field(default_factory=dict)

    def summary_rows(self) -> list[ValueSummary]:
        return [self.summaries[v] for v in self.grid if v in self.summaries]

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "hyperparam": self.hyperparam,
            "method": self.method,
            "protocol_hash": self.protocol_hash,
            "teacher_dim": self.teacher_dim,
            "grid": list(self.grid),
            "summaries": [
                {"value": s.value, "mean": s.mean, "se": s.se, "n_success": s.n_success} for s in self.summary_rows()
            ],
            "records": [r.__dict__ for r in self.records],
            "selected": dict(self.selected),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        summaries = {float(s["value"]): ValueSummary(float(s["value"]), s["mean"], s["se"], s["n_success"]) for s in d["summaries"]}
        return cls(
            d["hyperparam"],
            [float(v) for v in d["grid"]],
            [RunRecord(**r) for r in d["records"]],
            summaries,
            d.get("method", ""),
            d.get("protocol_hash", ""),
            d.get("teacher_dim"),
            dict(d.get("selected", {})),
        )

    def to_csv(self) -> str:
        return runs_csv(self.records)


def runs_csv(records: Iterable[RunRecord]) -> str:
    """Flat ``value, seed, split, error, success`` table sorted by value, seed, split."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "seed", "split", "error", "success"])
    rows = []
    for r in records:
        for part, err in (("train", r.train_error), ("val", r.val_error), ("test", r.test_error)):
            rows.append((r.value, r.seed, part, err, int(r.distill_success)))
    for row in sorted(rows, key=lambda t: (t[0], t[1], t[2])):
        w.writerow([repr(row[0]), row[1], row[2], repr(row[3]), row[4]])
    return buf.getvalue()


def _summarize(value: float, errors: Sequence[float]) -> ValueSummary:
    errs = np.asarray(errors, dtype=np.float64)
    n = len(errs)
    se = float(np.std(errs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return ValueSummary(value, float(np.mean(errs)), se, n)


def build_curve(
    records: Iterable[RunRecord],
    hyperparam: str = "value",
    *,
    method: str = "",
    protocol_hash: str = "",
    teacher_dim: int | None = None,
) -> SweepResult:
    """Summarize validation error per grid value over successful runs only."""
    records = list(records)
    grid = sorted({float(r.value) for r in records})
    summaries = {}
    for v in grid:
        errs = [r.val_error for r in records if r.value == v and r.distill_success]
        if errs:
            summaries[v] = _summarize(v, errs)
    if not summaries:
        raise SweepFailure("every run failed to distil; no validation curve can be built")
    return SweepResult(hyperparam, grid, records, summaries, method, protocol_hash, teacher_dim)


def select(curve: SweepResult, rule: str = "min", parsimony: str = "smallest") -> float:
    """Pick a grid value by the minimum or one-standard-error rule.

    Under ``one_se`` the candidates are values whose mean is within one SE
    (taken at the minimizer) of the minimum; ``parsimony`` chooses the
    smallest or largest such value.
    """
    rows = curve.summary_rows()
    if not rows:
        raise SweepFailure("curve has no summarized values")
    rule = rule.replace("-", "_")
    best = min(rows, key=lambda s: (s.mean, s.value))
    if rule == "min":
        chosen = best.value
    elif rule == "one_se":
        band = best.mean + best.se
        cands = [s.value for s in rows if s.mean <= band]
        if parsimony == "smallest":
            chosen = min(cands)
        elif parsimony == "largest":
            chosen = max(cands)
        else:
            raise ValueError(f"unknown parsimony direction {parsimony!r}")
    else:
        raise ValueError(f"unknown selection rule {rule!r}")
    curve.selected[rule] = chosen
    return chosen


@dataclass(frozen=True)
class GroupSummary:
    group: str
    mean: float
    median: float
    count: int


def distortion_by_group(scores: PointwiseScores | Sequence[float], labels) -> list[GroupSummary]:
    """Per-label mean/median/count of pointwise errors, descending by mean."""
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    labs = list(getattr(labels, "labels", labels))
    if len(labs) != len(s):
        raise ValueError(f"{len(labs)} labels for {len(s)} scores")
    groups: dict[str, list[float]] = {}
    for lab, v in zip(labs, s):
        groups.setdefault(str(lab), []).append(v)
    out = [GroupSummary(g, float(np.mean(v)), float(np.median(v)), len(v)) for g, v in groups.items()]
    return sorted(out, key=lambda g: (-g.mean, g.group))


@dataclass
class ShiftReport:
    reference: PointwiseScores
    query: PointwiseScores
    ratio: float
    group_ratios: dict[str, float]
    ref_coords: np.ndarray
    query_coords: np.ndarray
    query_labels: tuple[str, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "ratio": self.ratio,
            "reference": {"n": len(self.reference), "mean": self.reference.mean, "se": self.reference.se},
            "query": {"n": len(self.query), "mean": self.query.mean, "se": self.query.se},
            "group_ratios": dict(sorted(self.group_ratios.items())),
        }

    def to_csv(self) -> str:
        """Rows ``row_id, batch, group, score, z1..zr`` for both batches."""
        r = self.ref_coords.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row_id", "batch", "group", "score"] + [f"z{j + 1}" for j in range(r)])
        for batch, sc, Z, labs in (
            ("reference", self.reference, self.ref_coords, None),
            ("query", self.query, self.query_coords, self.query_labels),
        ):
            for i in range(len(sc)):
                rid = sc.row_ids[i] if sc.row_ids is not None else str(i)
                grp = labs[i] if labs is not None else ""
                w.writerow([rid, batch, grp, repr(float(sc.scores[i]))] + [repr(float(z)) for z in Z[i]])
        return buf.getvalue()


def shift_score(model: StudentModel, X_ref, X_query, query_labels=None) -> ShiftReport:
    """Score a query batch against held-out reference data on a fixed student.

    Labels never enter the scoring; they only group the query scores, each
    group's mean being divided by the overall reference mean.
    """
    for name, X in (("reference", X_ref), ("query", X_query)):
        arr = getattr(X, "values", X)
        if np.asarray(arr).shape[0] == 0:
            raise ValueError(f"empty {name} batch")
    ref = heldout_errors(model, X_ref)
    qry = heldout_errors(model, X_query)
    ref_mean = ref.mean
    ratio = qry.mean / ref_mean if ref_mean > 0 else (1.0 if qry.mean == 0 else math.inf)
    group_ratios = {}
    labs = None
    if query_labels is not None:
        labs = tuple(str(s) for s in getattr(query_labels, "labels", query_labels))
        for g in distortion_by_group(qry, labs):
            group_ratios[g.group] = g.mean / ref_mean if ref_mean > 0 else math.inf
    return ShiftReport(
        ref,
        qry,
        float(ratio),
        group_ratios,
        encode(model, getattr(X_ref, "values", X_ref)),
        encode(model, getattr(X_query, "values", X_query)),
        labs,
    )


@dataclass(frozen=True)
class MethodEntry:
    method: str
    curve: SweepResult


@dataclass(frozen=True)
class MethodRow:
    method: str
    value: float
    mean: float
    se: float
    n_success: int


def compare_methods(entries: Sequence[MethodEntry | tuple[str, SweepResult]], rule: str = "min", parsimony: str = "smallest") -> list[MethodRow]:
    """Rank methods by validation error at each one's selected hyperparameter.

    Refuses (``ProtocolMismatch``) unless every entry shares the protocol
    hash and teacher dimension.
    """
    entries = [e if isinstance(e, MethodEntry) else MethodEntry(*e) for e in entries]
    if not entries:
        raise ValueError("nothing to compare")
    hashes = {e.curve.protocol_hash for e in entries}
    if len(hashes) > 1:
        detail = ", ".join(f"{e.method}={e.curve.protocol_hash or '<none>'}" for e in entries)
        raise ProtocolMismatch(f"entries differ in student/training/split configuration: {detail}")
    dims = {e.curve.teacher_dim for e in entries}
    if len(dims) > 1:
        detail = ", ".join(f"{e.method}={e.curve.teacher_dim}" for e in entries)
        raise ProtocolMismatch(f"entries differ in teacher dimension: {detail}")
    rows = []
    for e in entries:
        v = select(e.curve, rule, parsimony)
        s = e.curve.summaries[v]
        rows.append(MethodRow(e.method, v, s.mean, s.se, s.n_success))
    return sorted(rows, key=lambda r: (r.mean, r.method))
