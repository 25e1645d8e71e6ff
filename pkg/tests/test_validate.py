import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medal.data import pca_reduce
from medal.distill import PointwiseScores
from medal.student import Layer, StudentModel, StudentSpec
from medal.validate import (
    MethodEntry,
    ProtocolMismatch,
    RunRecord,
    SweepFailure,
    SweepResult,
    build_curve,
    compare_methods,
    distortion_by_group,
    select,
    shift_score,
)
from synthetic import gaussian_mixture


def recs(table, success=None):
    """``{value: [errors]}`` -> run records with seeds 0.."""
    out = []
    for v, errs in table.items():
        for s, e in enumerate(errs):
            ok = True if success is None else success.get((v, s), True)
            out.append(RunRecord(v, s, e, distill_success=ok))
    return out


def test_curve_hand_arithmetic():
    c = build_curve(recs({5.0: [1.0, 2.0, 3.0]}))
    s = c.summaries[5.0]
    assert s.mean == 2.0 and s.n_success == 3
    assert s.se == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    assert round(s.se, 3) == 0.577


def test_curve_excludes_failed_runs():
    c = build_curve(recs({1.0: [1.0, 2.0, 100.0]}, success={(1.0, 2): False}))
    assert c.summaries[1.0].n_success == 2 and c.summaries[1.0].mean == 1.5


def test_all_failed_value_unselectable():
    c = build_curve(recs({1.0: [0.1, 0.1], 2.0: [5.0, 6.0]}, success={(1.0, 0): False, (1.0, 1): False}))
    assert 1.0 not in c.summaries
    assert select(c, "min") == 2.0
    assert select(c, "one_se") == 2.0


def test_sweep_wide_failure():
    with pytest.raises(SweepFailure):
        build_curve(recs({1.0: [1.0], 2.0: [2.0]}, success={(1.0, 0): False, (2.0, 0): False}))


def test_single_success_has_zero_se():
    assert build_curve(recs({3.0: [4.0]})).summaries[3.0].se == 0.0


def test_convex_curve_rules_agree():
    c = build_curve(recs({1.0: [5.0, 5.1], 2.0: [2.0, 2.1], 3.0: [1.0, 1.1], 4.0: [3.0, 3.1]}))
    assert select(c, "min") == select(c, "one_se") == 3.0


def test_one_se_parsimony():
    # minimum at 4 (mean 1.0, se 0.5); value 2 within the band
    c = build_curve(recs({1.0: [3.0, 3.0], 2.0: [1.2, 1.2], 4.0: [0.5, 1.5]}))
    assert select(c, "min") == 4.0
    assert select(c, "one_se") == 2.0
    assert select(c, "one_se", parsimony="largest") == 4.0
    assert c.selected == {"min": 4.0, "one_se": 4.0}


def test_select_errors():
    c = build_curve(recs({1.0: [1.0]}))
    with pytest.raises(ValueError):
        select(c, "median")
    with pytest.raises(ValueError):
        select(c, "one_se", parsimony="middle")
    with pytest.raises(SweepFailure):
        select(SweepResult("k", [], [], {}), "min")


def test_pca_rank_curve_selects_max_rank(rng):
    X = rng.normal(size=(200, 8)) * np.linspace(3, 0.5, 8)
    tr, va = X[:150], X[150:]
    records = [RunRecord(k, 0, pca_reduce(tr, k)[1].reconstruction_error(va)) for k in range(1, 9)]
    c = build_curve(records, "rank")
    means = [c.summaries[k].mean for k in c.grid]
    assert all(b < a for a, b in zip(means, means[1:]))
    assert select(c, "min") == 8
    assert select(c, "one_se") == 8  # SE is zero with a single seed


@settings(max_examples=50, deadline=None)
@given(
    errs=st.lists(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=4), min_size=1, max_size=6),
    scale=st.floats(1e-3, 1e3),
)
def test_select_scale_invariance(errs, scale):
    table = {float(i): e for i, e in enumerate(errs)}
    a = build_curve(recs(table))
    b = build_curve(recs({v: [x * scale for x in e] for v, e in table.items()}))
    assert select(a, "min") == select(b, "min")


@settings(max_examples=50, deadline=None)
@given(
    errs=st.lists(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=4), min_size=1, max_size=6),
    which=st.integers(0, 5),
    extreme=st.sampled_from([0.0, 1e12]),
)
def test_failed_run_never_enters_summary(errs, which, extreme):
    table = {float(i): e for i, e in enumerate(errs)}
    base = recs(table)
    poisoned = base + [RunRecord(float(which % len(errs)), 99, extreme, distill_success=False)]
    assert build_curve(base).summaries == build_curve(poisoned).summaries


def test_sweep_result_json_and_csv_roundtrip():
    c = build_curve([RunRecord(2.0, 1, 0.5, 0.6, 0.4), RunRecord(2.0, 0, 0.7, 0.8, 0.3)], "rank", method="pca", protocol_hash="abc", teacher_dim=2)
    select(c)
    back = SweepResult.from_dict(json.loads(c.to_json()))
    assert back.summaries == c.summaries and back.records == c.records and back.selected == {"min": 2.0}
    lines = c.to_csv().splitlines()
    assert lines[0] == "value,seed,split,error,success"
    assert lines[1] == "2.0,0,test,0.8,1"
    assert len(lines) == 7


def test_group_ordering_and_single_group():
    g = distortion_by_group(PointwiseScores(np.array([0.0, 1.0])), ["A", "B"])
    assert [x.group for x in g] == ["B", "A"]
    scores = np.array([1.0, 3.0, 8.0])
    (only,) = distortion_by_group(scores, ["x"] * 3)
    assert (only.mean, only.median, only.count) == (4.0, 3.0, 3)


def test_group_length_mismatch():
    with pytest.raises(ValueError):
        distortion_by_group(np.ones(3), ["a", "b"])


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 80), k=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_group_summaries_match_brute_force(n, k, seed):
    rng = np.random.default_rng(seed)
    scores = rng.exponential(size=n)
    labels = [f"g{i}" for i in rng.integers(0, k, n)]
    table = distortion_by_group(scores, labels)
    assert sum(g.count for g in table) == n
    means = [g.mean for g in table]
    assert means == sorted(means, reverse=True)
    for g in table:
        members = [scores[i] for i in range(n) if labels[i] == g.group]
        total = 0.0
        for v in members:
            total += v
        assert abs(g.mean - total / len(members)) <= 1e-12
        assert g.count == len(members)
        assert g.median == float(np.median(members))


def plane_projector(p=10, d=3):
    """Hand-built linear student that keeps the first ``d`` coordinates."""
    spec = StudentSpec(p, d, (), None, "linear", 0)
    P = np.eye(p)[:d]
    return StudentModel([Layer(P.copy(), np.zeros(d), "linear"), Layer(P.T.copy(), np.zeros(p), "linear")], spec)


CENTERS = [[0, 0, 0], [4, 0, 0], [0, 4, 0]]


def test_shift_identity_ratio_exactly_one():
    X, _ = gaussian_mixture(80, 0, CENTERS)
    rep = shift_score(plane_projector(), X, X)
    assert rep.ratio == 1.0


def test_shift_in_distribution_and_shifted():
    model = plane_projector()
    ref, _ = gaussian_mixture(300, 1, CENTERS)
    same, _ = gaussian_mixture(300, 2, CENTERS)
    off = np.zeros(10)
    off[5] = 5.0
    shifted, labels = gaussian_mixture(300, 3, CENTERS, shift={1: off})
    assert 0.8 <= shift_score(model, ref, same).ratio <= 1.25
    rep = shift_score(model, ref, shifted, labels)
    assert rep.ratio > 2
    assert max(rep.group_ratios, key=rep.group_ratios.get) == "c1"
    assert rep.group_ratios["c0"] < 1.5 and rep.group_ratios["c2"] < 1.5
    assert rep.query_coords.shape == (300, 3) and rep.ref_coords.shape == (300, 3)
    assert all(r > 0 for r in rep.group_ratios.values())


def test_shift_report_outputs():
    model = plane_projector()
    ref, _ = gaussian_mixture(5, 1, CENTERS)
    qry, labels = gaussian_mixture(4, 2, CENTERS)
    rep = shift_score(model, ref, qry, labels)
    rows = rep.to_csv().splitlines()
    assert rows[0] == "row_id,batch,group,score,z1,z2,z3"
    assert len(rows) == 10
    d = rep.to_dict()
    assert d["ratio"] == rep.ratio and d["query"]["n"] == 4


def test_shift_errors():
    model = plane_projector()
    with pytest.raises(ValueError):
        shift_score(model, np.ones((3, 10)), np.ones((3, 9)))
    with pytest.raises(ValueError):
        shift_score(model, np.ones((3, 10)), np.ones((0, 10)))


def entry(method, means, phash="h", dim=2):
    return MethodEntry(method, build_curve(recs({1.0: means}), method=method, protocol_hash=phash, teacher_dim=dim))


def test_compare_ordering():
    rows = compare_methods([entry("b", [2.0]), entry("a", [1.0])])
    assert [r.method for r in rows] == ["a", "b"]


def test_compare_refuses_protocol_mismatch():
    with pytest.raises(ProtocolMismatch, match="student/training/split"):
        compare_methods([entry("a", [1.0], phash="x"), entry("b", [2.0], phash="y")])
    with pytest.raises(ProtocolMismatch, match="teacher dimension"):
        compare_methods([entry("a", [1.0], dim=2), entry("b", [2.0], dim=3)])
    with pytest.raises(ValueError):
        compare_methods([])


def test_compare_pca_rank_eight_beats_rank_two(rng):
    X = rng.normal(size=(240, 8)) @ rng.normal(size=(8, 8))
    tr, va = X[:160], X[160:]
    entries = [
        MethodEntry(f"pca{k}", build_curve([RunRecord(k, 0, pca_reduce(tr, k)[1].reconstruction_error(va))], protocol_hash="same"))
        for k in (2, 8)
    ]
    rows = compare_methods(entries)
    assert rows[0].method == "pca8"
    assert rows[0].mean < 1e-10 < rows[1].mean
