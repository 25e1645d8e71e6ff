"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``RESULTS`` and printed in the pytest terminal
summary (see ``conftest.py``), so they appear in ``pytest -v`` output.
"""

import math
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import medal.sweeper as sweeper
from medal.data import save_matrix, split
from medal.distill import TrainConfig, distill, heldout_errors, lambda_sweep, replay_stop
from medal.hashing import config_hash
from medal.metrics import k_range, lcmc, triplet_accuracy
from medal.student import StudentSpec, init_student, loss_and_grads, losses, reference_budget, width_for_depth
from medal.teacher import TeacherEmbedding, denormalize, normalize_teacher, pca_teacher
from medal.validate import select, shift_score
from oracles import brute_lcmc, exhaustive_triplet_fraction, finite_difference_grads, truncated_pca_error
from synthetic import curved_surface, gaussian_mixture, known_spectrum_data

RESULTS: dict[int, str] = {}


def report(num, name, ok, detail):
    RESULTS[num] = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {name}: {detail}"
    assert ok, RESULTS[num]


def test_c01_linear_student_matches_pca():
    t0 = time.perf_counter()
    X = known_spectrum_data(500, 20, seed=0)
    sp = split(500, (0.8, 0.0, 0.2), seed=0)
    tr, te = X[list(sp.train_idx)], X[list(sp.test_idx)]
    worst, all_ok = 0.0, True
    parts = []
    for r in (1, 2, 4, 8):
        model, trace = distill(tr, pca_teacher(tr, r), StudentSpec(20, r, (16,), None, "linear", r), TrainConfig(max_epochs=5000, seed=r))
        err = heldout_errors(model, te).mean
        exact = truncated_pca_error(tr, r, te)
        rel = abs(err - exact) / exact
        worst = max(worst, rel)
        all_ok &= trace.distill_success and rel <= 0.02
        parts.append(f"r={r} rel={rel:.1e} {trace.stop_reason}")
    elapsed = time.perf_counter() - t0
    ok = all_ok and elapsed <= 120
    report(1, "linear student = PCA", ok, f"max rel dev {worst:.2e} (<=2%), {elapsed:.0f}s (<=120s); " + ", ".join(parts))


@pytest.mark.slow
def test_c02_lambda_tradeoff():
    t0 = time.perf_counter()
    X, Z = curved_surface(200, seed=0)
    grid = (10.0, 1e2, 1e3, 1e4)
    runs = lambda_sweep(X, Z, StudentSpec(10, 2, (256, 256), None, "relu", 0), TrainConfig(), grid=grid, seeds=range(5))
    med_d = [float(np.median([r.l_dist for r in runs if r.lambda_d == lam])) for lam in grid]
    med_r = [float(np.median([r.l_rec for r in runs if r.lambda_d == lam])) for lam in grid]
    elapsed = time.perf_counter() - t0
    nonincreasing = all(b <= a for a, b in zip(med_d, med_d[1:]))
    drop = med_d[0] / med_d[-1]
    rec_growth = med_r[-1] / med_r[0]
    ok = nonincreasing and drop >= 100 and rec_growth < 5 and elapsed <= 600
    detail = (
        "median L_dist " + ", ".join(f"{d:.2e}" for d in med_d)
        + f"; drop x{drop:.0f} (>=100); median L_rec x{rec_growth:.2f} (<5); {elapsed:.0f}s (<=600s)"
    )
    report(2, "lambda_d tradeoff", ok, detail)


@pytest.mark.slow
def test_c03_near_zero_distillation():
    t0 = time.perf_counter()
    X, Z = curved_surface(200, seed=0)
    finals = []
    for s in range(5):
        _, trace = distill(X, Z, StudentSpec(10, 2, (256, 256), None, "relu", s), TrainConfig(lambda_d=1e3, seed=s))
        finals.append(trace.final_l_dist)
    elapsed = time.perf_counter() - t0
    hits = sum(d <= 9e-6 for d in finals)
    ok = hits >= 4 and elapsed <= 600
    report(3, "near-zero distillation", ok, f"{hits}/5 seeds reach L_dist<=9e-6 ({', '.join(f'{d:.2e}' for d in finals)}); {elapsed:.0f}s (<=600s)")


def test_c04_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(20):
        p = int(rng.integers(2, 7))
        r = int(rng.integers(1, p))
        hidden = tuple(int(w) for w in rng.integers(1, 7, size=rng.integers(0, 3)))
        act = str(rng.choice(["relu", "selu", "linear"]))
        lam = float(10 ** rng.uniform(-2, 3))
        model = init_student(StudentSpec(p, r, hidden, None, act, i))
        n = int(rng.integers(1, 9))
        X, Z = rng.normal(size=(n, p)), rng.normal(size=(n, r))
        _, _, grads = loss_and_grads(model, X, Z, lam)

        def f():
            l_rec, l_dist = losses(model, X, Z)
            return lam * l_dist + l_rec

        fd = finite_difference_grads(f, model.params(), h=1e-5)
        for a, b in zip(grads, fd):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
            worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    elapsed = time.perf_counter() - t0
    report(4, "gradient correctness", worst <= 1e-5 and elapsed <= 30, f"max rel err {worst:.2e} (<=1e-5) over 20 specs; {elapsed:.1f}s (<=30s)")


def test_c05_stopping_rule():
    cfg = TrainConfig()
    flat = lambda n, d=1e-6: ([d] * n, [1.0] * n)
    cases = {}
    cases["band entry"] = (replay_stop(*flat(200), cfg), (60, "stable_in_band"))
    cases["outside band"] = (replay_stop(*flat(300, 1e-3), cfg), (300, None))
    d, r = flat(300)
    r[59] = 2.0
    cases["slope reset"] = (replay_stop(d, r, cfg), (120, "stable_in_band"))
    cases["patience-1"] = (replay_stop(*flat(59), cfg), (59, None))
    cases["patience"] = (replay_stop(*flat(60), cfg), (60, "stable_in_band"))
    cases["budget"] = (replay_stop(*flat(100, 1e-3), TrainConfig(max_epochs=40)), (40, "budget_exhausted"))
    d, r = flat(100)
    d[6] = math.nan
    cases["divergence"] = (replay_stop(d, r, cfg), (7, "diverged"))
    bad = [k for k, (got, want) in cases.items() if got != want]
    report(5, "stopping rule", not bad, f"{len(cases) - len(bad)}/{len(cases)} injected traces match" + (f"; mismatched: {bad}" if bad else ""))


def test_c06_rank_selection(tmp_path):
    X = known_spectrum_data(300, 8, seed=1, top=3.0, bottom=0.3)
    sp = split(300, (0.6, 0.2, 0.2), seed=0)
    cfg = sweeper.SweepConfig(
        teachers=tuple((float(r), f"pca:{r}") for r in range(1, 9)),
        input_dim=8,
        split_hash=config_hash(sp.to_dict()),
        n_seeds=2,
        hidden=(16,),
        activation="linear",
        train=TrainConfig(max_epochs=5000),
    )
    outcomes = sweeper.run(sweeper.plan(cfg), X, sp, worker_limit=1, sweep_dir=tmp_path, cfg=cfg)
    curve = sweeper.sweep_curve(outcomes, cfg)
    means = [curve.summaries[v].mean for v in curve.grid if v in curve.summaries]
    complete = len(means) == 8
    monotone = complete and all(b <= a for a, b in zip(means, means[1:]))
    v_min, v_se = select(curve, "min"), select(curve, "one_se")
    best = curve.summaries[v_min]
    in_band = curve.summaries[v_se].mean <= best.mean + best.se
    ok = monotone and v_min == 8 and in_band and v_se <= v_min
    n_ok = sum(o.success for o in outcomes)
    report(6, "rank-selection curve", ok, f"{n_ok}/16 distilled; val means " + ", ".join(f"{m:.3g}" for m in means) + f"; min->{v_min:g}, one_se->{v_se:g}")


def test_c07_shift_detection():
    t0 = time.perf_counter()
    centers = [[0, 0, 0], [5, 0, 0], [0, 5, 0]]
    off = np.zeros(10)
    off[6] = 5.0  # 5 sigma, orthogonal to the mixture plane
    lines, ok = [], True
    for s in range(5):
        XA, _ = gaussian_mixture(500, 100 + s, centers)
        sp = split(500, (0.6, 0.4, 0.0), seed=s)
        tr, ref = XA[list(sp.train_idx)], XA[list(sp.val_idx)]
        model, _ = distill(tr, pca_teacher(tr, 3), StudentSpec(10, 3, (64, 64), None, "relu", s), TrainConfig(max_epochs=300, seed=s))
        same, _ = gaussian_mixture(300, 200 + s, centers)
        shifted, labels = gaussian_mixture(300, 300 + s, centers, shift={1: off})
        r_same = shift_score(model, ref, same).ratio
        rep = shift_score(model, ref, shifted, labels)
        others = [v for g, v in rep.group_ratios.items() if g != "c1"]
        localized = rep.group_ratios["c1"] > 2 and all(v < 2 for v in others)
        ok &= 0.8 <= r_same <= 1.25 and rep.ratio > 2 and localized
        lines.append(f"seed {s}: A {r_same:.2f}, B {rep.ratio:.1f}, c1 {rep.group_ratios['c1']:.1f}, others<= {max(others):.2f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 300
    report(7, "shift detection", ok, "; ".join(lines) + f"; {elapsed:.0f}s (<=300s)")


def test_c08_metric_oracles():
    rng = np.random.default_rng(8)
    X, Z = rng.normal(size=(50, 6)), rng.normal(size=(50, 2))
    ks = k_range(1, 49)
    per_k, _ = lcmc(X, Z, ks)
    lcmc_exact = all(per_k[k] == brute_lcmc(X, Z, k) for k in ks)
    X30, Z30 = rng.normal(size=(30, 5)), rng.normal(size=(30, 2))
    exact = exhaustive_triplet_fraction(X30, Z30)
    m = 5000
    est = triplet_accuracy(X30, Z30, m, seed=0)
    se = math.sqrt(exact * (1 - exact) / m)
    within = abs(est - exact) <= 3 * se
    ident, _ = lcmc(X, X, ks)
    ident_ok = all(ident[k] == pytest.approx(1 - k / 49, abs=1e-15) for k in ks)
    trip_ident = triplet_accuracy(X, X, m, seed=0) == 1.0
    ok = lcmc_exact and within and ident_ok and trip_ident
    report(8, "metric oracles", ok, f"lcmc==brute for k=1..49: {lcmc_exact}; triplet {est:.4f} vs exhaustive {exact:.4f} (|diff|={abs(est - exact):.4f} <= 3SE={3 * se:.4f}); identity LCMC/triplet exact: {ident_ok and trip_ident}")


def test_c09_width_table():
    want = {(784, 2): 305, (784, 3): 256, (784, 4): 227, (784, 6): 191, (784, 8): 169, (500, 4): 222}
    got = {key: width_for_depth(key[1], reference_budget(key[0], 2), key[0], 2) for key in want}
    report(9, "width/budget table", got == want, ", ".join(f"D={D} L={L}: {got[(D, L)]}" for D, L in want))


def test_c10_teacher_normalization():
    rng = np.random.default_rng(10)
    worst_mean = worst_rms = worst_idem = worst_inv = 0.0
    for _ in range(100):
        n, r = int(rng.integers(2, 300)), int(rng.integers(1, 6))
        raw = rng.normal(size=(n, r)) * 10 ** rng.uniform(-3, 3) + rng.normal(size=r) * 10 ** rng.uniform(-2, 2)
        once = normalize_teacher(TeacherEmbedding(raw))
        twice = normalize_teacher(once)
        c = once.coords
        worst_mean = max(worst_mean, float(np.max(np.abs(c.mean(axis=0)))))
        worst_rms = max(worst_rms, abs(math.sqrt(np.mean(np.sum(c**2, axis=1))) - 1))
        worst_idem = max(worst_idem, float(np.max(np.abs(twice.coords - c))))
        scale = max(1.0, float(np.max(np.abs(raw))))
        worst_inv = max(worst_inv, float(np.max(np.abs(denormalize(twice) - raw))) / scale)
    ok = max(worst_mean, worst_rms, worst_idem, worst_inv) <= 1e-10
    report(10, "teacher normalization", ok, f"100 teachers: |col mean| {worst_mean:.1e}, |RMS-1| {worst_rms:.1e}, idempotence {worst_idem:.1e}, inverse (relative) {worst_inv:.1e}")


# short trials; the loose band gives every value a summary row to compare
SWEEP_FLAGS = ["--hidden", "8", "--max-epochs", "150", "--lr", "1e-2", "--success-threshold", "1e-2", "--seeds", "3", "--pca-ranks", "1,2,3,4"]


def test_c11_sweep_determinism_and_resume(tmp_path):
    X = known_spectrum_data(120, 6, seed=11)
    data = tmp_path / "X.npy"
    save_matrix(data, X)
    split(120, (0.6, 0.2, 0.2), seed=0).save(tmp_path / "split.json")
    base = [sys.executable, "-m", "medal", "sweep", "--data", str(data), "--split", str(tmp_path / "split.json"), *SWEEP_FLAGS]
    env = dict(os.environ, PYTHONPATH=str(Path(sweeper.__file__).parents[1]))

    def sweep(out, workers):
        res = subprocess.run(base + ["--workers", str(workers), "--out", str(out)], capture_output=True, text=True, env=env)
        assert res.returncode == 0, res.stderr
        return (out / "summary.csv").read_bytes()

    same = sweep(tmp_path / "w1", 1) == sweep(tmp_path / "w4", 4)

    # interrupt a sweep once a few trials are persisted, then resume it
    out = tmp_path / "killed"
    proc = subprocess.Popen(base + ["--workers", "1", "--out", str(out)], stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, env=env)
    deadline = time.time() + 120
    while time.time() < deadline and len(list(out.glob("trials/*/outcome.json"))) < 3:
        time.sleep(0.02)
    proc.send_signal(signal.SIGKILL)
    proc.wait()
    finished = {p.parent.name for p in out.glob("trials/*/outcome.json")}

    executed = []
    real = sweeper.run_trial
    sweeper.run_trial = lambda spec, *a, **k: executed.append(spec.hash()) or real(spec, *a, **k)
    try:
        from medal.cli import main

        code = main(base[3:] + ["--workers", "1", "--out", str(out)])
    finally:
        sweeper.run_trial = real
    total = 12
    resumed_ok = (
        code == 0
        and 0 < len(finished) < total
        and len(executed) == total - len(finished)
        and not finished & set(executed)
        and (out / "summary.csv").read_bytes() == (tmp_path / "w1" / "summary.csv").read_bytes()
    )
    report(
        11,
        "sweep determinism and resume",
        same and resumed_ok,
        f"summary.csv identical at 1 vs 4 workers: {same}; killed after {len(finished)}/{total} trials, resume ran {len(executed)}, final summary matches: {resumed_ok}",
    )
