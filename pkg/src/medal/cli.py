"""Command-line entry point: ``medal <command> ...``.

Exit codes: 0 success, 2 input/validation error, 3 protocol refusal,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import glob
import hashlib
import io
import json
import logging
import re
import sys
from pathlib import Path

from . import __version__
from .data import DataError, SplitAssignment, load_labels, load_matrix, split
from .distill import TrainConfig, distill, heldout_errors
from .hashing import config_hash
from .metrics import k_range, lcmc, triplet_accuracy
from .student import DivergenceError, StudentSpec, load_model, save_model
from .sweeper import SweepConfig, default_workers, plan, run
from .teacher import ingest_teacher, pca_teacher
from .validate import (
    MethodEntry,
    ProtocolMismatch,
    SweepFailure,
    SweepResult,
    compare_methods,
    distortion_by_group,
    select,
    shift_score,
)

log = logging.getLogger("medal")

EXIT_INPUT = 2
EXIT_PROTOCOL = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, msg, code=EXIT_INPUT):
        super().__init__(msg)
        self.code = code


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: Path, command: str, args: argparse.Namespace, artifacts: list[str], inputs=()) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "verbose")}
    digests = {str(p): _file_digest(p) for p in inputs if p and Path(p).is_file()}
    doc = {
        "schema": 1,
        "command": command,
        "config": resolved,
        "input_digests": digests,
        "config_hash": config_hash({"command": command, "config": resolved, "inputs": digests}),
        "artifacts": sorted(artifacts),
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path.write_text(json.dumps(doc, indent=1, default=str))


def _floats(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"expected comma-separated numbers, got {s!r}") from None


def _ints(s) -> tuple[int, ...]:
    if isinstance(s, (list, tuple)):
        return tuple(int(x) for x in s)
    if s is None or str(s).strip() == "":
        return ()
    try:
        return tuple(int(x) for x in str(s).split(",") if x.strip())
    except ValueError:
        raise CliError(f"expected comma-separated integers, got {s!r}") from None


def _load_split(args, n):
    if getattr(args, "split", None):
        sp = SplitAssignment.load(args.split)
        if sp.n != n:
            raise CliError(f"split covers {sp.n} rows but data has {n}")
        return sp
    return None


def _train_config(args, seed) -> TrainConfig:
    return TrainConfig(
        lambda_d=args.lambda_d,
        initial_lr=args.lr,
        max_epochs=args.max_epochs,
        batch_size=args.batch_size,
        stability_window=args.window,
        stop_patience=args.patience,
        success_threshold=args.success_threshold,
        seed=seed,
    )


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------- commands


def cmd_split(args) -> int:
    if args.n is not None:
        n = args.n
        inputs = []
    elif args.n_from:
        n = load_matrix(args.n_from).n
        inputs = [args.n_from]
    else:
        raise CliError("one of --n or --n-from is required")
    fr = _floats(args.fractions)
    sp = split(n, fr, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sp.save(out)
    write_manifest(Path(str(out) + ".manifest.json"), "split", args, [out.name], inputs)
    print(f"train={sp.sizes[0]} val={sp.sizes[1]} test={sp.sizes[2]}")
    return 0


def _resolve_teacher(spec_str: str, X_tr, p):
    if spec_str.startswith("pca:"):
        try:
            r = int(spec_str.split(":", 1)[1])
        except ValueError:
            raise CliError(f"bad built-in teacher {spec_str!r}; expected pca:<rank>") from None
        return pca_teacher(X_tr, r)
    if not Path(spec_str).exists():
        raise CliError(f"teacher file not found: {spec_str}")
    return ingest_teacher(spec_str, n_rows=X_tr.shape[0], input_dim=p)


def cmd_distill(args) -> int:
    X = load_matrix(args.data)
    sp = _load_split(args, X.n)
    X_tr = X.values if sp is None else X.values[list(sp.train_idx)]
    teacher = _resolve_teacher(args.teacher, X_tr, X.p)
    spec = StudentSpec(X.p, teacher.r, _ints(args.hidden), None, args.activation, args.seed)
    cfg = _train_config(args, args.seed)
    model, trace = distill(X_tr, teacher, spec, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.save(out)
    save_model(model, out / "model")
    artifacts = ["trace.csv", "verdict.json", "model"]
    if sp is not None and trace.stop_reason != "diverged":
        errs = {}
        for part in ("train", "val", "test"):
            idx = sp.indices(part)
            if idx:
                s = heldout_errors(model, X.values[list(idx)])
                errs[part] = {"mean": s.mean, "se": s.se, "n": len(s)}
        (out / "errors.json").write_text(json.dumps({"schema": 1, "errors": errs}, indent=1))
        artifacts.append("errors.json")
    write_manifest(out / "manifest.json", "distill", args, artifacts, [args.data, args.split, args.teacher])
    print(f"stop_reason={trace.stop_reason} distill_success={trace.distill_success} "
          f"L_dist={trace.final_l_dist:.3e} L_rec={trace.final_l_rec:.4g} epochs={len(trace.records)}")
    if trace.stop_reason == "diverged":
        raise CliError("training diverged (non-finite loss)", EXIT_NUMERIC)
    return 0


_NUM = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def hyperparam_from_name(path: str) -> float:
    """Last number in a file stem, e.g. ``tsne_p30.npy -> 30``."""
    nums = _NUM.findall(Path(path).stem)
    if not nums:
        raise CliError(f"cannot read a hyperparameter value from file name {path!r}")
    return float(nums[-1])


def cmd_sweep(args) -> int:
    X = load_matrix(args.data)
    sp = _load_split(args, X.n)
    if sp is None:
        raise CliError("--split is required for a held-out sweep")
    if args.teacher_glob:
        paths = sorted(glob.glob(args.teacher_glob))
        if not paths:
            raise CliError(f"no teacher files match {args.teacher_glob!r}")
        teachers = tuple((hyperparam_from_name(p), p) for p in paths)
        method = args.method or "ingested"
        hp = args.hyperparam or "value"
    elif args.pca_ranks:
        teachers = tuple((float(r), f"pca:{r}") for r in _ints(args.pca_ranks))
        method = args.method or "pca"
        hp = args.hyperparam or "rank"
    else:
        raise CliError("one of --teacher-glob or --pca-ranks is required")
    cfg = SweepConfig(
        teachers=teachers,
        input_dim=X.p,
        split_hash=config_hash(sp.to_dict()),
        method=method,
        hyperparam=hp,
        n_seeds=args.seeds,
        base_seed=args.seed,
        hidden=_ints(args.hidden),
        activation=args.activation,
        train=_train_config(args, 0),
    )
    try:
        specs = plan(cfg)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    workers = args.workers if args.workers is not None else default_workers()
    out = Path(args.out)
    outcomes = run(specs, X, sp, workers, out, cfg)
    n_ok = sum(o.success for o in outcomes)
    n_new = sum(not o.reused for o in outcomes)
    write_manifest(out / "manifest.json", "sweep", args, ["sweep.json", "summary.csv", "curve.json", "runs.csv", "trials"],
                   [args.data, args.split] + [t[1] for t in teachers])
    print(f"{len(outcomes)} trials ({n_new} run, {len(outcomes) - n_new} resumed), {n_ok} distilled successfully")
    print((out / "summary.csv").read_text(), end="")
    if n_ok == 0:
        raise CliError("no trial reached the distillation band", EXIT_NUMERIC)
    return 0


def _load_curve(sweep_dir) -> SweepResult:
    path = Path(sweep_dir) / "curve.json"
    if not path.exists():
        raise CliError(f"{sweep_dir}: no curve.json (run `medal sweep` first)")
    return SweepResult.from_dict(json.loads(path.read_text()))


def cmd_select(args) -> int:
    curve = _load_curve(args.sweep)
    rule = args.rule.replace("-", "_")
    value = select(curve, rule, args.parsimony)
    s = curve.summaries[value]
    doc = {
        "schema": 1,
        "rule": rule,
        "parsimony": args.parsimony,
        "hyperparam": curve.hyperparam,
        "selected": value,
        "mean": s.mean,
        "se": s.se,
        "n_success": s.n_success,
    }
    out = Path(args.out) if args.out else Path(args.sweep) / "selection.json"
    out.write_text(json.dumps(doc, indent=1))
    write_manifest(Path(str(out) + ".manifest.json"), "select", args, [out.name], [Path(args.sweep) / "curve.json"])
    print(f"{curve.hyperparam}={value:g} (mean={s.mean:.6g} se={s.se:.3g} n={s.n_success})")
    return 0


def _model_dir(path) -> Path:
    p = Path(path)
    return p / "model" if (p / "model" / "model.json").exists() else p


def cmd_score(args) -> int:
    model = load_model(_model_dir(args.model))
    X = load_matrix(args.data)
    idx = None
    sp = _load_split(args, X.n)
    if sp is not None:
        idx = list(sp.indices(args.part))
    Xs = X.values if idx is None else X.values[idx]
    if Xs.shape[1] != model.spec.input_dim:
        raise CliError(f"data has {Xs.shape[1]} columns, model expects {model.spec.input_dim}")
    scores = heldout_errors(model, Xs)
    rows_idx = list(range(X.n)) if idx is None else idx
    labels = None
    if args.labels:
        all_labels = load_labels(args.labels, X.n)
        labels = [all_labels.labels[i] for i in rows_idx]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ["row", "group", "score"],
               [[i, "" if labels is None else labels[j], repr(float(scores.scores[j]))] for j, i in enumerate(rows_idx)])
    artifacts = [out.name]
    if labels is not None:
        table = distortion_by_group(scores, labels)
        gpath = out.with_name(out.stem + "_groups.csv")
        _write_csv(gpath, ["group", "mean", "median", "count"],
                   [[g.group, repr(g.mean), repr(g.median), g.count] for g in table])
        artifacts.append(gpath.name)
    write_manifest(Path(str(out) + ".manifest.json"), "score", args, artifacts, [args.data, args.split, args.labels])
    print(f"n={len(scores)} mean={scores.mean:.6g} se={scores.se:.3g}")
    return 0


def cmd_shift(args) -> int:
    model = load_model(_model_dir(args.model))
    Xr = load_matrix(args.reference)
    Xq = load_matrix(args.query)
    for name, M in (("reference", Xr), ("query", Xq)):
        if M.p != model.spec.input_dim:
            raise CliError(f"{name} has {M.p} columns, model expects {model.spec.input_dim}")
    labels = load_labels(args.query_labels, Xq.n) if args.query_labels else None
    rep = shift_score(model, Xr, Xq, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(rep.to_dict(), indent=1))
    (out / "scores.csv").write_text(rep.to_csv())
    write_manifest(out / "manifest.json", "shift", args, ["report.json", "scores.csv"],
                   [args.reference, args.query, args.query_labels])
    print(f"ratio={rep.ratio:.4g}")
    for g, r in sorted(rep.group_ratios.items()):
        print(f"  {g}: {r:.4g}")
    return 0


def cmd_compare(args) -> int:
    entries = []
    for d in args.sweep:
        curve = _load_curve(d)
        entries.append(MethodEntry(curve.method or Path(d).name, curve))
    rows = compare_methods(entries, args.rule.replace("-", "_"), args.parsimony)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ["rank", "method", "value", "mean", "se", "n_success"],
               [[i + 1, r.method, repr(r.value), repr(r.mean), repr(r.se), r.n_success] for i, r in enumerate(rows)])
    write_manifest(Path(str(out) + ".manifest.json"), "compare", args, [out.name], [Path(d) / "curve.json" for d in args.sweep])
    for i, r in enumerate(rows):
        print(f"{i + 1}. {r.method} ({r.value:g}): {r.mean:.6g} +/- {r.se:.3g}")
    return 0


def _parse_k_range(s: str) -> list[int]:
    if ":" in s:
        parts = [int(x) for x in s.split(":")]
        if len(parts) not in (2, 3):
            raise CliError(f"bad k range {s!r}; expected lo:hi[:step]")
        return k_range(*parts)
    return list(_ints(s))


def cmd_metrics(args) -> int:
    X = load_matrix(args.data)
    Z = load_matrix(args.embedding)
    if X.n != Z.n:
        raise CliError(f"data has {X.n} rows, embedding has {Z.n}")
    ks = _parse_k_range(args.k_range)
    scores, mean = lcmc(X, Z, ks)
    acc = triplet_accuracy(X, Z, args.triplets, args.seed)
    doc = {"schema": 1, "lcmc": {str(k): v for k, v in scores.items()}, "lcmc_mean": mean, "triplet_accuracy": acc}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=1))
    write_manifest(Path(str(out) + ".manifest.json"), "metrics", args, [out.name], [args.data, args.embedding])
    print(f"lcmc_mean={mean:.4f} triplet_accuracy={acc:.4f}")
    return 0


# ---------------------------------------------------------------- parser


def _add_student_flags(p):
    p.add_argument("--hidden", default="256,256", help="encoder hidden widths, comma-separated (decoder mirrors)")
    p.add_argument("--activation", default="relu", choices=["relu", "selu", "linear"])
    p.add_argument("--lambda-d", type=float, default=1e3)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-epochs", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--window", type=int, default=10, help="stability window in checkpoints")
    p.add_argument("--patience", type=int, default=50, help="consecutive stable checkpoints before stopping")
    p.add_argument("--success-threshold", type=float, default=9e-6, help="distillation loss that counts as distilled")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="medal", description="Held-out validation of embeddings by distillation.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file of flag values; explicit flags override it")
        p.set_defaults(func=func)
        return p

    p = add("split", cmd_split, "write a seeded train/val/test split")
    p.add_argument("--n", type=int)
    p.add_argument("--n-from", help="take n from the row count of this matrix")
    p.add_argument("--fractions", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("distill", cmd_distill, "distil one teacher into a student")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True, help="coordinates file (train rows) or pca:<rank>")
    p.add_argument("--split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_student_flags(p)

    p = add("sweep", cmd_sweep, "run a held-out sweep over teacher hyperparameters and seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--teacher-glob", help="teacher files; the value is the last number in each file name")
    p.add_argument("--pca-ranks", help="built-in PCA teachers at these ranks")
    p.add_argument("--method")
    p.add_argument("--hyperparam")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0, help="base seed for per-trial seed derivation")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    _add_student_flags(p)

    p = add("select", cmd_select, "select a hyperparameter from a sweep")
    p.add_argument("--sweep", required=True)
    p.add_argument("--rule", default="min", choices=["min", "one-se", "one_se"])
    p.add_argument("--parsimony", default="smallest", choices=["smallest", "largest"])
    p.add_argument("--out")

    p = add("score", cmd_score, "pointwise held-out reconstruction errors")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split")
    p.add_argument("--part", default="val", choices=["train", "val", "test"])
    p.add_argument("--labels")
    p.add_argument("--out", required=True)

    p = add("shift", cmd_shift, "score a query batch against reference data")
    p.add_argument("--model", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--query-labels")
    p.add_argument("--out", required=True)

    p = add("compare", cmd_compare, "rank methods from sweeps run under one protocol")
    p.add_argument("--sweep", action="append", required=True)
    p.add_argument("--rule", default="min", choices=["min", "one-se", "one_se"])
    p.add_argument("--parsimony", default="smallest", choices=["smallest", "largest"])
    p.add_argument("--out", required=True)

    p = add("metrics", cmd_metrics, "LCMC and random triplet accuracy")
    p.add_argument("--data", required=True)
    p.add_argument("--embedding", required=True)
    p.add_argument("--k-range", default="5:50:5")
    p.add_argument("--triplets", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap


def _parse(argv):
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if not a.startswith("-")), None)
    if known.config and command:
        try:
            conf = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {known.config}: {exc}") from None
        conf = {k.replace("-", "_"): v for k, v in conf.items()}
        subparsers = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
        sp = subparsers.choices.get(command)
        if sp is not None:
            for action in sp._actions:
                if action.dest in conf:
                    action.required = False
            sp.set_defaults(**conf)
    return ap.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = _parse(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ProtocolMismatch as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (DivergenceError, SweepFailure, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
