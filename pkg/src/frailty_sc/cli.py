"""Command line entry point: ``python -m frailty_sc <command> ...``.

Exit status: 0 on success, 2 on usage errors, 1 when a stage fails.
Every artifact is written atomically and accompanied by ``<artifact>.manifest.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .data import atomic_write_bytes, load_cohort, load_schema, write_cohort, write_schema
from .evaluation import evaluate
from .pipeline import (
    ParamsBundle,
    PipelineConfig,
    calibrate_all,
    config_dict,
    run_pipeline,
    score_cohort,
    select_all,
    split_cohort_indices,
    train_all,
)
from .synth import GeneratorSpec, generate

log = logging.getLogger("frailty_sc")


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default, allow_nan=False) + "\n"


def _clean_nan(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean_nan(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_nan(v) for v in obj]
    return obj


def write_json(path, obj):
    atomic_write_bytes(path, dumps(_clean_nan(obj)).encode())


class RunContext:
    """Collects inputs/outputs of one command and writes its manifests."""

    def __init__(self, command: str, argv: list[str], seed: int | None, config: dict):
        self.command = command
        self.argv = list(argv)
        self.seed = seed
        self.config = config
        self.config_hash = hashlib.sha256(
            json.dumps(config, sort_keys=True, default=_json_default).encode()
        ).hexdigest()
        self.started = datetime.now(timezone.utc).isoformat()
        self.inputs: dict[str, str] = {}

    def add_input(self, path):
        if path is not None:
            self.inputs[str(path)] = _stage("load", _sha256, path)

    def manifest(self, outputs) -> dict:
        return {
            "command": self.command,
            "argv": self.argv,
            "version": __version__,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": {str(p): _sha256(p) for p in outputs},
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }

    def finish(self, *outputs):
        for p in outputs:
            write_json(f"{p}.manifest.json", self.manifest([p]))


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ValueError, RuntimeError, KeyError, OSError) as e:
        raise StageError(name, e) from e


def _load_toml(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _pipeline_config(args) -> PipelineConfig:
    d = _load_toml(getattr(args, "spec", None))
    if getattr(args, "boost_config", None):
        b = _load_toml(args.boost_config)
        d["boost"] = {**d.get("boost", {}), **b.get("boost", b)}
    cfg = PipelineConfig.from_dict(d, seed=args.seed)
    sel = cfg.selection
    if getattr(args, "q_mode", None):
        sel.q_mode = args.q_mode
    if getattr(args, "honest_refit", False):
        cfg.honest_refit = True
    outcomes = _outcome_list(args)
    if outcomes:
        cfg.outcomes = outcomes
    return cfg


def _outcome_list(args) -> list[str] | None:
    if getattr(args, "all_outcomes", False):
        return None
    if getattr(args, "outcome", None):
        return [args.outcome]
    if getattr(args, "outcomes", None):
        return [o.strip() for o in args.outcomes.split(",") if o.strip()]
    return None


def _cohort(args, ctx: RunContext, path_attr: str = "cohort"):
    path = getattr(args, path_attr)
    ctx.add_input(args.schema)
    ctx.add_input(path)
    schema = _stage("load", load_schema, args.schema)
    return _stage("load", load_cohort, path, schema)


def _restrict(cohort, cfg: PipelineConfig, which: str):
    if which == "all":
        return cohort
    tr, te = split_cohort_indices(cohort, cfg)
    return cohort.subset(tr if which == "train" else te)


def scores_csv(table, votes) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "raw", "normalized", "binary"]
               + [f"prob_{o}" for o in table.outcomes] + [f"vote_{o}" for o in table.outcomes])
    for i in range(table.ids.size):
        w.writerow([table.ids[i], repr(float(table.scores.raw[i])),
                    repr(float(table.scores.normalized[i])), int(table.binary[i])]
                   + [repr(float(p)) for p in table.probs[i]]
                   + [int(v) for v in votes[i]])
    return buf.getvalue().encode()


def read_scores(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no scores")
    ids = np.array([r["id"] for r in rows], dtype=object)
    norm = np.array([float(r["normalized"]) for r in rows])
    binary = np.array([int(r["binary"]) for r in rows])
    return ids, norm, binary


def importance_csv(report) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "split_count", "theta_hat", "theta0", "p_value", "selected"])
    for j, f in enumerate(report.features):
        w.writerow([f, int(report.split_count[j]), repr(float(report.theta_hat[j])),
                    repr(float(report.theta0)), repr(float(report.p_value[j])),
                    int(report.selected[j])])
    return buf.getvalue().encode()


def _write_selection(outdir: Path, traces) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for o, t in traces.items():
        p = outdir / f"selection_{o}.json"
        write_json(p, t.to_dict())
        written.append(p)
        if t.importance_report is not None:
            q = outdir / f"importance_{o}.csv"
            atomic_write_bytes(q, importance_csv(t.importance_report))
            written.append(q)
    summary = outdir / "determinants.json"
    write_json(summary, {o: t.final_determinants for o, t in traces.items()})
    written.append(summary)
    return written


def _plot_data(outdir: Path, report) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    hist = outdir / "histogram.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["left", "right", "count"])
    e = report.distribution.hist_edges
    for k, cnt in enumerate(report.distribution.hist_counts):
        w.writerow([repr(e[k]), repr(e[k + 1]), cnt])
    atomic_write_bytes(hist, buf.getvalue().encode())
    ev = outdir / "by_event_count.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["events", "count", "mean", "q1", "median", "q3"])
    for r in report.by_event_count:
        w.writerow([r[k] if r[k] is not None else "" for k in
                    ("events", "count", "mean", "q1", "median", "q3")])
    atomic_write_bytes(ev, buf.getvalue().encode())
    return [hist, ev]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args, argv):
    d = _load_toml(args.spec)
    spec = _stage("generate", GeneratorSpec.from_dict, d.get("generator", d))
    ctx = RunContext("generate", argv, args.seed if args.seed is not None else spec.seed,
                     {"generator": d.get("generator", d)})
    ctx.add_input(args.spec)
    cohort = _stage("generate", generate, spec, args.seed)
    out = Path(args.out)
    _stage("write", write_cohort, cohort, out)
    schema_out = Path(args.schema_out) if args.schema_out else out.with_suffix(".schema.toml")
    _stage("write", write_schema, cohort.schema, schema_out)
    ctx.finish(out, schema_out)


def cmd_select(args, argv):
    cfg = _pipeline_config(args)
    ctx = RunContext("select", argv, cfg.seed, config_dict(cfg))
    ctx.add_input(args.spec)
    cohort = _cohort(args, ctx)
    train = _restrict(cohort, cfg, args.split)
    traces = _stage("select", select_all, train, cfg)
    ctx.finish(*_write_selection(Path(args.out), traces))


def cmd_train(args, argv):
    cfg = _pipeline_config(args)
    ctx = RunContext("train", argv, cfg.seed, config_dict(cfg))
    ctx.add_input(args.spec)
    ctx.add_input(args.determinants)
    cohort = _cohort(args, ctx)
    train = _restrict(cohort, cfg, args.split)
    with open(args.determinants) as fh:
        dets = json.load(fh)
    if cfg.outcomes:
        dets = {o: dets[o] for o in cfg.outcomes}
    clfs = _stage("train", train_all, train, dets, cfg)
    write_json(args.out, {"format": "frailty-sc-models/1",
                          "classifiers": [c.to_dict() for c in clfs.values()]})
    ctx.finish(Path(args.out))


def cmd_calibrate(args, argv):
    from .calibration import OutcomeClassifier

    cfg = _pipeline_config(args)
    ctx = RunContext("calibrate", argv, cfg.seed, config_dict(cfg))
    ctx.add_input(args.spec)
    ctx.add_input(args.models)
    cohort = _cohort(args, ctx)
    train = _restrict(cohort, cfg, args.split)
    with open(args.models) as fh:
        md = json.load(fh)
    clfs = {c["outcome"]: OutcomeClassifier.from_dict(c) for c in md["classifiers"]}
    calib = _stage("calibrate", calibrate_all, train, clfs, cfg)
    bundle = ParamsBundle(clfs, calib)
    atomic_write_bytes(args.out, bundle.to_json().encode())
    ctx.finish(Path(args.out))


def cmd_score(args, argv):
    cfg = _pipeline_config(args)
    ctx = RunContext("score", argv, cfg.seed, config_dict(cfg))
    ctx.add_input(args.params)
    cohort = _cohort(args, ctx, "input")
    cohort = _restrict(cohort, cfg, args.split)
    with open(args.params) as fh:
        bundle = _stage("score", ParamsBundle.from_dict, json.load(fh))
    table = _stage("score", score_cohort, cohort, bundle, args.reuse_normalization)
    atomic_write_bytes(args.out, scores_csv(table, table.votes(bundle.aggregation())))
    ctx.finish(Path(args.out))


def cmd_evaluate(args, argv):
    ctx = RunContext("evaluate", argv, None, {})
    ctx.add_input(args.scores)
    cohort = _cohort(args, ctx)
    ids, norm, binary = _stage("evaluate", read_scores, args.scores)
    pos = {v: i for i, v in enumerate(cohort.ids)}
    missing = [i for i in ids if i not in pos]
    if missing:
        raise StageError("evaluate", KeyError(f"{len(missing)} scored ids not in cohort, "
                                              f"e.g. {missing[0]!r}"))
    sub = cohort.subset(np.array([pos[i] for i in ids]))
    report = _stage("evaluate", evaluate, norm, binary, sub)
    write_json(args.out, report.to_dict())
    outs = [Path(args.out)]
    if args.plot_data:
        outs += _plot_data(Path(args.plot_data), report)
    ctx.finish(*outs)


def cmd_pipeline(args, argv):
    cfg = _pipeline_config(args)
    ctx = RunContext("pipeline", argv, cfg.seed, config_dict(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if args.cohort:
        if not args.schema:
            raise UsageError("--cohort needs --schema")
        cohort = _cohort(args, ctx)
    else:
        if not args.spec:
            raise UsageError("pipeline needs --spec or --cohort/--schema")
        ctx.add_input(args.spec)
        d = _load_toml(args.spec)
        if "generator" not in d:
            raise UsageError(f"{args.spec} has no [generator] table; pass --cohort")
        spec = _stage("generate", GeneratorSpec.from_dict, d["generator"])
        cohort = _stage("generate", generate, spec)
        _stage("write", write_cohort, cohort, out / "cohort.csv")
        _stage("write", write_schema, cohort.schema, out / "schema.toml")
        outputs += [out / "cohort.csv", out / "schema.toml"]
    res = _stage("pipeline", run_pipeline, cohort, cfg)
    outputs += _write_selection(out / "selection", res.traces)
    atomic_write_bytes(out / "params.json", res.bundle.to_json().encode())
    votes = res.table.votes(res.bundle.aggregation())
    atomic_write_bytes(out / "scores.csv", scores_csv(res.table, votes))
    write_json(out / "report.json", res.report.to_dict())
    outputs += [out / "params.json", out / "scores.csv", out / "report.json"]
    if args.plot_data:
        outputs += _plot_data(out / "plot_data", res.report)
    ctx.finish(*outputs)
    write_json(out / "manifest.json", ctx.manifest(outputs))
    for o, a in res.report.auc.items():
        print(f"{o}: held-out AUC {a:.3f}")


def cmd_rerun(args, argv):
    with open(args.manifest) as fh:
        m = json.load(fh)
    return main(m["argv"])


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class UsageError(Exception):
    pass


def _common(p, cohort=True, cohort_flag="--cohort"):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--spec", help="TOML with [pipeline]/[selection]/[boost] tables")
    p.add_argument("--boost-config", help="TOML overriding boosting parameters")
    p.add_argument("--q-mode", choices=["colsample", "total"])
    if cohort:
        dest = cohort_flag.lstrip("-").replace("-", "_")
        p.add_argument(cohort_flag, dest=dest if dest != "in" else "input", required=True)
        p.add_argument("--schema", required=True)


def _outcome_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--outcome")
    g.add_argument("--outcomes", help="comma-separated outcome names")
    g.add_argument("--all-outcomes", action="store_true")


def _split_flag(p, default):
    p.add_argument("--split", choices=["all", "train", "test"], default=default,
                   help=f"subset of the cohort to use (default {default})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frailty_sc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a synthetic cohort")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("select", help="select determinants per outcome")
    _common(p)
    _outcome_flags(p)
    _split_flag(p, "train")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("train", help="fit the per-outcome logistic classifiers")
    _common(p)
    _outcome_flags(p)
    _split_flag(p, "train")
    p.add_argument("--determinants", required=True, help="determinants.json from select")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("calibrate", help="estimate c, sens, spec, alpha, gamma")
    _common(p)
    _split_flag(p, "train")
    p.add_argument("--models", required=True)
    p.add_argument("--honest-refit", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("score", help="score a cohort with a parameter bundle")
    _common(p, cohort_flag="--in")
    _split_flag(p, "all")
    p.add_argument("--params", required=True)
    p.add_argument("--reuse-normalization", action="store_true",
                   help="use the bundle's stored min/max instead of this cohort's")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("evaluate", help="validation report for a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot-data", help="directory for histogram/event-count CSVs")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--spec", help="TOML with [generator] and/or pipeline tables")
    p.add_argument("--cohort")
    p.add_argument("--schema")
    p.add_argument("--boost-config")
    p.add_argument("--q-mode", choices=["colsample", "total"])
    p.add_argument("--honest-refit", action="store_true")
    p.add_argument("--outcomes", help="comma-separated outcome names")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot-data", action="store_true")
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("rerun", help="re-execute the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(fn=cmd_rerun)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.fn(args, argv)
        return int(rc or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"error in stage {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
