"""Command line entry point: ``jordan-exit {predict,simulate,analyze,sweep}``.

Exit status: 0 success, 2 invalid configuration or input, 3 I/O failure,
4 more than 1% of trials failed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .conjugation import poincare_for_spec
from .errors import ConfigError, InvalidInputError, JordanExitError
from .model import ProblemSpec, TrialRecord, from_dict, to_dict
from .simulate import DEFAULT_MAX_STEPS, StepPolicy, run_batch
from .stats import group_by_epsilon, summarize, theory_sample
from .theory import prediction_set

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_TRIALS = 0, 2, 3, 4
SUCCESS_FRACTION = 0.99
RUN_KEYS = {"trials", "workers", "seed", "out_dir", "max_steps", "refine", "steps"}
STEP_KEYS = {"coarse", "fine", "em", "switch_frac"}


class CliError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


# --- configuration --------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def load_config(path: str) -> tuple[dict, ProblemSpec, dict]:
    """Raw JSON, validated spec and the ``run`` block (with defaults)."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_CONFIG) from exc
    try:
        spec = from_dict(raw, extra_keys={"run"})
    except ConfigError as exc:
        raise CliError("invalid config:\n" + "\n".join(f"  {p}: {m}" for p, m in exc.errors), EXIT_CONFIG) from exc
    run = raw.get("run", {})
    errs = []
    if not isinstance(run, dict):
        errs.append(("run", "must be an object"))
        run = {}
    errs += [(f"run.{k}", "unknown key") for k in run if k not in RUN_KEYS]
    errs += [(f"run.steps.{k}", "unknown key") for k in run.get("steps", {}) if k not in STEP_KEYS]
    for key in ("trials", "workers", "max_steps"):
        if key in run and not (isinstance(run[key], int) and run[key] >= 1):
            errs.append((f"run.{key}", "must be a positive integer"))
    if "seed" in run and not (isinstance(run["seed"], int) and run["seed"] >= 0):
        errs.append(("run.seed", "must be a nonnegative integer"))
    if errs:
        raise CliError("invalid config:\n" + "\n".join(f"  {p}: {m}" for p, m in errs), EXIT_CONFIG)
    return raw, spec, run


def _policy(run: dict) -> StepPolicy:
    try:
        return StepPolicy(**run.get("steps", {}), refine=run.get("refine", 0))
    except InvalidInputError as exc:
        raise CliError(f"invalid config: run.steps: {exc}", EXIT_CONFIG) from exc


def _workers(flag: int | None, run: dict) -> int:
    env = os.environ.get("JORDAN_EXIT_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise CliError(f"JORDAN_EXIT_THREADS must be an integer, got {env!r}", EXIT_CONFIG)
        if n >= 1:
            return n
    return flag if flag is not None else run.get("workers", 1)


def _effective_spec(spec: ProblemSpec, args) -> ProblemSpec:
    if not getattr(args, "outer", False) and spec.outer_domain is not None:
        spec = replace(spec, outer_domain=None)
    if getattr(args, "outer", False) and spec.outer_domain is None:
        raise CliError("--outer needs an outer_domain in the config", EXIT_CONFIG)
    alpha = getattr(args, "alpha", None)
    if alpha is not None and alpha is not True:
        if not 0 < alpha < 1:
            raise CliError("--alpha must lie in (0, 1)", EXIT_CONFIG)
        spec = replace(spec, alpha=float(alpha))
    return spec


def _epsilons(args, spec: ProblemSpec) -> list[float]:
    if args.epsilon is None:
        return list(spec.epsilon_grid)
    bad = [e for e in args.epsilon if not (0 < e < 1 / math.e)]
    if bad:
        raise CliError(f"epsilon must lie in (0, 1/e): {bad}", EXIT_CONFIG)
    return list(args.epsilon)


# --- records I/O ----------------------------------------------------------------


def csv_header(d: int) -> list[str]:
    return (["trial_id", "epsilon", "exit_time", "exit_face", "exit_sign"]
            + [f"exit_x{i}" for i in range(1, d + 1)]
            + ["inner_exit_time", "max_transverse_dist", "steps", "seed"])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records, d: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(d))
    for r in records:
        w.writerow([_fmt(v) for v in (r.trial_id, r.epsilon, r.exit_time, r.exit_face, r.exit_sign,
                                      *r.exit_point, r.inner_exit_time, r.max_transverse_dist, r.steps, r.seed)])
    return buf.getvalue()


def read_records(path: str, d: int | None = None) -> list[TrialRecord]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(f"cannot read records {path}: {exc}", EXIT_IO) from exc
    if not rows:
        raise CliError(f"{path}: empty records file", EXIT_CONFIG)
    header = rows[0]
    nx = sum(1 for h in header if h.startswith("exit_x"))
    if header != csv_header(nx):
        raise CliError(f"{path}: unexpected header", EXIT_CONFIG)
    if d is not None and nx != d:
        raise CliError(f"{path}: records have dimension {nx}, config has {d}", EXIT_CONFIG)
    if len(rows) == 1:
        raise CliError(f"{path}: no records", EXIT_CONFIG)
    out = []
    try:
        for row in rows[1:]:
            tail = row[5 + nx :]
            out.append(TrialRecord(
                trial_id=int(row[0]), epsilon=float(row[1]), exit_time=float(row[2]),
                exit_point=tuple(float(v) for v in row[5 : 5 + nx]),
                exit_face=int(row[3]), exit_sign=int(row[4]),
                inner_exit_time=None if tail[0] == "" else float(tail[0]),
                max_transverse_dist=float(tail[1]), steps=int(tail[2]), seed=int(tail[3]),
            ))
    except (ValueError, IndexError) as exc:
        raise CliError(f"{path}: malformed record: {exc}", EXIT_CONFIG) from exc
    return out


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _eps_tag(eps: float) -> str:
    return "eps" + repr(float(eps)).replace("+", "")


# --- commands -------------------------------------------------------------------


def cmd_predict(args) -> int:
    raw, spec, run = load_config(args.config)
    spec = _effective_spec(spec, argparse.Namespace(outer=spec.outer_domain is not None, alpha=args.alpha))
    poincare = poincare_for_spec(spec) if spec.outer_domain is not None else None
    report = {
        "config_hash": config_hash(raw),
        "version": __version__,
        "predictions": [prediction_set(spec, eps, poincare).to_dict() for eps in _epsilons(args, spec)],
    }
    if poincare is not None:
        report["poincare"] = poincare.to_dict()
    text = _json(report)
    samples = None
    if args.samples:
        seed = args.seed if args.seed is not None else run.get("seed", 0)
        th = theory_sample(spec, args.samples, seed)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "eta", "sign"])
        for i in range(th.rho.size):
            w.writerow([repr(float(th.rho[i])), "" if th.eta is None else repr(float(th.eta[i])), int(th.sign[i])])
        samples = buf.getvalue()
    if args.out:
        out = Path(args.out)
        _write(out / "prediction.json", text)
        if samples is not None:
            _write(out / "samples.csv", samples)
    else:
        sys.stdout.write(samples if samples is not None else text)
    return EXIT_OK


def _simulate_cell(spec, run, eps, trials, seed, workers, out_dir: Path, inner: bool) -> dict:
    t0 = time.perf_counter()
    batch = run_batch(spec, eps, trials, seed, workers, policy=_policy(run), inner=inner,
                      max_steps=run.get("max_steps", DEFAULT_MAX_STEPS))
    elapsed = time.perf_counter() - t0
    path = out_dir / f"records_{_eps_tag(eps)}.csv"
    _write(path, records_to_csv(batch.records, spec.dim))
    ok = len(batch.records) / trials
    return {
        "epsilon": eps,
        "records": len(batch.records),
        "failed": len(batch.errors),
        "errors": [{"trial_id": t, "type": k, "message": m} for t, k, m in batch.errors[:50]],
        "started_outside_small_box": batch.n_started_outside,
        "path": str(path),
        "seconds": round(elapsed, 3),
        "status": EXIT_OK if ok >= SUCCESS_FRACTION else EXIT_TRIALS,
    }


def _manifest(raw, seed, cells, complete, started) -> dict:
    return {
        "config_hash": config_hash(raw),
        "master_seed": seed,
        "version": __version__,
        "backend": kernels.BACKEND,
        "complete": complete,
        "cells": cells,
        "wall_seconds": round(time.perf_counter() - started, 3),
    }


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    raw, spec, run = load_config(args.config)
    spec = _effective_spec(spec, args)
    eps_list = _epsilons(args, spec)
    trials = args.trials if args.trials is not None else run.get("trials", 1000)
    if trials < 1:
        raise CliError("--trials must be positive", EXIT_CONFIG)
    seed = args.seed if args.seed is not None else run.get("seed", 0)
    workers = _workers(args.workers, run)
    out_dir = Path(args.out or run.get("out_dir", "."))
    cells = []
    for eps in eps_list:
        cells.append(_simulate_cell(spec, run, eps, trials, seed, workers, out_dir, args.alpha is not None))
        print(f"eps={eps!r}: {cells[-1]['records']}/{trials} trials in {cells[-1]['seconds']} s", file=sys.stderr)
    _write(out_dir / "manifest.json", _json(_manifest(raw, seed, cells, True, started)))
    return max(c["status"] for c in cells)


def _analyze(spec, records, seed, outer) -> dict:
    poincare = poincare_for_spec(spec) if outer else None
    summary = summarize(group_by_epsilon(records), spec, poincare, seed=seed)
    out = summary.to_dict()
    if poincare is not None:
        out["poincare"] = poincare.to_dict()
    return out


def cmd_analyze(args) -> int:
    raw, spec, run = load_config(args.config)
    spec = _effective_spec(spec, args)
    records = [r for p in args.records for r in read_records(p, spec.dim)]
    seed = args.seed if args.seed is not None else run.get("seed", 0)
    try:
        report = _analyze(spec, records, seed, args.outer)
    except InvalidInputError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    text = _json(report)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    raw, spec, run = load_config(args.config)
    spec = _effective_spec(spec, args)
    eps_list = list(spec.epsilon_grid)
    trials = args.trials if args.trials is not None else run.get("trials", 1000)
    seed = args.seed if args.seed is not None else run.get("seed", 0)
    workers = _workers(args.workers, run)
    out_dir = Path(args.out or run.get("out_dir", "."))
    cells: list[dict] = []
    try:
        for eps in eps_list:
            cells.append(_simulate_cell(spec, run, eps, trials, seed, workers, out_dir, args.alpha is not None))
            _write(out_dir / "manifest.json", _json(_manifest(raw, seed, cells, False, started)))
            print(f"eps={eps!r}: {cells[-1]['records']}/{trials} trials in {cells[-1]['seconds']} s", file=sys.stderr)
    except KeyboardInterrupt:
        print("interrupted; completed cells are kept and the manifest is marked incomplete", file=sys.stderr)
        return 130
    records = [r for c in cells for r in read_records(c["path"], spec.dim)]
    report = _analyze(spec, records, seed, args.outer)
    report["config_hash"] = config_hash(raw)
    report["master_seed"] = seed
    _write(out_dir / "report.json", _json(report))
    _write(out_dir / "manifest.json", _json(_manifest(raw, seed, cells, True, started)))
    return max(c["status"] for c in cells)


# --- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jordan-exit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, eps=True):
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="master seed (default: run.seed or 0)")
        sp.add_argument("--out", help="output directory (file for analyze)")
        sp.add_argument("--alpha", type=float, nargs="?", const=True, default=None,
                        help="record small-box exits; optional value overrides the config alpha")
        if eps:
            sp.add_argument("--epsilon", type=float, action="append",
                            help="noise level; repeatable (default: the config grid)")

    sp = sub.add_parser("predict", help="deterministic predictions and limit-law samples")
    common(sp)
    sp.add_argument("--samples", type=int, default=0, help="emit N sampled (rho, eta, sign) rows as CSV")
    sp.set_defaults(func=cmd_predict)

    for name, func, help_ in (("simulate", cmd_simulate, "simulate exit records"),
                              ("sweep", cmd_sweep, "simulate the whole grid and analyze")):
        sp = sub.add_parser(name, help=help_)
        common(sp, eps=name == "simulate")
        sp.add_argument("--trials", type=int)
        sp.add_argument("--workers", type=int, help="threads (JORDAN_EXIT_THREADS overrides)")
        sp.add_argument("--outer", action="store_true", help="exit from the outer box of the config")
        sp.set_defaults(func=func)

    sp = sub.add_parser("analyze", help="compare records with the limiting laws")
    common(sp, eps=False)
    sp.add_argument("records", nargs="+", help="records CSV files")
    sp.add_argument("--outer", action="store_true", help="records are outer-box exits")
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"jordan-exit: {exc}", file=sys.stderr)
        return exc.status
    except (InvalidInputError, ConfigError) as exc:
        print(f"jordan-exit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except JordanExitError as exc:
        print(f"jordan-exit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_TRIALS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
