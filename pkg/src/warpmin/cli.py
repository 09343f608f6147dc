"""Command line entry point.

    warpmin classify --config hyp.toml --out results/
    warpmin flow --config configs/          # every *.toml in the directory
    warpmin verify formulas

Exit status: 0 on completion (negative mathematical outcomes included),
2 for configuration or usage errors, 1 for runtime faults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import tomli

from . import scenarios, verification
from .errors import ConfigError, WarpminError

VERB_EXPERIMENT = {
    "classify": "classify",
    "solve-graph": "graph_solve",
    "dirichlet": "dirichlet",
    "flow": "flow",
    "ball-threshold": "ball_threshold",
    "probe-growth": "normal_growth",
    "report": None,  # any experiment named in the config
}

DEFAULT_OUT = "warpmin_out"


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}", "config") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", "config") from exc


def config_files(path) -> list:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.toml"))
        if not files:
            raise ConfigError(f"no *.toml scenarios in {p}", "config")
        return files
    return [p]


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=verification._jsonable) + "\n"


def prepare(scenario: dict, verb_experiment=None, seed=None) -> dict:
    """Apply command-line overrides and validate one scenario mapping."""
    sc = dict(scenario)
    if verb_experiment is not None:
        given = sc.get("experiment", verb_experiment)
        if given != verb_experiment:
            raise ConfigError(f"config experiment {given!r} does not match this command ({verb_experiment!r})",
                              "experiment")
        sc["experiment"] = verb_experiment
    if seed is not None:
        sc["seed"] = seed
    return scenarios.validate(sc)


def execute(scenario: dict, out_dir: Path, tolerance=None) -> dict:
    """Run one prepared scenario; writes ``summary.json`` and artefacts under ``out_dir / id``."""
    summary, artifacts = scenarios.run_scenario(scenario, tolerance)
    target = out_dir / summary["id"]
    target.mkdir(parents=True, exist_ok=True)
    (target / "summary.json").write_text(_dump_json(summary))
    for name, text in sorted(artifacts.items()):
        (target / name).write_text(text)
    return summary


def _job(args):
    sc, out_dir, tol = args
    try:
        return execute(sc, Path(out_dir), tol), None
    except WarpminError as exc:
        return None, (type(exc).__name__, str(exc), getattr(exc, "key", None))


def run_configs(paths, out_dir: Path, exp, seed, tol, workers: int) -> list:
    prepared = [prepare(load_config(p), exp, seed) for p in paths]
    ids = [sc["id"] for sc in prepared]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"duplicate scenario id(s): {', '.join(dupes)}", "id")
    for sc in prepared:
        scenarios.build_metric(sc["metric"])
    jobs = [(sc, str(out_dir), tol) for sc in prepared]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_job, jobs))
    else:
        outcomes = [_job(j) for j in jobs]
    failures = [err for _, err in outcomes if err is not None]
    results = sorted((s for s, _ in outcomes if s is not None), key=lambda s: s["id"])
    if len(jobs) > 1:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.json").write_text(_dump_json(results))
    for name, msg, key in failures:
        if name == "ConfigError":
            raise ConfigError(msg, key)
    if failures:
        name, msg, _ = failures[0]
        raise ScenarioFailure(f"{len(failures)} scenario(s) failed; first: {name}: {msg}")
    return results


class ScenarioFailure(WarpminError):
    pass


def _headline(summary: dict) -> str:
    exp = summary["experiment"]
    if exp == "classify":
        return "flags=" + ",".join(summary["result"]["flags"]) if summary["result"]["flags"] else "flags=none"
    if exp in ("graph_solve", "dirichlet"):
        r = summary["report"]
        return f"verdict={r['verdict']} residual={r['final_infnorm_residual']:.3g}"
    if exp == "flow":
        return f"verdict={summary['trace']['verdict']}"
    if exp == "ball_threshold":
        return f"threshold={summary['estimate']['threshold']}"
    if exp == "normal_growth":
        return f"strictly_increasing={summary['strictly_increasing']}"
    return f"mean_curvature_max={summary.get('mean_curvature_max')}"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="warpmin", description="Minimal submanifolds in metric families: experiments.")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in VERB_EXPERIMENT:
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="scenario TOML file or a directory of them")
        _common(p)
    p = sub.add_parser("verify")
    p.add_argument("suite", help="formulas, theorems or solvers")
    _common(p)
    return ap


def _common(p):
    p.add_argument("--out", default=None, help=f"output directory (env WARPMIN_OUT, default {DEFAULT_OUT})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="parallel scenarios (env WARPMIN_WORKERS)")
    p.add_argument("--tolerance", type=float, default=None)


def _settings(args):
    out = args.out or os.environ.get("WARPMIN_OUT") or DEFAULT_OUT
    workers = args.workers
    if workers is None:
        env = os.environ.get("WARPMIN_WORKERS")
        try:
            workers = int(env) if env else 1
        except ValueError as exc:
            raise ConfigError(f"WARPMIN_WORKERS must be an integer, got {env!r}", "WARPMIN_WORKERS") from exc
    if workers < 1:
        raise ConfigError("workers must be >= 1", "workers")
    return Path(out), workers


def verify(suite: str, seed: int, out_dir: Path | None, stream=None) -> list:
    results = verification.run_suite(suite, seed=seed)
    text = verification.format_report(results)
    (stream or sys.stdout).write(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"verify_{suite}.txt").write_text(text)
        (out_dir / f"verify_{suite}.json").write_text(verification.report_json(results))
    return results


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        out_dir, workers = _settings(args)
        if args.verb == "verify":
            if args.suite not in verification.SUITES:
                parser.print_usage(sys.stderr)
                print(f"warpmin: unknown suite {args.suite!r}; choose from {', '.join(verification.SUITES)}",
                      file=sys.stderr)
                return 2
            verify(args.suite, args.seed or 0, out_dir if (args.out or os.environ.get("WARPMIN_OUT")) else None)
            return 0
        results = run_configs(config_files(args.config), out_dir, VERB_EXPERIMENT[args.verb], args.seed,
                              args.tolerance, workers)
        for s in results:
            print(f"{s['id']}: {s['experiment']} {_headline(s)}")
        return 0
    except ConfigError as exc:
        print(f"warpmin: configuration error [{exc.key}]: {exc}", file=sys.stderr)
        return 2
    except WarpminError as exc:
        print(f"warpmin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # operational faults
        print(f"warpmin: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
