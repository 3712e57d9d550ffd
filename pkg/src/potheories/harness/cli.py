"""Command line: run | suite | povm | list."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from ..errors import BadArgument, CapExceeded, PotheoriesError
from ..formalism import FlashModel, flash_history_povm, povm_to_json, tiny_1p1
from ..theories import TheoryId
from .acceptance import ALL_SCENARIOS, run_acceptance
from .builtins import builtin, builtin_configs
from .scenarios import Scenario, run_scenario

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

SUITES = {
    "equivalence": ["equivalence-grwm-grwf", "equivalence-mbm-grwm", "witness-grwp1", "witness-grwp5"],
    "cat": ["cat-grwf", "cat-grwm", "cat-mm", "mm-field-identity"],
    "scenarios": ALL_SCENARIOS,
}


def config_hash(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"artifact": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_manifest(out: Path, command, configs, runtime):
    manifest = {"command": command, "versions": versions(), "runtime_seconds": round(runtime, 3),
                "scenarios": {c["name"]: {"config_hash": config_hash(c), "seed": c.get("seed", 0),
                                          "n_runs": c.get("n_runs", 1000), "config": c} for c in configs}}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def _out_dir(arg, default) -> Path:
    out = Path(arg or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(report, out: Path, fmt):
    (out / f"{report.scenario}.json").write_text(report.to_json() + "\n")
    if fmt == "csv":
        rows = report.per_time or [{}]
        keys = sorted({k for r in rows for k, v in r.items() if not isinstance(v, (dict, list))})
        with open(out / f"{report.scenario}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "status", "statistic", "p_value", "gap"] + keys)
            for r in rows:
                w.writerow([report.scenario, report.status, report.statistic, report.p_value, report.gap]
                           + [r.get(k, "") for k in keys])


def load_config(args) -> dict:
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise BadArgument(f"cannot read config {args.config}: {exc}") from None
    elif args.scenario:
        cfgs = builtin_configs()
        if args.scenario not in cfgs:
            raise BadArgument(f"unknown scenario {args.scenario!r}")
        cfg = cfgs[args.scenario]
    else:
        raise BadArgument("give --scenario or --config")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.ensemble is not None:
        cfg["n_runs"] = args.ensemble
    return cfg


def cmd_run(args) -> int:
    cfg = load_config(args)
    sc = Scenario.from_dict(cfg)
    t0 = time.perf_counter()
    report = run_scenario(sc, args.jobs)
    out = _out_dir(args.out, f"runs/{sc.name}-seed{sc.seed}")
    _write_report(report, out, args.format)
    write_manifest(out, args.argv, [sc.to_dict()], time.perf_counter() - t0)
    print(f"{report.scenario}: {report.status} (statistic {report.statistic}, p {report.p_value}, "
          f"gap {report.gap}, flagged {report.flagged_steps}/{report.steps}, no-outcome {report.no_outcome})")
    print(f"wrote {out}")
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_suite(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args.out, f"runs/suite-{args.name}")
    if args.name == "acceptance":
        results, runner = run_acceptance(args.jobs, echo=print)
        for r in runner.reports.values():
            _write_report(r, out, args.format)
        summary = [{"criterion": r.number, "title": r.title, "passed": r.passed, "summary": r.summary}
                   for r in results]
        (out / "acceptance.json").write_text(json.dumps(summary, indent=1) + "\n")
        configs = [builtin(n).to_dict() for n in runner.reports]
        ok = all(r.passed for r in results)
    elif args.name in SUITES:
        reports = []
        for name in SUITES[args.name]:
            sc = builtin(name).with_overrides(seed=args.seed, n_runs=args.ensemble)
            rep = run_scenario(sc, args.jobs)
            print(f"[{'PASS' if rep.passed else 'FAIL'}] {name}: {rep.status} p={rep.p_value} gap={rep.gap}")
            _write_report(rep, out, args.format)
            reports.append((sc, rep))
        configs = [sc.to_dict() for sc, _ in reports]
        ok = all(rep.passed for _, rep in reports)
    else:
        raise BadArgument(f"unknown suite {args.name!r}; known: acceptance, {', '.join(SUITES)}")
    write_manifest(out, args.argv, configs, time.perf_counter() - t0)
    print(f"wrote {out}")
    return EXIT_PASS if ok else EXIT_FAIL


def povm_document(model_name, n_steps, dt) -> dict:
    if model_name != "tiny-1p1":
        raise BadArgument(f"unknown POVM model {model_name!r}; known: tiny-1p1")
    model: FlashModel = tiny_1p1()
    povm = flash_history_povm(model, n_steps, dt)
    g = model.grid
    return {"model": model_name, "n_steps": n_steps, "dt": dt,
            "grid": {"n_particles": g.n_particles, "points": g.points_per_dim, "spacing": g.spacing},
            "params": {"lam": model.params.lam, "sigma": model.params.sigma},
            "elements": povm_to_json(povm)}


def cmd_povm(args) -> int:
    doc = povm_document(args.model, args.steps, args.dt)
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"wrote {len(doc['elements'])} elements to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_PASS


def cmd_list(args) -> int:
    if args.what in ("theories", "all"):
        print("theories: " + ", ".join(t.value for t in TheoryId))
    if args.what in ("scenarios", "all"):
        for name, cfg in builtin_configs().items():
            print(f"{name:24s} {cfg['test']['kind']:20s} {cfg.get('description', '')}")
    if args.what in ("suites", "all"):
        print("suites: acceptance, " + ", ".join(SUITES))
    return EXIT_PASS


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="potheories")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--scenario")
    run.add_argument("--config")
    for sp in (run, sub.add_parser("suite", help="run a named suite")):
        if sp is not run:
            sp.add_argument("name")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--ensemble", type=int)
        sp.add_argument("--out")
        sp.add_argument("--format", choices=["json", "csv"], default="json")
        sp.add_argument("--jobs", type=int, default=1)
    pv = sub.add_parser("povm", help="export a flash-history POVM as JSON")
    pv.add_argument("--model", default="tiny-1p1")
    pv.add_argument("--steps", type=int, default=3)
    pv.add_argument("--dt", type=float, default=0.5)
    pv.add_argument("--out")
    ls = sub.add_parser("list", help="list theories, scenarios and suites")
    ls.add_argument("what", nargs="?", default="all", choices=["theories", "scenarios", "suites", "all"])
    return p


COMMANDS = {"run": cmd_run, "suite": cmd_suite, "povm": cmd_povm, "list": cmd_list}


def main(argv=None) -> int:
    try:
        argv = list(sys.argv[1:] if argv is None else argv)
        args = parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    args.argv = argv
    try:
        return COMMANDS[args.command](args)
    except (BadArgument, CapExceeded, jsonschema.ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PotheoriesError as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
