"""Command-line front end: ``fracpme <verb> ...``.

Verbs: ``list``, ``run``, ``sweep``, ``compare``, ``calibrate-extinction`` and
``resolve`` (a single implicit step, for debugging).  Bundles are written
below ``$FRACPME_OUTPUT`` (default ``./runs``) unless ``--out`` is given.
The exit code is 0 exactly when every verdict passes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .experiments import (
    ConfigError,
    compare_reference,
    list_experiments,
    load_config,
    make_datum,
    run_experiment,
    sweep,
)
from .reference import CalibrationError, calibrate_extinction_profile
from .resolvent import resolvent


def _parse_values(text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            out.append(json.loads(item))
        except json.JSONDecodeError:
            out.append(item)
    return out


def _print_verdicts(name, bundle):
    for v in bundle.verdicts:
        print(f"{name}: {v.line()}")
    if bundle.status != "complete":
        print(f"{name}: status={bundle.status}")


def cmd_list(args) -> int:
    for e in list_experiments():
        print(f"{e['name']:28s} {e['description']}")
        if args.verbose:
            print(json.dumps(e["defaults"], indent=1))
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    bundle = run_experiment(cfg, args.out)
    _print_verdicts(cfg.name, bundle)
    print(f"bundle: {bundle.path}")
    return 0 if bundle.passed else 1


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    bundles = sweep(cfg, args.param, _parse_values(args.values), args.out, args.jobs)
    for v, b in zip(_parse_values(args.values), bundles):
        _print_verdicts(f"{cfg.name}[{args.param}={v}]", b)
    return 0 if all(b.passed for b in bundles) else 1


def cmd_compare(args) -> int:
    rep = compare_reference(load_config(args.config))
    print(json.dumps(rep.to_dict(), indent=1))
    return 0


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    d = cfg.raw["datum"]
    try:
        cal = calibrate_extinction_profile(cfg.grid, cfg.params.sigma, float(d.get("c", 1.0)), d.get("center", 0.0),
                                           float(cfg.check("extinction", "T", 1.0)))
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 1
    text = json.dumps(cal.to_dict(), indent=1)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "calibration.json").write_text(text)
    return 0


def cmd_resolve(args) -> int:
    cfg = load_config(args.config)
    g = make_datum(cfg)
    u, rep = resolvent(g, args.tau, cfg.params, cfg.mode, cfg.solver)
    out = rep.to_dict()
    out["max_u"] = float(np.max(u.values))
    out["min_u"] = float(np.min(u.values))
    print(json.dumps(out, indent=1))
    return 0 if rep.converged else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracpme", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("list", help="list registered experiments")
    p.set_defaults(func=cmd_list)
    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="run a config once per parameter value")
    p.add_argument("config")
    p.add_argument("--param", required=True, help="dotted config path, e.g. params.m")
    p.add_argument("--values", required=True, help="comma-separated JSON values")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("compare", help="errors against a reference solution")
    p.add_argument("config")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("calibrate-extinction", help="calibrate the separated extinction solution")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)
    p = sub.add_parser("resolve", help="one resolvent solve on the config datum")
    p.add_argument("config")
    p.add_argument("--tau", type=float, default=0.01)
    p.set_defaults(func=cmd_resolve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for k, v in exc.errors.items():
            print(f"config error: {k}: {v}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
