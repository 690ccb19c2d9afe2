"""Command line: solve, analyze, report, verify.

Exit codes: 0 success, 1 solver or certificate failure, 2 usage or config
error, 3 stored state missing or not matching the config.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import driver
from .geodesic import SolverError
from .geometry import ConeError
from .scenarios import ScenarioError, load

ENV_OUT = "MABUCHI_LAB_OUT"
ENV_THREADS = "MABUCHI_LAB_THREADS"

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_STATE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mabuchi-lab", description="eps-geodesic solver and diagnostics")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("solve", "run the eps ladder and store every rung"),
                        ("analyze", "energy profiles, estimates and convergence report"),
                        ("report", "plot-ready CSV and a summary table from an analysis")):
        q = sub.add_parser(name, help=help_)
        q.add_argument("--config", required=True, type=Path)
        _common(q)
    q = sub.add_parser("verify", help="run a certificate suite")
    q.add_argument("suite", help=f"one of: {', '.join(driver.SUITES)}")
    q.add_argument("--config", type=Path, help="rotation scenario whose stored run feeds identity-com015")
    _common(q)
    return p


def _common(q):
    q.add_argument("--out", type=Path, help=f"output root (default ${ENV_OUT} or ./results)")
    q.add_argument("--seed", type=int)
    q.add_argument("--threads", type=int)
    q.add_argument("-v", "--verbose", action="store_true")


def _out_root(args) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get(ENV_OUT, "results"))


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        raw = os.environ.get(ENV_THREADS, "1")
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"{ENV_THREADS}={raw!r} is not an integer") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _scenarios(args):
    scs = load(args.config)
    if args.seed is not None:
        for sc in scs:
            sc.raw["seed"] = args.seed
    return scs


def _each(scs, threads, fn):
    """Run fn per scenario, in parallel across scenarios; returns results in order."""
    if threads == 1 or len(scs) == 1:
        return [fn(sc) for sc in scs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, scs))


def cmd_solve(args) -> int:
    root = _out_root(args)
    scs = _scenarios(args)

    def run(sc):
        try:
            res = driver.solve(sc, root / sc.name)
        except (SolverError, ConeError) as exc:
            return sc.name, str(exc)
        last = res[-1]
        print(f"{sc.name}: {len(res)} rungs, finest eps {last.eps:.3e}, "
              f"sup residual {max(last.residual_history[-1:] or [0.0]):.2e}, min m {last.cone_report['min_m']:.3e}")
        return sc.name, None

    failed = [(n, e) for n, e in _each(scs, _threads(args), run) if e]
    for name, err in failed:
        print(f"{name}: {err}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_analyze(args) -> int:
    root = _out_root(args)
    scs = _scenarios(args)
    summaries = _each(scs, _threads(args), lambda sc: driver.analyze(sc, root / sc.name))
    for s in summaries:
        sys.stdout.write(driver.summary_table(s))
    return EXIT_OK


def cmd_report(args) -> int:
    root = _out_root(args)
    for sc in _scenarios(args):
        sys.stdout.write(driver.report(sc, root / sc.name))
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.suite not in driver.SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; known: {', '.join(driver.SUITES)}")
    root = _out_root(args)
    kw = {"seed": 20240611 if args.seed is None else args.seed}
    if args.suite == "identity-com015" and args.config is not None:
        sc = load(args.config)[0]
        if sc.raw["model"]["kind"] != "sphere":
            raise UsageError("identity-com015 needs a sphere scenario")
        results = driver.load_results(sc, root / sc.name)
        hit = [r for r in results if abs(r.eps - 1e-2) <= 1e-12]
        if not hit:
            raise driver.StateError(f"{sc.name}: no stored rung at eps = 1e-2")
        kw["stored"] = hit[0]
        kw["margin"] = sc.analysis["identity_margin"]
    res = driver.SUITES[args.suite](**kw)
    vdir = root / "verify"
    vdir.mkdir(parents=True, exist_ok=True)
    (vdir / f"{args.suite}.json").write_text(json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"{args.suite}: {'pass' if res.passed else 'FAIL'}")
    return EXIT_OK if res.passed else EXIT_FAIL


COMMANDS = {"solve": cmd_solve, "analyze": cmd_analyze, "report": cmd_report, "verify": cmd_verify}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except driver.StateError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_STATE


if __name__ == "__main__":
    sys.exit(main())
