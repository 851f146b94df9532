"""``dotk`` command line.

Exit status is 0 when every verdict passes, 1 when a verdict fails, and 2 on
usage errors (including a non-monotone system without ``--allow-nonmonotone``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .benamou_brenier import OptimizerConfig
from .distributions import BernoulliSystem, validate_pmf
from .errors import DomainError
from .report import (
    DEFAULT_TOL,
    analyze_shepp_olkin,
    appendix_report,
    curve_csv,
    dumps,
    geodesic_report,
    metadata,
    run_so_corpus,
    thin_report,
    tmon_search,
    translate_report,
)
from .shepp_olkin import SheppOlkinInstance

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _vector(text: str, name: str) -> np.ndarray:
    """A JSON array given inline, as a comma list, or as a path to a JSON file."""
    if os.path.isfile(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    text = text.strip()
    try:
        data = json.loads(text) if text.startswith("[") else [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse {name}: {exc}") from None
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise UsageError(f"{name} must be a non-empty flat array")
    return arr


def _system(args) -> BernoulliSystem:
    if args.params:
        try:
            with open(args.params, encoding="utf-8") as fh:
                data = json.load(fh)
            start, end = data["p_start"], data["p_end"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot read system from {args.params}: {exc}") from None
        return BernoulliSystem(start, end)
    if args.p_start is None or args.p_end is None:
        raise UsageError("give --params FILE or both --p-start and --p-end")
    return BernoulliSystem(_vector(args.p_start, "p_start"), _vector(args.p_end, "p_end"))


def _times(grid: int) -> np.ndarray:
    if grid < 3:
        raise UsageError("--grid must be at least 3")
    return np.linspace(0.0, 1.0, grid)


def _verdicts_pass(report: dict) -> bool:
    return all(bool(v) for v in report.get("verdicts", {}).values())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_shepp_olkin(args, tol):
    if args.params is None and args.p_start is None and args.p_end is None:
        rep = run_so_corpus(args.trials, args.seed, args.n_max, args.grid, tol, certificate=False)
        rep["verdicts"] = {"corpus": not rep["failed"]}
        return rep, None
    system = _system(args)
    inst = SheppOlkinInstance.from_system(system)
    if not inst.monotone and not args.allow_nonmonotone:
        raise UsageError(
            "system is not monotone (some p_end < p_start); the concavity claims only cover "
            "monotone systems. Pass --allow-nonmonotone to analyze it anyway."
        )
    rep = analyze_shepp_olkin(inst, args.grid, tol, certificate=True, curves=True)
    if not inst.monotone:
        rep["note"] = "non-monotone system: margins are reported, no claim is checked"
    curves = rep.get("curves")
    csv = None
    if curves is not None:
        key = {"entropy": "entropy", "h2": "h2", "h2-fd": "h2_fd"}[args.curve]
        if key not in curves:
            key = "h2_fd"
        csv = (curves["t"], curves[key])
    return rep, csv


def cmd_tmon_search(args, tol):
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    sizes = args.n or [2, 3]
    if min(sizes) < 2:
        raise UsageError("--n values must be at least 2")
    rep = tmon_search(sizes, args.trials, args.seed, args.grid, tol)
    rep["verdicts"] = {"concave_on_witness": rep["concave"]} if rep["found"] else {}
    return rep, None


def cmd_geodesic(args, tol):
    f0 = _pmf(args.f0, "f0")
    f1 = _pmf(args.f1, "f1")
    if f0.size != f1.size:
        raise UsageError("f0 and f1 must share their support size")
    cfg = OptimizerConfig(
        grid=args.grid, max_iter=args.max_iter, step=args.step, penalty=args.penalty, seed=args.seed, init=args.init
    )
    rep = geodesic_report(f0, f1, cfg)
    return rep, (rep["curves"]["t"], rep["curves"]["beta"])


def cmd_verify_appendix(args, tol):
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if args.m_max < 1:
        raise UsageError("--m-max must be at least 1")
    return appendix_report(args.trials, args.m_max, args.seed, tol), None


def cmd_thin(args, tol):
    f = _pmf(args.pmf, "pmf")
    rep = thin_report(f, _times(args.grid))
    return rep, (rep["t"], rep["entropy"])


def cmd_translate(args, tol):
    f = _pmf(args.pmf, "pmf")
    if args.shift < 1:
        raise UsageError("--shift must be a positive integer")
    rep = translate_report(f, args.shift, _times(args.grid), tol)
    return rep, (rep["t"], rep["curves"]["entropy"])


def _pmf(text, name):
    if text is None:
        raise UsageError(f"--{name} is required")
    try:
        return validate_pmf(_vector(text, name), name=name)
    except DomainError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tolerance", type=float, default=1.0, help="scale factor for every margin tolerance")
    common.add_argument("--output", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    parser = argparse.ArgumentParser(prog="dotk", description="Discrete transport and entropy concavity checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("shepp-olkin", parents=[common], help="analyze one system, or a random corpus")
    p.add_argument("--params", help="JSON file with p_start and p_end arrays")
    p.add_argument("--p-start", help="inline parameters at t=0")
    p.add_argument("--p-end", help="inline parameters at t=1")
    p.add_argument("--grid", type=int, default=201)
    p.add_argument("--trials", type=int, default=1000, help="corpus size when no system is given")
    p.add_argument("--n-max", type=int, default=12)
    p.add_argument("--allow-nonmonotone", action="store_true")
    p.add_argument("--curve", choices=("entropy", "h2", "h2-fd"), default="h2", help="curve written with --format csv")
    p.set_defaults(func=cmd_shepp_olkin)

    p = sub.add_parser("tmon-search", parents=[common], help="search for alpha decreasing in time")
    p.add_argument("--n", type=int, action="append", help="system size; repeat for several (default 2 and 3)")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--grid", type=int, default=51)
    p.set_defaults(func=cmd_tmon_search)

    p = sub.add_parser("geodesic", parents=[common], help="minimize the action between two mass functions")
    p.add_argument("--f0", required=True)
    p.add_argument("--f1", required=True)
    p.add_argument("--grid", type=int, default=51)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--step", type=float, default=1e-2)
    p.add_argument("--penalty", type=float, default=1e12)
    p.add_argument("--init", choices=("auto", "mixture"), default="auto")
    p.set_defaults(func=cmd_geodesic)

    p = sub.add_parser("verify-appendix", parents=[common], help="random campaign over the cubic inequalities")
    p.add_argument("--m-max", type=int, default=10)
    p.add_argument("--trials", type=int, default=10_000)
    p.set_defaults(func=cmd_verify_appendix)

    p = sub.add_parser("thin", parents=[common], help="thinning path of a mass function")
    p.add_argument("--pmf", required=True)
    p.add_argument("--grid", type=int, default=201)
    p.set_defaults(func=cmd_thin)

    p = sub.add_parser("translate", parents=[common], help="translation path of a mass function")
    p.add_argument("--pmf", required=True)
    p.add_argument("--shift", type=int, default=1)
    p.add_argument("--grid", type=int, default=201)
    p.set_defaults(func=cmd_translate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        tol = DEFAULT_TOL.scaled(args.tolerance)
        report, csv = args.func(args, tol)
        if args.format == "csv":
            if csv is None:
                raise UsageError(f"{args.command} has no curve to write as CSV")
            text = curve_csv(*csv)
        else:
            report = {"metadata": metadata(args.command, args.seed, getattr(args, "grid", None), tol), **report}
            text = dumps(report)
    except (UsageError, DomainError, ValueError) as exc:
        print(f"dotk {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if _verdicts_pass(report) else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
