"""Command-line entry point: ``glic run | compare | validate``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from glic.errors import CaseValidationError, GlicError, InvalidInputError
from glic.harness.build import build_case
from glic.harness.case import builtin_cases, load_case
from glic.harness.runner import (
    ACCELERATOR_CHOICES,
    EXIT_DIVERGED,
    EXIT_INPUT,
    EXIT_OK,
    compare_accelerators,
    run_case,
)


def _parser():
    p = argparse.ArgumentParser(
        prog="glic",
        description="Global-local iterative coupling of finite-element models.",
    )
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = p.add_subparsers(dest="command", required=True)

    case_help = f"case file or built-in name ({', '.join(builtin_cases())})"
    run = sub.add_parser("run", help="run the coupling on one case")
    run.add_argument("--case", required=True, help=case_help)
    run.add_argument("--accelerator", choices=ACCELERATOR_CHOICES,
                     help="override the case accelerator ('none' = unit constant relaxation)")
    run.add_argument("--inexact", type=float, metavar="ALPHA",
                     help="enable inexact inner solves driven by the previous residual")
    run.add_argument("--strategy", choices=("explicit_subdomain0", "workaround_global_patches"))
    run.add_argument("--reference", action="store_true",
                     help="also solve the monolithic reference and report accuracy")
    run.add_argument("--out", help="artifact directory (default: the case's output directory)")

    cmp_ = sub.add_parser("compare", help="run one case with several accelerators")
    cmp_.add_argument("--case", required=True, help=case_help)
    cmp_.add_argument("--accelerators", default="aitken,anderson,broyden",
                      help="comma-separated list (default: aitken,anderson,broyden)")
    cmp_.add_argument("--inexact", type=float, metavar="ALPHA")
    cmp_.add_argument("--out", help="artifact directory")

    val = sub.add_parser("validate", help="check a case file and build its models")
    val.add_argument("--case", required=True, help=case_help)
    return p


def _out_dir(case, out, *parts):
    if out is not None:
        return Path(out)
    if case.output_directory:
        return Path(case.output_directory)
    return Path("glic_output", case.name, *parts)


def _cmd_run(args):
    case = load_case(args.case)
    label = args.accelerator or case.controls.accelerator.kind
    out = _out_dir(case, args.out, label)
    res = run_case(case, accelerator=args.accelerator, inexact=args.inexact,
                   reference=args.reference, out=out, strategy=args.strategy)
    totals = res.record.totals()
    print(f"{case.name} [{label}]: {res.status}")
    print("  " + "  ".join(f"{k}={v}" for k, v in totals.items()))
    if res.record.message:
        print(f"  {res.record.message}")
    if res.accuracy:
        print("  accuracy: " + json.dumps(res.accuracy, sort_keys=True))
    print(f"  artifacts in {out}")
    return res.exit_code


def _cmd_compare(args):
    case = load_case(args.case)
    kinds = [k.strip() for k in args.accelerators.split(",") if k.strip()]
    bad = [k for k in kinds if k not in ACCELERATOR_CHOICES]
    if bad or not kinds:
        raise CaseValidationError(
            f"unknown accelerator(s) {', '.join(bad)}; choose from {', '.join(ACCELERATOR_CHOICES)}"
        )
    out = _out_dir(case, args.out, "compare")
    rows, _ = compare_accelerators(case, kinds, out=out, inexact=args.inexact)
    cols = list(rows[0])
    print("  ".join(f"{c:>11}" for c in cols))
    for row in rows:
        print("  ".join(f"{str(row[c]):>11}" for c in cols))
    print(f"comparison.csv and curves.csv in {out}")
    return EXIT_OK


def _cmd_validate(args):
    case = load_case(args.case)
    built = build_case(case)
    pr = built.problem
    print(f"{case.name}: valid")
    print(f"  global: {built.global_mesh.n_nodes} nodes, {built.global_mesh.n_elements} elements")
    for geo, model in zip(built.patches, pr.patches):
        print(f"  {geo.spec.name}: {model.mesh.n_nodes} nodes, {model.mesh.n_elements} elements, "
              f"{len(model.interface_dofs)} interface DOFs, {len(geo.ties)} tied nodes")
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "compare": _cmd_compare, "validate": _cmd_validate}[args.command]
    try:
        return handler(args)
    except (CaseValidationError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except GlicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
