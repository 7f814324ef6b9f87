"""Command line interface ``ppinv``.

Exit codes: 0 all checks pass, 1 a statistical or exact check failed,
2 configuration or runtime error.  ``PPINV_WORKERS`` sets the number of
worker processes (default 1); results do not depend on it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

from . import harness
from .catalog import make_measure
from .combinatorics import expansion_table, verify_combinatorics
from .harness import CONFIG_KEYS, ExperimentConfig, InvarianceSpec, write_report
from .moments import IDENTITIES, PreconditionError

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _config_epilog() -> str:
    lines = ["configuration file keys (flat 'key = value' text, '#' comments):"]
    lines += [f"  {k:<11} {v}" for k, v in CONFIG_KEYS.items()]
    return "\n".join(lines)


def _load_config(args, keys) -> tuple[ExperimentConfig, set]:
    """Config file values overridden by explicitly given flags."""
    values = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            values.update(harness.parse_config_text(fh.read()))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    return ExperimentConfig.from_dict(values).validate(), set(values)


def _emit(payload: dict, out) -> None:
    text = write_report(payload, out)
    if not out:
        sys.stdout.write(text)


def cmd_combi(args) -> int:
    if args.action == "verify":
        checks = verify_combinatorics()
        ok = all(checks.values())
        _emit({"kind": "combinatorics", "schema_version": harness.SCHEMA_VERSION, "checks": checks, "verdict": "pass" if ok else "fail"}, args.out)
        return EXIT_PASS if ok else EXIT_FAIL
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "a", "b", "coefficient"])
    for n in range(1, args.n + 1):
        w.writerows(expansion_table(n))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_PASS


def cmd_moments(args) -> int:
    cfg, _ = _load_config(args, ("process", "identity", "n", "samples", "seed", "functional", "v", "rate", "form", "threshold"))
    names = list(IDENTITIES) if args.all else None
    orders = [int(x) for x in args.orders.split(",")] if args.orders else None
    rep = harness.run_moment_suite(cfg, names, orders)
    rep["schema_version"] = harness.SCHEMA_VERSION
    _emit(rep, args.out or cfg.out)
    return EXIT_PASS if rep["verdict"] == "pass" else EXIT_FAIL


def cmd_invariance(args) -> int:
    cfg, given = _load_config(args, ("transform", "samples", "seed", "cells", "alpha", "rate"))
    params = dict(harness.INVARIANCE_DEFAULTS[cfg.transform])
    if "rate" in given and cfg.transform != "negmax":
        params["rate"] = cfg.rate
    spec = InvarianceSpec(cfg.transform, tuple(sorted(params.items())), cfg.cells)
    if given & {"measure", "domain"}:
        source = spec.build().source
        if not harness.same_measure(make_measure(cfg.measure, domain=cfg.domain), source):
            raise ValueError(f"transformation {cfg.transform!r} acts on {source!r}")
    cyclic_trials = args.cyclic_trials or cfg.trials
    if args.calibrate:
        seeds = [cfg.seed + i for i in range(args.calibrate)]
        rep = harness.calibration(spec, seeds, cfg.samples, cfg.alpha)
    else:
        rep = harness.run_invariance(spec, cfg.samples, cfg.seed, cfg.alpha)
        if cyclic_trials:
            cyc = harness.run_cyclic_checks(cfg.transform, (1, 2, 3, 4), cyclic_trials, cfg.seed, tuple(sorted(params.items())))
            rep["cyclic"] = cyc
    rep["config"] = cfg.to_dict()
    rep["schema_version"] = harness.SCHEMA_VERSION
    _emit(rep, args.out or cfg.out)
    return EXIT_PASS if rep["verdict"] == "pass" else EXIT_FAIL


def cmd_oracle(args) -> int:
    rep = harness.oracle_pathwise(args.trials, args.seed)
    rep["seed"] = args.seed
    rep["schema_version"] = harness.SCHEMA_VERSION
    _emit(rep, args.out)
    if rep["violations"] and args.dump:
        write_report(rep["violations"][0], args.dump)
    return EXIT_PASS if rep["verdict"] == "pass" else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ppinv",
        description="Moment identities and invariance checks for Poisson point processes.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("combi", help="exact combinatorics")
    c.add_argument("action", choices=["verify", "table"])
    c.add_argument("--n", type=int, default=4, help="largest degree for 'table'")
    c.add_argument("--out", help="output path (JSON for verify, CSV for table)")
    c.set_defaults(func=cmd_combi)

    m = sub.add_parser("moments", help="moment identity checks", epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    m.add_argument("action", choices=["verify"])
    m.add_argument("--config", help="flat key = value configuration file")
    m.add_argument("--process")
    m.add_argument("--identity", choices=IDENTITIES)
    m.add_argument("--all", action="store_true", help="run every identity")
    m.add_argument("--n", type=int)
    m.add_argument("--orders", help="comma-separated orders, e.g. 1,2,3")
    m.add_argument("--functional")
    m.add_argument("--v")
    m.add_argument("--rate", type=float)
    m.add_argument("--form", choices=["corrected", "printed"])
    m.add_argument("--samples", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--threshold", type=float)
    m.add_argument("--out")
    m.set_defaults(func=cmd_moments)

    i = sub.add_parser("invariance", help="Poisson invariance suite", epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    i.add_argument("--config")
    i.add_argument("--transform")
    i.add_argument("--samples", type=int)
    i.add_argument("--seed", type=int)
    i.add_argument("--cells", type=int)
    i.add_argument("--alpha", type=float)
    i.add_argument("--rate", type=float)
    i.add_argument("--cyclic-trials", type=int, default=0, help="also run cyclic checks for k = 1..4")
    i.add_argument("--calibrate", type=int, default=0, metavar="SEEDS", help="KS size check over this many seeds")
    i.add_argument("--out")
    i.set_defaults(func=cmd_invariance)

    o = sub.add_parser("oracle", help="pathwise operator oracles on lookup tables")
    o.add_argument("--trials", type=int, default=100)
    o.add_argument("--seed", type=int, default=20240601)
    o.add_argument("--out")
    o.add_argument("--dump", help="write the first violation (with its table) here")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, TypeError, OSError, PreconditionError, json.JSONDecodeError) as exc:
        print(f"ppinv: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
