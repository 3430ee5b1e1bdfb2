"""Command-line driver: bounds, simulate, sweep, calibrate, codes-test."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import fields, replace
from typing import Optional

import numpy as np

from . import __version__
from .codes import build_codebook, ml_decode, required_code_length
from .core import DomainError, InvalidParameterError, Streams
from .sim import InstanceSpec, SweepSpec, monte_carlo, run_trial, sweep, write_rows_csv
from .stages import StageConfig, StageFailure
from .theory import (
    Curve,
    converse_tests,
    noise_functionals,
    rate_curve,
    thm1_tests,
    write_curve_csv,
)

OUTDIR_ENV = "NOISYGT_OUTDIR"


class UsageError(Exception):
    pass


def parse_grid(text: str) -> list[float]:
    """'a:b:step' (inclusive) or a comma list."""
    if ":" in text:
        try:
            a, b, step = (float(x) for x in text.split(":"))
        except ValueError as exc:
            raise UsageError(f"bad grid {text!r}; expected start:stop:step") from exc
        if step <= 0 or b < a:
            raise UsageError(f"bad grid {text!r}")
        n = int(math.floor((b - a) / step + 1e-9)) + 1
        return [round(a + i * step, 12) for i in range(n)]
    return [float(x) for x in text.split(",") if x]


def _field_type(f) -> type:
    t = str(f.type)
    if "int" in t:
        return int
    if "str" in t:
        return str
    return float


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("algorithm constants")
    g.add_argument("--config-file", help="JSON file of StageConfig values (e.g. from calibrate)")
    for f in fields(StageConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name,
                       type=_field_type(f), default=None, help=f"default: {f.default}")


def config_from_args(args) -> StageConfig:
    cfg = StageConfig()
    if getattr(args, "config_file", None):
        with open(args.config_file) as fh:
            data = json.load(fh)
        cfg = StageConfig.from_dict(data.get("config", data))
    over = {f.name: getattr(args, "cfg_" + f.name) for f in fields(StageConfig)
            if getattr(args, "cfg_" + f.name, None) is not None}
    cfg = replace(cfg, **over)
    try:
        cfg.validate()
    except (InvalidParameterError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def add_instance_flags(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--p", type=int, required=required)
    parser.add_argument("--k", type=int)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--rho", type=float, required=required)
    parser.add_argument("--budget-mult", type=float,
                        help="total tests as a multiple of thm1_tests, the achievable test count")
    parser.add_argument("--budget-n", type=int, help="absolute total test budget")
    parser.add_argument("--fixed-defectives", action="store_true",
                        help="reuse one defective set across trials")


def instance_from_args(args) -> InstanceSpec:
    if (args.k is None) == (args.theta is None):
        raise UsageError("give exactly one of --k or --theta")
    if not (0.0 <= args.rho < 0.5):
        raise UsageError(f"--rho must lie in [0, 1/2), got {args.rho}")
    if args.budget_mult is not None and args.budget_n is not None:
        raise UsageError("--budget-mult and --budget-n are exclusive")
    if args.budget_mult is not None and args.rho == 0:
        raise UsageError("--budget-mult needs rho in (0, 1/2); use --budget-n at rho = 0")
    return InstanceSpec(p=args.p, rho=args.rho, k=args.k, theta=args.theta,
                        budget_mult=args.budget_mult, budget_n=args.budget_n,
                        fixed_defectives=args.fixed_defectives)


def header(command: str, seed: Optional[int], **extra) -> dict:
    return {"tool": "noisygt", "version": __version__, "command": command, "seed": seed, **extra}


def csv_with_header(hdr: dict, body: str) -> str:
    lines = [f"# {k}: {json.dumps(v, sort_keys=True)}" for k, v in hdr.items()]
    return "\n".join(lines) + "\n" + body


def emit(text: str, out: Optional[str], command: str, ext: str) -> None:
    if out is None and os.environ.get(OUTDIR_ENV):
        out = os.path.join(os.environ[OUTDIR_ENV], f"{command}.{ext}")
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w") as fh:
        fh.write(text)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def cmd_bounds(args) -> int:
    try:
        noise_functionals(args.rho)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    hdr = header("bounds", None, rho=args.rho)
    if args.pk:
        rows = []
        for item in args.pk:
            try:
                p, k = (int(x) for x in item.split(","))
            except ValueError as exc:
                raise UsageError(f"bad --pk {item!r}; expected p,k") from exc
            rows.append({"p": p, "k": k, "rho": args.rho,
                         "converse_tests": converse_tests(p, k, args.rho),
                         "thm1_tests": thm1_tests(p, k, args.rho)})
        if args.format == "json":
            text = dump_json({"header": hdr, "rows": rows})
        else:
            buf = io.StringIO()
            write_rows_csv(rows, buf)
            text = csv_with_header(hdr, buf.getvalue())
    else:
        thetas = parse_grid(args.theta)
        if not all(0.0 < t < 1.0 for t in thetas):
            raise UsageError("theta grid must lie strictly inside (0, 1)")
        points = rate_curve(args.rho, thetas, Curve.CONVERSE) + rate_curve(args.rho, thetas, Curve.THEOREM1)
        if args.format == "json":
            text = dump_json({"header": hdr, "rows": [
                {"theta": pt.theta, "rate_bits_per_test": pt.rate_bits_per_test,
                 "which": pt.which.value, "rho": pt.rho} for pt in points]})
        else:
            buf = io.StringIO()
            write_curve_csv(points, buf)
            text = csv_with_header(hdr, buf.getvalue())
    emit(text, args.out, "bounds", args.format)
    return 0


def write_trace(path: str, report) -> None:
    with open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seq", "stage", "pool_size", "outcome"])
        w.writerows(report.ledger.trace_rows())


def cmd_simulate(args) -> int:
    spec = instance_from_args(args)
    cfg = config_from_args(args)
    stats = monte_carlo(spec, cfg, args.trials, args.seed, workers=args.workers)
    k = spec.resolved_k()
    budget = spec.budget()
    hdr = header("simulate", args.seed, config=cfg.to_dict(), p=spec.p, k=k, theta=spec.theta,
                 rho=spec.rho, budget=budget, budget_mult=spec.budget_mult,
                 fixed_defectives=spec.fixed_defectives)
    out = {"header": hdr, **stats.to_json()}
    if spec.rho > 0:
        out["thm1_tests"] = thm1_tests(spec.p, k, spec.rho)
        out["converse_tests"] = converse_tests(spec.p, k, spec.rho)
    emit(dump_json(out), args.out, "simulate", "json")
    if args.trace:
        from .stages import full_algorithm
        inst = spec.instance(args.seed, 0)
        try:
            rep = full_algorithm(inst, cfg, args.seed, 0, budget=budget, keep_ledger=True)
        except StageFailure as exc:
            print(f"trace unavailable: {exc}", file=sys.stderr)
        else:
            write_trace(args.trace, rep)
    return 0


def cmd_sweep(args) -> int:
    base = instance_from_args(args)
    cfg = config_from_args(args)
    axes = {}
    for item in args.axis:
        if "=" not in item:
            raise UsageError(f"bad --axis {item!r}; expected name=v1,v2")
        name, vals = item.split("=", 1)
        cast = int if name in ("p", "k", "budget_n", "bins") else float
        axes[name] = [cast(float(v)) if cast is int else cast(v) for v in vals.split(",") if v]
    try:
        rows = sweep(SweepSpec(base, axes, args.trials, args.seed, args.cap), cfg, args.workers)
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from exc
    buf = io.StringIO()
    write_rows_csv(rows, buf)
    hdr = header("sweep", args.seed, config=cfg.to_dict(), axes=axes, base=base.__dict__)
    emit(csv_with_header(hdr, buf.getvalue()), args.out, "sweep", "csv")
    return 0


def cmd_calibrate(args) -> int:
    from .calibration import calibrate_budget_split, calibrate_c_ncomp, calibrate_c_ncomp_exact

    cfg = config_from_args(args)
    report = {}
    c, hist = calibrate_c_ncomp(cfg, parse_grid(args.c_ncomp_grid), trials=args.trials, seed=args.seed)
    report["c_ncomp"] = {"chosen": c, "history": hist}
    if c is not None:
        cfg = replace(cfg, c_ncomp=c)
    c, hist = calibrate_c_ncomp_exact(cfg, parse_grid(args.c_exact_grid), trials=args.trials,
                                      seed=args.seed)
    report["c_ncomp_exact"] = {"chosen": c, "history": hist}
    if c is not None:
        cfg = replace(cfg, c_ncomp_exact=c)
    if args.split:
        spec = InstanceSpec(p=2**14, rho=0.05, theta=0.4, budget_mult=3.0)
        best, hist = calibrate_budget_split(cfg, spec, parse_grid(args.f_code_grid),
                                            parse_grid(args.f_binid_grid), args.trials, args.seed)
        report["budget_split"] = {"chosen": best, "history": hist}
        cfg = replace(cfg, **best)
    out = {"header": header("calibrate", args.seed), "config": cfg.to_dict(), "report": report}
    emit(dump_json(out), args.out, "calibrate", "json")
    return 0


def cmd_codes_test(args) -> int:
    if not (0.0 <= args.rho < 0.5):
        raise UsageError(f"--rho must lie in [0, 1/2), got {args.rho}")
    n_prime = math.ceil(args.mult * required_code_length(args.pprime, 1, args.rho, args.eta) - 1e-9)
    streams = Streams(args.seed)
    rng_code, rng_item, rng_noise = streams("codebook"), streams("item"), streams("noise")
    errors = 0
    for t in range(args.trials):
        if t % args.refresh == 0:
            book = build_codebook(args.pprime, n_prime, rng_code)
        j = int(rng_item.integers(args.pprime))
        noise = rng_noise.random(n_prime) < args.rho
        errors += ml_decode(book.words[:, j] ^ noise, book) != j
    out = {"header": header("codes-test", args.seed, pprime=args.pprime, rho=args.rho,
                            eta=args.eta, mult=args.mult),
           "n_prime": n_prime, "trials": args.trials, "errors": errors,
           "error_rate": errors / args.trials}
    emit(dump_json(out), args.out, "codes-test", "json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="noisygt", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="converse and achievable rate curves, or test counts")
    b.add_argument("--rho", type=float, required=True)
    b.add_argument("--theta", default="0.01:0.99:0.01", help="start:stop:step or comma list")
    b.add_argument("--pk", action="append", help="p,k pair; emits test counts instead of rates")
    b.add_argument("--format", choices=("csv", "json"), default="csv")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bounds)

    s = sub.add_parser("simulate", help="Monte Carlo error probability of the full algorithm")
    add_instance_flags(s)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--trace", help="write the ledger of trial 0 as CSV")
    s.add_argument("--out")
    add_config_flags(s)
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="grid of Monte Carlo runs as CSV")
    add_instance_flags(w)
    w.add_argument("--axis", action="append", required=True, help="name=v1,v2,...")
    w.add_argument("--trials", type=int, default=100)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--cap", type=int, default=10**4)
    w.add_argument("--out")
    add_config_flags(w)
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("calibrate", help="fit NCOMP constants and write a defaults file")
    c.add_argument("--trials", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--c-ncomp-grid", default="10:40:2")
    c.add_argument("--c-exact-grid", default="2:20:1")
    c.add_argument("--split", action="store_true", help="also grid-search the budget fractions")
    c.add_argument("--f-code-grid", default="0.3:0.6:0.05")
    c.add_argument("--f-binid-grid", default="0.1:0.4:0.05")
    c.add_argument("--out")
    add_config_flags(c)
    c.set_defaults(func=cmd_calibrate)

    t = sub.add_parser("codes-test", help="ML decoding error of random codes on a BSC")
    t.add_argument("--pprime", type=int, required=True)
    t.add_argument("--rho", type=float, required=True)
    t.add_argument("--eta", type=float, default=0.5)
    t.add_argument("--mult", type=float, default=1.0, help="multiplier on the code length")
    t.add_argument("--trials", type=int, default=10000)
    t.add_argument("--refresh", type=int, default=100, help="trials per fresh codebook")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.set_defaults(func=cmd_codes_test)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"noisygt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, InvalidParameterError) as exc:
        print(f"noisygt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"noisygt {args.command}: runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
