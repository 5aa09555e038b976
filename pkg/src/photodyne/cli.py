"""Command-line driver.

Subcommands:
  simulate  run an ensemble and write plot-data files
  oracle    run an ensemble and score it against the closed forms
  gf        evaluate the record generating function and count moments
  pdf       evaluate the log joint record density

Exit codes: 0 success, 2 configuration error, 3 numerical guard
(truncation or step size), 4 oracle comparison beyond threshold under
--strict.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import analytics
from .ensemble import (
    RunConfig,
    compare_oracle,
    run_ensemble,
    write_ensemble_csv,
    write_histogram_csv,
    write_sample_paths_csv,
    write_trajectories_jsonl,
)
from .exceptions import ConfigError, PhotodyneError, StepSizeError, TruncationError
from .fock import Coherent, InitialState, Number, Squeezed, Thermal, default_dim
from .params import SimParams
from .propagators import accumulators_at


def parse_complex(text: str) -> complex:
    """Accept '1+0i', '-0.3i', '2', '1.5-0.2j'."""
    cleaned = text.strip().replace(" ", "").replace("i", "j")
    try:
        return complex(cleaned)
    except ValueError as exc:
        raise ConfigError(f"cannot parse complex number {text!r}") from exc


def parse_init(text: str) -> InitialState:
    """Parse 'coherent:alpha=1+0i' style initial-state specs."""
    kind, _, rest = text.partition(":")
    fields = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not val:
                raise ConfigError(f"malformed init field {item!r}")
            fields[key.strip()] = val.strip()
    kind = kind.strip().lower()
    try:
        if kind == "coherent":
            return Coherent(alpha=parse_complex(fields.pop("alpha")))
        if kind == "number":
            return Number(n=int(fields.pop("n")))
        if kind == "thermal":
            return Thermal(nbar=float(fields.pop("nbar")))
        if kind == "squeezed":
            return Squeezed(
                alpha=parse_complex(fields.pop("alpha")), r=float(fields.pop("r"))
            )
    except KeyError as exc:
        raise ConfigError(f"init {kind!r} is missing field {exc}") from exc
    raise ConfigError(
        f"unknown init {kind!r}; expected coherent, number, thermal or squeezed"
    )


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--init", required=True, help="initial state spec")
    parser.add_argument("--gamma1", type=float, default=1.0)
    parser.add_argument("--gamma2", type=float, default=1.0)
    parser.add_argument("--omega", type=float, default=0.0)
    parser.add_argument("--dt", type=float, default=1e-3)
    parser.add_argument("--t-final", type=float, default=4.0)
    parser.add_argument("--dim", type=int, default=0, help="0 = automatic")
    parser.add_argument("--seed", type=int, default=42)


def _params_from(args, init: InitialState) -> SimParams:
    dim = args.dim if args.dim else default_dim(init)
    return SimParams(
        gamma1=args.gamma1,
        gamma2=args.gamma2,
        omega=args.omega,
        dt=args.dt,
        t_final=args.t_final,
        dim=dim,
        seed=args.seed,
    )


def _add_run_args(parser):
    _add_common(parser)
    parser.add_argument("--trajectories", type=int, default=10000)
    parser.add_argument("--snapshot-stride", type=int, default=20)
    parser.add_argument("--kernel", choices=("euler", "exact"), default="euler")
    parser.add_argument("--batch-size", type=int, default=1024)
    parser.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photodyne",
        description=(
            "Monte Carlo trajectories and closed-form statistics for "
            "simultaneous photon counting and homodyne monitoring of a "
            "lossy cavity mode"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an ensemble, write output files")
    _add_run_args(sim)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--sample-paths", type=int, default=0)
    sim.add_argument("--dump-dw", action="store_true",
                     help="include per-step record increments in the JSONL dump")

    orc = sub.add_parser("oracle", help="run an ensemble, compare to closed forms")
    _add_run_args(orc)
    orc.add_argument("--strict", action="store_true",
                     help="exit 4 when any comparison fails")
    orc.add_argument("--z-max", type=float, default=4.0)

    gf = sub.add_parser("gf", help="generating function and count moments")
    _add_common(gf)
    gf.add_argument("--xi", type=str, default="0")
    gf.add_argument("--eta", type=float, default=0.0)
    gf.add_argument("--t", type=str, default="1", help="horizon, 'inf' allowed")

    pdf = sub.add_parser("pdf", help="log joint density of a record")
    _add_common(pdf)
    pdf.add_argument("--m", type=int, required=True, help="photocount total")
    pdf.add_argument("--t", type=str, default="1", help="horizon, 'inf' allowed")
    pdf.add_argument("--A", type=str, default="0",
                     help="record integral value at the horizon")
    return parser


def _cmd_simulate(args) -> int:
    init = parse_init(args.init)
    params = _params_from(args, init)
    cfg = RunConfig(
        params=params,
        init=init,
        trajectories=args.trajectories,
        snapshot_stride=args.snapshot_stride,
        kernel=args.kernel,
        batch_size=args.batch_size,
        workers=args.workers,
        store_dw=args.dump_dw,
        sample_paths=args.sample_paths,
    )
    stats = run_ensemble(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ensemble_csv(stats, cfg, out / "ensemble_mean.csv")
    write_trajectories_jsonl(stats, cfg, out / "trajectories.jsonl")
    write_histogram_csv(stats, out / "count_histogram.csv")
    if args.sample_paths:
        write_sample_paths_csv(stats, cfg, out / "sample_paths.csv")
    print(
        f"wrote {out} ({cfg.trajectories} trajectories, dim={params.dim}, "
        f"{stats.events.count} photocounts, {stats.elapsed:.1f}s)"
    )
    return 0


def _cmd_oracle(args) -> int:
    init = parse_init(args.init)
    params = _params_from(args, init)
    cfg = RunConfig(
        params=params,
        init=init,
        trajectories=args.trajectories,
        snapshot_stride=args.snapshot_stride,
        kernel=args.kernel,
        batch_size=args.batch_size,
        workers=args.workers,
    )
    stats = run_ensemble(cfg)
    report = compare_oracle(stats, cfg, z_max=args.z_max)
    print(report.to_text())
    if args.strict and not report.passed:
        return 4
    return 0


def _parse_horizon(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _cmd_gf(args) -> int:
    init = parse_init(args.init)
    params = _params_from(args, init)
    t = _parse_horizon(args.t)
    xi = parse_complex(args.xi)
    q = analytics.GFQuery.scalar(xi, args.eta, t)
    value = analytics.generating_function(init, q, params)
    print(f"M = {value.real:.12g}{value.imag:+.12g}i")
    if t != math.inf:
        mean, var = analytics.count_moments(init, t, params)
        print(f"E[N_t] = {mean:.12g}")
        print(f"Var[N_t] = {var:.12g}")
    return 0


def _cmd_pdf(args) -> int:
    init = parse_init(args.init)
    params = _params_from(args, init)
    t = _parse_horizon(args.t)
    acc = accumulators_at(parse_complex(args.A), t, params)
    log_p = analytics.joint_density_pm(init, args.m, t, acc, params)
    print(f"log p_{args.m} = {log_p:.12g}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "gf":
            return _cmd_gf(args)
        if args.command == "pdf":
            return _cmd_pdf(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TruncationError, StepSizeError) as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return 3
    except PhotodyneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
