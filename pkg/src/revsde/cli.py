"""Command-line interface.

Subcommands:
    sample       simulate reverse trajectories and write a sample file
    w2           distance between a sample file and a reference
    fit-slope    log-log slope of w2 vs swept value from a report CSV
    sweep-h      step-size convergence sweep (writes CSV + JSON sidecar)
    sweep-t      terminal-time sweep
    sweep-eps    score-perturbation sweep
    param-choice step-size-driven epsilon/T/rate suggestion

Sweeps are configured by a TOML or JSON file (see README for the schema);
--workers and --seed override the config in place.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import fileio, harness
from .errors import RevsdeError
from .metrics import MomentMode, accumulate_moments, fit_log_slope, gaussian_w2
from .samplers import InitKind, SamplerKind, TimeGrid, sample_reverse
from .score import Perturbation, ScoreModel, metered_epsilon


def _add_sample(sub):
    p = sub.add_parser("sample", help="simulate reverse trajectories to a sample file")
    p.add_argument("--sampler", choices=[s.value for s in SamplerKind], default="em")
    p.add_argument("--h", type=float, required=True, help="step size; T/h must be integral")
    p.add_argument("--T", type=float, default=4.0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=[i.value for i in InitKind], default="sigma")
    p.add_argument("--mixture", help="mixture JSON file (default: --problem tag)")
    p.add_argument("--problem", default="std-normal:4", help="builtin problem tag")
    p.add_argument("--perturb", choices=[q.value for q in Perturbation], default="none")
    p.add_argument("--perturb-mag", type=float, default=0.0)
    p.add_argument("--perturb-freq", type=float, default=1.0)
    p.add_argument("--perturb-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)


def _add_w2(sub):
    p = sub.add_parser("w2", help="distance between sample file and reference")
    p.add_argument("--a", required=True, help="sample file")
    p.add_argument("--b", help="second sample file")
    p.add_argument("--b-mixture", help="mixture JSON as exact reference")
    p.add_argument("--b-problem", help="builtin problem tag as exact reference")
    p.add_argument("--mode", choices=[m.value for m in MomentMode], default="diag")


def _add_fit(sub):
    p = sub.add_parser("fit-slope", help="fit log-log slope from a report CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--h-min", type=float, default=None)
    p.add_argument("--h-max", type=float, default=None)


def _add_sweeps(sub):
    for kind in ("sweep-h", "sweep-t", "sweep-eps"):
        p = sub.add_parser(kind, help=f"run a {kind.split('-')[1]} sweep from a config file")
        p.add_argument("--config", required=True, help="TOML or JSON sweep config")
        p.add_argument("--out", required=True, help="output prefix (.csv/.json appended)")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)


def _add_param_choice(sub):
    p = sub.add_parser("param-choice", help="epsilon, T and rate suggestion for a step size")
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--m0", type=float, required=True, help="data Fisher-information scale")
    p.add_argument("--mg", type=float, required=True, help="diffusion lower bound")


def _cmd_sample(args) -> int:
    steps = round(args.T / args.h)
    if steps < 1 or abs(steps * args.h - args.T) > 1e-9 * max(args.T, 1.0):
        print(f"error: T={args.T} is not an integer multiple of h={args.h}", file=sys.stderr)
        return 2
    mix = fileio.load_mixture(args.mixture) if args.mixture else harness.build_problem(args.problem)
    sched = harness.build_schedule("vp-linear")
    model = ScoreModel(
        mixture=mix,
        schedule=sched,
        perturbation=Perturbation(args.perturb),
        magnitude=args.perturb_mag,
        frequency=args.perturb_freq,
        direction_seed=args.perturb_seed,
    )
    batch = sample_reverse(
        sched,
        TimeGrid(T=args.T, K=steps),
        model,
        n=args.n,
        seed=args.seed,
        sampler=SamplerKind(args.sampler),
        init=InitKind(args.init),
        workers=args.workers,
    )
    batch.meta["metered_eps"] = metered_epsilon(model) if steps > 0 else 0.0
    batch.meta["stable"] = batch.stable
    fileio.write_samples(args.out, batch)
    print(json.dumps({"out": args.out, "n": args.n, "stable": batch.stable,
                      "eps": batch.meta["metered_eps"]}))
    return 0


def _summary_dict(s) -> dict:
    return {"mean": s.mean.tolist(), "second": np.asarray(s.second).tolist(),
            "n": s.n, "mode": s.mode.value}


def _cmd_w2(args) -> int:
    mode = MomentMode(args.mode)
    a = accumulate_moments(fileio.read_samples(args.a).data, mode)
    if args.b:
        b = accumulate_moments(fileio.read_samples(args.b).data, mode)
    elif args.b_mixture or args.b_problem:
        mix = fileio.load_mixture(args.b_mixture) if args.b_mixture else harness.build_problem(args.b_problem)
        b = harness.reference_summary(mix, mode)
    else:
        print("error: provide --b, --b-mixture or --b-problem", file=sys.stderr)
        return 2
    print(json.dumps({"w2": gaussian_w2(a, b), "a": _summary_dict(a), "b": _summary_dict(b)}))
    return 0


def _cmd_fit(args) -> int:
    rows = fileio.read_report_csv(args.csv)
    pts = [
        (r["swept_value"], r["w2"])
        for r in rows
        if r["stable"]
        and (args.h_min is None or r["swept_value"] >= args.h_min)
        and (args.h_max is None or r["swept_value"] <= args.h_max)
    ]
    fit = fit_log_slope([p[0] for p in pts], [p[1] for p in pts])
    print(json.dumps(dataclasses.asdict(fit)))
    return 0


def _cmd_sweep(kind, args) -> int:
    cfg = harness.load_sweep_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seed = args.seed
    runner = {"h": harness.run_h_sweep, "T": harness.run_T_sweep, "eps": harness.run_eps_sweep}[kind]
    report = runner(cfg)
    fileio.write_report_csv(args.out + ".csv", report.rows)
    fileio.write_report_sidecar(args.out + ".json", report.sidecar())
    line = {"csv": args.out + ".csv", "sidecar": args.out + ".json", "floor": report.floor,
            "argmin": report.argmin}
    if report.fit is not None:
        line["exponent"] = report.fit.exponent
    if report.fit_error:
        line["fit_error"] = report.fit_error
    print(json.dumps(line))
    return 0


def _cmd_param_choice(args) -> int:
    out = harness.param_choice(args.h, args.m0, args.mg)
    print(json.dumps(dataclasses.asdict(out)))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="revsde", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_sample(sub)
    _add_w2(sub)
    _add_fit(sub)
    _add_sweeps(sub)
    _add_param_choice(sub)
    args = parser.parse_args(argv)
    try:
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "w2":
            return _cmd_w2(args)
        if args.command == "fit-slope":
            return _cmd_fit(args)
        if args.command in ("sweep-h", "sweep-t", "sweep-eps"):
            return _cmd_sweep({"sweep-h": "h", "sweep-t": "T", "sweep-eps": "eps"}[args.command], args)
        if args.command == "param-choice":
            return _cmd_param_choice(args)
    except RevsdeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
