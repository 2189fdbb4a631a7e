"""Command-line front end: every pipeline stage as a subcommand.

Outputs are plot-ready CSV and JSON files plus a run manifest listing
the inputs, the effective seed and the library versions, so a run can
be reproduced and audited without the shell history.  Identical
arguments and seed produce byte-identical files.

Exit codes: 0 on success, 1 on argument or case validation errors,
2 on numerical failures (diverged power flow, simulation, degenerate
fits).  The environment variable GRIDMOMENTUM_SEED overrides --seed
for scripted sweeps.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .cases import CaseError, load_case, system_momentum, validate_case
from .dynamics import SimulationError, integrate, write_trajectory_csv
from .estimator import (EstimationError, ExperimentConfig, batch_randomized,
                        freq_scan_estimate, probe_estimate, write_batch_csv,
                        write_batch_json)
from .fixtures import FIXTURES, fixture
from .linear import (frequency_response, linearize, null_space,
                     read_frequency_csv, write_frequency_csv)
from .powerflow import PowerFlowError, equilibrium, solve_powerflow
from .probing import (InertiaSchedule, design_tones, read_samples_csv,
                      SAMPLES_CSV_SCHEMA)
from .stochastic import make_load_noise
from .vectfit import vf_fit, write_model_json

SEED_ENV = "GRIDMOMENTUM_SEED"
MANIFEST_SCHEMA = "gridmomentum-manifest.v1"
POWERFLOW_CSV_SCHEMA = "gridmomentum-powerflow.v1"
EIGEN_CSV_SCHEMA = "gridmomentum-eigen.v1"
ESTIMATE_JSON_SCHEMA = "gridmomentum-estimate.v1"


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"band must be lo:hi in Hz, got {text!r}")
    return lo, hi


def _onoff(text: str) -> bool:
    if text not in ("on", "off"):
        raise UsageError(f"expected on or off, got {text!r}")
    return text == "on"


def _load(spec: str):
    """A bundled fixture name or a case JSON path."""
    if spec in FIXTURES:
        return fixture(spec)
    path = Path(spec)
    if not path.exists():
        raise UsageError(
            f"unknown case {spec!r}: not a fixture "
            f"({', '.join(sorted(FIXTURES))}) and not a file")
    return load_case(path)


def _outdir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}")
    return getattr(args, "seed", 0)


def _manifest(out: Path, args, outputs: list[str], seed=None) -> None:
    doc = {
        "schema": MANIFEST_SCHEMA,
        "command": args.command,
        "arguments": {k: v for k, v in sorted(vars(args).items())
                      if k != "command"},
        "seed": seed,
        "outputs": sorted(outputs),
        "versions": {
            "gridmomentum": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


def _probe_powers(case, cig_id):
    conv = case.converter(cig_id)
    p_probe = conv.p_g_pu * conv.p_ref_mva
    if p_probe <= 0.0:
        raise UsageError(
            f"converter {cig_id!r} has no active dispatch to modulate")
    p_nominal = sum(ld.p_mw for ld in case.loads)
    return p_probe, p_nominal


def _probing_config(case, args, noise: bool, seed: int) -> ExperimentConfig:
    p_probe, p_nominal = _probe_powers(case, args.cig)
    plan = design_tones(args.band, args.tones, p_probe_mw=p_probe,
                        p_nominal_mw=p_nominal,
                        sizing="peak" if noise else "worst-case")
    dm = args.dm if args.dm is not None else 0.1 * system_momentum(case)
    settle = 45.0 if noise else 30.0
    half = math.ceil(settle + plan.window_s + 5.0)
    period = 2.0 * half
    duration = args.duration
    if duration is None:
        duration = max(900.0, period)
    duration = period * max(1, math.floor(duration / period))
    sched = InertiaSchedule(dm_mj=dm, period_s=period, settle_s=settle)
    order = args.order if args.order is not None else 2
    return ExperimentConfig(args.cig, plan, sched, order=order,
                            fit_tails=not noise, noise=noise,
                            duration_s=duration, seed=seed)


# -- subcommands ---------------------------------------------------------------

def _cmd_validate(args) -> int:
    case = _load(args.case)
    validate_case(case)
    print(f"case {case.name!r} ok: {len(case.buses)} buses, "
          f"{len(case.machines)} machines, {len(case.converters)} "
          f"converters, {len(case.loads)} loads, "
          f"total momentum {system_momentum(case):.1f} MJ")
    return 0


def _cmd_powerflow(args) -> int:
    case = _load(args.case)
    out = _outdir(args)
    pf = solve_powerflow(case)
    path = out / "powerflow.csv"
    with open(path, "w") as fh:
        fh.write(f"# {POWERFLOW_CSV_SCHEMA} case={case.name}\n")
        fh.write("bus,v_pu,theta_rad\n")
        for b, v in zip(pf.bus_ids, pf.v):
            fh.write(f"{b},{abs(v)!r},{float(np.angle(v))!r}\n")
    _manifest(out, args, [path.name])
    print(f"converged in {pf.n_iter} iterations, "
          f"max mismatch {pf.mismatch:.2e} pu -> {path}")
    return 0


def _cmd_linearize(args) -> int:
    case = _load(args.case)
    out = _outdir(args)
    model = linearize(case)
    lam = np.linalg.eigvals(model.a)
    lam = lam[np.lexsort((lam.imag, lam.real))]
    eig_path = out / "eigenvalues.csv"
    with open(eig_path, "w") as fh:
        fh.write(f"# {EIGEN_CSV_SCHEMA} case={case.name}\n")
        fh.write("re_rad_s,im_rad_s\n")
        for z in lam:
            fh.write(f"{z.real!r},{z.imag!r}\n")
    nsd = null_space(model)
    ns_path = out / "nullspace.json"
    doc = {
        "device_ids": list(model.device_ids),
        "u1": nsd.u1.tolist(),
        "v1": nsd.v1.tolist(),
        "theta_mw": nsd.theta_mw.tolist(),
        "residual_A_u1": float(np.linalg.norm(model.a @ nsd.u1)),
        "residual_v1_A": float(np.linalg.norm(nsd.v1 @ model.a)),
        "n_zero_eigenvalues": int(np.sum(np.abs(lam) <= 1e-8)),
    }
    with open(ns_path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    _manifest(out, args, [eig_path.name, ns_path.name])
    print(f"{model.n_states} states, {doc['n_zero_eigenvalues']} zero "
          f"eigenvalue(s), |A u1| = {doc['residual_A_u1']:.2e} -> "
          f"{eig_path}, {ns_path}")
    return 0


def _cmd_freqscan(args) -> int:
    case = _load(args.case)
    out = _outdir(args)
    cigs = [args.cig] if args.cig else [c.id for c in case.converters]
    if not cigs:
        raise UsageError(f"case {case.name!r} has no converters to scan")
    model = linearize(case)
    f = np.geomspace(args.band[0], args.band[1], args.points)
    outputs = []
    for cig in cigs:
        case.converter(cig)
        fs = frequency_response(model, f"probe:{cig}", f)
        path = out / f"freqscan_{cig}.csv"
        write_frequency_csv(fs, path, output=cig)
        outputs.append(path.name)
    _manifest(out, args, outputs)
    print(f"scanned {', '.join(cigs)} over "
          f"[{args.band[0]}, {args.band[1]}] Hz -> "
          f"{', '.join(str(out / p) for p in outputs)}")
    return 0


def _cmd_simulate(args) -> int:
    case = _load(args.case)
    out = _outdir(args)
    seed = _seed(args)
    noise = None
    if args.noise:
        noise = make_load_noise(case, seed=seed)
    eq = equilibrium(case)
    traj = integrate(case, args.duration, step_s=args.step, eq=eq,
                     noise=noise)
    path = out / "trajectory.csv"
    write_trajectory_csv(path, traj)
    _manifest(out, args, [path.name], seed=seed if args.noise else None)
    print(f"{args.duration:.0f} s at {args.step*1e3:.0f} ms "
          f"({'noisy' if args.noise else 'noiseless'}) -> {path}")
    return 0


def _cmd_vf_fit(args) -> int:
    out = _outdir(args)
    with open(args.samples) as fh:
        first = fh.readline()
    if SAMPLES_CSV_SCHEMA in first:
        sets = read_samples_csv(args.samples)
    else:
        f, h = read_frequency_csv(args.samples)
        sets = {"response": (f, h)}
    order = args.order if args.order is not None else 3
    outputs = []
    for state, (f, h) in sets.items():
        model = vf_fit((f, h), order=order, d_free=True, e_free=True)
        path = out / f"model_{state}.json"
        write_model_json(path, model, label=state)
        outputs.append(path.name)
        print(f"{state}: order {order}, rms {model.rms_error:.3e}, "
              f"residue sum {model.residue_sum():.6e} 1/MJ -> {path}")
    _manifest(out, args, outputs)
    return 0


def _cmd_estimate(args) -> int:
    case = _load(args.case)
    out = _outdir(args)
    seed = _seed(args)
    case.converter(args.cig)
    if args.mode == "freq-scan":
        if args.noise:
            raise UsageError("load noise applies to the probing mode only")
        result = freq_scan_estimate(
            case, args.cig, dm_mj=args.dm, band=args.band,
            n_freqs=args.tones,
            order=args.order if args.order is not None else 3)
        config_note = {"mode": "freq-scan", "band_hz": list(args.band),
                       "n_freqs": args.tones}
    else:
        config = _probing_config(case, args, args.noise, seed)
        result = probe_estimate(case, config)
        config_note = {
            "mode": "probing", "band_hz": list(args.band),
            "n_tones": config.plan.n_tones,
            "window_s": config.plan.window_s,
            "period_s": config.schedule.period_s,
            "duration_s": config.duration_s,
            "order": config.order, "fit_tails": config.fit_tails,
            "noise": args.noise,
        }
    doc = {
        "schema": ESTIMATE_JSON_SCHEMA,
        "case": case.name,
        "cig": args.cig,
        "g_m_hat_mj": result.g_m_hat_mj,
        "g_m_true_mj": result.g_m_true_mj,
        "eps_pct": result.eps_pct,
        "s_before": result.s_before,
        "s_after": result.s_after,
        "dm_mj": result.dm_mj,
        "fit_rms": result.fit_rms,
        "flags": list(result.flags),
        "config": config_note,
    }
    path = out / "estimate.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    _manifest(out, args, [path.name],
              seed=seed if args.mode == "probing" else None)
    print(f"G_M_hat = {result.g_m_hat_mj:.1f} MJ "
          f"(true {result.g_m_true_mj:.1f} MJ, "
          f"eps {result.eps_pct:+.3f}%) -> {path}")
    return 0


def _cmd_batch(args) -> int:
    case = _load(args.case)
    out = _outdir(args)
    seed = _seed(args)
    if args.mode == "freq-scan":
        if args.noise:
            raise UsageError("load noise applies to the probing mode only")
        stats = batch_randomized(
            case, n_runs=args.runs, spread=args.spread, seed=seed,
            include_cigs=args.include_cigs, cig_id=args.cig, dm_mj=args.dm,
            band=args.band, n_freqs=args.tones,
            order=args.order if args.order is not None else 3,
            workers=args.workers)
    else:
        config = _probing_config(case, args, args.noise, seed)
        stats = batch_randomized(
            case, config=config, n_runs=args.runs, spread=args.spread,
            seed=seed, include_cigs=args.include_cigs,
            workers=args.workers)
    csv_path = out / "batch.csv"
    json_path = out / "batch.json"
    write_batch_csv(csv_path, stats)
    write_batch_json(json_path, stats)
    _manifest(out, args, [csv_path.name, json_path.name], seed=seed)
    s = stats.summary()
    print(f"{s['n_ok']}/{s['n_runs']} runs ok, "
          f"mean {s['mean_pct']:+.3f}%, median {s['median_pct']:+.3f}%, "
          f"IQR {s['iqr_pct']:.3f}% -> {csv_path}, {json_path}")
    return 0


# -- wiring ---------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(
        prog="gridmomentum",
        description="Power-system momentum estimation pipeline.",
        epilog=f"The {SEED_ENV} environment variable overrides --seed.")
    p.add_argument("--version", action="version",
                   version=f"gridmomentum {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp, case=True, outdir=True):
        if case:
            sp.add_argument("--case", required=True,
                            help="fixture name or case JSON path")
        if outdir:
            sp.add_argument("--out", default=None, metavar="dir",
                            help="output directory (default: current)")

    sp = sub.add_parser("validate", help="check a case definition")
    common(sp, outdir=False)
    sp.set_defaults(fn=_cmd_validate)

    sp = sub.add_parser("powerflow", help="solve the AC power flow")
    common(sp)
    sp.set_defaults(fn=_cmd_powerflow)

    sp = sub.add_parser("linearize",
                        help="eigenvalues and null-space report")
    common(sp)
    sp.set_defaults(fn=_cmd_linearize)

    sp = sub.add_parser("freqscan",
                        help="AC sweep of converter speed responses")
    common(sp)
    sp.add_argument("--band", type=_band, default=(0.001, 10.0),
                    metavar="lo:hi", help="frequency band in Hz")
    sp.add_argument("--points", type=int, default=200,
                    help="log-spaced sample count")
    sp.add_argument("--cig", default=None,
                    help="converter id (default: all)")
    sp.set_defaults(fn=_cmd_freqscan)

    sp = sub.add_parser("simulate", help="time-domain trajectory CSV")
    common(sp)
    sp.add_argument("--duration", type=float, default=60.0, metavar="s")
    sp.add_argument("--step", type=float, default=0.01, metavar="s")
    sp.add_argument("--seed", type=int, default=0, metavar="n")
    sp.add_argument("--noise", type=_onoff, default=False,
                    metavar="on|off", help="OU load noise")
    sp.set_defaults(fn=_cmd_simulate)

    sp = sub.add_parser("vf-fit",
                        help="rational fit of a samples CSV")
    sp.add_argument("samples", help="frequency samples file "
                    "(freqscan or probing format)")
    sp.add_argument("--order", type=int, default=None, metavar="n")
    sp.add_argument("--out", default=None, metavar="dir")
    sp.set_defaults(fn=_cmd_vf_fit)

    def estimation_flags(sp):
        sp.add_argument("--cig", required=True, help="target converter id")
        sp.add_argument("--mode", choices=("freq-scan", "probing"),
                        default="freq-scan")
        sp.add_argument("--band", type=_band, default=(0.006, 0.030),
                        metavar="lo:hi",
                        help="tone band in Hz (noisy probing wants a "
                        "band straddling the aggregate resonance)")
        sp.add_argument("--tones", type=int, default=10, metavar="N")
        sp.add_argument("--dm", type=float, default=None, metavar="MJ",
                        help="momentum step (default: 10%% of nominal)")
        sp.add_argument("--duration", type=float, default=None,
                        metavar="s", help="probing horizon "
                        "(default: at least 900 s, whole periods)")
        sp.add_argument("--order", type=int, default=None, metavar="n")
        sp.add_argument("--noise", type=_onoff, default=False,
                        metavar="on|off", help="OU load noise (probing)")
        sp.add_argument("--seed", type=int, default=0, metavar="n")

    sp = sub.add_parser("estimate", help="one momentum estimate")
    common(sp)
    estimation_flags(sp)
    sp.set_defaults(fn=_cmd_estimate)

    sp = sub.add_parser("batch", help="randomized-inertia study")
    common(sp)
    estimation_flags(sp)
    sp.add_argument("--runs", type=int, default=50, metavar="N")
    sp.add_argument("--spread", type=float, default=0.3,
                    help="uniform inertia spread (0.3 = +-30%%)")
    sp.add_argument("--include-cigs", action="store_true",
                    help="also randomize converter inertias")
    sp.add_argument("--workers", type=int, default=1, metavar="N",
                    help="parallel run processes")
    sp.set_defaults(fn=_cmd_batch)

    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except (UsageError, CaseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PowerFlowError, SimulationError, EstimationError,
            np.linalg.LinAlgError, ZeroDivisionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
