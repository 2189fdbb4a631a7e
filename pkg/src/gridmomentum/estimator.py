"""Global momentum estimation from paired frequency responses.

Both experiment variants measure the speed response of one grid-forming
converter to its own power modulation, once at the nominal momentum and
once with a known extra momentum dM on the converter.  The residue sum
S of a rational fit of each response scales like 1/G_M with the probe
gain as a common factor, so

    G_M_hat = S_after / (S_before - S_after) * dM

cancels the gain and needs no knowledge of the injected power.  The
frequency-scan variant samples the linearized model directly (the ideal
experiment); the probing variant runs the nonlinear simulation with a
multisine modulation and an inertia square wave and reads the samples
out of Fourier windows.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .cases import (
    PowerSystemCase,
    system_momentum,
    with_converter_momentum,
    with_inertia_factors,
)
from .dynamics import SimulationError, integrate
from .linear import frequency_response, linearize
from .powerflow import PowerFlowError, equilibrium
from .probing import InertiaSchedule, ProbingPlan, fourier_extract, \
    inertia_schedule_apply
from .stochastic import make_load_noise
from .vectfit import RationalModel, residue_sum, vf_fit

__all__ = [
    "EstimationError",
    "ExperimentConfig",
    "MomentumEstimate",
    "RunRecord",
    "BatchStats",
    "estimate_from_sums",
    "freq_scan_estimate",
    "probe_estimate",
    "batch_randomized",
    "write_batch_csv",
    "write_batch_json",
]

# fits worse than this relative rms get flagged, not silently used
RMS_CONFIDENCE_LIMIT = 0.05

BATCH_JSON_SCHEMA = "gridmomentum-batch.v1"


class EstimationError(RuntimeError):
    """The paired responses carry no usable momentum information."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one probing experiment needs besides the case.

    fit_tails frees the direct and slope terms of the rational fit.
    On clean records they absorb the stiff local angle response and
    remove its bias; on noisy records they are nearly collinear with
    the modal basis and wreck the conditioning, so noisy experiments
    should run with the plain strictly proper form over a band that
    straddles the aggregate resonance instead.
    """

    cig_id: str
    plan: ProbingPlan
    schedule: InertiaSchedule
    order: int = 2
    fit_tails: bool = True
    noise: bool = False
    noise_sigma: float = 0.005
    noise_tau_s: float = 2.0
    duration_s: float = 900.0
    step_s: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.schedule.dm_mj == 0.0:
            raise ValueError("momentum step dm_mj must be nonzero")
        if self.duration_s < self.schedule.period_s:
            raise ValueError("duration must cover one full schedule period")
        self.schedule.check(self.plan)


@dataclass(frozen=True)
class MomentumEstimate:
    g_m_hat_mj: float
    s_before: float
    s_after: float
    dm_mj: float
    fits: Mapping[str, RationalModel]
    g_m_true_mj: float | None = None
    flags: tuple = ()

    @property
    def eps_pct(self) -> float | None:
        """Signed percent error against the known total momentum."""
        if self.g_m_true_mj is None:
            return None
        return 100.0 * (self.g_m_hat_mj - self.g_m_true_mj) \
            / self.g_m_true_mj

    @property
    def fit_rms(self) -> float:
        return max(m.rms_error for m in self.fits.values())


def estimate_from_sums(s_before: float, s_after: float,
                       dm_mj: float) -> float:
    """Momentum from the two residue sums and the known step."""
    if dm_mj == 0.0:
        raise ValueError("dm_mj must be nonzero")
    gap = s_before - s_after
    if gap == 0.0:
        raise EstimationError(
            "residue sums are identical: momentum step too small "
            "or fits degenerate")
    g_hat = s_after / gap * dm_mj
    if g_hat <= 0.0:
        warnings.warn("momentum estimate is not positive; residue sums "
                      "are inconsistent with the step sign", RuntimeWarning)
    return float(g_hat)


def _flags(g_hat: float, fits: Mapping[str, RationalModel]) -> tuple:
    flags = []
    if g_hat <= 0.0:
        flags.append("negative-estimate")
    if any(m.rms_error > RMS_CONFIDENCE_LIMIT for m in fits.values()):
        flags.append("low-confidence-fit")
    if any(not m.converged for m in fits.values()):
        flags.append("fit-not-converged")
    return tuple(flags)


def freq_scan_estimate(case: PowerSystemCase, cig_id: str,
                       dm_mj: float | None = None,
                       band=(0.006, 0.030), n_freqs: int = 10,
                       order: int = 3) -> MomentumEstimate:
    """Ideal experiment: AC scans of the linearized model before and
    after the momentum step, fitted and fed through the residue-sum
    ratio.

    dm_mj defaults to 10% of the case's nominal total momentum, which
    stands in for an operator's prior; the step never needs to be
    accurate, only known.
    """
    case.converter(cig_id)
    if dm_mj is None:
        dm_mj = 0.1 * system_momentum(case)
    eq = equilibrium(case)
    f = np.linspace(band[0], band[1], n_freqs)
    label = f"probe:{cig_id}"
    fits = {}
    sums = {}
    for state, c in (("nominal", case),
                     ("augmented", with_converter_momentum(case, cig_id,
                                                           dm_mj))):
        scan = frequency_response(linearize(c, eq), label, f)
        # free direct and slope terms take up the stiff local angle
        # response under the probe, which is not part of the shared
        # low-frequency dynamics the residues must represent
        fits[state] = vf_fit((f, scan.output(cig_id)), order=order,
                             d_free=True, e_free=True)
        sums[state] = residue_sum(fits[state])
    g_hat = estimate_from_sums(sums["nominal"], sums["augmented"], dm_mj)
    return MomentumEstimate(
        g_m_hat_mj=g_hat, s_before=sums["nominal"],
        s_after=sums["augmented"], dm_mj=dm_mj, fits=fits,
        g_m_true_mj=system_momentum(case), flags=_flags(g_hat, fits))


def probe_estimate(case: PowerSystemCase,
                   config: ExperimentConfig) -> MomentumEstimate:
    """Full time-domain experiment on the nonlinear model.

    One continuous run: multisine modulation of the target converter
    the whole time, momentum square wave per the schedule, optional OU
    load noise.  Fourier windows are averaged per inertia state over
    all complete cycles in the horizon before fitting.
    """
    case.converter(config.cig_id)
    inputs = inertia_schedule_apply(case, config.cig_id, config.plan,
                                    config.schedule)
    noise = None
    if config.noise:
        noise = make_load_noise(case, config.noise_sigma,
                                config.noise_tau_s, seed=config.seed)
    eq = equilibrium(case)
    traj = integrate(case, config.duration_s, step_s=config.step_s, eq=eq,
                     inputs=inputs, noise=noise)

    buckets: dict[str, list] = {"nominal": [], "augmented": []}
    for t0, state in config.schedule.windows(config.plan,
                                             config.duration_s):
        ss = fourier_extract(traj, config.plan, t0, config.cig_id,
                             state=state)
        buckets[state].append(ss.h)
    if not buckets["nominal"] or not buckets["augmented"]:
        raise EstimationError("horizon holds no complete Fourier window "
                              "for each inertia state")

    fits = {}
    sums = {}
    for state, rows in buckets.items():
        h_mean = np.mean(np.vstack(rows), axis=0)
        fits[state] = vf_fit((config.plan.f_hz, h_mean),
                             order=config.order,
                             d_free=config.fit_tails,
                             e_free=config.fit_tails)
        sums[state] = residue_sum(fits[state])
    g_hat = estimate_from_sums(sums["nominal"], sums["augmented"],
                               config.schedule.dm_mj)
    return MomentumEstimate(
        g_m_hat_mj=g_hat, s_before=sums["nominal"],
        s_after=sums["augmented"], dm_mj=config.schedule.dm_mj, fits=fits,
        g_m_true_mj=system_momentum(case), flags=_flags(g_hat, fits))


@dataclass(frozen=True)
class RunRecord:
    run: int
    seed: int
    factors: Mapping[str, float]
    g_m_true_mj: float
    g_m_hat_mj: float = np.nan
    eps_pct: float = np.nan
    fit_rms: float = np.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass(frozen=True)
class BatchStats:
    """Signed per-run percent errors plus the violin-plot quantities."""

    eps_pct: np.ndarray
    runs: tuple = ()
    failures: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.eps_pct))

    @property
    def median(self) -> float:
        return float(np.median(self.eps_pct))

    @property
    def p25(self) -> float:
        return float(np.percentile(self.eps_pct, 25.0))

    @property
    def p75(self) -> float:
        return float(np.percentile(self.eps_pct, 75.0))

    @property
    def iqr(self) -> float:
        return self.p75 - self.p25

    @property
    def upper_adjacent(self) -> float:
        lim = self.p75 + 1.5 * self.iqr
        return float(np.max(self.eps_pct[self.eps_pct <= lim]))

    @property
    def lower_adjacent(self) -> float:
        lim = self.p25 - 1.5 * self.iqr
        return float(np.min(self.eps_pct[self.eps_pct >= lim]))

    def summary(self) -> dict:
        return {
            "n_runs": len(self.runs),
            "n_ok": int(len(self.eps_pct)),
            "failures": self.failures,
            "mean_pct": self.mean,
            "median_pct": self.median,
            "p25_pct": self.p25,
            "p75_pct": self.p75,
            "iqr_pct": self.iqr,
            "upper_adjacent_pct": self.upper_adjacent,
            "lower_adjacent_pct": self.lower_adjacent,
        }


def _batch_run(case, k, mf, cf, run_seed, config, cig_id, dm_mj, band,
               n_freqs, order):
    """One randomized draw, scored; failures become error records."""
    drawn = with_inertia_factors(case, mf, cf)
    try:
        if config is None:
            out = freq_scan_estimate(drawn, cig_id, dm_mj=dm_mj, band=band,
                                     n_freqs=n_freqs, order=order)
        else:
            out = probe_estimate(
                drawn, dataclasses.replace(config, seed=run_seed))
        return RunRecord(run=k, seed=run_seed, factors={**mf, **cf},
                         g_m_true_mj=out.g_m_true_mj,
                         g_m_hat_mj=out.g_m_hat_mj,
                         eps_pct=out.eps_pct, fit_rms=out.fit_rms)
    except (EstimationError, SimulationError, PowerFlowError,
            ValueError) as exc:
        return RunRecord(run=k, seed=run_seed, factors={**mf, **cf},
                         g_m_true_mj=system_momentum(drawn),
                         error=str(exc))


def batch_randomized(case: PowerSystemCase,
                     config: ExperimentConfig | None = None,
                     n_runs: int = 50, spread: float = 0.3, seed: int = 0,
                     include_cigs: bool = False, cig_id: str | None = None,
                     dm_mj: float | None = None, band=(0.006, 0.030),
                     n_freqs: int = 10, order: int = 3,
                     workers: int = 1) -> BatchStats:
    """Monte-Carlo study over randomized machine inertias.

    Each run scales every machine H by an independent uniform factor in
    [1-spread, 1+spread] (converters too with include_cigs), re-solves
    the equilibrium and scores the estimator against that run's own
    total momentum.  With config=None the ideal frequency-scan variant
    runs (cig_id required); otherwise the probing variant with per-run
    noise seeds.  Failed runs are kept in the records but left out of
    the statistics.

    All draws happen up front in run order, so records and statistics
    are identical for any worker count.
    """
    if n_runs < 2:
        raise ValueError("need at least two runs for spread statistics")
    if config is None and cig_id is None:
        raise ValueError("scan variant needs the target converter id")
    if workers < 1:
        raise ValueError("workers must be at least one")
    rng = np.random.default_rng(seed)
    jobs = []
    for k in range(n_runs):
        mf = {m.id: float(rng.uniform(1.0 - spread, 1.0 + spread))
              for m in case.machines}
        cf = {}
        if include_cigs:
            cf = {c.id: float(rng.uniform(1.0 - spread, 1.0 + spread))
                  for c in case.converters}
        run_seed = int(rng.integers(2 ** 62))
        jobs.append((case, k, mf, cf, run_seed, config, cig_id, dm_mj,
                     band, n_freqs, order))
    if workers == 1:
        records = [_batch_run(*job) for job in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_batch_run, *zip(*jobs)))
    eps = [r.eps_pct for r in records if r.ok]
    failures = len(records) - len(eps)
    if not eps:
        raise EstimationError("every batch run failed")
    return BatchStats(eps_pct=np.asarray(eps), runs=tuple(records),
                      failures=failures)


def write_batch_csv(path, stats: BatchStats) -> None:
    ids = sorted(stats.runs[0].factors) if stats.runs else []
    cols = ["run", "seed", "g_m_true_mj", "g_m_hat_mj", "eps_pct",
            "fit_rms"] + [f"factor:{i}" for i in ids] + ["error"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in stats.runs:
            row = [str(r.run), str(r.seed), repr(float(r.g_m_true_mj)),
                   repr(float(r.g_m_hat_mj)), repr(float(r.eps_pct)),
                   repr(float(r.fit_rms))]
            row += [repr(float(r.factors[i])) for i in ids]
            row.append(r.error)
            fh.write(",".join(row) + "\n")


def write_batch_json(path, stats: BatchStats) -> None:
    doc = {"schema": BATCH_JSON_SCHEMA}
    doc.update(stats.summary())
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
