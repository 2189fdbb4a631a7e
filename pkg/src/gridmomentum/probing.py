"""Coherent multi-tone probing and switched-inertia experiment pieces.

A probing plan is a set of sinusoidal setpoint tones, every frequency an
integer multiple of a common base f_1, so that all tones are mutually
orthogonal over the shared integration window mu / f_1.  The inertia
schedule toggles a converter's virtual momentum as a 50% duty square
wave; frequency samples are extracted from the virtual rotor speed over
one window per half cycle, starting a settle interval after each edge.

The extraction computes the direct and quadrature window averages

    gamma_c = (1/W) int y(t) cos(2 pi f_w t) dt
    gamma_s = (1/W) int y(t) sin(2 pi f_w t) dt

on the simulation grid (trapezoidal quadrature, window mean removed
first) and normalizes them against the analytic value of the same
functional applied to the injected tone, so a linear system's extracted
sample equals its transfer function at f_w exactly up to quadrature
error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cases import PowerSystemCase, converter_momentum
from .dynamics import ExogenousInputs, Trajectory

__all__ = [
    "Tone",
    "ProbingPlan",
    "InertiaSchedule",
    "FourierSampleSet",
    "design_tones",
    "inertia_schedule_apply",
    "extract_series",
    "fourier_extract",
    "write_samples_csv",
    "read_samples_csv",
]

SAMPLES_CSV_SCHEMA = "gridmomentum-fsamples.v1"


@dataclass(frozen=True)
class Tone:
    """One probing sinusoid A sin(2 pi f t + phase), amplitude in pu of P_g."""

    f_hz: float
    amplitude: float
    phase_rad: float = 0.0


@dataclass(frozen=True)
class ProbingPlan:
    """Coherent tone set over a common integration window.

    window_s = mu / f1_hz, and every tone frequency is an integer
    multiple of f1_hz, which makes distinct tones exactly orthogonal
    over the window.
    """

    tones: tuple
    f1_hz: float
    mu: int
    window_s: float

    def __post_init__(self):
        if self.mu < 1 or self.mu != int(self.mu):
            raise ValueError("mu must be a positive integer")
        if self.f1_hz <= 0.0:
            raise ValueError("base frequency must be positive")
        if abs(self.window_s * self.f1_hz - self.mu) > 1e-9 * self.mu:
            raise ValueError("window must equal mu / f1")
        if not self.tones:
            raise ValueError("empty tone set")
        for t in self.tones:
            k = t.f_hz / self.f1_hz
            if abs(k - round(k)) > 1e-9:
                raise ValueError(
                    f"tone at {t.f_hz} Hz is not a harmonic of f1")
            if t.amplitude <= 0.0:
                raise ValueError("tone amplitudes must be positive")

    @property
    def n_tones(self) -> int:
        return len(self.tones)

    @property
    def f_hz(self) -> np.ndarray:
        return np.array([t.f_hz for t in self.tones])

    @property
    def peak_modulation(self) -> float:
        """Worst-case (coherent) sum of tone amplitudes, pu of P_g."""
        return float(sum(t.amplitude for t in self.tones))

    def supports_order(self, order: int) -> bool:
        """Tone count in excess of the rational-fit unknowns."""
        return self.n_tones >= 2 * (order + 1)

    def signal(self, t):
        """Sum of tones at time(s) t."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for tone in self.tones:
            out = out + tone.amplitude * np.sin(
                2.0 * np.pi * tone.f_hz * t + tone.phase_rad)
        return out if out.ndim else float(out)


def _select_harmonics(k_min: int, k_max: int, n: int) -> list[int]:
    """n harmonic indices in [k_min, k_max], near log-spaced."""
    avail = list(range(k_min, k_max + 1))
    if len(avail) == n:
        return avail
    used = set()
    for target in np.geomspace(k_min, k_max, n):
        for k in sorted(avail, key=lambda k: abs(k - target)):
            if k not in used:
                used.add(k)
                break
    return sorted(used)


def design_tones(band, n_tones: int, peak_fraction: float = 0.025,
                 p_probe_mw: float | None = None,
                 p_nominal_mw: float | None = None,
                 mu: int = 1, seed: int = 0,
                 sizing: str = "worst-case") -> ProbingPlan:
    """Coherent tone plan covering [f_lo, f_hi] Hz.

    The base f_1 is the largest f_hi / q (integer q) admitting at least
    n_tones harmonics inside the band; the window mu / f_1 is then
    rounded up to a whole second (re-deriving f_1) so any simulation
    step that divides one second covers whole tone periods.  Equal tone
    amplitudes are scaled so the worst-case coherent sum is
    peak_fraction of the nominal operating power p_nominal_mw, given a
    probe dispatch of p_probe_mw (without those powers the amplitudes
    are relative: their sum is peak_fraction).  Phases are seeded-random
    to limit the crest factor.

    sizing="peak" normalizes against the realized peak of the phased
    multisine instead of the coherent sum, which raises the per-tone
    power severalfold at the same peak power excursion; use it when the
    noise floor, not the excursion budget, limits the experiment.
    """
    f_lo, f_hi = float(band[0]), float(band[1])
    if not (0.0 < f_lo < f_hi):
        raise ValueError("band must satisfy 0 < f_lo < f_hi")
    if n_tones < 4:
        raise ValueError("need at least 4 tones for any sensible fit order")
    if mu < 1:
        raise ValueError("mu must be a positive integer")

    q_cap = int(2.0 * n_tones * f_hi / (f_hi - f_lo)) + n_tones + 2
    for q in range(n_tones, q_cap + 1):
        f1 = f_hi / q
        k_min = math.ceil(f_lo / f1 - 1e-9)
        if q - k_min + 1 >= n_tones:
            break
    else:
        raise ValueError("band incompatible with a coherent tone grid")
    ks = _select_harmonics(k_min, q, n_tones)

    window = mu / f1
    if abs(window - round(window)) > 1e-9:
        window = float(math.ceil(window))
    else:
        window = float(round(window))
    f1 = mu / window

    if (p_probe_mw is None) != (p_nominal_mw is None):
        raise ValueError("give both probe and nominal powers or neither")
    if p_probe_mw is None:
        target = peak_fraction
    else:
        target = peak_fraction * p_nominal_mw / p_probe_mw
    phases = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi, n_tones)
    if sizing == "worst-case":
        amp = target / n_tones
    elif sizing == "peak":
        # band-limited signal: a dense grid over one window finds the peak
        t = np.arange(0.0, window, 0.01 / f_hi)
        u = np.zeros_like(t)
        for k, ph in zip(ks, phases):
            u += np.sin(2.0 * np.pi * k * f1 * t + ph)
        amp = target / float(np.max(np.abs(u)))
    else:
        raise ValueError("sizing must be 'worst-case' or 'peak'")

    tones = tuple(Tone(k * f1, amp, ph) for k, ph in zip(ks, phases))
    return ProbingPlan(tones=tones, f1_hz=f1, mu=int(mu), window_s=window)


@dataclass(frozen=True)
class InertiaSchedule:
    """50% duty square wave on a converter's virtual momentum.

    Each period starts at nominal momentum and switches to nominal +
    dm_mj at half period; extraction windows begin settle_s after each
    edge.  The period must leave room for a full integration window in
    every half cycle.
    """

    dm_mj: float
    period_s: float
    settle_s: float = 30.0
    duty: float = 0.5

    def __post_init__(self):
        if self.period_s <= 0.0:
            raise ValueError("period must be positive")
        if self.settle_s < 0.0:
            raise ValueError("settle must be nonnegative")
        if self.duty != 0.5:
            raise ValueError("only 50% duty is supported")

    def check(self, plan: ProbingPlan) -> None:
        if 0.5 * self.period_s <= plan.window_s + self.settle_s:
            raise ValueError(
                "half period must exceed the window plus the settle "
                f"interval ({plan.window_s + self.settle_s:.1f} s)")

    def augmented(self, t: float) -> bool:
        frac = t / self.period_s - math.floor(t / self.period_s)
        return frac >= 0.5 - 1e-9

    def windows(self, plan: ProbingPlan, horizon_s: float):
        """(t0, state) extraction windows fully inside the horizon.

        Every half cycle is packed with as many back-to-back windows as
        fit after the settle interval, so long half periods average
        more noise instead of idling.
        """
        self.check(plan)
        out = []
        k = 0
        while True:
            for half, state in ((0.0, "nominal"), (0.5, "augmented")):
                edge = (k + half) * self.period_s
                t0 = edge + self.settle_s
                while t0 + plan.window_s <= edge + 0.5 * self.period_s \
                        + 1e-9:
                    if t0 + plan.window_s > horizon_s + 1e-9:
                        return tuple(out)
                    out.append((t0, state))
                    t0 += plan.window_s
            k += 1


def inertia_schedule_apply(case: PowerSystemCase, cig_id: str,
                           plan: ProbingPlan,
                           sched: InertiaSchedule) -> ExogenousInputs:
    """Exogenous inputs realizing the probing + switched-inertia run."""
    conv = next((c for c in case.converters if c.id == cig_id), None)
    if conv is None:
        raise ValueError(f"no converter {cig_id!r} in case {case.name!r}")
    sched.check(plan)
    m0 = converter_momentum(conv)

    def momentum(t, _m0=m0, _dm=sched.dm_mj, _sched=sched):
        return _m0 + (_dm if _sched.augmented(t) else 0.0)

    return ExogenousInputs(eta_gf={cig_id: plan.signal},
                           momentum_mj={cig_id: momentum})


@dataclass(frozen=True)
class FourierSampleSet:
    """Direct/quadrature window averages and the normalized samples.

    h[w] is the complex frequency sample at tones[w]: the window phasor
    of the analyzed signal divided by the phasor of the injected tone,
    i.e. the transfer function at f_w for a linear response.
    """

    f_hz: np.ndarray
    gamma_c: np.ndarray
    gamma_s: np.ndarray
    h: np.ndarray
    t0_s: float
    window_s: float
    state: str = "nominal"

    def __post_init__(self):
        if not (len(self.f_hz) == len(self.gamma_c) == len(self.gamma_s)
                == len(self.h)):
            raise ValueError("per-tone arrays must have equal length")


def extract_series(t_s, y, plan: ProbingPlan, t0_s: float,
                   state: str = "nominal") -> FourierSampleSet:
    """Fourier samples of a uniformly sampled series over one window."""
    t_s = np.asarray(t_s, dtype=float)
    y = np.asarray(y, dtype=float)
    if t_s.ndim != 1 or t_s.shape != y.shape or len(t_s) < 3:
        raise ValueError("need matching 1-D time and signal arrays")
    h = t_s[1] - t_s[0]
    start = (t0_s - t_s[0]) / h
    if abs(start - round(start)) > 1e-6:
        raise ValueError("t0 must fall on the sampling grid")
    k0 = int(round(start))
    n_w = plan.window_s / h
    if abs(n_w - round(n_w)) > 1e-6:
        raise ValueError("window is not a whole number of samples")
    n_w = int(round(n_w))
    if k0 < 0 or k0 + n_w >= len(t_s):
        raise ValueError("window exceeds the trajectory")
    if np.max(plan.f_hz) >= 0.05 / h:
        raise ValueError("tone frequency not resolvable at this sampling rate")

    t_w = t_s[k0:k0 + n_w + 1]
    y_w = y[k0:k0 + n_w + 1]
    w_len = plan.window_s
    y_w = y_w - np.trapezoid(y_w, dx=h) / w_len

    gamma_c = np.empty(plan.n_tones)
    gamma_s = np.empty(plan.n_tones)
    h_out = np.empty(plan.n_tones, dtype=complex)
    for w, tone in enumerate(plan.tones):
        arg = 2.0 * np.pi * tone.f_hz * t_w
        gamma_c[w] = np.trapezoid(y_w * np.cos(arg), dx=h) / w_len
        gamma_s[w] = np.trapezoid(y_w * np.sin(arg), dx=h) / w_len
        # injected tone phasor (sine convention): -j A e^{j phase}
        phasor = gamma_c[w] - 1j * gamma_s[w]
        h_out[w] = 2.0j * phasor * np.exp(-1j * tone.phase_rad) / tone.amplitude
    return FourierSampleSet(f_hz=plan.f_hz, gamma_c=gamma_c, gamma_s=gamma_s,
                            h=h_out, t0_s=t0_s, window_s=plan.window_s,
                            state=state)


def fourier_extract(traj: Trajectory, plan: ProbingPlan, t0_s: float,
                    signal, state: str = "nominal") -> FourierSampleSet:
    """Extract from a trajectory; signal is a device id or a sample array."""
    if isinstance(signal, str):
        try:
            j = traj.device_ids.index(signal)
        except ValueError:
            raise ValueError(f"no device {signal!r} in the trajectory")
        signal = traj.omega[:, j]
    return extract_series(traj.t_s, signal, plan, t0_s, state=state)


def write_samples_csv(path, sets) -> None:
    """Rational-fit input format: f_hz, Re H, Im H, state label."""
    if isinstance(sets, FourierSampleSet):
        sets = [sets]
    with open(path, "w") as fh:
        fh.write(f"# {SAMPLES_CSV_SCHEMA}\n")
        fh.write("f_hz,re,im,state\n")
        for s in sets:
            for f, h in zip(s.f_hz, s.h):
                fh.write(f"{float(f)!r},{float(h.real)!r},"
                         f"{float(h.imag)!r},{s.state}\n")


def read_samples_csv(path):
    """Samples grouped by state label: {state: (f_hz, h)} in file order."""
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# {SAMPLES_CSV_SCHEMA}":
            raise ValueError(f"not a {SAMPLES_CSV_SCHEMA} file")
        header = fh.readline().strip()
        if header != "f_hz,re,im,state":
            raise ValueError("unexpected column layout")
        grouped: dict[str, list] = {}
        for line in fh:
            if not line.strip():
                continue
            f, re, im, state = line.strip().split(",")
            grouped.setdefault(state, []).append(
                (float(f), float(re) + 1j * float(im)))
    return {state: (np.array([p[0] for p in pairs]),
                    np.array([p[1] for p in pairs]))
            for state, pairs in grouped.items()}
