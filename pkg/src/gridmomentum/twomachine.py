"""Closed-form response of a two-machine system joined by an R + jX line.

Machine 1 carries the only turbine governor and a resistive load R_L at
its terminals; machine 2 is dispatched at fixed power.  Everything here
is analytic: rational transfer functions of the small-signal model, a
low-frequency second-order reduction, and its pole/residue form.  The
module is the reference the generic linearization, frequency-scan and
fitting code is tested against, with no simulation in the loop.

Sign and unit conventions
-------------------------
Angles in rad, speeds in pu of nominal, power in MW.  Momenta M are in
MJ (MW s), damping D and governor gain k_g/R_1 in MW per pu speed.  The
line parameters R, X and the load R_L are in ohm, terminal voltage
magnitudes rho in kV, so rho^2 / R is directly MW.

The forcing convention follows the state equations: machine k receives
the power M_k * b_k(t), i.e. the b arguments of the coefficient routine
are per-momentum quantities.  The response evaluators take plain power
amplitudes in MW and convert.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = [
    "TwoMachineParams",
    "ModalPair",
    "coupling_coefficient",
    "electrical_power",
    "rational_coefficients",
    "exact_response",
    "lowfreq_response",
    "partial_fractions",
    "from_equilibrium",
    "response_table",
    "write_response_csv",
]


@dataclasses.dataclass(frozen=True)
class TwoMachineParams:
    """Parameters of the two-machine configuration, SI units as noted."""

    m1_mj: float
    m2_mj: float
    d1_mw: float            # damping, MW per pu speed
    d2_mw: float
    t_g1_s: float
    k_g1_r1inv_mw: float     # governor gain k_g1/R_1, MW per pu speed
    r_ohm: float
    x_ohm: float
    r_load_ohm: float
    rho1_kv: float
    rho2_kv: float
    delta_eq1_rad: float
    delta_eq2_rad: float
    omega_rad_s: float       # 2 pi f_nom

    def __post_init__(self):
        if self.m1_mj <= 0 or self.m2_mj <= 0:
            raise ValueError("momenta must be positive")
        if not np.isfinite(coupling_coefficient(self)):
            raise ValueError("coupling coefficient is not finite")

    @property
    def xi(self) -> float:
        return coupling_coefficient(self)


def coupling_coefficient(p: TwoMachineParams) -> float:
    """Synchronizing power coefficient xi in MW/rad.

    Derivative of the machine-1 electrical power with respect to the
    angle difference, evaluated at the equilibrium.
    """
    d12 = p.delta_eq1_rad - p.delta_eq2_rad
    return (p.rho1_kv * p.rho2_kv / (p.r_ohm ** 2 + p.x_ohm ** 2)
            * (p.r_ohm * np.sin(d12) + p.x_ohm * np.cos(d12)))


def electrical_power(p: TwoMachineParams, delta1, delta2):
    """Large-signal electrical power (P_e1, P_e2) in MW at given angles."""
    den = p.r_ohm ** 2 + p.x_ohm ** 2
    r1r2 = p.rho1_kv * p.rho2_kv
    d12 = np.asarray(delta1) - np.asarray(delta2)
    pe1 = (p.r_ohm * p.rho1_kv ** 2 - p.r_ohm * r1r2 * np.cos(d12)
           + p.x_ohm * r1r2 * np.sin(d12)) / den \
        + p.rho1_kv ** 2 / p.r_load_ohm
    pe2 = (p.r_ohm * p.rho2_kv ** 2 - p.r_ohm * r1r2 * np.cos(-d12)
           + p.x_ohm * r1r2 * np.sin(-d12)) / den
    return pe1, pe2


def rational_coefficients(p: TwoMachineParams, b1: complex, b2: complex,
                          r1: float = 1.0):
    """Transfer-function coefficients of the two speed responses.

    Delta_omega_j(s) = (sum_k beta_k^j s^k) / (sum_k alpha_k s^k) with
    per-momentum forcing constants b1, b2 (machine k is driven by the
    power M_k * b_k).  Returns (alpha, beta1, beta2) with coefficients
    in ascending powers of s.  The droop resistance r1 enters every
    coefficient as a common factor and cancels in the ratio; it is kept
    as an argument only so the printed forms can be checked verbatim.
    """
    m1, m2 = p.m1_mj, p.m2_mj
    d1, d2 = p.d1_mw, p.d2_mw
    tg = p.t_g1_s
    g = p.k_g1_r1inv_mw
    q = p.xi * p.omega_rad_s

    alpha = np.array([
        (d1 + d2 + g) * q * r1,
        (q * (d1 + d2) * tg + q * (m1 + m2) + d2 * (d1 + g)) * r1,
        (d2 * (d1 * tg + m1) + d1 * m2 + q * (m1 + m2) * tg + g * m2) * r1,
        (tg * (d2 * m1 + d1 * m2) + m1 * m2) * r1,
        m1 * m2 * tg * r1,
    ])
    beta1 = np.array([
        (b1 * m1 + b2 * m2) * q * r1,
        ((b1 * m1 + b2 * m2) * tg * q + b1 * m1 * d2) * r1,
        m1 * (d2 * tg + m2) * b1 * r1,
        m1 * m2 * tg * b1 * r1,
    ], dtype=complex)
    beta2 = np.array([
        (b1 * m1 + b2 * m2) * q * r1,
        ((b1 * m1 + b2 * m2) * tg * q + b2 * m2 * (d1 + g)) * r1,
        m2 * (d1 * tg + m1) * b2 * r1,
        m1 * m2 * tg * b2 * r1,
    ], dtype=complex)
    return alpha, beta1, beta2


def exact_response(p: TwoMachineParams, p1_mw: complex, p2_mw: complex, s):
    """(Delta_omega_1, Delta_omega_2) in pu for power phasors in MW.

    Evaluates the full fourth-order rational forms at complex
    frequency s (rad/s).  Vectorized over s.
    """
    alpha, beta1, beta2 = rational_coefficients(
        p, p1_mw / p.m1_mj, p2_mw / p.m2_mj)
    s = np.asarray(s, dtype=complex)
    den = npoly.polyval(s, alpha)
    # guard against numerically meaningless values right on a pole
    scale = npoly.polyval(np.abs(s), np.abs(alpha))
    if np.any(np.abs(den) <= 1e-12 * scale):
        raise ZeroDivisionError("evaluation at a pole of the response")
    return npoly.polyval(s, beta1) / den, npoly.polyval(s, beta2) / den


def lowfreq_response(p: TwoMachineParams, p1_mw: complex, p2_mw: complex, s):
    """Common low-frequency speed response in pu, second-order model.

    Both machine speeds collapse onto this expression well below the
    inter-machine swing frequency; the forcing enters only through the
    total injected power.
    """
    m, d = p.m1_mj + p.m2_mj, p.d1_mw + p.d2_mw
    tg, g = p.t_g1_s, p.k_g1_r1inv_mw
    s = np.asarray(s, dtype=complex)
    num = (s * tg + 1) * (p1_mw + p2_mw)
    den = s ** 2 * m * tg + s * (d * tg + m) + (d + g)
    return num / den


@dataclasses.dataclass(frozen=True)
class ModalPair:
    """Pole/residue form c1/(s-a1) + c2/(s-a2) of the reduced response.

    Residues are in 1/MJ: the model maps total injected power in MW to
    speed deviation in pu, and the residue sum is 1/(M1+M2).
    """

    a1: complex
    a2: complex
    c1: complex
    c2: complex

    @property
    def residue_sum(self) -> complex:
        return self.c1 + self.c2

    def evaluate(self, s):
        s = np.asarray(s, dtype=complex)
        return self.c1 / (s - self.a1) + self.c2 / (s - self.a2)


def partial_fractions(p: TwoMachineParams) -> ModalPair:
    """Poles and residues of the low-frequency model for unit total power.

    Raises ValueError on a repeated pole (critically damped corner
    case); the rational form itself remains usable there.
    """
    m, d = p.m1_mj + p.m2_mj, p.d1_mw + p.d2_mw
    tg, g = p.t_g1_s, p.k_g1_r1inv_mw
    # monic denominator s^2 + ps + q, numerator (s + 1/tg)/m
    pc = 1.0 / tg + d / m
    qc = (d + g) / (m * tg)
    disc = complex(pc * pc - 4 * qc)
    root = np.sqrt(disc)
    a1, a2 = (-pc + root) / 2, (-pc - root) / 2
    if abs(a1 - a2) <= 1e-8 * (abs(a1) + abs(a2)):
        raise ValueError("repeated pole; partial fractions are degenerate")
    c1 = (a1 + 1.0 / tg) / (m * (a1 - a2))
    c2 = (a2 + 1.0 / tg) / (m * (a2 - a1))
    return ModalPair(a1=a1, a2=a2, c1=c1, c2=c2)


def from_equilibrium(eq) -> TwoMachineParams:
    """Extract the closed-form parameters from a solved two-machine case.

    The case must consist of exactly two machines at two buses joined
    by a single branch, with one load at the bus of the governed
    machine and no converters.  Quantities are read off the power flow
    solution so the closed forms and the network model agree exactly.
    """
    case = eq.case
    if len(case.machines) != 2 or case.converters:
        raise ValueError("closed forms cover exactly two machines")
    g1, g2 = case.machines
    if g1.governor is None or g2.governor is not None:
        raise ValueError("expected a governor on machine 1 only")
    if len(case.branches()) != 1 or len(case.loads) != 1:
        raise ValueError("expected a single line and a single load")
    if case.loads[0].bus != g1.bus:
        raise ValueError("load must sit at the governed machine's bus")
    br = case.branches()[0]
    v_base = case.bus(g1.bus).v_base_kv
    z_base = v_base ** 2 / case.s_base_mva
    v1 = eq.pf.v_at(g1.bus)
    v2 = eq.pf.v_at(g2.bus)
    # load resistance reproducing the drawn power at the solved voltage
    p_load = eq.pf.p_load_mw[case.loads[0].id]
    r_load = abs(v1) ** 2 * v_base ** 2 / p_load
    i1, i2 = eq.device_index(g1.id), eq.device_index(g2.id)
    return TwoMachineParams(
        m1_mj=2 * g1.h_s * g1.s_b_mva,
        m2_mj=2 * g2.h_s * g2.s_b_mva,
        d1_mw=g1.d_pu * g1.s_b_mva,
        d2_mw=g2.d_pu * g2.s_b_mva,
        t_g1_s=g1.governor.t_g_s,
        k_g1_r1inv_mw=g1.governor.gain_pu * g1.s_b_mva,
        r_ohm=br.r * z_base,
        x_ohm=br.x * z_base,
        r_load_ohm=r_load,
        rho1_kv=abs(v1) * v_base,
        rho2_kv=abs(v2) * v_base,
        delta_eq1_rad=eq.delta[i1],
        delta_eq2_rad=eq.delta[i2],
        omega_rad_s=case.omega_s,
    )


def response_table(p: TwoMachineParams, p1_mw: complex, p2_mw: complex,
                   freqs_hz) -> np.ndarray:
    """Magnitude sweep: columns (f_hz, |dw1|, |dw2|, |dw_lowfreq|)."""
    freqs_hz = np.asarray(freqs_hz, dtype=float)
    s = 2j * np.pi * freqs_hz
    w1, w2 = exact_response(p, p1_mw, p2_mw, s)
    wl = lowfreq_response(p, p1_mw, p2_mw, s)
    return np.column_stack([freqs_hz, np.abs(w1), np.abs(w2), np.abs(wl)])


def write_response_csv(path, table: np.ndarray) -> None:
    np.savetxt(path, table, delimiter=",",
               header="f_hz,mag_omega1,mag_omega2,mag_omega_lowfreq",
               comments="")
