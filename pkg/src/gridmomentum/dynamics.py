"""Nonlinear time-domain model: swing equations, governors, virtual rotors.

Fixed-step trapezoidal integration of the classical multi-machine model
around a power-flow equilibrium.  Machines follow

    M dw/dt = P_m - P_e(delta) - D (w - w0),    d delta/dt = Omega (w - w0),

governed machines add a first-order turbine governor state, and
grid-forming converters run the virtual swing equation with a modulated
setpoint, (1 + eta_gf) P_g.  Load fluctuations enter the electrical
power through the reduced-network shunt conductances, so the network
stays algebraic.

The step is fixed (default 10 ms) because the probing workflow needs
exactly periodic samples; each step is closed with a modified-Newton
corrector on the trapezoidal residual, reusing one LU factorization of
the iteration matrix for the whole run and refactoring only when the
corrector slows down or a converter momentum override has moved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .cases import Converter, PowerSystemCase, device_parameters
from .powerflow import Equilibrium, equilibrium

__all__ = [
    "SystemState",
    "ExogenousInputs",
    "Trajectory",
    "SimulationError",
    "equilibrium_state",
    "rhs",
    "integrate",
    "default_settle_s",
    "write_trajectory_csv",
]

_CORRECTOR_TOL = 1e-10
_MAX_NEWTON = 25
_REFRESH_AT = (8, 16)


class SimulationError(RuntimeError):
    """Corrector failure or non-finite state during integration."""


@dataclass
class SystemState:
    """Dynamic state: absolute angles, speeds and governor powers.

    delta is in rad, omega in per-unit (1.0 at nominal), p_m in MW with
    one entry per governed machine, in device order.
    """

    delta: np.ndarray
    omega: np.ndarray
    p_m: np.ndarray

    def __post_init__(self):
        self.delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        self.p_m = np.atleast_1d(np.asarray(self.p_m, dtype=float)) \
            if np.size(self.p_m) else np.zeros(0)
        if self.delta.shape != self.omega.shape:
            raise ValueError("delta and omega lengths differ")
        if not (np.all(np.isfinite(self.delta))
                and np.all(np.isfinite(self.omega))
                and np.all(np.isfinite(self.p_m))):
            raise ValueError("non-finite state")


def equilibrium_state(case: PowerSystemCase, eq: Equilibrium) -> SystemState:
    """State vector at the power-flow equilibrium (nominal speed)."""
    _, _, governors = device_parameters(case)
    p_eq = eq.net.electrical_power(eq.delta)
    return SystemState(eq.delta.copy(),
                       np.ones(len(eq.delta)),
                       p_eq[[g[0] for g in governors]])


@dataclass(frozen=True)
class ExogenousInputs:
    """Deterministic inputs over the run, all keyed by element id.

    eta_gf modulates a converter setpoint to (1 + eta) P_g; power_mw is
    an additive power injection on any device (the probing input for
    plain machines); eta_load modulates a load conductance on top of any
    stochastic noise; momentum_mj overrides a converter virtual momentum
    (total MJ, for the switched-increment experiment).  Every value is a
    callable of time in seconds and must stay bounded over the horizon.
    """

    eta_gf: Mapping[str, Callable[[float], float]] = field(default_factory=dict)
    power_mw: Mapping[str, Callable[[float], float]] = field(default_factory=dict)
    eta_load: Mapping[str, Callable[[float], float]] = field(default_factory=dict)
    momentum_mj: Mapping[str, Callable[[float], float]] = field(default_factory=dict)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled run: states plus converter electrical quantities.

    p_e_conv holds the converter electrical powers in MW; v_d/v_q and
    i_d/i_q are the converter source voltage and injected current in the
    frame rotating with each virtual rotor (per-unit), so that
    (v_d i_d + v_q i_q) s_base equals p_e_conv.
    """

    t_s: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    p_m: np.ndarray
    p_e_conv: np.ndarray
    v_d: np.ndarray
    v_q: np.ndarray
    i_d: np.ndarray
    i_q: np.ndarray
    device_ids: tuple
    governed_ids: tuple
    converter_ids: tuple
    step_s: float

    def __post_init__(self):
        dt = np.diff(self.t_s)
        if dt.size and (np.any(dt <= 0)
                        or np.max(np.abs(dt - self.step_s)) > 1e-9 * self.step_s):
            raise ValueError("time grid must increase with a constant step")

    def state(self, k: int) -> SystemState:
        return SystemState(self.delta[k], self.omega[k], self.p_m[k])

    def window(self, t_lo: float, t_hi: float) -> np.ndarray:
        """Indices with t_lo <= t < t_hi."""
        return np.nonzero((self.t_s >= t_lo - 1e-9) & (self.t_s < t_hi - 1e-9))[0]


def default_settle_s(case: PowerSystemCase) -> float:
    """Transient discard interval: twice the slowest governor constant."""
    t_g = [m.governor.t_g_s for m in case.machines if m.governor is not None]
    return 2.0 * max(t_g) if t_g else 0.0


class _Model:
    """Case bound to an equilibrium and a set of exogenous inputs."""

    def __init__(self, case, eq, inputs):
        devs = case.devices()
        self.net = eq.net
        self.n_dev = len(devs)
        self.omega_rad = 2.0 * np.pi * case.f_nom_hz
        self.s_base = case.s_base_mva

        m_mj, d_mw, governors = device_parameters(case)
        self.m0 = np.asarray(m_mj, dtype=float)
        self.d_mw = np.asarray(d_mw, dtype=float)
        self.gov_idx = np.array([g[0] for g in governors], dtype=int)
        self.t_g = np.array([g[1] for g in governors], dtype=float)
        self.gain = np.array([g[2] for g in governors], dtype=float)
        self.n_gov = len(governors)
        self.conv_idx = np.array(
            [j for j, d in enumerate(devs) if isinstance(d, Converter)],
            dtype=int)

        # setpoints from the model's own P_e at the equilibrium angles, so
        # the equilibrium is an exact fixpoint of the discrete scheme
        self.p_fixed = self.net.electrical_power(eq.delta)
        self.p_m_eq = self.p_fixed[self.gov_idx].copy()

        dev_pos = {d.id: j for j, d in enumerate(devs)}
        conv_pos = {devs[j].id: j for j in self.conv_idx}
        load_pos = {l: k for k, l in enumerate(self.net.load_ids)}
        inputs = inputs or ExogenousInputs()
        self.etagf_fns = self._bind(inputs.eta_gf, conv_pos, "converter")
        self.power_fns = self._bind(inputs.power_mw, dev_pos, "device")
        self.mom_fns = self._bind(inputs.momentum_mj, conv_pos, "converter")
        self.etaload_fns = self._bind(inputs.eta_load, load_pos, "load")

        self._y_key = None
        self._y_red = None

    @staticmethod
    def _bind(mapping, positions, kind):
        bound = []
        for key, fn in mapping.items():
            if key not in positions:
                raise ValueError(f"unknown {kind} id {key!r}")
            if not callable(fn):
                raise ValueError(f"input for {key!r} is not callable")
            bound.append((positions[key], fn))
        return bound

    def momentum(self, t):
        if not self.mom_fns:
            return self.m0
        m = self.m0.copy()
        for j, fn in self.mom_fns:
            m[j] = fn(t)
        if np.any(m <= 0.0):
            raise SimulationError(f"momentum override not positive at t={t:.6f} s")
        return m

    def admittance(self, t, ou_eta, ou_ver):
        """Reduced admittance for the load state at time t (cached by key)."""
        if ou_eta is None and not self.etaload_fns:
            return self.net.reduced_y()
        key = (t, ou_ver)
        if key != self._y_key:
            eta = (np.zeros(len(self.net.load_ids)) if ou_eta is None
                   else np.array(ou_eta, dtype=float))
            for l, fn in self.etaload_fns:
                eta[l] += fn(t)
            self._y_red = self.net.reduced_y(eta)
            self._y_key = key
        return self._y_red

    def injection(self, t, p_m):
        p = self.p_fixed.copy()
        if self.n_gov:
            p[self.gov_idx] = p_m
        for j, fn in self.etagf_fns:
            p[j] += fn(t) * self.p_fixed[j]
        for j, fn in self.power_fns:
            p[j] += fn(t)
        return p

    def derivative(self, t, delta, omega, p_m, ou_eta=None, ou_ver=0):
        """RHS plus the electrical phasors used for recording."""
        y = self.admittance(t, ou_eta, ou_ver)
        e = self.net.e_int * np.exp(1j * delta)
        i = y @ e
        p_e = (e * np.conj(i)).real * self.s_base
        m = self.momentum(t)
        d_delta = self.omega_rad * (omega - 1.0)
        d_omega = (self.injection(t, p_m) - p_e
                   - self.d_mw * (omega - 1.0)) / m
        d_p_m = ((self.p_m_eq - p_m - self.gain * (omega[self.gov_idx] - 1.0))
                 / self.t_g) if self.n_gov else np.zeros(0)
        return d_delta, d_omega, d_p_m, p_e, e, i

    def newton_matrix(self, t, delta, h, ou_eta=None, ou_ver=0):
        """LU of I - h/2 J at the given angles and momentum."""
        y = self.admittance(t, ou_eta, ou_ver)
        _, pi = self.net.power_and_jacobian(delta, y)
        m = self.momentum(t)
        n, g = self.n_dev, self.n_gov
        jac = np.zeros((2 * n + g, 2 * n + g))
        jac[:n, n:2 * n] = self.omega_rad * np.eye(n)
        jac[n:2 * n, :n] = -pi / m[:, None]
        jac[n:2 * n, n:2 * n] = -np.diag(self.d_mw / m)
        if g:
            rows = np.arange(g)
            jac[n + self.gov_idx, 2 * n + rows] = 1.0 / m[self.gov_idx]
            jac[2 * n + rows, n + self.gov_idx] = -self.gain / self.t_g
            jac[2 * n + rows, 2 * n + rows] = -1.0 / self.t_g
        return lu_factor(np.eye(2 * n + g) - 0.5 * h * jac), m


def rhs(case: PowerSystemCase, eq: Equilibrium, state: SystemState,
        inputs: ExogenousInputs | None = None, t: float = 0.0,
        load_eta: np.ndarray | None = None):
    """State derivative (d delta/dt, d omega/dt, d P_m/dt) at time t.

    load_eta optionally fixes the per-load relative conductance
    deviations (the quantity the noise model produces).
    """
    model = _Model(case, eq, inputs)
    if len(state.delta) != model.n_dev or len(state.p_m) != model.n_gov:
        raise ValueError("state dimensions do not match the case")
    d_delta, d_omega, d_p_m, _, _, _ = model.derivative(
        t, state.delta, state.omega, state.p_m, load_eta)
    return d_delta, d_omega, d_p_m


def integrate(case: PowerSystemCase, t_span_s: float, step_s: float = 0.01,
              eq: Equilibrium | None = None, x0: SystemState | None = None,
              inputs: ExogenousInputs | None = None,
              noise=None) -> Trajectory:
    """Integrate the nonlinear model over [0, t_span_s].

    Trapezoidal rule with the stated fixed step (t_span_s must be a
    multiple of it).  Optional noise is an OU process set matching the
    case loads; it is sampled once per step and held, so the scheme is
    deterministic between samples.  Raises SimulationError with a time
    stamp if the corrector stalls or the state leaves the finite range.
    """
    if step_s <= 0.0:
        raise ValueError("step must be positive")
    n_steps = int(round(t_span_s / step_s))
    if n_steps < 1 or abs(n_steps * step_s - t_span_s) > 1e-9 * t_span_s:
        raise ValueError("t_span must be a positive multiple of the step")
    if eq is None:
        eq = equilibrium(case)
    model = _Model(case, eq, inputs)
    if x0 is None:
        x0 = equilibrium_state(case, eq)
    if len(x0.delta) != model.n_dev or len(x0.p_m) != model.n_gov:
        raise ValueError("x0 dimensions do not match the case")

    if noise is not None and list(noise.load_ids) != list(model.net.load_ids):
        raise ValueError("noise process set does not match the case loads")
    ou_eta = noise.eta.copy() if noise is not None else None
    ou_ver = 0

    n, g, c = model.n_dev, model.n_gov, len(model.conv_idx)
    z = np.concatenate([x0.delta, x0.omega, x0.p_m])
    # corrector convergence is judged against natural unit scales
    scale = np.concatenate([np.ones(2 * n), np.full(g, model.s_base)])

    t_grid = np.arange(n_steps + 1) * step_s
    delta = np.empty((n_steps + 1, n))
    omega = np.empty((n_steps + 1, n))
    p_m = np.empty((n_steps + 1, g))
    p_e_conv = np.empty((n_steps + 1, c))
    v_dq = np.empty((n_steps + 1, c), dtype=complex)
    i_dq = np.empty((n_steps + 1, c), dtype=complex)

    def record(k, zk, p_e, e, i):
        delta[k] = zk[:n]
        omega[k] = zk[n:2 * n]
        p_m[k] = zk[2 * n:]
        p_e_conv[k] = p_e[model.conv_idx]
        rot = np.exp(-1j * zk[:n][model.conv_idx])
        v_dq[k] = e[model.conv_idx] * rot
        i_dq[k] = i[model.conv_idx] * rot

    def eval_z(t, zk):
        dd, dw, dp, p_e, e, i = model.derivative(
            t, zk[:n], zk[n:2 * n], zk[2 * n:], ou_eta, ou_ver)
        return np.concatenate([dd, dw, dp]), p_e, e, i

    g0, p_e0, e0, i0 = eval_z(0.0, z)
    record(0, z, p_e0, e0, i0)
    lu, m_fact = model.newton_matrix(0.0, z[:n], step_s, ou_eta, ou_ver)

    half = 0.5 * step_s
    for k in range(n_steps):
        t1 = t_grid[k + 1]
        # refactor when a momentum override has moved the iteration matrix
        m_now = model.momentum(t1)
        if m_now is not m_fact and np.max(np.abs(m_now / m_fact - 1.0)) > 0.05:
            lu, m_fact = model.newton_matrix(t1, z[:n], step_s, ou_eta, ou_ver)

        z1 = z + step_s * g0
        for it in range(_MAX_NEWTON):
            g1, p_e1, e1, i1 = eval_z(t1, z1)
            res = z1 - z - half * (g0 + g1)
            dz = lu_solve(lu, -res)
            z1 += dz
            if np.max(np.abs(dz) / scale) < _CORRECTOR_TOL:
                break
            if it + 1 in _REFRESH_AT:
                lu, m_fact = model.newton_matrix(t1, z1[:n], step_s,
                                                 ou_eta, ou_ver)
        else:
            raise SimulationError(
                f"corrector did not converge at t={t1:.6f} s")
        if not np.all(np.isfinite(z1)):
            raise SimulationError(f"state not finite at t={t1:.6f} s")

        g1, p_e1, e1, i1 = eval_z(t1, z1)
        record(k + 1, z1, p_e1, e1, i1)
        z = z1
        if noise is not None:
            noise.step(step_s)
            ou_eta = noise.eta.copy()
            ou_ver += 1
            g0, p_e0, e0, i0 = eval_z(t1, z)
        else:
            g0 = g1

    devs = case.devices()
    return Trajectory(
        t_s=t_grid, delta=delta, omega=omega, p_m=p_m, p_e_conv=p_e_conv,
        v_d=v_dq.real.copy(), v_q=v_dq.imag.copy(),
        i_d=i_dq.real.copy(), i_q=i_dq.imag.copy(),
        device_ids=tuple(d.id for d in devs),
        governed_ids=tuple(devs[j].id for j in model.gov_idx),
        converter_ids=tuple(devs[j].id for j in model.conv_idx),
        step_s=step_s)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Fixed column order: t, angles, speeds, governor and converter power.

    Header is t_s, delta:<dev>..., omega:<dev>..., p_m:<machine>...,
    p_e:<converter>... with devices in case order.
    """
    cols = (["t_s"]
            + [f"delta:{d}" for d in traj.device_ids]
            + [f"omega:{d}" for d in traj.device_ids]
            + [f"p_m:{d}" for d in traj.governed_ids]
            + [f"p_e:{d}" for d in traj.converter_ids])
    data = np.column_stack([traj.t_s, traj.delta, traj.omega,
                            traj.p_m, traj.p_e_conv])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="")
