"""Small-signal model: state matrix, null space, frequency responses.

State vector x = [delta (rad), omega (pu deviation), P_m (MW)] with one
angle and one speed state per device (machines then converters) and one
mechanical-power state per governed machine:

    d(delta)/dt = Omega * omega
    M d(omega)/dt = -Pi delta - D omega + S P_m + (power inputs, MW)
    T_g d(P_m)/dt = -P_m - gain * omega_at_machine

M in MJ, D and governor gains in MW per pu speed, Pi in MW/rad.  The
angle Jacobian of the reduced network is symmetrized into a Laplacian
(average of the mirrored couplings, diagonal rebuilt from row sums);
with network losses the raw Jacobian is slightly asymmetric and is kept
available for comparison.  Pi 1 = 0 either way, so A has the rigid
angle-shift null vector u1 and a matching left null vector v1 built
from Theta = D + gain.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .cases import PowerSystemCase, device_parameters, system_momentum
from .powerflow import Equilibrium, equilibrium

__all__ = [
    "LinearModel",
    "NullSpaceData",
    "FrequencySamples",
    "assemble_state_matrix",
    "laplacian_symmetrize",
    "linearize",
    "null_space",
    "project_disturbance",
    "frequency_response",
    "principal_response",
    "coi_average",
    "write_frequency_csv",
    "read_frequency_csv",
]

FREQ_CSV_SCHEMA = "gridmomentum-freqscan.v1"
MIN_SCAN_HZ = 1e-5     # below this the AC solve approaches the zero mode


def laplacian_symmetrize(pi: np.ndarray) -> np.ndarray:
    """Symmetric Laplacian closest to the raw angle Jacobian.

    Off-diagonal couplings are averaged with their mirror images and
    the diagonal is rebuilt so rows sum to zero exactly.
    """
    sym = 0.5 * (pi + pi.T)
    np.fill_diagonal(sym, 0.0)
    np.fill_diagonal(sym, -sym.sum(axis=1))
    return sym


def assemble_state_matrix(m_mj, d_mw, pi, omega_rad_s,
                          gov_index=(), t_g_s=(), gain_mw=()) -> np.ndarray:
    """State matrix from explicit device parameters.

    Exists separately from :func:`linearize` so a model can be built
    from externally supplied couplings (e.g. closed-form two-machine
    coefficients) through the exact same assembly path.
    """
    m = np.asarray(m_mj, dtype=float)
    d = np.asarray(d_mw, dtype=float)
    pi = np.asarray(pi, dtype=float)
    gov_index = np.asarray(gov_index, dtype=int)
    t_g_s = np.asarray(t_g_s, dtype=float)
    gain_mw = np.asarray(gain_mw, dtype=float)
    n = m.size
    ng = gov_index.size
    a = np.zeros((2 * n + ng, 2 * n + ng))
    a[:n, n:2 * n] = omega_rad_s * np.eye(n)
    a[n:2 * n, :n] = -pi / m[:, None]
    a[n:2 * n, n:2 * n] = np.diag(-d / m)
    for k, (idx, tg, gain) in enumerate(zip(gov_index, t_g_s, gain_mw)):
        a[n + idx, 2 * n + k] = 1.0 / m[idx]
        a[2 * n + k, n + idx] = -gain / tg
        a[2 * n + k, 2 * n + k] = -1.0 / tg
    return a


@dataclasses.dataclass(frozen=True)
class LinearModel:
    case: PowerSystemCase
    eq: Equilibrium
    a: np.ndarray
    pi: np.ndarray           # symmetrized, used in a
    pi_raw: np.ndarray       # analytic Jacobian before symmetrization
    m_mj: np.ndarray
    d_mw: np.ndarray
    gov_index: np.ndarray
    t_g_s: np.ndarray
    gain_mw: np.ndarray
    device_ids: tuple

    @property
    def n_devices(self) -> int:
        return self.m_mj.size

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def omega_slice(self) -> slice:
        return slice(self.n_devices, 2 * self.n_devices)

    def input_column(self, label: str) -> np.ndarray:
        """State-space input column for a named scalar input.

        ``probe:<converter>`` is the dimensionless grid-forming power
        modulation (P_g P_ref MW per unit), ``load:<load>`` the relative
        conductance fluctuation of one load, ``power:<device>`` a plain
        1 MW injection at a device.
        """
        kind, _, name = label.partition(":")
        n = self.n_devices
        col = np.zeros(self.n_states)
        if kind == "probe":
            c = self.case.converter(name)
            k = self.device_ids.index(name)
            col[n + k] = c.p_g_pu * c.p_ref_mva / self.m_mj[k]
        elif kind == "power":
            k = self.device_ids.index(name)
            col[n + k] = 1.0 / self.m_mj[k]
        elif kind == "load":
            sens = self.eq.net.load_sensitivity(self.eq.delta)
            l = self.eq.net.load_ids.index(name)
            col[n:2 * n] = -sens[:, l] / self.m_mj
        else:
            raise ValueError(f"unknown input label {label!r}")
        return col


def linearize(case: PowerSystemCase, eq: Equilibrium | None = None,
              symmetrize: bool = True,
              pi_override: np.ndarray | None = None) -> LinearModel:
    """Linearize the swing/governor dynamics at the equilibrium.

    ``pi_override`` replaces the network-derived angle Jacobian, which
    lets externally supplied couplings (closed-form coefficients) run
    through the identical assembly and scan machinery.
    """
    if eq is None:
        eq = equilibrium(case)
    m_mj, d_mw, governors = device_parameters(case)
    _, pi_raw = eq.net.power_and_jacobian(eq.delta)
    if pi_override is not None:
        pi = np.asarray(pi_override, dtype=float)
    else:
        pi = laplacian_symmetrize(pi_raw) if symmetrize else pi_raw
    gov_index = [g[0] for g in governors]
    t_g_s = [g[1] for g in governors]
    gain_mw = [g[2] for g in governors]
    a = assemble_state_matrix(m_mj, d_mw, pi, case.omega_s,
                              gov_index, t_g_s, gain_mw)
    return LinearModel(
        case=case, eq=eq, a=a, pi=pi, pi_raw=pi_raw,
        m_mj=np.asarray(m_mj), d_mw=np.asarray(d_mw),
        gov_index=np.asarray(gov_index, dtype=int),
        t_g_s=np.asarray(t_g_s), gain_mw=np.asarray(gain_mw),
        device_ids=tuple(d.id for d in case.devices()))


@dataclasses.dataclass(frozen=True)
class NullSpaceData:
    """Rigid angle-shift mode of the state matrix.

    u1 spans ker(A); v1 spans ker(A^T), normalized so v1.u1 = 1.
    theta_mw is the diagonal of Theta = D + governor gain per device.
    """

    u1: np.ndarray
    v1: np.ndarray
    theta_mw: np.ndarray


def null_space(model: LinearModel) -> NullSpaceData:
    n = model.n_devices
    theta = model.d_mw.copy()
    theta[model.gov_index] += model.gain_mw
    total = theta.sum()
    if total <= 0.0:
        raise ValueError("undamped, ungoverned system: "
                         "the shift mode is not isolated")
    u1 = np.zeros(model.n_states)
    u1[:n] = 1.0
    omega = model.case.omega_s
    v1 = np.concatenate([theta / omega, model.m_mj, model.t_g_s])
    v1 *= omega / total
    return NullSpaceData(u1=u1, v1=v1, theta_mw=theta)


def project_disturbance(nsd: NullSpaceData, b, model: LinearModel):
    """Split a disturbance into the common angle shift and the rest.

    ``b`` is either a per-device power vector in MW or a full state-space
    disturbance vector.  Returns (common, residual, alpha_rate): the
    coefficient of the u1 direction, the state-space remainder, and the
    shift rate of the common angle in rad/s (equal to ``common``; kept
    separate as the named physical quantity).  v1 . residual = 0.
    """
    b = np.asarray(b, dtype=float)
    n = model.n_devices
    if b.size == n:
        full = np.zeros(model.n_states)
        full[n:2 * n] = b / model.m_mj
    elif b.size == model.n_states:
        full = b
    else:
        raise ValueError("disturbance must be per-device or per-state")
    common = float(nsd.v1 @ full)
    residual = full - common * nsd.u1
    return common, residual, common


def coi_average(m_mj, omega):
    """Momentum-weighted average speed (center of inertia).

    omega has device axis first; works for single vectors and for
    (n_devices, nt) trajectories.
    """
    m = np.asarray(m_mj, dtype=float)
    w = np.asarray(omega, dtype=float)
    return np.tensordot(m, w, axes=(0, 0)) / m.sum()


@dataclasses.dataclass(frozen=True)
class FrequencySamples:
    """Complex response samples on an ascending frequency grid.

    ``h`` has one row per output; rows are labeled by ``outputs``.
    ``max_condition`` records the worst conditioning met in the solves.
    """

    f_hz: np.ndarray
    h: np.ndarray
    outputs: tuple
    input_label: str
    note: str = ""
    max_condition: float = float("nan")

    def __post_init__(self):
        if np.any(np.diff(self.f_hz) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("non-finite response samples")

    def output(self, name: str) -> np.ndarray:
        return self.h[self.outputs.index(name)]


def frequency_response(model: LinearModel, input_label,
                       f_hz) -> FrequencySamples:
    """Exact AC scan: solve (j 2 pi f I - A) x = b per frequency.

    ``input_label`` may also be a ready-made input column vector.
    """
    f_hz = np.asarray(f_hz, dtype=float)
    if np.any(f_hz < MIN_SCAN_HZ):
        raise ValueError(f"scan frequencies must be >= {MIN_SCAN_HZ} Hz")
    if isinstance(input_label, str):
        b = model.input_column(input_label)
        label = input_label
    else:
        b = np.asarray(input_label, dtype=float)
        label = "custom"
    n = model.n_devices
    eye = np.eye(model.n_states)
    h = np.empty((n, f_hz.size), dtype=complex)
    worst = 0.0
    for i, f in enumerate(f_hz):
        lhs = 2j * np.pi * f * eye - model.a
        x = np.linalg.solve(lhs, b.astype(complex))
        h[:, i] = x[model.omega_slice]
        worst = max(worst, np.linalg.cond(lhs))
    return FrequencySamples(
        f_hz=f_hz, h=h, outputs=model.device_ids, input_label=label,
        note="speed response, pu per unit input", max_condition=worst)


def principal_response(case: PowerSystemCase, f_hz,
                       power_mw: float = 1.0) -> FrequencySamples:
    """Aggregate single-node response shared by all devices at low f.

    H(s) = P / (s G_M + sum D + sum gain_k/(s T_gk + 1)) with the total
    momentum G_M; the full governor sum is kept instead of an equivalent
    single lag.  DC value P / sum(Theta).
    """
    f_hz = np.asarray(f_hz, dtype=float)
    m_mj, d_mw, governors = device_parameters(case)
    s = 2j * np.pi * f_hz
    den = s * system_momentum(case) + np.sum(d_mw)
    for _, tg, gain in governors:
        den = den + gain / (s * tg + 1.0)
    h = (power_mw / den)[None, :]
    return FrequencySamples(
        f_hz=f_hz, h=h, outputs=("aggregate",),
        input_label=f"power:{power_mw}MW",
        note="momentum-aggregate speed response, pu")


def write_frequency_csv(fs: FrequencySamples, path, output=None) -> None:
    """One output as CSV: f_hz, re, im, mag2, phase_rad."""
    if output is None:
        if len(fs.outputs) != 1:
            raise ValueError("output must be named for multi-output samples")
        output = fs.outputs[0]
    h = fs.output(output)
    table = np.column_stack([fs.f_hz, h.real, h.imag,
                             np.abs(h) ** 2, np.angle(h)])
    np.savetxt(path, table, delimiter=",",
               header=(f"{FREQ_CSV_SCHEMA} input={fs.input_label} "
                       f"output={output}\nf_hz,re,im,mag2,phase_rad"),
               comments="# ")


def read_frequency_csv(path):
    """Read back (f_hz, complex response) written by write_frequency_csv."""
    with open(path) as fh:
        first = fh.readline()
    if FREQ_CSV_SCHEMA not in first:
        raise ValueError(f"not a {FREQ_CSV_SCHEMA} file: {path}")
    data = np.loadtxt(path, delimiter=",", comments="#")
    return data[:, 0], data[:, 1] + 1j * data[:, 2]
