"""AC power flow, network reduction and equilibrium construction.

The power flow is a full Newton-Raphson in polar coordinates on the
nodal admittance matrix.  Loads may be voltage dependent in active power,
P = P0 (V/V0)^gamma; reactive power is held constant.  After the solve,
loads are converted to constant shunt admittances at the solution voltage,
device internal nodes are added (when the internal reactance is nonzero)
and the network is reduced to the device nodes by Kron elimination.  The
:class:`ReducedNetwork` returned with the equilibrium evaluates electrical
power, its angle Jacobian, and load-conductance sensitivities; it is the
single network backend used by the simulator and the linearized model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cases import PowerSystemCase, CaseError

__all__ = [
    "PowerFlowError",
    "PowerFlowResult",
    "build_ybus",
    "solve_powerflow",
    "kron_reduce",
    "ReducedNetwork",
    "Equilibrium",
    "equilibrium",
]


class PowerFlowError(RuntimeError):
    """Newton iteration failed to converge."""


def build_ybus(case: PowerSystemCase) -> tuple[np.ndarray, dict[str, int]]:
    """Nodal admittance matrix (pu) and bus-id to index map.

    Off-nominal taps follow the usual pi convention with the tap on the
    from side; without phase shifters the matrix is symmetric.
    """
    idx = {b.id: k for k, b in enumerate(case.buses)}
    n = len(case.buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in case.branches():
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        a = br.tap
        Y[f, f] += (y + ysh) / (a * a)
        Y[t, t] += y + ysh
        Y[f, t] += -y / a
        Y[t, f] += -y / a
    return Y, idx


@dataclass
class PowerFlowResult:
    bus_ids: list[str]
    v: np.ndarray                       # complex bus voltages, pu
    n_iter: int
    mismatch: float                     # final max |pu| mismatch
    p_device_mw: dict[str, float]       # net active output per device
    q_device_mvar: dict[str, float]
    p_load_mw: dict[str, float]         # solved load powers (gamma applied)

    def v_at(self, bus_id: str) -> complex:
        return self.v[self.bus_ids.index(bus_id)]


def _load_p_pu(case, vm, idx):
    """Active load per bus (pu) at voltage vm, and its d/dVm diagonal."""
    n = len(vm)
    p = np.zeros(n)
    dp_dv = np.zeros(n)
    sb = case.s_base_mva
    for l in case.loads:
        k = idx[l.bus]
        v0 = 1.0 if l.v0_kv is None else l.v0_kv / case.bus(l.bus).v_base_kv
        ratio = vm[k] / v0
        p_l = l.p_mw / sb * ratio ** l.gamma
        p[k] += p_l
        if l.gamma != 0.0:
            dp_dv[k] += l.gamma * p_l / vm[k]
    return p, dp_dv


def solve_powerflow(case: PowerSystemCase, tol: float = 1e-10,
                    max_iter: int = 50) -> PowerFlowResult:
    """Newton-Raphson power flow from a flat start.

    Raises
    ------
    PowerFlowError
        if the mismatch does not drop below ``tol`` (pu) in ``max_iter``
        iterations.
    """
    Y, idx = build_ybus(case)
    n = len(case.buses)
    sb = case.s_base_mva

    slack_bus = idx[case.machine(case.slack).bus]
    vset = np.full(n, np.nan)
    p_gen = np.zeros(n)
    for m in case.machines:
        k = idx[m.bus]
        if m.id != case.slack:
            p_gen[k] += m.p_set_mw / sb
        if not np.isnan(vset[k]) and vset[k] != m.v_set_pu:
            raise CaseError(f"bus {m.bus}: conflicting voltage set-points")
        vset[k] = m.v_set_pu
    for c in case.converters:
        k = idx[c.bus]
        p_gen[k] += c.p_g_pu * c.p_ref_mva / sb
        if not np.isnan(vset[k]) and vset[k] != c.v_set_pu:
            raise CaseError(f"bus {c.bus}: conflicting voltage set-points")
        vset[k] = c.v_set_pu

    q_load = np.zeros(n)
    for l in case.loads:
        q_load[idx[l.bus]] += l.q_mvar / sb

    is_gen = ~np.isnan(vset)
    pv = np.flatnonzero(is_gen & (np.arange(n) != slack_bus))
    pq = np.flatnonzero(~is_gen)
    pvpq = np.concatenate([pv, pq])

    vm = np.where(is_gen, vset, 1.0)
    va = np.zeros(n)

    for it in range(max_iter + 1):
        v = vm * np.exp(1j * va)
        ibus = Y @ v
        s = v * np.conj(ibus)
        p_load, dpl_dv = _load_p_pu(case, vm, idx)
        # residuals: calculated injection minus specified injection
        rp = s.real - (p_gen - p_load)
        rq = s.imag - (-q_load)
        r = np.concatenate([rp[pvpq], rq[pq]])
        mism = np.max(np.abs(r)) if r.size else 0.0
        if mism < tol:
            break
        if it == max_iter:
            raise PowerFlowError(
                f"power flow did not converge in {max_iter} iterations "
                f"(mismatch {mism:.3e} pu)")
        # dS/dVa, dS/dVm (dense complex forms)
        dv = np.diag(v)
        di = np.diag(ibus)
        ds_dva = 1j * dv @ np.conj(di - Y @ dv)
        dvnorm = np.diag(v / vm)
        ds_dvm = dvnorm @ np.conj(di) + dv @ np.conj(Y @ dvnorm)
        j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
        j12 = ds_dvm.real[np.ix_(pvpq, pq)] + np.diag(dpl_dv)[np.ix_(pvpq, pq)]
        j21 = ds_dva.imag[np.ix_(pq, pvpq)]
        j22 = ds_dvm.imag[np.ix_(pq, pq)]
        J = np.block([[j11, j12], [j21, j22]])
        dx = np.linalg.solve(J, -r)
        va[pvpq] += dx[:pvpq.size]
        vm[pq] += dx[pvpq.size:]

    v = vm * np.exp(1j * va)
    s = v * np.conj(Y @ v)
    p_load, _ = _load_p_pu(case, vm, idx)

    p_dev: dict[str, float] = {}
    q_dev: dict[str, float] = {}
    # net generation at a bus = injection + local load
    for m in case.machines:
        k = idx[m.bus]
        if m.id == case.slack:
            p_dev[m.id] = (s.real[k] + p_load[k]) * sb
        else:
            p_dev[m.id] = m.p_set_mw
        q_dev[m.id] = (s.imag[k] + q_load[k]) * sb
    for c in case.converters:
        k = idx[c.bus]
        p_dev[c.id] = c.p_g_pu * c.p_ref_mva
        q_dev[c.id] = (s.imag[k] + q_load[k]) * sb

    p_load_mw = {}
    for l in case.loads:
        k = idx[l.bus]
        v0 = 1.0 if l.v0_kv is None else l.v0_kv / case.bus(l.bus).v_base_kv
        p_load_mw[l.id] = l.p_mw * (vm[k] / v0) ** l.gamma

    return PowerFlowResult(bus_ids=[b.id for b in case.buses], v=v,
                           n_iter=it, mismatch=mism, p_device_mw=p_dev,
                           q_device_mvar=q_dev, p_load_mw=p_load_mw)


def kron_reduce(Y: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Eliminate all nodes not in ``keep``: Ykk - Yke Yee^-1 Yek."""
    keep = np.asarray(keep)
    drop = np.setdiff1d(np.arange(Y.shape[0]), keep)
    if drop.size == 0:
        return Y[np.ix_(keep, keep)].copy()
    Ykk = Y[np.ix_(keep, keep)]
    Yke = Y[np.ix_(keep, drop)]
    Yek = Y[np.ix_(drop, keep)]
    Yee = Y[np.ix_(drop, drop)]
    return Ykk - Yke @ np.linalg.solve(Yee, Yek)


@dataclass
class ReducedNetwork:
    """Device-node network after load conversion and Kron elimination.

    Device order is machines followed by converters (case.devices()).
    ``eta`` arguments are per-load relative conductance deviations in the
    order of ``load_ids``; the admittance of load l is
    (1 + eta_l) G_l0 + j B_l0.
    """

    device_ids: list[str]
    load_ids: list[str]
    e_int: np.ndarray                   # internal EMF magnitudes, pu
    s_base_mva: float
    # partitioned admittances with eta = 0 load shunts included
    y_gg: np.ndarray
    y_gl: np.ndarray
    y_lg: np.ndarray
    y_ll: np.ndarray
    g_load: np.ndarray                  # base conductance per load, pu
    load_part: list[tuple[str, int]]    # ('G'|'L', partition index) per load
    _y_red0: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_dev(self) -> int:
        return len(self.device_ids)

    def reduced_y(self, eta: np.ndarray | None = None) -> np.ndarray:
        """Reduced device-node admittance for a load-noise vector."""
        if eta is None:
            if self._y_red0 is None:
                self._y_red0 = self._build(np.zeros(len(self.load_ids)))
            return self._y_red0
        return self._build(np.asarray(eta, dtype=float))

    def _build(self, eta: np.ndarray) -> np.ndarray:
        ygg = self.y_gg.copy()
        yll = self.y_ll.copy()
        for l, (part, k) in enumerate(self.load_part):
            if eta[l] == 0.0:
                continue
            if part == "G":
                ygg[k, k] += eta[l] * self.g_load[l]
            else:
                yll[k, k] += eta[l] * self.g_load[l]
        if yll.shape[0] == 0:
            return ygg
        return ygg - self.y_gl @ np.linalg.solve(yll, self.y_lg)

    def electrical_power(self, delta: np.ndarray,
                         y_red: np.ndarray | None = None) -> np.ndarray:
        """Device electrical powers in MW at internal angles ``delta``."""
        if y_red is None:
            y_red = self.reduced_y()
        e = self.e_int * np.exp(1j * delta)
        return (e * np.conj(y_red @ e)).real * self.s_base_mva

    def power_and_jacobian(self, delta: np.ndarray,
                           y_red: np.ndarray | None = None
                           ) -> tuple[np.ndarray, np.ndarray]:
        """P_e (MW) and its angle Jacobian (MW/rad).

        The Jacobian rows sum to zero exactly; it is symmetric when the
        reduced network is lossless.
        """
        if y_red is None:
            y_red = self.reduced_y()
        g, b = y_red.real, y_red.imag
        dd = np.subtract.outer(delta, delta)
        ee = np.outer(self.e_int, self.e_int)
        k = ee * (g * np.sin(dd) - b * np.cos(dd))
        np.fill_diagonal(k, 0.0)
        pi = k - np.diag(k.sum(axis=1))
        e = self.e_int * np.exp(1j * delta)
        pe = (e * np.conj(y_red @ e)).real * self.s_base_mva
        return pe, pi * self.s_base_mva

    def load_sensitivity(self, delta: np.ndarray) -> np.ndarray:
        """d P_e / d eta_l at eta = 0: (n_dev, n_load) in MW per unit eta."""
        e = self.e_int * np.exp(1j * delta)
        n_l = len(self.load_ids)
        out = np.zeros((self.n_dev, n_l))
        if self.y_ll.shape[0]:
            w = np.linalg.solve(self.y_ll, self.y_lg)   # (n_elim, n_dev)
        for l, (part, k) in enumerate(self.load_part):
            if part == "G":
                dy_e = np.zeros(self.n_dev, dtype=complex)
                dy_e[k] = self.g_load[l] * e[k]
            else:
                # dY_red = g_l * outer(w[k], w[k])  (symmetric Ybus)
                dy_e = self.g_load[l] * w[k] * (w[k] @ e)
            out[:, l] = (e * np.conj(dy_e)).real * self.s_base_mva
        return out

    def terminal_phasors(self, delta: np.ndarray,
                         y_red: np.ndarray | None = None
                         ) -> tuple[np.ndarray, np.ndarray]:
        """Internal voltage and injected current phasors (pu, sync frame)."""
        if y_red is None:
            y_red = self.reduced_y()
        e = self.e_int * np.exp(1j * delta)
        return e, y_red @ e


@dataclass
class Equilibrium:
    case: PowerSystemCase
    pf: PowerFlowResult
    net: ReducedNetwork
    delta: np.ndarray                   # internal angles, rad
    p_eq_mw: np.ndarray                 # device electrical power at t = 0
    residual_mw: float                  # max |P_e(delta) - p_eq|

    def device_index(self, dev_id: str) -> int:
        return self.net.device_ids.index(dev_id)


def equilibrium(case: PowerSystemCase, pf: PowerFlowResult | None = None,
                ) -> Equilibrium:
    """Construct the dynamic equilibrium from a power flow solution.

    Loads become constant shunts at the solution voltage (their active
    conductance is the part modulated by load noise); devices with a
    nonzero internal reactance get an internal node behind it, devices
    with zero reactance keep the bus node as their internal node.
    """
    if pf is None:
        pf = solve_powerflow(case)
    Y, idx = build_ybus(case)
    n = len(case.buses)
    sb = case.s_base_mva
    v = pf.v

    # load shunts at the solution voltage
    load_ids, g_load, load_bus = [], [], []
    for l in case.loads:
        k = idx[l.bus]
        p_pu = pf.p_load_mw[l.id] / sb
        q_pu = l.q_mvar / sb
        y_l = (p_pu - 1j * q_pu) / abs(v[k]) ** 2
        Y[k, k] += y_l
        load_ids.append(l.id)
        g_load.append(p_pu / abs(v[k]) ** 2)
        load_bus.append(k)

    devices = case.devices()
    n_int = sum(1 for d in devices if d.x_int_pu > 0.0)
    Ya = np.zeros((n + n_int, n + n_int), dtype=complex)
    Ya[:n, :n] = Y

    node = np.empty(len(devices), dtype=int)
    e_int = np.empty(len(devices))
    delta = np.empty(len(devices))
    p_eq = np.empty(len(devices))
    nxt = n
    for j, d in enumerate(devices):
        k = idx[d.bus]
        rating = d.s_b_mva if hasattr(d, "s_b_mva") else d.p_ref_mva
        p_mw = pf.p_device_mw[d.id]
        q_mvar = pf.q_device_mvar[d.id]
        p_eq[j] = p_mw
        if d.x_int_pu > 0.0:
            x_sys = d.x_int_pu * sb / rating
            i_dev = np.conj((p_mw + 1j * q_mvar) / sb / v[k])
            e_ph = v[k] + 1j * x_sys * i_dev
            y_int = 1.0 / (1j * x_sys)
            Ya[nxt, nxt] += y_int
            Ya[k, k] += y_int
            Ya[nxt, k] -= y_int
            Ya[k, nxt] -= y_int
            node[j] = nxt
            nxt += 1
        else:
            e_ph = v[k]
            node[j] = k
        e_int[j] = abs(e_ph)
        delta[j] = np.angle(e_ph)

    keep = node
    drop = np.setdiff1d(np.arange(n + n_int), keep)
    # map each load to its partition
    load_part: list[tuple[str, int]] = []
    keep_pos = {b: p for p, b in enumerate(keep)}
    drop_pos = {b: p for p, b in enumerate(drop)}
    for k in load_bus:
        if k in keep_pos:
            load_part.append(("G", keep_pos[k]))
        else:
            load_part.append(("L", drop_pos[k]))

    net = ReducedNetwork(
        device_ids=[d.id for d in devices],
        load_ids=load_ids,
        e_int=e_int,
        s_base_mva=sb,
        y_gg=Ya[np.ix_(keep, keep)],
        y_gl=Ya[np.ix_(keep, drop)],
        y_lg=Ya[np.ix_(drop, keep)],
        y_ll=Ya[np.ix_(drop, drop)],
        g_load=np.asarray(g_load),
        load_part=load_part,
    )
    pe = net.electrical_power(delta)
    residual = float(np.max(np.abs(pe - p_eq))) if len(devices) else 0.0
    if residual > 1e-4 * sb:
        raise PowerFlowError(
            f"equilibrium inconsistent: max power residual {residual:.3e} MW")
    return Equilibrium(case=case, pf=pf, net=net, delta=delta,
                       p_eq_mw=p_eq, residual_mw=residual)
