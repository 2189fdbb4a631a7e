"""Power system case model.

Domain types for buses, branches, synchronous machines, grid-forming
converters and loads, plus JSON (de)serialization, validation and momentum
bookkeeping.  Branch impedances are stored per-unit on the system base;
case files may give them in ohm, in which case they are converted on load
using the from-bus base voltage.

Momentum conventions
--------------------
machine      M = 2 H S_B      [MJ]  (H in s, S_B in MVA)
converter    M = T_a P_ref    [MJ]  (virtual rotor time constant T_a in s)

The system momentum is the plain sum over both kinds; it is the quantity the
estimators in :mod:`gridmomentum.estimator` recover.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

__all__ = [
    "CaseError",
    "Bus",
    "Branch",
    "Governor",
    "Machine",
    "Converter",
    "Load",
    "PowerSystemCase",
    "machine_momentum",
    "converter_momentum",
    "system_momentum",
    "device_parameters",
    "validate_case",
    "case_to_dict",
    "case_from_dict",
    "save_case",
    "load_case",
    "with_converter_momentum",
    "with_inertia_factors",
]

SCHEMA = "gridmomentum-case.v1"


class CaseError(ValueError):
    """Raised for structurally or physically invalid cases."""


@dataclass(frozen=True)
class Bus:
    id: str
    v_base_kv: float


@dataclass(frozen=True)
class Branch:
    """Series branch (line or two-winding transformer), pi model.

    r, x, b are per-unit on the system base.  ``tap`` is the off-nominal
    ratio on the from side (1.0 for lines).
    """

    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    id: str = ""


@dataclass(frozen=True)
class Governor:
    """First-order turbine governor: T_g dP_m/dt = P_m_eq - P_m - (k_g/R) S_B dw."""

    t_g_s: float
    k_g: float = 1.0
    r_droop: float = 0.05

    @property
    def gain_pu(self) -> float:
        """Static speed-to-power gain k_g/R, per-unit on the machine base."""
        return self.k_g / self.r_droop


@dataclass(frozen=True)
class Machine:
    """Classical synchronous machine: constant EMF behind optional reactance."""

    id: str
    bus: str
    h_s: float
    s_b_mva: float
    d_pu: float = 0.0
    p_set_mw: Optional[float] = None   # None for the slack machine
    v_set_pu: float = 1.0
    x_int_pu: float = 0.0              # internal reactance, machine base
    governor: Optional[Governor] = None


@dataclass(frozen=True)
class Converter:
    """Grid-forming converter with a virtual swing equation.

    T_a dw/dt = (1 + eta) P_g - P_e/P_ref - K_d (w_pll - w) - K_w (w - w0)

    all per-unit on P_ref.  Only K_d = 0 is supported (the PLL feedback
    term breaks the unified momentum bookkeeping).
    """

    id: str
    bus: str
    t_a_s: float
    p_ref_mva: float
    k_w_pu: float = 0.0
    k_d_pu: float = 0.0
    p_g_pu: float = 0.0                # dispatch, per-unit of p_ref_mva
    v_set_pu: float = 1.0
    x_int_pu: float = 0.0              # stator/filter reactance, own base
    kind: str = ""


@dataclass(frozen=True)
class Load:
    """Static load, optionally voltage dependent: P = P0 (V/V0)^gamma."""

    id: str
    bus: str
    p_mw: float
    q_mvar: float = 0.0
    v0_kv: Optional[float] = None      # None: bus base voltage
    gamma: float = 0.0


@dataclass(frozen=True)
class PowerSystemCase:
    name: str
    f_nom_hz: float
    s_base_mva: float
    slack: str                         # machine id
    buses: tuple[Bus, ...] = ()
    lines: tuple[Branch, ...] = ()
    transformers: tuple[Branch, ...] = ()
    machines: tuple[Machine, ...] = ()
    converters: tuple[Converter, ...] = ()
    loads: tuple[Load, ...] = ()

    @property
    def omega_s(self) -> float:
        """Synchronous electrical speed, rad/s."""
        return 2.0 * 3.141592653589793 * self.f_nom_hz

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise CaseError(f"unknown bus {bus_id!r}")

    def machine(self, machine_id: str) -> Machine:
        for m in self.machines:
            if m.id == machine_id:
                return m
        raise CaseError(f"unknown machine {machine_id!r}")

    def converter(self, conv_id: str) -> Converter:
        for c in self.converters:
            if c.id == conv_id:
                return c
        raise CaseError(f"unknown converter {conv_id!r}")

    def branches(self) -> tuple[Branch, ...]:
        return self.lines + self.transformers

    def devices(self) -> tuple:
        """Machines followed by converters; the device order used everywhere."""
        return self.machines + self.converters


def device_parameters(case: PowerSystemCase):
    """Per-device dynamic parameters in device order.

    Returns (m_mj, d_mw, governors) where m_mj and d_mw are lists over
    :meth:`PowerSystemCase.devices` (damping normalized by the device
    rating, so d_mw is MW per pu speed deviation) and governors is a
    list of (device_index, t_g_s, gain_mw) triples for the machines
    that have one.
    """
    m_mj, d_mw, governors = [], [], []
    for k, dev in enumerate(case.devices()):
        if isinstance(dev, Machine):
            m_mj.append(machine_momentum(dev))
            d_mw.append(dev.d_pu * dev.s_b_mva)
            if dev.governor is not None:
                governors.append(
                    (k, dev.governor.t_g_s, dev.governor.gain_pu * dev.s_b_mva))
        else:
            m_mj.append(converter_momentum(dev))
            d_mw.append(dev.k_w_pu * dev.p_ref_mva)
    return m_mj, d_mw, governors


# -- momentum bookkeeping ---------------------------------------------------

def machine_momentum(m: Machine) -> float:
    """Machine momentum 2 H S_B in MJ (MW s)."""
    return 2.0 * m.h_s * m.s_b_mva


def converter_momentum(c: Converter) -> float:
    """Converter virtual momentum T_a P_ref in MJ."""
    return c.t_a_s * c.p_ref_mva


def system_momentum(case: PowerSystemCase) -> float:
    """Total momentum of all machines and converters, MJ."""
    return (sum(machine_momentum(m) for m in case.machines)
            + sum(converter_momentum(c) for c in case.converters))


# -- validation ---------------------------------------------------------------

def _connected(case: PowerSystemCase) -> bool:
    if not case.buses:
        return False
    adj: dict[str, set[str]] = {b.id: set() for b in case.buses}
    for br in case.branches():
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen = {case.buses[0].id}
    stack = [case.buses[0].id]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(case.buses)


def validate_case(case: PowerSystemCase) -> None:
    """Raise :class:`CaseError` listing every problem found."""
    errs: list[str] = []
    bus_ids = [b.id for b in case.buses]
    if len(set(bus_ids)) != len(bus_ids):
        errs.append("duplicate bus ids")
    dev_ids = [d.id for d in case.devices()] + [l.id for l in case.loads]
    if len(set(dev_ids)) != len(dev_ids):
        errs.append("duplicate device/load ids")
    if case.s_base_mva <= 0:
        errs.append("s_base_mva must be positive")
    if case.f_nom_hz <= 0:
        errs.append("f_nom_hz must be positive")
    for b in case.buses:
        if b.v_base_kv <= 0:
            errs.append(f"bus {b.id}: v_base_kv must be positive")
    known = set(bus_ids)
    for br in case.branches():
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                errs.append(f"branch {br.from_bus}-{br.to_bus}: unknown bus {end!r}")
        if br.r == 0.0 and br.x == 0.0:
            errs.append(f"branch {br.from_bus}-{br.to_bus}: zero impedance")
        if br.tap <= 0.0:
            errs.append(f"branch {br.from_bus}-{br.to_bus}: tap must be positive")
    if not case.machines:
        errs.append("case has no machines")
    for m in case.machines:
        if m.bus not in known:
            errs.append(f"machine {m.id}: unknown bus {m.bus!r}")
        if m.h_s <= 0:
            errs.append(f"machine {m.id}: H must be positive")
        if m.s_b_mva <= 0:
            errs.append(f"machine {m.id}: S_B must be positive")
        if m.d_pu < 0:
            errs.append(f"machine {m.id}: D must be nonnegative")
        if m.governor is not None and m.governor.t_g_s <= 0:
            errs.append(f"machine {m.id}: governor T_g must be positive")
        if m.governor is not None and m.governor.r_droop <= 0:
            errs.append(f"machine {m.id}: governor droop must be positive")
        if m.x_int_pu < 0:
            errs.append(f"machine {m.id}: x_int must be nonnegative")
    for c in case.converters:
        if c.bus not in known:
            errs.append(f"converter {c.id}: unknown bus {c.bus!r}")
        if c.t_a_s <= 0:
            errs.append(f"converter {c.id}: T_a must be positive")
        if c.p_ref_mva <= 0:
            errs.append(f"converter {c.id}: P_ref must be positive")
        if c.k_d_pu != 0.0:
            errs.append(f"converter {c.id}: only K_d = 0 is supported")
        if c.k_w_pu < 0:
            errs.append(f"converter {c.id}: K_w must be nonnegative")
    slack_found = any(m.id == case.slack for m in case.machines)
    if not slack_found:
        errs.append(f"slack machine {case.slack!r} not found")
    for m in case.machines:
        if m.id != case.slack and m.p_set_mw is None:
            errs.append(f"machine {m.id}: p_set_mw required (not slack)")
    for l in case.loads:
        if l.bus not in known:
            errs.append(f"load {l.id}: unknown bus {l.bus!r}")
        if l.p_mw < 0:
            errs.append(f"load {l.id}: negative p_mw unsupported")
        if l.v0_kv is not None and l.v0_kv <= 0:
            errs.append(f"load {l.id}: v0_kv must be positive")
    # one ideal (zero internal impedance) voltage source pins a bus voltage;
    # two on the same bus would be inconsistent
    pinned: set[str] = set()
    for d in case.devices():
        if d.x_int_pu == 0.0:
            if d.bus in pinned:
                errs.append(f"bus {d.bus}: more than one zero-impedance device")
            pinned.add(d.bus)
    if case.buses and not _connected(case):
        errs.append("network is not connected")
    if errs:
        raise CaseError("; ".join(errs))


# -- JSON ---------------------------------------------------------------------

def _branch_to_dict(br: Branch) -> dict:
    d = {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b}
    if br.tap != 1.0:
        d["tap"] = br.tap
    if br.id:
        d["id"] = br.id
    return d


def _branch_from_dict(d: dict, v_base: dict[str, float], s_base: float) -> Branch:
    unit = d.get("unit", "pu")
    r, x, b = float(d["r"]), float(d["x"]), float(d.get("b", 0.0))
    if unit == "ohm":
        z_base = v_base[d["from"]] ** 2 / s_base
        r, x, b = r / z_base, x / z_base, b * z_base
    elif unit != "pu":
        raise CaseError(f"branch unit {unit!r} not recognized (pu or ohm)")
    return Branch(from_bus=d["from"], to_bus=d["to"], r=r, x=x, b=b,
                  tap=float(d.get("tap", 1.0)), id=d.get("id", ""))


def case_to_dict(case: PowerSystemCase) -> dict:
    def gov(g: Optional[Governor]):
        if g is None:
            return None
        return {"t_g_s": g.t_g_s, "k_g": g.k_g, "r_droop": g.r_droop}

    return {
        "schema": SCHEMA,
        "name": case.name,
        "f_nom_hz": case.f_nom_hz,
        "s_base_mva": case.s_base_mva,
        "slack": case.slack,
        "buses": [{"id": b.id, "v_base_kv": b.v_base_kv} for b in case.buses],
        "lines": [_branch_to_dict(br) for br in case.lines],
        "transformers": [_branch_to_dict(br) for br in case.transformers],
        "machines": [
            {"id": m.id, "bus": m.bus, "h_s": m.h_s, "s_b_mva": m.s_b_mva,
             "d_pu": m.d_pu, "p_set_mw": m.p_set_mw, "v_set_pu": m.v_set_pu,
             "x_int_pu": m.x_int_pu, "governor": gov(m.governor)}
            for m in case.machines
        ],
        "converters": [
            {"id": c.id, "bus": c.bus, "t_a_s": c.t_a_s,
             "p_ref_mva": c.p_ref_mva, "k_w_pu": c.k_w_pu, "k_d_pu": c.k_d_pu,
             "p_g_pu": c.p_g_pu, "v_set_pu": c.v_set_pu,
             "x_int_pu": c.x_int_pu, "kind": c.kind}
            for c in case.converters
        ],
        "loads": [
            {"id": l.id, "bus": l.bus, "p_mw": l.p_mw, "q_mvar": l.q_mvar,
             "v0_kv": l.v0_kv, "gamma": l.gamma}
            for l in case.loads
        ],
    }


def case_from_dict(d: dict) -> PowerSystemCase:
    if d.get("schema") != SCHEMA:
        raise CaseError(f"unsupported case schema {d.get('schema')!r}")
    v_base = {b["id"]: float(b["v_base_kv"]) for b in d["buses"]}
    s_base = float(d["s_base_mva"])

    def gov(g):
        if g is None:
            return None
        return Governor(t_g_s=float(g["t_g_s"]), k_g=float(g.get("k_g", 1.0)),
                        r_droop=float(g.get("r_droop", 0.05)))

    case = PowerSystemCase(
        name=d["name"],
        f_nom_hz=float(d["f_nom_hz"]),
        s_base_mva=s_base,
        slack=d["slack"],
        buses=tuple(Bus(id=b["id"], v_base_kv=float(b["v_base_kv"]))
                    for b in d["buses"]),
        lines=tuple(_branch_from_dict(br, v_base, s_base)
                    for br in d.get("lines", [])),
        transformers=tuple(_branch_from_dict(br, v_base, s_base)
                           for br in d.get("transformers", [])),
        machines=tuple(
            Machine(id=m["id"], bus=m["bus"], h_s=float(m["h_s"]),
                    s_b_mva=float(m["s_b_mva"]), d_pu=float(m.get("d_pu", 0.0)),
                    p_set_mw=(None if m.get("p_set_mw") is None
                              else float(m["p_set_mw"])),
                    v_set_pu=float(m.get("v_set_pu", 1.0)),
                    x_int_pu=float(m.get("x_int_pu", 0.0)),
                    governor=gov(m.get("governor")))
            for m in d.get("machines", [])),
        converters=tuple(
            Converter(id=c["id"], bus=c["bus"], t_a_s=float(c["t_a_s"]),
                      p_ref_mva=float(c["p_ref_mva"]),
                      k_w_pu=float(c.get("k_w_pu", 0.0)),
                      k_d_pu=float(c.get("k_d_pu", 0.0)),
                      p_g_pu=float(c.get("p_g_pu", 0.0)),
                      v_set_pu=float(c.get("v_set_pu", 1.0)),
                      x_int_pu=float(c.get("x_int_pu", 0.0)),
                      kind=c.get("kind", ""))
            for c in d.get("converters", [])),
        loads=tuple(
            Load(id=l["id"], bus=l["bus"], p_mw=float(l["p_mw"]),
                 q_mvar=float(l.get("q_mvar", 0.0)),
                 v0_kv=(None if l.get("v0_kv") is None else float(l["v0_kv"])),
                 gamma=float(l.get("gamma", 0.0)))
            for l in d.get("loads", [])),
    )
    validate_case(case)
    return case


def save_case(case: PowerSystemCase, path) -> None:
    """Write a case file.  Floats keep full precision (repr round trip)."""
    with open(path, "w") as fh:
        json.dump(case_to_dict(case), fh, indent=1)
        fh.write("\n")


def load_case(path) -> PowerSystemCase:
    with open(path) as fh:
        return case_from_dict(json.load(fh))


# -- copy-with-modification helpers ------------------------------------------

def with_converter_momentum(case: PowerSystemCase, conv_id: str,
                            extra_mj: float) -> PowerSystemCase:
    """Return a copy with ``extra_mj`` added to one converter's momentum.

    Implemented by raising the virtual rotor time constant T_a by
    extra_mj / P_ref, which leaves the power flow solution untouched.
    """
    conv = case.converter(conv_id)
    new = replace(conv, t_a_s=conv.t_a_s + extra_mj / conv.p_ref_mva)
    if new.t_a_s <= 0.0:
        raise CaseError(f"converter {conv_id}: momentum override makes T_a nonpositive")
    return replace(case, converters=tuple(
        new if c.id == conv_id else c for c in case.converters))


def with_inertia_factors(case: PowerSystemCase,
                         machine_factors: dict[str, float] | None = None,
                         converter_factors: dict[str, float] | None = None,
                         ) -> PowerSystemCase:
    """Return a copy with machine H (and/or converter T_a) scaled per id."""
    mf = machine_factors or {}
    cf = converter_factors or {}
    machines = tuple(
        replace(m, h_s=m.h_s * mf[m.id]) if m.id in mf else m
        for m in case.machines)
    converters = tuple(
        replace(c, t_a_s=c.t_a_s * cf[c.id]) if c.id in cf else c
        for c in case.converters)
    return replace(case, machines=machines, converters=converters)
