"""Bundled study cases.

Three families:

* ``two_machine``: the two-machine system used to validate the closed-form
  transfer functions.  100 MVA / 100 kV / 50 Hz base, both machines ideal
  voltage sources (zero internal impedance), a single r = x = 0.001 pu line,
  and a 90 MW resistive load at bus 1.  The slack machine G1 carries a slow
  first-order governor (T_g = 50 s, static gain 50 pu); G2 is dispatched at
  50 MW without a governor.  The power flow reproduces the 40 / 50 MW
  dispatch (exactly so in the lossless variant).  System momentum 1300 MJ.

* ``two_machine_conv``: same grid plus a small grid-forming converter on a
  third bus, for fast converter-path tests.  Momentum 1300 + 500 MJ.

* ``ieee39``: classical-model rendition of the New England 39-bus system.
  Network data (lines, transformers, loads, dispatch, voltage set-points)
  are the standard published tables on a 100 MVA base; all buses are kept at
  345 kV, the tap ratios being already expressed on the system base.  The ten
  machines keep their published inertia constants and ratings; everything the
  classical model needs beyond that is a fixture choice, documented here:
  D = 1.0 pu on each machine base, identical governors (T_g = 10 s, k_g = 1,
  R = 0.04) on all machines, zero internal impedances, constant-power loads
  (gamma = 0).  Three grid-forming converters of 5000 MJ each are added: the
  probing unit at bus 14 (800 MVA, T_a = 6.25 s, dispatched at 400 MW) and
  two passive units at buses 8 (wind park) and 27 (battery), 500 MVA,
  T_a = 10 s, 100 MW each.  G1 at bus 39 aggregates the external system
  (10000 MVA, H = 5 s) and is the slack.  System momentum
  156518 + 3 * 5000 = 171518 MJ.

The identical governor lag keeps the aggregate speed response an exactly
second-order rational function, which keeps the rational-fit truncation bias
of the estimators far below their acceptance bands.
"""

from __future__ import annotations

from .cases import (Branch, Bus, Converter, Governor, Load, Machine,
                    PowerSystemCase, validate_case)

__all__ = ["two_machine", "two_machine_conv", "ieee39", "fixture", "FIXTURES"]


def two_machine(lossless: bool = False) -> PowerSystemCase:
    """Two machines, one line, one resistive load (fig-of-merit case).

    With ``lossless=True`` the line resistance is dropped; the angle
    Jacobian of the electrical power is then exactly symmetric and the
    closed-form transfer functions are exact for the full pipeline.
    """
    r = 0.0 if lossless else 0.001
    case = PowerSystemCase(
        name="two-machine" + ("-lossless" if lossless else ""),
        f_nom_hz=50.0,
        s_base_mva=100.0,
        slack="G1",
        buses=(Bus("B1", 100.0), Bus("B2", 100.0)),
        lines=(Branch("B1", "B2", r=r, x=0.001, b=0.0),),
        machines=(
            Machine(id="G1", bus="B1", h_s=4.0, s_b_mva=100.0, d_pu=1.0,
                    p_set_mw=None, v_set_pu=1.0,
                    governor=Governor(t_g_s=50.0, k_g=1.0, r_droop=0.02)),
            Machine(id="G2", bus="B2", h_s=2.5, s_b_mva=100.0, d_pu=1.0,
                    p_set_mw=50.0, v_set_pu=1.0),
        ),
        loads=(Load(id="L1", bus="B1", p_mw=90.0, q_mvar=0.0),),
    )
    validate_case(case)
    return case


def two_machine_conv() -> PowerSystemCase:
    """Two-machine grid plus a 500 MJ grid-forming converter on bus 3."""
    base = two_machine()
    case = PowerSystemCase(
        name="two-machine-conv",
        f_nom_hz=base.f_nom_hz,
        s_base_mva=base.s_base_mva,
        slack=base.slack,
        buses=base.buses + (Bus("B3", 100.0),),
        lines=base.lines + (Branch("B2", "B3", r=0.0005, x=0.002, b=0.0),),
        machines=base.machines,
        converters=(
            Converter(id="C1", bus="B3", t_a_s=10.0, p_ref_mva=50.0,
                      k_w_pu=20.0, p_g_pu=0.2, v_set_pu=1.0),
        ),
        loads=base.loads,
    )
    validate_case(case)
    return case


# -- 39-bus data, 100 MVA base ------------------------------------------------

# from, to, r, x, b  (pu)
_LINES = [
    (1, 2, 0.0035, 0.0411, 0.6987),
    (1, 39, 0.0010, 0.0250, 0.7500),
    (2, 3, 0.0013, 0.0151, 0.2572),
    (2, 25, 0.0070, 0.0086, 0.1460),
    (3, 4, 0.0013, 0.0213, 0.2214),
    (3, 18, 0.0011, 0.0133, 0.2138),
    (4, 5, 0.0008, 0.0128, 0.1342),
    (4, 14, 0.0008, 0.0129, 0.1382),
    (5, 6, 0.0002, 0.0026, 0.0434),
    (5, 8, 0.0008, 0.0112, 0.1476),
    (6, 7, 0.0006, 0.0092, 0.1130),
    (6, 11, 0.0007, 0.0082, 0.1389),
    (7, 8, 0.0004, 0.0046, 0.0780),
    (8, 9, 0.0023, 0.0363, 0.3804),
    (9, 39, 0.0010, 0.0250, 1.2000),
    (10, 11, 0.0004, 0.0043, 0.0729),
    (10, 13, 0.0004, 0.0043, 0.0729),
    (13, 14, 0.0009, 0.0101, 0.1723),
    (14, 15, 0.0018, 0.0217, 0.3660),
    (15, 16, 0.0009, 0.0094, 0.1710),
    (16, 17, 0.0007, 0.0089, 0.1342),
    (16, 19, 0.0016, 0.0195, 0.3040),
    (16, 21, 0.0008, 0.0135, 0.2548),
    (16, 24, 0.0003, 0.0059, 0.0680),
    (17, 18, 0.0007, 0.0082, 0.1319),
    (17, 27, 0.0013, 0.0173, 0.3216),
    (21, 22, 0.0008, 0.0140, 0.2565),
    (22, 23, 0.0006, 0.0096, 0.1846),
    (23, 24, 0.0022, 0.0350, 0.3610),
    (25, 26, 0.0032, 0.0323, 0.5310),
    (26, 27, 0.0014, 0.0147, 0.2396),
    (26, 28, 0.0043, 0.0474, 0.7802),
    (26, 29, 0.0057, 0.0625, 1.0290),
    (28, 29, 0.0014, 0.0151, 0.2490),
]

# from, to, r, x, tap
_TRANSFORMERS = [
    (2, 30, 0.0000, 0.0181, 1.025),
    (6, 31, 0.0000, 0.0250, 1.070),
    (10, 32, 0.0000, 0.0200, 1.070),
    (11, 12, 0.0016, 0.0435, 1.006),
    (13, 12, 0.0016, 0.0435, 1.006),
    (19, 20, 0.0007, 0.0138, 1.060),
    (19, 33, 0.0007, 0.0142, 1.070),
    (20, 34, 0.0009, 0.0180, 1.009),
    (22, 35, 0.0000, 0.0143, 1.025),
    (23, 36, 0.0005, 0.0272, 1.000),
    (25, 37, 0.0006, 0.0232, 1.025),
    (29, 38, 0.0008, 0.0156, 1.025),
]

# bus, P (MW), Q (MVAr); 19 loads
_LOADS = [
    (3, 322.0, 2.4),
    (4, 500.0, 184.0),
    (7, 233.8, 84.0),
    (8, 522.0, 176.0),
    (12, 8.5, 88.0),
    (15, 320.0, 153.0),
    (16, 329.0, 32.3),
    (18, 158.0, 30.0),
    (20, 680.0, 103.0),
    (21, 274.0, 115.0),
    (23, 247.5, 84.6),
    (24, 308.6, -92.2),
    (25, 224.0, 47.2),
    (26, 139.0, 17.0),
    (27, 281.0, 75.5),
    (28, 206.0, 27.6),
    (29, 283.5, 26.9),
    (31, 9.2, 4.6),
    (39, 1104.0, 250.0),
]

# id, bus, H (s), S_B (MVA), P_set (MW, None = slack), V_set (pu)
_MACHINES = [
    ("G1", 39, 5.00, 10000.0, None, 1.0300),
    ("G2", 31, 4.33, 700.0, 678.0, 0.9820),
    ("G3", 32, 4.47, 800.0, 650.0, 0.9831),
    ("G4", 33, 3.57, 800.0, 632.0, 0.9972),
    ("G5", 34, 4.33, 600.0, 508.0, 1.0123),
    ("G6", 35, 4.35, 800.0, 650.0, 1.0493),
    ("G7", 36, 3.77, 700.0, 560.0, 1.0635),
    ("G8", 37, 3.47, 700.0, 540.0, 1.0278),
    ("G9", 38, 3.45, 1000.0, 830.0, 1.0265),
    ("G10", 30, 4.20, 1000.0, 250.0, 1.0475),
]

# id, bus, T_a (s), P_ref (MVA), P_g (pu of P_ref), kind
_CONVERTERS = [
    ("C14", 14, 6.25, 800.0, 0.5, "probe"),
    ("C8", 8, 10.00, 500.0, 0.2, "wind"),
    ("C27", 27, 10.00, 500.0, 0.2, "battery"),
]


def ieee39() -> PowerSystemCase:
    """Classical-model 39-bus New England system with three converters."""
    gov = Governor(t_g_s=10.0, k_g=1.0, r_droop=0.04)
    case = PowerSystemCase(
        name="ieee39-classical",
        f_nom_hz=60.0,
        s_base_mva=100.0,
        slack="G1",
        buses=tuple(Bus(f"B{n}", 345.0) for n in range(1, 40)),
        lines=tuple(Branch(f"B{f}", f"B{t}", r=r, x=x, b=b)
                    for f, t, r, x, b in _LINES),
        transformers=tuple(Branch(f"B{f}", f"B{t}", r=r, x=x, b=0.0, tap=tap)
                           for f, t, r, x, tap in _TRANSFORMERS),
        machines=tuple(
            Machine(id=mid, bus=f"B{bus}", h_s=h, s_b_mva=sb, d_pu=1.0,
                    p_set_mw=p, v_set_pu=v, governor=gov)
            for mid, bus, h, sb, p, v in _MACHINES),
        converters=tuple(
            Converter(id=cid, bus=f"B{bus}", t_a_s=ta, p_ref_mva=pref,
                      k_w_pu=20.0, p_g_pu=pg, v_set_pu=1.0, kind=kind)
            for cid, bus, ta, pref, pg, kind in _CONVERTERS),
        loads=tuple(
            Load(id=f"L{bus}", bus=f"B{bus}", p_mw=p, q_mvar=q)
            for bus, p, q in _LOADS),
    )
    validate_case(case)
    return case


FIXTURES = {
    "two_machine": two_machine,
    "two_machine_lossless": lambda: two_machine(lossless=True),
    "two_machine_conv": two_machine_conv,
    "ieee39": ieee39,
}


def fixture(name: str) -> PowerSystemCase:
    """Look up a bundled case by name."""
    try:
        return FIXTURES[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; have {sorted(FIXTURES)}") from None
