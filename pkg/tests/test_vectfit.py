"""Rational fitting: pole relocation, residue sums, degenerate limits."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridmomentum import twomachine
from gridmomentum.vectfit import (
    RationalModel,
    evaluate,
    fit_order_sweep,
    initial_poles,
    read_model_json,
    residue_sum,
    vf_fit,
    write_model_json,
)

# reference model: one weakly damped pair plus a fast real pole, with
# magnitudes in the range the fitter sees from speed/power responses
POLES3 = np.array([-0.05 + 0.3j, -0.05 - 0.3j, -0.8])
RES3 = np.array([0.002 - 0.001j, 0.002 + 0.001j, 0.005])


def rational_samples(poles, residues, f_hz):
    s = 2j * np.pi * np.asarray(f_hz)
    return np.sum(np.asarray(residues) / (s[:, None] - np.asarray(poles)),
                  axis=1)


def three_pole_samples():
    f = np.geomspace(0.005, 0.2, 40)
    return f, rational_samples(POLES3, RES3, f)


def sorted_close(a, b, rel):
    a, b = np.sort_complex(np.asarray(a)), np.sort_complex(np.asarray(b))
    scale = np.abs(b)
    assert np.max(np.abs(a - b) / scale) < rel


def test_initial_poles_even_order_is_conjugate_pairs():
    p = initial_poles((0.006, 0.030), 2)
    assert len(p) == 2
    assert p[1] == np.conj(p[0])
    assert p[0].imag > 0.0


def test_initial_poles_odd_order_appends_real_pole():
    p = initial_poles((0.006, 0.030), 3)
    assert len(p) == 3
    assert p[2].imag == 0.0
    assert p[2].real == pytest.approx(-2.0 * np.pi * 0.006)


def test_initial_poles_left_half_plane_and_spacing():
    p = initial_poles((0.001, 1.0), 7)
    assert np.all(p.real < 0.0)
    imag = p.imag[p.imag > 0.0]
    assert imag == pytest.approx(2.0 * np.pi * np.geomspace(0.001, 1.0, 3))
    # light damping convention: real part is a percent of the frequency
    pairs = p[p.imag > 0.0]
    assert pairs.real == pytest.approx(-pairs.imag / 100.0)


def test_initial_poles_rejects_zero_order():
    with pytest.raises(ValueError):
        initial_poles((0.006, 0.030), 0)


def test_recovers_three_pole_model():
    f, h = three_pole_samples()
    m = vf_fit((f, h), order=3)
    assert m.converged
    sorted_close(m.poles, POLES3, 1e-6)
    sorted_close(m.residues, RES3, 1e-6)
    assert m.rms_error < 1e-12


def test_two_machine_band_fit_residue_sum(two_machine_eq):
    # fitting exact modal-pair samples over the probing band must give
    # back the aggregate-momentum reciprocal 1/(M1+M2)
    p = twomachine.from_equilibrium(two_machine_eq)
    pair = twomachine.partial_fractions(p)
    f = np.linspace(0.006, 0.030, 10)
    m = vf_fit((f, pair.evaluate(2j * np.pi * f)), order=2)
    assert m.converged
    total = residue_sum(m)
    assert total == pytest.approx(1.0 / 1300.0, rel=1e-3)
    sorted_close(m.poles, [pair.a1, pair.a2], 1e-9)


def test_constant_gain_degenerate_limit():
    # a pure gain has no finite pole; the fit parks one far beyond the
    # band and the residue/pole ratio carries the gain
    f = np.geomspace(0.01, 0.1, 10)
    m = vf_fit((f, np.full(10, 0.37 + 0j)), order=1)
    assert m.poles[0].real < -1e3 * 2.0 * np.pi * 0.1
    assert abs(m.residues[0]) / abs(m.poles[0]) == pytest.approx(0.37,
                                                                 rel=1e-6)
    assert evaluate(m, 0.0) == pytest.approx(0.37, rel=1e-9)
    assert m.rms_error < 1e-6


def test_residue_sum_conjugate_pair_exactly_real():
    c = 0.31 - 0.07j
    m = RationalModel(poles=np.array([-0.1 + 1j, -0.1 - 1j]),
                      residues=np.array([c, np.conj(c)]), d=0.0,
                      rms_error=0.0, iterations=0, converged=True)
    total = residue_sum(m)
    assert total == 2.0 * c.real
    assert isinstance(total, float)


def test_residue_sum_warns_on_broken_symmetry():
    m = RationalModel(poles=np.array([-0.1 + 1j, -0.1 - 1j]),
                      residues=np.array([0.3 - 0.07j, 0.3 + 0.08j]), d=0.0,
                      rms_error=0.0, iterations=0, converged=True)
    with pytest.warns(RuntimeWarning, match="imaginary"):
        residue_sum(m)


def test_residue_sum_matches_high_frequency_limit():
    f, h = three_pole_samples()
    m = vf_fit((f, h), order=3)
    s = 1e6
    assert (s * m.evaluate(s)).real == pytest.approx(residue_sum(m),
                                                     rel=1e-5)


def test_evaluate_single_pole_at_origin():
    m = RationalModel(poles=np.array([-0.4 + 0j]),
                      residues=np.array([0.002 + 0j]), d=0.0, rms_error=0.0,
                      iterations=0, converged=True)
    assert evaluate(m, 0.0) == pytest.approx(0.002 / 0.4)


def test_evaluate_conjugate_symmetry():
    f, h = three_pole_samples()
    m = vf_fit((f, h), order=3)
    s = 0.01 + 0.2j
    assert m.evaluate(np.conj(s)) == pytest.approx(np.conj(m.evaluate(s)))


def test_evaluate_pole_hit_raises():
    m = RationalModel(poles=POLES3, residues=RES3, d=0.0, rms_error=0.0,
                      iterations=0, converged=True)
    with pytest.raises(ZeroDivisionError):
        evaluate(m, POLES3[2])


def test_reported_rms_is_relative_misfit():
    f, h = three_pole_samples()
    rng = np.random.default_rng(3)
    hn = h + 1e-4 * np.abs(h).mean() * (rng.standard_normal(len(f))
                                        + 1j * rng.standard_normal(len(f)))
    m = vf_fit((f, hn), order=3)
    fit = m.evaluate(2j * np.pi * f)
    expect = np.linalg.norm(fit - hn) / np.linalg.norm(hn)
    assert m.rms_error == pytest.approx(expect, rel=1e-9)


def test_fixpoint_recovery_from_perturbed_poles():
    f, h = three_pole_samples()
    rng = np.random.default_rng(5)
    bump = 1.0 + 0.01 * rng.uniform(-1.0, 1.0, 2)
    start = np.array([POLES3[0] * bump[0], np.conj(POLES3[0] * bump[0]),
                      POLES3[2] * bump[1]])
    m = vf_fit((f, h), order=3, poles0=start, max_iters=5)
    assert m.converged
    sorted_close(m.poles, POLES3, 1e-8)


def test_fit_error_history_non_increasing():
    f, h = three_pole_samples()
    m = vf_fit((f, h), order=3)
    hist = np.asarray(m.history)
    assert len(hist) == m.iterations
    assert np.all(np.diff(hist) <= 1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_noisy_fits_return_stable_poles(seed, two_machine_eq):
    p = twomachine.from_equilibrium(two_machine_eq)
    pair = twomachine.partial_fractions(p)
    f = np.linspace(0.006, 0.030, 12)
    h = pair.evaluate(2j * np.pi * f)
    rng = np.random.default_rng(seed)
    hn = h + 0.1 * np.abs(h).mean() * (rng.standard_normal(12)
                                       + 1j * rng.standard_normal(12))
    m = vf_fit((f, hn), order=4)
    assert np.all(m.poles.real <= 0.0)


def test_unstable_source_data_still_fits_stable():
    f = np.geomspace(0.005, 0.2, 30)
    h = rational_samples([0.1 + 0.3j, 0.1 - 0.3j], [0.01, 0.01], f)
    m = vf_fit((f, h), order=2)
    assert np.all(m.poles.real <= 0.0)


def test_sample_count_precondition():
    f = np.linspace(0.01, 0.05, 7)
    h = rational_samples(POLES3, RES3, f)
    with pytest.raises(ValueError, match="samples"):
        vf_fit((f, h), order=3)
    vf_fit((np.linspace(0.01, 0.05, 8),
            rational_samples(POLES3, RES3, np.linspace(0.01, 0.05, 8))),
           order=3)


def test_initial_pole_count_must_match_order():
    f, h = three_pole_samples()
    with pytest.raises(ValueError, match="pole count"):
        vf_fit((f, h), order=3, poles0=POLES3[:2])


def test_nonconvergence_flag_still_returns_model():
    f = np.linspace(0.006, 0.030, 12)
    h = rational_samples(POLES3, RES3, f)
    rng = np.random.default_rng(9)
    hn = h + 0.2 * np.abs(h).mean() * (rng.standard_normal(12)
                                       + 1j * rng.standard_normal(12))
    m = vf_fit((f, hn), order=4, max_iters=1)
    assert not m.converged
    assert m.iterations == 1
    assert np.isfinite(m.rms_error)
    assert len(m.poles) == 4


def test_accepts_fourier_sample_sets():
    from gridmomentum.probing import FourierSampleSet

    f, h = three_pole_samples()
    ss = FourierSampleSet(f_hz=f, gamma_c=h.real, gamma_s=h.imag, h=h,
                          t0_s=0.0, window_s=400.0)
    m = vf_fit(ss, order=3)
    sorted_close(m.poles, POLES3, 1e-6)


def test_rejects_multi_output_scan_samples(two_machine_case):
    from gridmomentum.linear import frequency_response, linearize

    model = linearize(two_machine_case)
    scan = frequency_response(model, "power:G1",
                              np.linspace(0.006, 0.030, 12))
    with pytest.raises(ValueError, match="single output"):
        vf_fit(scan, order=2)
    vf_fit((scan.f_hz, scan.output("G1")), order=2)


def test_order_sweep_stops_at_true_order(two_machine_eq):
    p = twomachine.from_equilibrium(two_machine_eq)
    pair = twomachine.partial_fractions(p)
    f = np.linspace(0.006, 0.030, 12)
    m = fit_order_sweep((f, pair.evaluate(2j * np.pi * f)))
    assert m.order == 2
    assert m.rms_error < 1e-10


def test_order_sweep_on_noisy_data_stays_small(two_machine_eq):
    p = twomachine.from_equilibrium(two_machine_eq)
    pair = twomachine.partial_fractions(p)
    f = np.linspace(0.006, 0.030, 12)
    h = pair.evaluate(2j * np.pi * f)
    rng = np.random.default_rng(11)
    hn = h * (1.0 + 0.02 * rng.standard_normal(12))
    m = fit_order_sweep((f, hn))
    assert m.order in (2, 3)


def test_model_json_round_trip(tmp_path):
    f, h = three_pole_samples()
    m = vf_fit((f, h), order=3)
    path = tmp_path / "model.json"
    write_model_json(path, m, residue_unit="1/MJ")
    back = read_model_json(path)
    assert np.array_equal(back.poles, m.poles)
    assert np.array_equal(back.residues, m.residues)
    assert back.rms_error == m.rms_error
    assert back.iterations == m.iterations
    assert back.converged == m.converged
    doc = json.loads(path.read_text())
    assert doc["pole_unit"] == "rad/s"
    assert doc["residue_unit"] == "1/MJ"


def test_model_json_schema_guard(tmp_path):
    path = tmp_path / "other.json"
    path.write_text(json.dumps({"schema": "something-else"}))
    with pytest.raises(ValueError, match="gridmomentum-ratmodel"):
        read_model_json(path)


@settings(max_examples=40, deadline=None)
@given(re1=st.floats(-2.0, -0.01), im1=st.floats(0.05, 3.0),
       cr=st.floats(-1.0, 1.0), ci=st.floats(-1.0, 1.0),
       ar=st.floats(-2.0, -0.01), c0=st.floats(-1.0, 1.0))
def test_conjugate_models_give_real_symmetric_responses(re1, im1, cr, ci,
                                                        ar, c0):
    m = RationalModel(
        poles=np.array([re1 + 1j * im1, re1 - 1j * im1, ar + 0j]),
        residues=np.array([cr + 1j * ci, cr - 1j * ci, c0 + 0j]),
        d=0.0, rms_error=0.0, iterations=0, converged=True)
    total = residue_sum(m)
    assert total == pytest.approx(2.0 * cr + c0, abs=1e-12)
    w = 0.7j
    assert evaluate(m, np.conj(w)) == pytest.approx(
        np.conj(evaluate(m, w)), abs=1e-12)
    # real axis response of a conjugate-symmetric model is real
    assert abs(evaluate(m, 0.123).imag) < 1e-12
