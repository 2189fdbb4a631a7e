"""Momentum estimation: the two-sum formula, scan and probing variants,
and the randomized batch machinery."""

import csv
import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridmomentum import estimator as est
from gridmomentum import probing
from gridmomentum import twomachine as tm
from gridmomentum.cases import system_momentum, with_converter_momentum
from gridmomentum.estimator import (
    BatchStats, EstimationError, ExperimentConfig, MomentumEstimate,
    RunRecord, batch_randomized, estimate_from_sums, freq_scan_estimate,
    probe_estimate, write_batch_csv, write_batch_json,
)
from gridmomentum.probing import InertiaSchedule, design_tones


# -- the two-sum formula ------------------------------------------------------

def test_halved_sum_returns_the_step():
    # S -> S/2 happens exactly when the step doubles the momentum
    assert estimate_from_sums(2e-3, 1e-3, 500.0) == pytest.approx(500.0)


def test_reference_sums():
    g = estimate_from_sums(1.0 / 1300.0, 1.0 / 1400.0, 100.0)
    assert g == pytest.approx(1300.0, rel=1e-12)


def test_zero_step_rejected():
    with pytest.raises(ValueError, match="nonzero"):
        estimate_from_sums(2e-3, 1e-3, 0.0)


def test_identical_sums_rejected():
    with pytest.raises(EstimationError, match="identical"):
        estimate_from_sums(1e-3, 1e-3, 100.0)


def test_negative_estimate_warns():
    # a sum that grows under added momentum is unphysical
    with pytest.warns(RuntimeWarning, match="not positive"):
        g = estimate_from_sums(1e-3, 1.1e-3, 100.0)
    assert g < 0


@settings(max_examples=60, deadline=None)
@given(g=st.floats(1e2, 1e7), dmf=st.floats(0.02, 3.0),
       sign=st.sampled_from((1.0, -0.4)))
def test_exact_sums_invert_exactly(g, dmf, sign):
    dm = sign * dmf * g
    assert estimate_from_sums(1.0 / g, 1.0 / (g + dm), dm) == pytest.approx(
        g, rel=1e-9)


def test_two_machine_analytic_sums(two_machine_eq):
    """Analytic partial-fraction sums recover the exact total inertia."""
    p = tm.from_equilibrium(two_machine_eq)
    g_true = p.m1_mj + p.m2_mj
    dm = 0.3 * g_true
    p_aug = dataclasses.replace(p, m1_mj=p.m1_mj + dm)
    s_before = tm.partial_fractions(p).residue_sum.real
    s_after = tm.partial_fractions(p_aug).residue_sum.real
    assert estimate_from_sums(s_before, s_after, dm) == pytest.approx(
        g_true, rel=1e-9)


# -- frequency-scan variant ---------------------------------------------------

def test_scan_two_machine_conv(conv_case):
    out = freq_scan_estimate(conv_case, "C1")
    assert out.g_m_true_mj == pytest.approx(system_momentum(conv_case))
    assert abs(out.eps_pct) <= 0.1
    assert out.s_after < out.s_before
    assert "low-confidence-fit" not in out.flags
    assert "negative-estimate" not in out.flags


def test_scan_ieee39(ieee39_case):
    out = freq_scan_estimate(ieee39_case, "C14")
    assert abs(out.eps_pct) <= 0.5
    assert set(out.fits) == {"nominal", "augmented"}
    assert out.fit_rms == max(m.rms_error for m in out.fits.values())


def test_scan_step_size_insensitivity(conv_case):
    g = system_momentum(conv_case)
    small = freq_scan_estimate(conv_case, "C1", dm_mj=0.05 * g)
    large = freq_scan_estimate(conv_case, "C1", dm_mj=0.15 * g)
    assert abs(small.eps_pct) <= 0.1
    assert abs(large.eps_pct) <= 0.1


def test_scan_unknown_converter(conv_case):
    with pytest.raises(ValueError, match="unknown converter"):
        freq_scan_estimate(conv_case, "C99")


# -- probing variant (noiseless) ----------------------------------------------

def conv_probe_config(peak_fraction=0.025, seed=0):
    # band straddling the aggregate resonance; the slow governor makes
    # the start-up transient long, hence the large settle
    plan = design_tones((0.02, 0.10), 10, peak_fraction=peak_fraction,
                        p_probe_mw=10.0, p_nominal_mw=90.0)
    sched = InertiaSchedule(dm_mj=180.0, period_s=560.0, settle_s=150.0)
    return ExperimentConfig("C1", plan, sched, duration_s=1120.0,
                            step_s=0.02, seed=seed)


@pytest.fixture(scope="module")
def conv_probe_result(conv_case):
    return probe_estimate(conv_case, conv_probe_config())


def test_probe_two_machine_conv(conv_case, conv_probe_result):
    out = conv_probe_result
    assert out.g_m_true_mj == pytest.approx(system_momentum(conv_case))
    assert abs(out.eps_pct) <= 0.5
    assert out.s_after < out.s_before


def test_probe_amplitude_cancellation(conv_case, conv_probe_result):
    """The response is normalized per unit modulation, so doubling the
    tone amplitudes must not move the estimate (linear regime)."""
    hi = probe_estimate(conv_case, conv_probe_config(peak_fraction=0.05))
    assert abs(conv_probe_result.eps_pct - hi.eps_pct) < 0.2


def test_config_rejects_zero_step():
    plan = design_tones((0.006, 0.030), 10)
    sched = InertiaSchedule(dm_mj=0.0, period_s=1200.0, settle_s=150.0)
    with pytest.raises(ValueError, match="nonzero"):
        ExperimentConfig("C1", plan, sched)


def test_config_rejects_short_horizon():
    plan = design_tones((0.006, 0.030), 10)
    sched = InertiaSchedule(dm_mj=100.0, period_s=1200.0, settle_s=150.0)
    with pytest.raises(ValueError, match="schedule period"):
        ExperimentConfig("C1", plan, sched, duration_s=900.0)


def test_config_rejects_tight_schedule():
    # half period 300 s cannot hold a 400 s window
    plan = design_tones((0.006, 0.030), 10)
    sched = InertiaSchedule(dm_mj=100.0, period_s=600.0, settle_s=30.0)
    with pytest.raises(ValueError, match="half period"):
        ExperimentConfig("C1", plan, sched, duration_s=1200.0)


def test_estimate_without_truth_has_no_error():
    out = MomentumEstimate(g_m_hat_mj=1000.0, s_before=2e-3, s_after=1e-3,
                           dm_mj=500.0, fits=())
    assert out.eps_pct is None


# -- batch statistics ---------------------------------------------------------

EPS = np.array([-3.0, -1.0, 0.0, 2.0, 8.0, 40.0])


def test_batch_stats_percentiles():
    s = BatchStats(eps_pct=EPS)
    assert s.mean == pytest.approx(46.0 / 6.0)
    assert s.median == pytest.approx(1.0)
    assert s.p25 == pytest.approx(-0.75)
    assert s.p75 == pytest.approx(6.5)
    assert s.iqr == pytest.approx(7.25)


def test_batch_stats_adjacent_values():
    # Tukey fences at p75 + 1.5 iqr = 17.375 and p25 - 1.5 iqr = -11.625
    s = BatchStats(eps_pct=EPS)
    assert s.upper_adjacent == pytest.approx(8.0)
    assert s.lower_adjacent == pytest.approx(-3.0)


def test_batch_stats_summary_keys():
    s = BatchStats(eps_pct=EPS, failures=2)
    out = s.summary()
    assert set(out) == {
        "n_runs", "n_ok", "failures", "mean_pct", "median_pct", "p25_pct",
        "p75_pct", "iqr_pct", "upper_adjacent_pct", "lower_adjacent_pct"}
    assert out["n_ok"] == 6
    assert out["failures"] == 2


# -- randomized batches -------------------------------------------------------

def test_batch_needs_two_runs(conv_case):
    with pytest.raises(ValueError, match="two runs"):
        batch_randomized(conv_case, n_runs=1, cig_id="C1")


def test_batch_scan_needs_converter_id(conv_case):
    with pytest.raises(ValueError, match="converter id"):
        batch_randomized(conv_case, n_runs=3)


def test_batch_zero_spread_collapses(conv_case):
    stats = batch_randomized(conv_case, n_runs=3, spread=0.0, cig_id="C1")
    assert stats.failures == 0
    assert stats.iqr == 0.0
    assert np.ptp(stats.eps_pct) == 0.0
    ids = {m.id for m in conv_case.machines}
    for rec in stats.runs:
        assert rec.ok
        assert set(rec.factors) == ids
    assert len({rec.seed for rec in stats.runs}) == 3


def test_batch_is_seed_deterministic(conv_case):
    a = batch_randomized(conv_case, n_runs=3, seed=5, cig_id="C1")
    b = batch_randomized(conv_case, n_runs=3, seed=5, cig_id="C1")
    c = batch_randomized(conv_case, n_runs=3, seed=6, cig_id="C1")
    assert np.array_equal(a.eps_pct, b.eps_pct)
    assert [r.seed for r in a.runs] == [r.seed for r in b.runs]
    assert not np.array_equal(a.eps_pct, c.eps_pct)


def test_batch_records_partial_failures(conv_case, monkeypatch):
    real = freq_scan_estimate
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 2:
            raise EstimationError("synthetic failure")
        return real(*args, **kwargs)

    monkeypatch.setattr(est, "freq_scan_estimate", flaky)
    stats = batch_randomized(conv_case, n_runs=3, cig_id="C1")
    assert stats.failures == 1
    assert len(stats.runs) == 3
    assert len(stats.eps_pct) == 2
    bad = [r for r in stats.runs if not r.ok]
    assert len(bad) == 1
    assert "synthetic failure" in bad[0].error
    assert np.isnan(bad[0].g_m_hat_mj)
    assert bad[0].g_m_true_mj > 0  # truth is known even for failed runs


def test_batch_raises_when_every_run_fails(conv_case, monkeypatch):
    def broken(*args, **kwargs):
        raise EstimationError("dead")

    monkeypatch.setattr(est, "freq_scan_estimate", broken)
    with pytest.raises(EstimationError, match="every batch run failed"):
        batch_randomized(conv_case, n_runs=2, cig_id="C1")


# -- batch files --------------------------------------------------------------

def sample_stats():
    runs = (
        RunRecord(run=0, seed=11, factors={"G1": 1.02, "G2": 0.95},
                  g_m_true_mj=1800.0, g_m_hat_mj=1801.5, eps_pct=0.0833,
                  fit_rms=2e-4),
        RunRecord(run=1, seed=12, factors={"G1": 0.88, "G2": 1.11},
                  g_m_true_mj=1750.0, g_m_hat_mj=1748.0, eps_pct=-0.1143,
                  fit_rms=3e-4),
        RunRecord(run=2, seed=13, factors={"G1": 1.25, "G2": 1.25},
                  g_m_true_mj=2250.0, error="power flow diverged"),
    )
    return BatchStats(eps_pct=np.array([0.0833, -0.1143]), runs=runs,
                      failures=1)


def test_batch_csv_round_trip(tmp_path):
    stats = sample_stats()
    path = tmp_path / "batch.csv"
    write_batch_csv(path, stats)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert list(rows[0]) == ["run", "seed", "g_m_true_mj", "g_m_hat_mj",
                             "eps_pct", "fit_rms", "factor:G1", "factor:G2",
                             "error"]
    assert float(rows[0]["eps_pct"]) == stats.runs[0].eps_pct
    assert float(rows[1]["factor:G2"]) == 1.11
    assert rows[2]["error"] == "power flow diverged"
    assert np.isnan(float(rows[2]["g_m_hat_mj"]))


def test_batch_json_summary(tmp_path):
    stats = sample_stats()
    path = tmp_path / "batch.json"
    write_batch_json(path, stats)
    with open(path) as fh:
        doc = json.load(fh)
    assert doc["schema"] == est.BATCH_JSON_SCHEMA
    assert doc["n_runs"] == 3
    assert doc["n_ok"] == 2
    assert doc["failures"] == 1
    assert doc["median_pct"] == pytest.approx(stats.median)
