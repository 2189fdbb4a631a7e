"""OU load-noise statistics against analytic values (Monte Carlo)."""

import numpy as np
import pytest
from scipy import stats

from gridmomentum.stochastic import (OUParams, OUProcessSet, make_load_noise,
                                     ou_step, write_noise_csv)


def single_process(seed=0, tau=2.0, sigma=0.005):
    return OUProcessSet(["L"], [OUParams(tau, sigma)], seed)


def test_zero_sigma_decays_deterministically():
    ps = single_process(sigma=0.0)
    ps.eta[0] = 1.0
    for _ in range(3):
        ou_step(ps, 0.5)
    assert ps.eta[0] == pytest.approx(np.exp(-1.5 / 2.0), rel=1e-12)


def test_stationary_std():
    # tau = 2 s, sigma = 0.5%: sample std over 1e6 exact steps
    ps = single_process(seed=42)
    path = ps.sample_path(1_000_000, 0.5)
    assert np.std(path) == pytest.approx(0.005, rel=0.02)


def test_autocorrelation():
    h = 0.5
    ps = single_process(seed=7)
    x = ps.sample_path(1_000_000, h)[:, 0]
    x = x - x.mean()
    rho = (x[:-1] * x[1:]).mean() / (x * x).mean()
    assert rho == pytest.approx(np.exp(-h / 2.0), rel=0.02)


def test_mean_reversion():
    ps = single_process(seed=3)
    h, tau = 1.0, 2.0
    n = 400_000
    x = ps.sample_path(n, h)[:, 0]
    # effective sample count shrinks by the integrated autocorrelation
    decay = np.exp(-h / tau)
    n_eff = n * (1 - decay) / (1 + decay)
    assert abs(x.mean()) < 3 * 0.005 / np.sqrt(n_eff)


def test_one_big_step_equals_two_half_steps_in_distribution():
    draws_1, draws_2 = [], []
    ps1, ps2 = single_process(seed=11), single_process(seed=12)
    ps1.eta[0] = ps2.eta[0] = 0.003
    h = 0.8
    for _ in range(100_000):
        x1 = ps1.eta[0]
        draws_1.append(ou_step(ps1, h)[0])
        ps1.eta[0] = x1                        # restart from the same point
        x2 = ps2.eta[0]
        ou_step(ps2, h / 2)
        draws_2.append(ou_step(ps2, h / 2)[0])
        ps2.eta[0] = x2
    ks = stats.ks_2samp(draws_1, draws_2)
    assert ks.pvalue > 0.01


def test_stepped_equals_batched():
    a, b = single_process(seed=5), single_process(seed=5)
    stepped = np.array([a.step(0.25)[0] for _ in range(200)])
    batched = b.sample_path(200, 0.25)[:, 0]
    assert np.array_equal(stepped, batched)


def test_same_seed_same_path(ieee39_case):
    n1 = make_load_noise(ieee39_case, seed=123)
    n2 = make_load_noise(ieee39_case, seed=123)
    assert np.array_equal(n1.eta, n2.eta)
    assert np.array_equal(n1.sample_path(500, 0.01), n2.sample_path(500, 0.01))


def test_different_seeds_differ(ieee39_case):
    n1 = make_load_noise(ieee39_case, seed=1)
    n2 = make_load_noise(ieee39_case, seed=2)
    assert not np.array_equal(n1.sample_path(10, 0.01),
                              n2.sample_path(10, 0.01))


def test_loads_are_independent_streams(ieee39_case):
    noise = make_load_noise(ieee39_case, seed=9)
    # step >> tau so successive samples are nearly independent
    path = noise.sample_path(50_000, 20.0)
    c = np.corrcoef(path.T)
    off = c[~np.eye(len(noise), dtype=bool)]
    assert np.max(np.abs(off)) < 0.03


def test_process_count_matches_loads(ieee39_case, two_machine_case):
    assert len(make_load_noise(ieee39_case, seed=0)) == 19
    assert len(make_load_noise(two_machine_case, seed=0)) == 1


def test_stationary_initialization():
    etas = [OUProcessSet(["L"], [OUParams(2.0, 0.005)], s).eta[0]
            for s in range(4000)]
    assert np.std(etas) == pytest.approx(0.005, rel=0.05)
    assert abs(np.mean(etas)) < 3 * 0.005 / np.sqrt(4000)


def test_empty_case_gives_empty_set(two_machine_case):
    import dataclasses
    bare = dataclasses.replace(two_machine_case, loads=())
    noise = make_load_noise(bare, seed=0)
    assert len(noise) == 0
    assert noise.step(0.1).size == 0


def test_parameter_validation():
    with pytest.raises(ValueError):
        OUParams(-1.0, 0.005)
    with pytest.raises(ValueError):
        OUParams(2.0, -0.005)
    ps = single_process()
    with pytest.raises(ValueError):
        ps.step(0.0)


def test_diffusion_amplitude():
    p = OUParams(2.0, 0.005)
    assert p.diffusion == pytest.approx(0.005 * np.sqrt(1.0))


def test_noise_csv(tmp_path, ieee39_case):
    noise = make_load_noise(ieee39_case, seed=0)
    t = np.arange(5) * 0.1
    path = noise.sample_path(5, 0.1)
    f = tmp_path / "noise.csv"
    write_noise_csv(f, t, path, noise.load_ids)
    header = f.read_text().splitlines()[0]
    assert header.startswith("t_s,eta:")
    back = np.loadtxt(f, delimiter=",", skiprows=1)
    assert back.shape == (5, 20)
    assert np.allclose(back[:, 1:], path, atol=1e-6)