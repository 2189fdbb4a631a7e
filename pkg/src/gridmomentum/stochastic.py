"""Ornstein-Uhlenbeck load-noise processes.

Each load carries an independent OU process eta_l(t), the relative
fluctuation of its nominal power.  Updates use the exact transition
density (no discretization error at any step size):

    eta' = eta exp(-h/tau) + sigma_stat sqrt(1 - exp(-2h/tau)) z

with z standard normal, so sigma_stat is the stationary standard
deviation; the corresponding diffusion amplitude is
Sigma = sigma_stat sqrt(2/tau).  "Reversion time" means the drift time
constant tau = 1/Upsilon.

Streams are spawned per load from one :class:`numpy.random.SeedSequence`
so batch workers never share a stream, and a stepped process produces
bitwise the same path as a batched one.
"""

from __future__ import annotations

import numpy as np

__all__ = ["OUParams", "OUProcessSet", "make_load_noise", "ou_step",
           "write_noise_csv"]


class OUParams:
    """Parameters of one OU process: reversion time and stationary std."""

    __slots__ = ("tau_s", "sigma_stat")

    def __init__(self, tau_s: float, sigma_stat: float):
        if tau_s <= 0:
            raise ValueError("reversion time must be positive")
        if sigma_stat < 0:
            raise ValueError("stationary std must be nonnegative")
        self.tau_s = float(tau_s)
        self.sigma_stat = float(sigma_stat)

    @property
    def diffusion(self) -> float:
        """Sigma such that the stationary std equals sigma_stat."""
        return self.sigma_stat * np.sqrt(2.0 / self.tau_s)


class OUProcessSet:
    """Independent OU processes, one per load, with their own streams."""

    def __init__(self, load_ids, params, seed):
        self.load_ids = tuple(load_ids)
        self.params = tuple(params)
        if len(self.params) != len(self.load_ids):
            raise ValueError("one parameter set per load required")
        self.seed = seed
        self._rngs = [np.random.default_rng(s)
                      for s in np.random.SeedSequence(seed).spawn(len(params))]
        self.eta = np.array([
            p.sigma_stat * r.standard_normal()
            for p, r in zip(self.params, self._rngs)])

    def __len__(self) -> int:
        return len(self.params)

    def step(self, h: float) -> np.ndarray:
        """Advance every process by h seconds; returns the new eta vector."""
        if h <= 0:
            raise ValueError("step must be positive")
        for k, (p, r) in enumerate(zip(self.params, self._rngs)):
            decay = np.exp(-h / p.tau_s)
            self.eta[k] = (self.eta[k] * decay
                           + p.sigma_stat * np.sqrt(1.0 - decay * decay)
                           * r.standard_normal())
        return self.eta.copy()

    def sample_path(self, n_steps: int, h: float) -> np.ndarray:
        """(n_steps, L) array of the next n_steps held values.

        Row i is the eta vector after i+1 steps.  Each load consumes
        its own stream in draw order, so this is bitwise identical to
        calling :meth:`step` n_steps times.
        """
        if h <= 0:
            raise ValueError("step must be positive")
        from scipy.signal import lfilter
        out = np.empty((n_steps, len(self.params)))
        for k, (p, r) in enumerate(zip(self.params, self._rngs)):
            decay = np.exp(-h / p.tau_s)
            kick = p.sigma_stat * np.sqrt(1.0 - decay * decay)
            z = r.standard_normal(n_steps)
            # AR(1) recurrence x_i = decay x_{i-1} + kick z_i
            out[:, k], _ = lfilter([kick], [1.0, -decay], z,
                                   zi=[decay * self.eta[k]])
            self.eta[k] = out[-1, k]
        return out


def ou_step(process_set: OUProcessSet, h: float) -> np.ndarray:
    """Exact OU transition over h seconds for every process in the set."""
    return process_set.step(h)


def make_load_noise(case, sigma_frac: float = 0.005, tau_s: float = 2.0,
                    seed: int = 0) -> OUProcessSet:
    """One stationary-initialized OU process per load of the case."""
    load_ids = [l.id for l in case.loads]
    params = [OUParams(tau_s, sigma_frac) for _ in load_ids]
    return OUProcessSet(load_ids, params, seed)


def write_noise_csv(path, t_s, eta, load_ids) -> None:
    """Dump sampled noise traces: t_s then one eta column per load."""
    eta = np.asarray(eta)
    header = ",".join(["t_s"] + [f"eta:{l}" for l in load_ids])
    np.savetxt(path, np.column_stack([t_s, eta]), delimiter=",",
               header=header, comments="")
