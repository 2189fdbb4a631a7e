"""Rational fitting of frequency samples by iterated pole relocation.

The relaxed scheme: fit an auxiliary weight sigma(s) = dtil + sum
ctil_k/(s - a_k) together with sigma(s) H(s) in one linear LS (a
constraint row pinning the average of Re sigma to one excludes the
trivial solution), relocate the poles to the zeros of sigma
(eigenvalues of the real companion matrix), flip any right-half-plane
pole, and repeat until the poles stop moving; a final LS gives the
residues.  Real coefficients are enforced by working in the
conjugate-pair basis

    u = 1/(s-a) + 1/(s-a*),    v = j/(s-a) - j/(s-a*),

and stacking real and imaginary parts of every sample equation.  All
fitting happens with frequencies scaled by the geometric band center,
which keeps the LS well conditioned for millihertz bands.

Fits are strictly proper by default (the responses this package fits
vanish at high frequency); a direct term can be enabled for
diagnostics.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RationalModel",
    "initial_poles",
    "vf_fit",
    "fit_order_sweep",
    "evaluate",
    "residue_sum",
    "write_model_json",
    "read_model_json",
]

MODEL_JSON_SCHEMA = "gridmomentum-ratmodel.v1"


@dataclass(frozen=True)
class RationalModel:
    """Partial-fraction model sum c_k/(s - a_k) + d + s e.

    Poles and residues come in conjugate pairs (pair first, conjugate
    second) followed by real poles; rms_error is the relative l2 misfit
    against the samples the model was fitted to.  The optional direct
    and slope terms d, e (zero for the strictly proper default) soak up
    out-of-band behavior, e.g. the stiff local angle response under a
    probing converter, so near-band dynamics cannot leak into the
    residues.
    """

    poles: np.ndarray
    residues: np.ndarray
    d: float
    rms_error: float
    iterations: int
    converged: bool
    history: tuple = ()
    e: float = 0.0

    @property
    def order(self) -> int:
        return len(self.poles)

    def evaluate(self, s):
        return evaluate(self, s)

    def residue_sum(self) -> float:
        return residue_sum(self)


def evaluate(model: RationalModel, s):
    """Model response at complex s (scalar or array)."""
    s = np.asarray(s, dtype=complex)
    gap = np.min(np.abs(np.subtract.outer(s, model.poles)))
    lim = 1e-12 * (np.max(np.abs(s)) + np.max(np.abs(model.poles)))
    if gap <= lim:
        raise ZeroDivisionError("evaluation at a pole")
    out = np.sum(model.residues / (s[..., None] - model.poles), axis=-1)
    out = out + model.d + s * model.e
    return out if out.ndim else complex(out)


def residue_sum(model: RationalModel) -> float:
    """Re(sum c_k); warns when the imaginary part is not negligible."""
    total = np.sum(model.residues)
    if abs(total.imag) > 1e-6 * max(abs(total), 1e-300):
        warnings.warn("residue sum has a non-negligible imaginary part; "
                      "conjugate symmetry is broken", RuntimeWarning)
    return float(total.real)


def initial_poles(band, n: int) -> np.ndarray:
    """Starting poles: weakly damped pairs log-spaced across the band."""
    if n < 1:
        raise ValueError("order must be at least 1")
    f_lo, f_hi = float(band[0]), float(band[1])
    beta = 2.0 * np.pi * np.geomspace(f_lo, f_hi, n // 2)
    poles = []
    for b in beta:
        poles += [-b / 100.0 + 1j * b, -b / 100.0 - 1j * b]
    if n % 2:
        poles.append(-2.0 * np.pi * f_lo + 0.0j)
    return np.array(poles, dtype=complex)


def _coerce_samples(samples):
    if hasattr(samples, "f_hz") and hasattr(samples, "h"):
        f = np.asarray(samples.f_hz, dtype=float)
        h = np.asarray(samples.h)
        if h.ndim == 2:
            if h.shape[0] != 1:
                raise ValueError("select a single output before fitting")
            h = h[0]
    else:
        f, h = samples
        f = np.asarray(f, dtype=float)
        h = np.asarray(h, dtype=complex)
    if f.shape != h.shape or f.ndim != 1:
        raise ValueError("need matching 1-D frequency and sample arrays")
    return f, h


def _pair_up(lam: np.ndarray) -> np.ndarray:
    """Order eigenvalues as conjugate pairs then real poles."""
    real = np.sort(lam[lam.imag == 0.0].real)
    pos = lam[lam.imag > 0.0]
    pos = pos[np.argsort(pos.imag)]
    out = []
    for p in pos:
        out += [p, np.conj(p)]
    out += [complex(r) for r in real]
    if len(out) != len(lam):
        # lone unpaired complex eigenvalue from rounding: force realness
        return _pair_up(np.where(np.abs(lam.imag) < 1e-12 * np.abs(lam),
                                 lam.real + 0.0j, lam))
    return np.array(out, dtype=complex)


def _basis(s: np.ndarray, poles: np.ndarray) -> np.ndarray:
    """Real-coefficient basis columns evaluated at the sample points."""
    n = len(poles)
    phi = np.empty((len(s), n), dtype=complex)
    k = 0
    while k < n:
        a = poles[k]
        if a.imag != 0.0:
            pa, pb = 1.0 / (s - a), 1.0 / (s - np.conj(a))
            phi[:, k] = pa + pb
            phi[:, k + 1] = 1j * (pa - pb)
            k += 2
        else:
            phi[:, k] = 1.0 / (s - a)
            k += 1
    return phi


def _real_stack(cols: np.ndarray) -> np.ndarray:
    return np.vstack([cols.real, cols.imag])


def _tail_columns(s, d_free, e_free):
    cols = []
    if d_free:
        cols.append(np.ones((len(s), 1), dtype=complex))
    if e_free:
        cols.append(s[:, None])
    return cols


def _residue_fit(s, h, poles, d_free, e_free):
    phi = _basis(s, poles)
    a = _real_stack(np.hstack([phi] + _tail_columns(s, d_free, e_free)))
    b = np.concatenate([h.real, h.imag])
    x, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < a.shape[1]:
        raise ValueError("degenerate samples: residue fit is rank deficient")
    coef = x[:len(poles)]
    tail = list(x[len(poles):])
    d = float(tail.pop(0)) if d_free else 0.0
    e = float(tail.pop(0)) if e_free else 0.0
    res = np.empty(len(poles), dtype=complex)
    k = 0
    while k < len(poles):
        if poles[k].imag != 0.0:
            res[k] = coef[k] + 1j * coef[k + 1]
            res[k + 1] = np.conj(res[k])
            k += 2
        else:
            res[k] = coef[k]
            k += 1
    fit = np.sum(res / (s[:, None] - poles), axis=1) + d + s * e
    scale = np.linalg.norm(h)
    err = np.linalg.norm(fit - h) / (scale if scale > 0.0 else 1.0)
    return res, d, e, err


def _relocate(s, h, poles, d_free, e_free):
    """One sigma-stage LS; returns the zeros of the fitted weight.

    Unknowns are the numerator coefficients of sigma*H, sigma's own
    coefficients ctil and its free constant dtil; the homogeneous
    sample equations sigma*H - (fit) = 0 get one extra real row asking
    the average of Re sigma over the samples to equal one, which fixes
    the scale without biasing the zeros.
    """
    n = len(poles)
    m = len(s)
    phi = _basis(s, poles)
    cols = [phi] + _tail_columns(s, d_free, e_free)
    cols.append(-h[:, None] * phi)
    cols.append(-h[:, None])
    a = _real_stack(np.hstack(cols))
    b = np.zeros(2 * m + 1)
    # relaxation row, weighted to the scale of the data rows
    row = np.zeros(a.shape[1])
    wt = np.linalg.norm(h) / m
    row[-(n + 1):-1] = wt * np.sum(phi.real, axis=0)
    row[-1] = wt * m
    a = np.vstack([a, row])
    b[-1] = wt * m
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    ctil = x[-(n + 1):-1]
    dtil = x[-1]
    floor = 1e-8 * max(np.linalg.norm(ctil), 1e-300)
    if abs(dtil) < floor:
        # sigma nearly strictly proper: its zeros run off to infinity,
        # which is the degenerate (constant-gain) limit
        dtil = floor if dtil >= 0.0 else -floor

    # companion of sigma in the real pair basis
    amat = np.zeros((n, n))
    bvec = np.zeros(n)
    k = 0
    while k < n:
        p = poles[k]
        if p.imag != 0.0:
            amat[k, k] = amat[k + 1, k + 1] = p.real
            amat[k, k + 1] = p.imag
            amat[k + 1, k] = -p.imag
            bvec[k] = 2.0
            k += 2
        else:
            amat[k, k] = p.real
            bvec[k] = 1.0
            k += 1
    lam = np.linalg.eigvals(amat - np.outer(bvec, ctil / dtil))
    if not np.all(np.isfinite(lam)):
        raise ValueError("pole relocation produced non-finite poles")
    # stability enforcement: mirror right-half-plane poles
    lam = np.where(lam.real > 0.0, lam - 2.0 * lam.real, lam)
    return _pair_up(lam)


def vf_fit(samples, order: int = 3, max_iters: int = 30, tol: float = 1e-6,
           d_free: bool = False, e_free: bool = False,
           poles0=None) -> RationalModel:
    """Fit a rational model of the given order to complex samples.

    samples: a (f_hz, h) pair of arrays or any object carrying f_hz and
    a single-response h (frequency-scan or probing sample sets).  The
    result is returned even when the pole iteration hits max_iters; the
    converged flag and the per-iteration error history say how it went.
    On noisy samples the relocation fixpoint may not exist; the returned
    model is then the best iterate by residue-stage rms, not the last.
    """
    f, h = _coerce_samples(samples)
    if order < 1:
        raise ValueError("order must be at least 1")
    if len(f) < 2 * (order + 1):
        raise ValueError(
            f"need at least {2 * (order + 1)} samples for order {order}")

    w_scale = 2.0 * np.pi * np.sqrt(np.min(f) * np.max(f))
    s = 2j * np.pi * f / w_scale
    if poles0 is None:
        poles = initial_poles((np.min(f), np.max(f)), order) / w_scale
    else:
        poles = _pair_up(np.asarray(poles0, dtype=complex) / w_scale)
        if len(poles) != order:
            raise ValueError("initial pole count must equal the order")

    history = []
    converged = False
    iterations = 0
    best_err, best_poles = np.inf, poles
    for iterations in range(1, max_iters + 1):
        new_poles = _relocate(s, h, poles, d_free, e_free)
        move = np.max(np.abs(np.sort_complex(new_poles)
                             - np.sort_complex(poles)))
        move /= max(np.max(np.abs(poles)), 1e-300)
        poles = new_poles
        err = _residue_fit(s, h, poles, d_free, e_free)[3]
        history.append(err)
        if err < best_err:
            best_err, best_poles = err, poles
        if move < tol:
            converged = True
            break

    res, d, e, err = _residue_fit(s, h, best_poles, d_free, e_free)
    return RationalModel(poles=best_poles * w_scale, residues=res * w_scale,
                         d=d, e=e / w_scale, rms_error=err,
                         iterations=iterations, converged=converged,
                         history=tuple(history))


def fit_order_sweep(samples, orders=(2, 3, 4, 5),
                    improvement: float = 0.1, **kw) -> RationalModel:
    """Smallest order whose successor improves the rms by less than 10%."""
    orders = sorted(orders)
    fitted = [vf_fit(samples, order=n, **kw) for n in orders]
    for lo, hi in zip(fitted[:-1], fitted[1:]):
        if lo.rms_error < 1e-10:
            return lo
        if (lo.rms_error - hi.rms_error) < improvement * lo.rms_error:
            return lo
    return fitted[-1]


def write_model_json(path, model: RationalModel,
                     pole_unit: str = "rad/s",
                     residue_unit: str = "") -> None:
    doc = {
        "schema": MODEL_JSON_SCHEMA,
        "pole_unit": pole_unit,
        "residue_unit": residue_unit,
        "poles": [[p.real, p.imag] for p in model.poles],
        "residues": [[c.real, c.imag] for c in model.residues],
        "d": model.d,
        "e": model.e,
        "rms_error": model.rms_error,
        "iterations": model.iterations,
        "converged": model.converged,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_model_json(path) -> RationalModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != MODEL_JSON_SCHEMA:
        raise ValueError(f"not a {MODEL_JSON_SCHEMA} file")
    return RationalModel(
        poles=np.array([complex(re, im) for re, im in doc["poles"]]),
        residues=np.array([complex(re, im) for re, im in doc["residues"]]),
        d=float(doc["d"]), e=float(doc.get("e", 0.0)),
        rms_error=float(doc["rms_error"]),
        iterations=int(doc["iterations"]), converged=bool(doc["converged"]))
