"""Logistic and mixture-of-logistics primitives.

All functions broadcast over leading dimensions; mixture parameters carry the
component axis last. The ``*_terms`` helpers work in log-space on raw
``(log_pi, mu, log_s)`` and accept autodiff nodes, which is what the flow and
teacher code build on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConvergenceError

SCALE_FLOOR = 1e-4
PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class Logistic:
    mu: float = 0.0
    s: float = 1.0

    def __post_init__(self):
        if not np.all(np.asarray(self.s) > 0):
            raise ValueError(f"logistic scale must be positive, got {self.s}")


@dataclass(frozen=True)
class MoLParams:
    """Mixing weights, shifts and scales of N logistic components."""

    weights: np.ndarray
    mus: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.mus, dtype=np.float64)
        s = np.asarray(self.scales, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mus", m)
        object.__setattr__(self, "scales", s)
        if w.ndim == 0 or w.shape[-1] < 1 or not (w.shape == m.shape == s.shape):
            raise ValueError(f"mismatched mixture shapes {w.shape}, {m.shape}, {s.shape}")
        if np.any(w < 0) or np.any(np.abs(w.sum(-1) - 1.0) > 1e-9):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if not np.all(s > 0):
            raise ValueError("mixture scales must be positive")

    @property
    def n(self):
        return self.weights.shape[-1]

    @classmethod
    def from_log(cls, log_pi, mu, log_s):
        return cls(np.exp(log_pi), mu, np.exp(log_s))

    def log_terms(self):
        with np.errstate(divide="ignore"):
            return np.log(self.weights), self.mus, np.log(self.scales)

    def mirrored(self):
        """Mixture of the reflected components; its CDF at -u is 1 - C(u)."""
        return MoLParams(self.weights, -self.mus, self.scales)


# --- log-space building blocks (autodiff aware) ---------------------------

def _z(u, mu, log_s):
    return ad.mul(ad.sub(ad.reshape(u, np.shape(ad.value(u)) + (1,)), mu), ad.exp(ad.neg(log_s)))


def mol_log_cdf_terms(u, log_pi, mu, log_s):
    """(ln C, ln(1 - C)); the complement uses the mirrored mixture."""
    z = _z(u, mu, log_s)
    ln_c = ad.logsumexp(ad.add(log_pi, ad.log_sigmoid(z)), axis=-1)
    ln_1mc = ad.logsumexp(ad.add(log_pi, ad.log_sigmoid(ad.neg(z))), axis=-1)
    return ln_c, ln_1mc


def mol_log_pdf_terms(u, log_pi, mu, log_s):
    z = _z(u, mu, log_s)
    comp = ad.sub(ad.add(ad.log_sigmoid(z), ad.log_sigmoid(ad.neg(z))), log_s)
    return ad.logsumexp(ad.add(log_pi, comp), axis=-1)


def mol_all_terms(u, log_pi, mu, log_s):
    """ln C, ln(1 - C) and ln pdf sharing one evaluation of the component terms."""
    z = _z(u, mu, log_s)
    lo = ad.log_sigmoid(z)
    hi = ad.log_sigmoid(ad.neg(z))
    ln_c = ad.logsumexp(ad.add(log_pi, lo), axis=-1)
    ln_1mc = ad.logsumexp(ad.add(log_pi, hi), axis=-1)
    ln_pdf = ad.logsumexp(ad.add(log_pi, ad.sub(ad.add(lo, hi), log_s)), axis=-1)
    return ln_c, ln_1mc, ln_pdf


def standard_logistic_log_pdf(u):
    return ad.add(ad.log_sigmoid(u), ad.log_sigmoid(ad.neg(u)))


# --- plain numpy API -----------------------------------------------------

def logistic_cdf(u, comp: Logistic):
    z = (np.asarray(u, dtype=np.float64) - comp.mu) / comp.s
    return np.exp(-np.logaddexp(0.0, -z))


def mol_cdf(u, p: MoLParams):
    ln_c, _ = mol_log_cdf_pair(u, p)
    return np.maximum(np.exp(ln_c), PROB_FLOOR)


def mol_log_pdf(u, p: MoLParams):
    return mol_log_pdf_terms(np.asarray(u, dtype=np.float64), *p.log_terms())


def mol_pdf(u, p: MoLParams):
    return np.exp(mol_log_pdf(u, p))


def mol_log_cdf_pair(u, p: MoLParams):
    return mol_log_cdf_terms(np.asarray(u, dtype=np.float64), *p.log_terms())


def _logit_cdf(u, log_terms):
    ln_c, ln_1mc = mol_log_cdf_terms(u, *log_terms)
    return ln_c - ln_1mc


def mol_logit_quantile(y, p: MoLParams, tol=1e-12, max_iter=200):
    """Solve ln C(u) - ln(1 - C(u)) = y for u.

    Working on the logit scale keeps both tails well conditioned; the
    derivative is pdf / (C (1 - C)).
    """
    y = np.asarray(y, dtype=np.float64)
    log_terms = p.log_terms()
    batch = np.broadcast_shapes(y.shape, p.weights.shape[:-1])
    y = np.broadcast_to(y, batch).astype(np.float64)
    width = 40.0 * p.scales.max(axis=-1) + np.abs(y) * p.scales.max(axis=-1)
    lo = np.broadcast_to(p.mus.min(axis=-1) - width, batch).copy()
    hi = np.broadcast_to(p.mus.max(axis=-1) + width, batch).copy()

    # grow the bracket until it straddles the root
    for _ in range(max_iter):
        f_lo = _logit_cdf(lo, log_terms) - y
        f_hi = _logit_cdf(hi, log_terms) - y
        bad_lo, bad_hi = f_lo > 0, f_hi < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        span = hi - lo
        lo = np.where(bad_lo, lo - span, lo)
        hi = np.where(bad_hi, hi + span, hi)
    else:
        raise ConvergenceError("could not bracket the mixture quantile")

    # bisection to a coarse bracket, then Newton with bisection fallback
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f_mid = _logit_cdf(mid, log_terms) - y
        lo = np.where(f_mid <= 0, mid, lo)
        hi = np.where(f_mid > 0, mid, hi)
        if np.all(hi - lo < 1e-3 * np.maximum(1.0, np.abs(mid))):
            break
    u = 0.5 * (lo + hi)
    for _ in range(max_iter):
        ln_c, ln_1mc, ln_pdf = mol_all_terms(u, *log_terms)
        f = ln_c - ln_1mc - y
        slope = np.exp(ln_pdf - ln_c - ln_1mc)
        lo = np.where(f <= 0, u, lo)
        hi = np.where(f > 0, u, hi)
        step = u - f / slope
        outside = ~((step > lo) & (step < hi)) | ~np.isfinite(step)
        nxt = np.where(outside, 0.5 * (lo + hi), step)
        done = np.abs(nxt - u) <= tol * np.maximum(1.0, np.abs(u))
        u = nxt
        if np.all(done):
            return u if u.ndim else float(u)
    raise ConvergenceError(f"mixture quantile did not converge in {max_iter} iterations")


def mol_quantile(q, p: MoLParams, tol=1e-10, max_iter=200):
    """Inverse of :func:`mol_cdf`; ``|mol_cdf(u) - q| < tol`` on return."""
    q = np.asarray(q, dtype=np.float64)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    y = np.log(q) - np.log1p(-q)
    u = mol_logit_quantile(y, p, tol=min(tol, 1e-12), max_iter=max_iter)
    if np.any(np.abs(mol_cdf(u, p) - q) >= tol):
        raise ConvergenceError("mixture quantile missed the requested tolerance")
    return u


def sample_logistic(rng: np.random.Generator, comp: Logistic = Logistic(), size=None):
    v = rng.random(size)
    # v == 0 has probability 2**-53; nudge it into the open interval
    v = np.where(v == 0.0, np.finfo(float).tiny, v)
    return comp.mu + comp.s * (np.log(v) - np.log1p(-v))


def sample_mol(rng: np.random.Generator, p: MoLParams):
    """One draw per leading index: pick a component by weight, then sample it."""
    w = p.weights.reshape(-1, p.n)
    cdf = np.cumsum(w, axis=-1)
    pick = (rng.random((w.shape[0], 1)) > cdf).sum(-1).clip(max=p.n - 1)
    rows = np.arange(w.shape[0])
    mu = p.mus.reshape(-1, p.n)[rows, pick]
    s = p.scales.reshape(-1, p.n)[rows, pick]
    out = sample_logistic(rng, Logistic(0.0, 1.0), size=w.shape[0]) * s + mu
    return out.reshape(p.weights.shape[:-1])
