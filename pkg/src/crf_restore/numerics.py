"""Dense numerical kernels: sample statistics, SPD solves, quartic roots.

All functions are pure and reentrant; per-cluster solves can run concurrently
with no shared mutable state.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

__all__ = [
    "sample_stats",
    "regularize_spd",
    "spd_solve",
    "quartic_positive_roots",
    "quartic_positive_roots_batch",
    "log_gamma",
]

# Residual acceptance for quartic roots, relative to coefficient magnitude.
_QUARTIC_RESIDUAL_TOL = 1e-8


def log_gamma(x: float) -> float:
    """log Gamma(x) for x > 0."""
    if x <= 0:
        raise ValueError(f"log_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def sample_stats(vectors) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and biased sample covariance (divisor = number of vectors)."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 2:
        raise ValueError("sample_stats needs at least 2 vectors")
    mean = v.mean(axis=0)
    centered = v - mean
    cov = centered.T @ centered / v.shape[0]
    return mean, 0.5 * (cov + cov.T)


def regularize_spd(cov, epsilon: float) -> np.ndarray:
    """Add ``epsilon * I`` and verify the result admits a Cholesky factorization."""
    cov = np.asarray(cov, dtype=np.float64)
    out = cov + epsilon * np.eye(cov.shape[0])
    try:
        np.linalg.cholesky(out)
    except np.linalg.LinAlgError as exc:
        min_eig = float(np.linalg.eigvalsh(out).min())
        raise np.linalg.LinAlgError(
            f"matrix not positive definite after ridge {epsilon:g} "
            f"(min eigenvalue {min_eig:.3e})") from exc
    return out


def spd_solve(a, b) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive definite ``a`` via Cholesky."""
    factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def _quartic_eval(a4, a2, a1, a0, w):
    w2 = w * w
    return a4 * w2 * w2 + a2 * w2 + a1 * w + a0


def quartic_positive_roots_batch(a4, a2, a1, a0) -> np.ndarray:
    """Positive real roots of ``a4 w^4 + a2 w^2 + a1 w + a0`` (no cubic term).

    Coefficient arrays broadcast to a common length N.  Returns an ``(N, 4)``
    array, ascending within each row and NaN-padded.  Roots come from the
    eigenvalues of the companion matrix, polished with a few Newton steps and
    kept only if the polynomial residual is small relative to the coefficient
    scale.  Rows with ``a0 < 0`` are guaranteed at least one root (the
    polynomial changes sign on (0, inf)); a bisection fallback covers the
    rare case where the eigenvalue path misses it.
    """
    a4, a2, a1, a0 = np.broadcast_arrays(
        *[np.asarray(c, dtype=np.float64) for c in (a4, a2, a1, a0)])
    if a4.ndim != 1:
        a4, a2, a1, a0 = (np.atleast_1d(c).ravel() for c in (a4, a2, a1, a0))
    n = a4.size
    if np.any(a4 <= 0):
        raise ValueError("leading coefficient must be positive")

    comp = np.zeros((n, 4, 4))
    comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
    comp[:, 0, 3] = -a0 / a4
    comp[:, 1, 3] = -a1 / a4
    comp[:, 2, 3] = -a2 / a4
    ev = np.linalg.eigvals(comp)

    re, im = ev.real, ev.imag
    w = np.where((np.abs(im) <= 1e-7 * np.maximum(1.0, np.abs(re))) & (re > 0),
                 re, np.nan)

    coef_scale = np.maximum.reduce([np.abs(a2), np.abs(a1), np.abs(a0), a4])

    def _polish(w):
        c4, c2, c1, c0 = (c[:, None] for c in (a4, a2, a1, a0))
        for _ in range(3):
            w2 = w * w
            p = c4 * w2 * w2 + c2 * w2 + c1 * w + c0
            dp = 4.0 * c4 * w2 * w + 2.0 * c2 * w + c1
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(np.abs(dp) > 0, p / dp, 0.0)
            cand = w - step
            w2c = cand * cand
            pc = c4 * w2c * w2c + c2 * w2c + c1 * cand + c0
            better = np.isfinite(cand) & (cand > 0) & (np.abs(pc) <= np.abs(p))
            w = np.where(better, cand, w)
        return w

    w = _polish(w)
    residual = np.abs(_quartic_eval(a4[:, None], a2[:, None], a1[:, None],
                                    a0[:, None], w))
    bound = _QUARTIC_RESIDUAL_TOL * coef_scale[:, None] * \
        np.maximum(1.0, np.nan_to_num(w, nan=0.0) ** 4)
    w = np.where(residual <= bound, w, np.nan)

    # Guaranteed-root fallback for sign-changing rows the eigensolver missed.
    need = (a0 < 0) & np.all(np.isnan(w), axis=1)
    if need.any():
        idx = np.nonzero(need)[0]
        w[idx, 0] = _bisect_positive_root(a4[idx], a2[idx], a1[idx], a0[idx])

    return np.sort(w, axis=1)


def _bisect_positive_root(a4, a2, a1, a0) -> np.ndarray:
    # Cauchy bound: all roots have modulus <= 1 + max|c_i|/a4.
    hi = 1.0 + np.maximum.reduce([np.abs(a2), np.abs(a1), np.abs(a0)]) / a4
    lo = np.zeros_like(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        neg = _quartic_eval(a4, a2, a1, a0, mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    return 0.5 * (lo + hi)


def quartic_positive_roots(a4: float, a2: float, a1: float, a0: float) -> np.ndarray:
    """Positive real roots (ascending, deduplicated) of one quartic."""
    roots = quartic_positive_roots_batch([a4], [a2], [a1], [a0])[0]
    roots = roots[np.isfinite(roots)]
    if roots.size <= 1:
        return roots
    keep = np.ones(roots.size, dtype=bool)
    keep[1:] = np.diff(roots) > 1e-8 * np.maximum(1.0, roots[1:])
    return roots[keep]
