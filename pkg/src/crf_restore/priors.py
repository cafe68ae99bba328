"""Per-cluster patch priors: multivariate Gaussian and Gaussian scale mixture.

Both priors are fitted to the members of a cluster of similar patches and
supply the closed-form minimizer of the per-patch subproblem

    min_z  -log p(z) + (lam/2) ||rx - z||^2 + (rho/2) ||h*z - q||^2

(general form; the denoising variant folds the data term ||y - z||^2/(2*s^2)
in instead of the q coupling).

The scale-mixture prior models a patch as ``z = sqrt(v) * u`` with ``u``
Gaussian and ``v`` a positive scalar with a Gamma(alpha, beta) prior.  With
``beta = sqrt(alpha) * Gamma(alpha) / Gamma(alpha + 1/2)`` the covariance of
``u`` is the patch covariance scaled by ``beta / alpha``, so the latent
parameters come from the same sample statistics as the Gaussian prior.  Given
``v`` the prior is Gaussian again, and ``v`` itself has a MAP estimate whose
stationarity condition is a quartic in ``w = sqrt(v)``:

    beta*w^4 + (1 - alpha + n/2)*w^2 + (c/2)*w - d/2 = 0,

with ``d = z' Sigma^-1 z`` and ``c = z' Sigma^-1 mu_u``.  We take all positive
roots, score them with the scalar objective

    f(v) = beta*v + (1 - alpha + n/2)*log v + d/(2v) - c/sqrt(v),

and keep the minimizer.  ``scale_from_root`` selects how a root ``w`` maps to
the scale: ``"square"`` uses ``v = w**2`` (consistent with the substitution
above) while ``"sqrt"`` uses ``v = sqrt(w)``; both are kept selectable.

Functions suffixed ``_batch`` are vectorized equivalents used by the solver;
they share one prior across a batch of patches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics

__all__ = [
    "GaussianParams",
    "GSMParams",
    "GSMConfig",
    "covariance_ridge",
    "gaussian_estimate",
    "gaussian_update_z",
    "gaussian_update_z_denoising",
    "matched_gamma_rate",
    "gsm_map_params",
    "gsm_estimate_v",
    "gsm_update_z",
    "scale_objective",
    "estimate_scale_batch",
    "update_z_denoise_batch",
    "update_z_inpaint_batch",
]

# Ridge = RIDGE_SCALE * max(mean sample variance, noise variance, floor).
# The floor keeps the ridge positive for constant clusters in noiseless runs.
RIDGE_SCALE = 1e-3
RIDGE_VARIANCE_FLOOR = 1e-3


@dataclass(frozen=True)
class GaussianParams:
    """Mean and (ridge-regularized, positive definite) covariance."""

    mu: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class GSMParams:
    """Latent Gaussian factor statistics plus the Gamma prior on the scale."""

    sigma: np.ndarray   # covariance of the latent factor u
    mu_u: np.ndarray    # mean of the latent factor u
    alpha: float
    beta: float


@dataclass(frozen=True)
class GSMConfig:
    alpha: float = 0.5
    scale_from_root: str = "square"   # "square" (v = w^2) or "sqrt" (v = sqrt(w))

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.scale_from_root not in ("square", "sqrt"):
            raise ValueError("scale_from_root must be 'square' or 'sqrt'")


def covariance_ridge(cov: np.ndarray, noise_sigma: float = 0.0) -> float:
    n = cov.shape[0]
    scale = max(float(np.trace(cov)) / n, noise_sigma ** 2, RIDGE_VARIANCE_FLOOR)
    return RIDGE_SCALE * scale


def gaussian_estimate(vectors, noise_sigma: float = 0.0) -> GaussianParams:
    """Maximum-likelihood mean and covariance of a cluster, plus the ridge."""
    mean, cov = numerics.sample_stats(vectors)
    eps = covariance_ridge(cov, noise_sigma)
    return GaussianParams(mean, numerics.regularize_spd(cov, eps))


def _inv_spd(a: np.ndarray) -> np.ndarray:
    inv = numerics.spd_solve(a, np.eye(a.shape[0]))
    return 0.5 * (inv + inv.T)


def gaussian_update_z(params: GaussianParams, rx, q, h, lam: float,
                      rho: float) -> np.ndarray:
    """Minimizer of the general per-patch subproblem under the Gaussian prior:

    z = (C^-1 + lam*I + rho*diag(h))^-1 (C^-1 mu + lam*rx + rho*h*q)
    """
    rx = np.asarray(rx, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    cinv = _inv_spd(params.cov)
    a = cinv.copy()
    a[np.diag_indices_from(a)] += lam + rho * h
    rhs = cinv @ params.mu + lam * rx + rho * (h * q)
    return numerics.spd_solve(a, rhs)


def gaussian_update_z_denoising(params: GaussianParams, rx, y_patch,
                                lam: float, sigma2: float) -> np.ndarray:
    """Denoising variant with the data term folded in (identity observation):

    z = (C^-1 + (lam + 1/sigma2)*I)^-1 (C^-1 mu + lam*rx + y/sigma2)
    """
    rx = np.asarray(rx, dtype=np.float64)
    y_patch = np.asarray(y_patch, dtype=np.float64)
    cinv = _inv_spd(params.cov)
    a = cinv.copy()
    a[np.diag_indices_from(a)] += lam + 1.0 / sigma2
    rhs = cinv @ params.mu + lam * rx + y_patch / sigma2
    return numerics.spd_solve(a, rhs)


def matched_gamma_rate(alpha: float) -> float:
    """Gamma rate making the latent covariance a pure rescaling of the patch
    covariance: beta = sqrt(alpha) * Gamma(alpha) / Gamma(alpha + 1/2)."""
    return math.sqrt(alpha) * math.exp(
        numerics.log_gamma(alpha) - numerics.log_gamma(alpha + 0.5))


def gsm_map_params(cov, mu_z, alpha: float) -> GSMParams:
    """Latent-factor parameters from patch statistics.

    With the matched rate, cov(z) = (alpha/beta) * Sigma, so Sigma is cov
    scaled by beta/alpha; the latent mean absorbs E(sqrt(v)) = sqrt(alpha/beta),
    giving mu_u = mu_z * sqrt(beta/alpha).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    beta = matched_gamma_rate(alpha)
    k = beta / alpha
    return GSMParams(k * np.asarray(cov, dtype=np.float64),
                     math.sqrt(k) * np.asarray(mu_z, dtype=np.float64),
                     alpha, beta)


def scale_objective(v, alpha: float, beta: float, n: int, c, d):
    """Negative log posterior of the scale given the patch, up to constants."""
    v = np.asarray(v, dtype=np.float64)
    return beta * v + (1.0 - alpha + 0.5 * n) * np.log(v) + d / (2.0 * v) \
        - c / np.sqrt(v)


def _pick_scale(roots, alpha, beta, n, c, d, mode):
    """Score quartic roots with the scale objective and keep the best.

    ``roots`` is (m, 4) NaN-padded; returns (m,) scales with 1.0 where no
    positive root exists (only possible for d <= 0, i.e. a zero patch).
    """
    vs = roots ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        score = scale_objective(vs, alpha, beta, n,
                                np.asarray(c)[:, None], np.asarray(d)[:, None])
    score = np.where(np.isfinite(score), score, np.inf)
    best = np.argmin(score, axis=1)
    take = np.take_along_axis
    w_best = take(roots, best[:, None], axis=1)[:, 0]
    has_root = np.isfinite(w_best)
    if mode == "square":
        v = w_best ** 2
    else:
        v = np.sqrt(w_best)
    return np.where(has_root, v, 1.0)


def gsm_estimate_v(params: GSMParams, z, mode: str = "square") -> float:
    """MAP estimate of the per-patch scale given the current patch value."""
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    sigma_inv = _inv_spd(params.sigma)
    d = float(z @ sigma_inv @ z)
    c = float(z @ sigma_inv @ params.mu_u)
    if d <= 0.0:
        return 1.0
    roots = numerics.quartic_positive_roots_batch(
        [params.beta], [1.0 - params.alpha + 0.5 * n], [0.5 * c], [-0.5 * d])
    return float(_pick_scale(roots, params.alpha, params.beta, n,
                             [c], [d], mode)[0])


def gsm_update_z(params: GSMParams, v: float, rx, q, h, lam: float,
                 rho: float) -> np.ndarray:
    """Gaussian update conditioned on the scale (prior N(sqrt(v)*mu_u, v*Sigma)):

    z = (Sigma^-1/v + lam*I + rho*diag(h))^-1 (Sigma^-1 mu_u / sqrt(v) + lam*rx + rho*h*q)
    """
    if v <= 0:
        raise ValueError("scale v must be positive")
    rx = np.asarray(rx, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    sigma_inv = _inv_spd(params.sigma)
    a = sigma_inv / v
    a[np.diag_indices_from(a)] += lam + rho * h
    rhs = sigma_inv @ params.mu_u / math.sqrt(v) + lam * rx + rho * (h * q)
    return numerics.spd_solve(a, rhs)


# ---------------------------------------------------------------------------
# Batched kernels.  One cluster prior, many patches.  The Gaussian prior is
# the inv_scale = 1 special case of the scaled-precision form used by the
# scale mixture, so a single implementation serves both.

def estimate_scale_batch(evals, evecs, mu, vectors, alpha: float, beta: float,
                         mode: str = "square") -> np.ndarray:
    """Per-patch MAP scales for a batch of patches sharing one prior.

    ``evals, evecs`` factorize the latent covariance Sigma; ``mu`` is the
    latent mean.  ``vectors`` has shape (m, n).
    """
    v = np.asarray(vectors, dtype=np.float64)
    m, n = v.shape
    t = (evecs.T @ v.T) / np.sqrt(evals)[:, None]      # whitened patches, (n, m)
    mu_t = (evecs.T @ mu) / np.sqrt(evals)
    d = np.einsum("ij,ij->j", t, t)
    c = mu_t @ t
    roots = numerics.quartic_positive_roots_batch(
        np.full(m, beta), np.full(m, 1.0 - alpha + 0.5 * n), 0.5 * c, -0.5 * d)
    scales = _pick_scale(roots, alpha, beta, n, c, d, mode)
    return np.where(d > 0.0, scales, 1.0)


def update_z_denoise_batch(evals, evecs, mu, inv_scale, rx, y, lam: float,
                           sigma2: float) -> np.ndarray:
    """Batched denoising update sharing one prior factorization.

    Solves (s_i*P + (lam + 1/sigma2)*I) z_i = sqrt(s_i)*P*mu + lam*rx_i + y_i/sigma2
    where P = evecs diag(1/evals) evecs' and s_i = inv_scale[i]; diagonalizing
    in the prior eigenbasis makes each system diagonal.
    """
    rx = np.asarray(rx, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inv_scale = np.asarray(inv_scale, dtype=np.float64)
    pmu = evecs @ ((evecs.T @ mu) / evals)
    rhs = np.sqrt(inv_scale)[:, None] * pmu + lam * rx + y / sigma2
    t = evecs.T @ rhs.T                                  # (n, m)
    denom = inv_scale[None, :] / evals[:, None] + (lam + 1.0 / sigma2)
    return (evecs @ (t / denom)).T


def update_z_inpaint_batch(prec, mu, inv_scale, rx, q, h, lam: float,
                           rho: float) -> np.ndarray:
    """Batched general update; the masked coupling makes each system distinct.

    Solves (s_i*P + lam*I + rho*diag(h_i)) z_i = sqrt(s_i)*P*mu + lam*rx_i + rho*h_i*q_i.
    """
    rx = np.asarray(rx, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    inv_scale = np.asarray(inv_scale, dtype=np.float64)
    m, n = rx.shape
    a = inv_scale[:, None, None] * prec
    idx = np.arange(n)
    a[:, idx, idx] += lam + rho * h
    rhs = np.sqrt(inv_scale)[:, None] * (prec @ mu) + lam * rx + rho * (h * q)
    return np.linalg.solve(a, rhs[..., None])[..., 0]
