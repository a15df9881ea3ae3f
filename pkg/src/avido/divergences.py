"""Renyi alpha-divergence estimators and closed-form Gaussian references.

The divergence family follows the parameterisation

    D_alpha(q || p) = 1 / (alpha (alpha - 1)) * log E_q[(p/q)^(1-alpha)]

which recovers the forward KL divergence KL(q || p) as alpha -> 1 and
KL(p || q) as alpha -> 0. Monte-Carlo estimates are always computed in
log space with max subtraction; for mean-field Gaussians against a
factorised Gaussian prior the alpha = 1 case has an exact closed form
and is dispatched there.

An infinite divergence (the Gaussian closed form when the variance
mixture alpha sigma_p^2 + (1 - alpha) sigma_q^2 is non-positive) is
reported as the sentinel ``math.inf`` rather than an exception so that
alpha sweeps can record it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .autodiff import (LOG_2PI, NumericFault, Tensor, affine, log, log_sum_exp,
                       softplus, square, subtract, tsum)

INFINITE_DIVERGENCE = math.inf


@dataclass(frozen=True)
class AlphaSetting:
    """Divergence order; 1 dispatches to the closed-form KLD path."""

    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("alpha must be finite")

    @property
    def is_kld(self) -> bool:
        return self.value == 1.0


def kld_gaussian_closed(mu_q, sigma_q, mu_p=0.0, sigma_p=1.0) -> float:
    """KL(q || p) for factorised Gaussians, summed over components."""
    mu_q, sigma_q = np.asarray(mu_q, dtype=np.float64), np.asarray(sigma_q, dtype=np.float64)
    mu_p, sigma_p = np.broadcast_to(mu_p, mu_q.shape), np.broadcast_to(sigma_p, mu_q.shape)
    if np.any(sigma_q <= 0) or np.any(sigma_p <= 0):
        raise ValueError("standard deviations must be positive")
    var_ratio = (sigma_q / sigma_p) ** 2
    return float(np.sum(np.log(sigma_p / sigma_q)
                        + 0.5 * (var_ratio + ((mu_q - mu_p) / sigma_p) ** 2 - 1.0)))


def renyi_gaussian_closed(q: tuple[float, float], p: tuple[float, float], alpha: float) -> float:
    """Closed-form divergence between 1-D Gaussians q = (mean, std), p = (mean, std).

    Derived from the Gaussian integral of q^alpha p^(1-alpha): with
    A = alpha/sq^2 + (1-alpha)/sp^2, B = alpha mq/sq^2 + (1-alpha) mp/sp^2
    and C = alpha mq^2/sq^2 + (1-alpha) mp^2/sp^2,

        log E_q[(p/q)^(1-alpha)] =
            -alpha log sq - (1-alpha) log sp - log(A)/2 + (B^2/A - C)/2.

    A is positive exactly when the variance mixture
    alpha sp^2 + (1-alpha) sq^2 is; otherwise the integral diverges and
    the sentinel is returned. alpha = 1 and alpha = 0 use the KLD limits.
    """
    mq, sq = q
    mp_, sp = p
    if sq <= 0 or sp <= 0:
        raise ValueError("standard deviations must be positive")
    if alpha == 1.0:
        return kld_gaussian_closed(mq, sq, mp_, sp)
    if alpha == 0.0:
        return kld_gaussian_closed(mp_, sp, mq, sq)
    mixture = alpha * sp * sp + (1.0 - alpha) * sq * sq
    if mixture <= 0.0:
        return INFINITE_DIVERGENCE
    a = alpha / (sq * sq) + (1.0 - alpha) / (sp * sp)
    b = alpha * mq / (sq * sq) + (1.0 - alpha) * mp_ / (sp * sp)
    c = alpha * mq * mq / (sq * sq) + (1.0 - alpha) * mp_ * mp_ / (sp * sp)
    log_integral = (-alpha * math.log(sq) - (1.0 - alpha) * math.log(sp)
                    - 0.5 * math.log(a) + 0.5 * (b * b / a - c))
    return log_integral / (alpha * (alpha - 1.0))


def _gaussian_log_pdf_np(x: np.ndarray, mean: float, std: float) -> np.ndarray:
    z = (x - mean) / std
    return -0.5 * LOG_2PI - np.log(std) - 0.5 * z * z


def renyi_alpha_mc_gaussian(q: tuple[float, float], p: tuple[float, float], alpha: float,
                            n_samples: int, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate (and its standard error) for 1-D Gaussians.

    Samples theta ~ q by reparameterisation, forms the per-sample log
    ratios log p - log q, and applies the log-sum-exp transform. The
    standard error follows from the delta method on the mean of the
    exponentiated ratios.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if alpha in (0.0, 1.0):
        raise ValueError("the generic estimator excludes alpha in {0, 1}")
    mq, sq = q
    theta = mq + sq * rng.standard_normals(seed, n_samples)
    log_ratio = _gaussian_log_pdf_np(theta, p[0], p[1]) - _gaussian_log_pdf_np(theta, mq, sq)
    scaled = (1.0 - alpha) * log_ratio
    if not np.all(np.isfinite(scaled)):
        raise NumericFault("non-finite log ratio in Monte-Carlo estimate")
    peak = float(np.max(scaled))
    w = np.exp(scaled - peak)
    mean_w = float(np.mean(w))
    prefactor = 1.0 / (alpha * (alpha - 1.0))
    estimate = prefactor * (peak + math.log(mean_w))
    se = float(np.std(w, ddof=1)) / (math.sqrt(n_samples) * mean_w * abs(alpha * (alpha - 1.0)))
    return estimate, se


def renyi_alpha_term(log_p: Tensor, log_q: Tensor, alpha: float) -> Tensor:
    """Differentiable Monte-Carlo divergence from per-sample log densities.

    log_p and log_q are (C,) tensors of log density values at C samples
    drawn from q by reparameterisation; gradients flow through both via
    the sampled parameters and through log_q's explicit dependence on the
    variational parameters.
    """
    if alpha in (0.0, 1.0):
        raise ValueError("the generic estimator excludes alpha in {0, 1}")
    if log_p.shape != log_q.shape or log_p.ndim != 1:
        raise ValueError("log_p and log_q must be matching (C,) tensors")
    n = log_p.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    scaled = affine(subtract(log_p, log_q), 1.0 - alpha, 0.0)
    prefactor = 1.0 / (alpha * (alpha - 1.0))
    return affine(log_sum_exp(scaled, axis=0), prefactor, -prefactor * math.log(n))


def kld_mfn_standard_normal(mu: Tensor, rho: Tensor) -> Tensor:
    """Exact KL(q || N(0, I)) for the mean-field posterior, on the graph."""
    std = softplus(rho)
    per_component = subtract(affine(tsum(square(std)) + tsum(square(mu)), 0.5, 0.0),
                             tsum(log(std)))
    n = mu.data.size
    return affine(per_component, 1.0, -0.5 * n)
