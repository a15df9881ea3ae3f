"""Predictive ensembles and test metrics (NMSE, NLL, confidence bands).

A prediction is a two-stage sample: a parameter draw from the posterior,
then a Gaussian observation around that draw's (mean, std) output. The
ensemble over S parameter draws is kept componentwise so the metrics can
use the exact mixture density; summary statistics follow the law of
total variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import rng
from .autodiff import LOG_2PI, Tensor, softplus_values
from .model import DETERMINISTIC, DeepONet, forward
from .problems import OperatorDataset


@dataclass
class PredictiveDistribution:
    """Componentwise Gaussian mixture per (example, query point)."""

    component_means: np.ndarray  # (S, N1, N2)
    component_stds: np.ndarray   # (S, N1, N2)

    @property
    def n_components(self) -> int:
        return self.component_means.shape[0]

    @property
    def ensemble_mean(self) -> np.ndarray:
        return self.component_means.mean(axis=0)

    @property
    def total_variance(self) -> np.ndarray:
        """Mean of component variances plus variance of component means."""
        return (self.component_stds ** 2).mean(axis=0) + self.component_means.var(axis=0)

    @property
    def total_std(self) -> np.ndarray:
        return np.sqrt(self.total_variance)

    def interval(self, level: float = 0.95, likelihood_draws: int = 1,
                 seed: int = 0, min_draws: int = 200) -> tuple[np.ndarray, np.ndarray]:
        """Empirical central interval from S * T two-stage draws.

        T is raised if needed so the band rests on at least ``min_draws``
        samples; tail quantiles from a handful of draws are too noisy to
        honour the band ordering guarantees.
        """
        s, n1, n2 = self.component_means.shape
        t = max(likelihood_draws, -(-min_draws // s))
        z = rng.standard_normals(seed, s * t * n1 * n2).reshape(s * t, n1, n2)
        draws = np.repeat(self.component_means, t, axis=0) + np.repeat(self.component_stds, t, axis=0) * z
        lo = (1.0 - level) / 2.0
        lower = np.quantile(draws, lo, axis=0)
        upper = np.quantile(draws, 1.0 - lo, axis=0)
        return lower, upper


def predict(model: DeepONet, a, y, n_draws: int = 100, seed: int = 0,
            chunk_size: int = 2000) -> PredictiveDistribution:
    """Forward the model under n_draws posterior samples (one for a
    deterministic model), batching over examples to bound memory."""
    if n_draws < 1:
        raise ValueError("need at least one posterior draw")
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 3 and y.shape[0] > 1 and np.array_equal(y, np.broadcast_to(y[:1], y.shape)):
        y = y[0]  # identical per-example query grids collapse to one trunk pass
    if model.kind == DETERMINISTIC:
        theta = model.theta.data[None, :]
    else:
        n = model.n_parameters
        eps = rng.standard_normals(rng.split(seed, 0), n_draws * n).reshape(n_draws, n)
        theta = model.mu.data[None, :] + softplus_values(model.rho.data)[None, :] * eps
    theta_t = Tensor(theta)
    n1 = a.shape[0]
    means, stds = [], []
    for start in range(0, n1, chunk_size):
        stop = min(start + chunk_size, n1)
        y_chunk = y if y.ndim == 2 else y[start:stop]
        mean, sigma = forward(model, theta_t, a[start:stop], y_chunk)
        means.append(mean.data)
        stds.append(sigma.data)
    return PredictiveDistribution(component_means=np.concatenate(means, axis=1),
                                  component_stds=np.concatenate(stds, axis=1))


def nmse(pred_mean: np.ndarray, targets: np.ndarray) -> float:
    """Mean over examples of ||error||^2 / ||target||^2.

    Examples whose targets have zero norm are excluded with a warning.
    """
    pred_mean = np.asarray(pred_mean, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if pred_mean.shape != targets.shape:
        raise ValueError(f"shape mismatch: {pred_mean.shape} vs {targets.shape}")
    err = np.sum((pred_mean - targets) ** 2, axis=-1)
    norm = np.sum(targets ** 2, axis=-1)
    keep = norm > 0.0
    skipped = int(np.size(keep) - np.count_nonzero(keep))
    if skipped:
        warnings.warn(f"nmse: excluded {skipped} zero-norm target example(s)")
        if not np.any(keep):
            raise ValueError("nmse: every target example has zero norm")
    return float(np.mean(err[keep] / norm[keep]))


def nll(predictive: PredictiveDistribution, targets: np.ndarray, mode: str = "mixture") -> float:
    """Negative log-likelihood of the targets under the predictive ensemble.

    mixture:        exact density of the two-stage sampling process,
                    -log mean_s N(target; mu_s, sigma_s) via log-sum-exp
    moment_matched: single Gaussian with the ensemble mean and total std
    """
    targets = np.asarray(targets, dtype=np.float64)
    if mode == "moment_matched":
        mu = predictive.ensemble_mean
        var = predictive.total_variance
        log_pdf = -0.5 * LOG_2PI - 0.5 * np.log(var) - 0.5 * (targets - mu) ** 2 / var
        return float(-np.mean(log_pdf))
    if mode != "mixture":
        raise ValueError(f"unknown nll mode {mode!r}")
    mu = predictive.component_means
    sigma = predictive.component_stds
    z = (targets[None, ...] - mu) / sigma
    comp = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z
    peak = comp.max(axis=0, keepdims=True)
    log_mix = peak[0] + np.log(np.mean(np.exp(comp - peak), axis=0))
    return float(-np.mean(log_mix))


def metrics_from_predictive(predictive: PredictiveDistribution, targets: np.ndarray,
                            nll_mode: str = "mixture") -> dict:
    return {"nmse": nmse(predictive.ensemble_mean, targets),
            "nll": nll(predictive, targets, mode=nll_mode)}


def evaluate_run(model: DeepONet, dataset: OperatorDataset, n_draws: int = 100,
                 seed: int = 0, nll_mode: str = "mixture") -> dict:
    """NMSE and NLL of one trained model on one dataset."""
    predictive = predict(model, dataset.branch_inputs, dataset.query_points,
                         n_draws=n_draws, seed=seed)
    return metrics_from_predictive(predictive, dataset.targets, nll_mode=nll_mode)


def aggregate_runs(values) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0 for one value."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("nothing to aggregate")
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


def interval_rows(predictive: PredictiveDistribution, dataset: OperatorDataset,
                  example: int, likelihood_draws: int = 1, seed: int = 0) -> list[dict]:
    """Per-query rows (coordinates, truth, mean, 95% band) for one example."""
    lower, upper = predictive.interval(likelihood_draws=likelihood_draws, seed=seed)
    mean = predictive.ensemble_mean
    rows = []
    for k in range(dataset.n_queries):
        coords = dataset.query_points[example, k]
        row = {f"y{j}": float(coords[j]) for j in range(coords.size)}
        row.update({"true": float(dataset.targets[example, k]),
                    "mean": float(mean[example, k]),
                    "lower95": float(lower[example, k]),
                    "upper95": float(upper[example, k])})
        rows.append(row)
    return rows
