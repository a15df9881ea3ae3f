"""Gaussian random field sampling for input-function generation.

Fields are zero-mean Gaussian processes on a fixed grid of locations,
sampled by Cholesky factorisation of the (jittered) Gram matrix. Draws
come from the package's counter-based generator, so a (seed, grid,
kernel) triple reproduces samples bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng

RBF = "rbf"
RATIONAL_QUADRATIC = "rational_quadratic"


@dataclass(frozen=True)
class KernelSpec:
    """Covariance kernel choice plus numerical jitter.

    ``as_printed`` switches the rational-quadratic kernel to the variant
    with an outer exponential, exp(1 + d^2 / (2 rho l^2))^(-rho). That
    form is algebraically e^(-rho) times an RBF kernel of the same
    lengthscale and does not have unit diagonal; the standard form
    (1 + d^2 / (2 rho l^2))^(-rho) is the default.
    """

    kind: str = RBF
    lengthscale: float = 0.5
    scale_mixture: float | None = None
    jitter: float = 1e-6
    as_printed: bool = False

    def __post_init__(self):
        if self.kind not in (RBF, RATIONAL_QUADRATIC):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if self.kind == RATIONAL_QUADRATIC:
            if self.scale_mixture is None or not self.scale_mixture > 0:
                raise ValueError("rational_quadratic needs a positive scale_mixture")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "lengthscale": self.lengthscale, "jitter": self.jitter}
        if self.kind == RATIONAL_QUADRATIC:
            out["scale_mixture"] = self.scale_mixture
            out["as_printed"] = self.as_printed
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(kind=data["kind"], lengthscale=data["lengthscale"],
                   scale_mixture=data.get("scale_mixture"),
                   jitter=data.get("jitter", 1e-6),
                   as_printed=data.get("as_printed", False))


def _sq_dists(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    diff = x[:, None, :] - x[None, :, :]
    return np.sum(diff * diff, axis=-1)


def gram(kernel: KernelSpec, locations: np.ndarray) -> np.ndarray:
    """Gram matrix K[i, j] = kappa(x_i, x_j), without jitter."""
    d2 = _sq_dists(locations)
    ell2 = kernel.lengthscale ** 2
    if kernel.kind == RBF:
        out = np.exp(-d2 / (2.0 * ell2))
    else:
        rho = kernel.scale_mixture
        base = 1.0 + d2 / (2.0 * rho * ell2)
        out = np.exp(base) ** (-rho) if kernel.as_printed else base ** (-rho)
    if not np.all(np.isfinite(out)):
        raise ValueError("gram: non-finite kernel entries (check locations)")
    return out


def cholesky_factor(k: np.ndarray, jitter: float = 1e-6) -> np.ndarray:
    """Lower-triangular L with L L^T = K + jitter * I."""
    k = np.asarray(k, dtype=np.float64)
    jittered = k + jitter * np.eye(k.shape[0])
    try:
        return np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError:
        raise ValueError(
            f"Cholesky failed at jitter={jitter:g}; the Gram matrix is not positive "
            "definite at this precision, try a larger jitter") from None


@dataclass(frozen=True)
class GrfSampler:
    """Immutable sampler: kernel + grid + precomputed Cholesky factor."""

    kernel: KernelSpec
    grid: np.ndarray
    chol: np.ndarray = field(repr=False)
    seed: int = 0

    @classmethod
    def build(cls, kernel: KernelSpec, grid: np.ndarray, seed: int = 0) -> "GrfSampler":
        grid = np.asarray(grid, dtype=np.float64)
        chol = cholesky_factor(gram(kernel, grid), kernel.jitter)
        return cls(kernel=kernel, grid=grid, chol=chol, seed=seed)

    @property
    def n_points(self) -> int:
        return self.chol.shape[0]


def sample(sampler: GrfSampler, n: int) -> np.ndarray:
    """n field draws, one per row. Pure function of (sampler, n)."""
    if n < 1:
        raise ValueError("need at least one sample")
    m = sampler.n_points
    z = rng.standard_normals(sampler.seed, n * m).reshape(n, m)
    return z @ sampler.chol.T


def periodic_embed(x: np.ndarray) -> np.ndarray:
    """Coordinate transform m(x) = sin^2(2 pi x) for periodic-compatible fields.

    x is reduced modulo 1 first so that m(0) and m(1) coincide exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.sin(2.0 * np.pi * np.mod(x, 1.0))
    return s * s


def sample_periodic(kernel: KernelSpec, x: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Field draws over x in [0, 1] with u(0) == u(1) exactly.

    The kernel is evaluated on the embedded coordinates of the grid points
    with the final one dropped when it aliases the first (x=1 maps onto
    x=0); the closing value is then copied, so endpoint equality is exact
    rather than jitter-perturbed.
    """
    x = np.asarray(x, dtype=np.float64)
    coords = periodic_embed(x)
    closed = x.size > 1 and coords[0] == coords[-1]
    unique = coords[:-1] if closed else coords
    sampler = GrfSampler.build(kernel, unique, seed=seed)
    draws = sample(sampler, n)
    if closed:
        draws = np.concatenate([draws, draws[:, :1]], axis=1)
    return draws
