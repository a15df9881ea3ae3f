"""Branch/trunk operator networks with a heteroscedastic Gaussian head.

The branch net consumes the sensor samples of an input function, the
trunk net consumes query coordinates; each emits 2P features. The first
P-halves combine by dot product into the predictive mean, the second
halves into a raw scale that is mapped through softplus (plus a floor)
to the predictive standard deviation.

A variational model keeps a mean-field normal posterior over the flat
parameter vector: eta = (mu, rho) with effective std softplus(rho).
A deterministic model keeps the flat vector itself. Both kinds share one
forward implementation, so a deterministic forward equals a variational
forward evaluated at epsilon = 0.

Flat parameter layout (defines the epsilon vector and the checkpoint
order): branch layer weights (in, out) row-major then bias (out,), for
each layer in order; the same for the trunk; then the two scalar head
biases (mean, scale).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .autodiff import (Tensor, add, affine, constant, dense, gaussian_log_pdf, multiply,
                       pairdot, reshape, slice_last, softplus, tsum)
from .container import read_checkpoint, write_checkpoint

ARCHITECTURE_TABLE = {
    # problem: (width, depth, trunk input dim); depth counts weight layers,
    # the last of which is the linear projection to 2P features.
    "antiderivative": (25, 3, 1),
    "pendulum": (25, 3, 1),
    "diffusion_reaction": (25, 4, 2),
    "advection_diffusion": (35, 4, 2),
}

VARIATIONAL = "variational"
DETERMINISTIC = "deterministic"

# Initialization: Glorot-scaled weight means, zero bias means, a scale-head
# bias that starts the predictive std near the data scale of unit-box
# problems, and a small initial posterior std. Small constant-scale means
# (e.g. N(0, 0.05^2)) stall full-batch Adam at the desk epoch budget.
INIT_SCALE_BIAS = -1.25  # softplus(-1.25) ~ 0.25
INIT_RHO = -5.0          # posterior std softplus(-5) ~ 0.0067


@dataclass(frozen=True)
class Architecture:
    """Layer widths for both stacks; the final entries must equal 2P."""

    branch_dims: tuple[int, ...]
    trunk_dims: tuple[int, ...]
    p: int
    sigma_floor: float = 1e-3

    def __post_init__(self):
        if self.branch_dims[-1] != 2 * self.p or self.trunk_dims[-1] != 2 * self.p:
            raise ValueError("final layer width must be 2P for the two heads")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")

    @property
    def parameter_count(self) -> int:
        total = 2  # the two scalar head biases
        for dims in (self.branch_dims, self.trunk_dims):
            total += sum((din + 1) * dout for din, dout in zip(dims[:-1], dims[1:]))
        return total

    def to_dict(self) -> dict:
        return {"branch_dims": list(self.branch_dims), "trunk_dims": list(self.trunk_dims),
                "p": self.p, "sigma_floor": self.sigma_floor}

    @classmethod
    def from_dict(cls, data: dict) -> "Architecture":
        return cls(branch_dims=tuple(data["branch_dims"]), trunk_dims=tuple(data["trunk_dims"]),
                   p=data["p"], sigma_floor=data["sigma_floor"])


def standard_architecture(problem: str, n_sensors: int = 100) -> Architecture:
    width, depth, trunk_in = ARCHITECTURE_TABLE[problem]
    p = width
    branch = (n_sensors,) + (width,) * (depth - 1) + (2 * p,)
    trunk = (trunk_in,) + (width,) * (depth - 1) + (2 * p,)
    return Architecture(branch_dims=branch, trunk_dims=trunk, p=p)


class ParameterLayout:
    """Named slices of the flat parameter vector."""

    def __init__(self, arch: Architecture):
        entries: list[tuple[str, tuple[int, ...]]] = []
        for net, dims in (("branch", arch.branch_dims), ("trunk", arch.trunk_dims)):
            for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
                entries.append((f"{net}.w{i}", (din, dout)))
                entries.append((f"{net}.b{i}", (dout,)))
        entries.append(("head.mean_bias", ()))
        entries.append(("head.scale_bias", ()))
        self.entries = entries
        self.offsets = {}
        offset = 0
        for name, shape in entries:
            size = int(np.prod(shape)) if shape else 1
            self.offsets[name] = (offset, offset + size, shape)
            offset += size
        self.size = offset

    def split(self, flat: Tensor) -> dict[str, Tensor]:
        lead = flat.shape[:-1]
        parts = {}
        for name, (start, stop, shape) in self.offsets.items():
            parts[name] = reshape(slice_last(flat, start, stop), lead + shape)
        return parts


class DeepONet:
    """Operator network with either variational or point parameters."""

    def __init__(self, arch: Architecture, kind: str = VARIATIONAL, seed: int = 0,
                 params: dict[str, np.ndarray] | None = None):
        if kind not in (VARIATIONAL, DETERMINISTIC):
            raise ValueError(f"unknown model kind {kind!r}")
        self.arch = arch
        self.kind = kind
        self.seed = seed
        self.layout = ParameterLayout(arch)
        n = self.layout.size
        if n != arch.parameter_count:
            raise AssertionError("layout size disagrees with closed-form parameter count")
        if params is None:
            means = self._initial_means(seed)
            if kind == VARIATIONAL:
                params = {"mu": means, "rho": np.full(n, INIT_RHO)}
            else:
                params = {"theta": means}
        if kind == VARIATIONAL:
            self.mu = Tensor(params["mu"], requires_grad=True)
            self.rho = Tensor(params["rho"], requires_grad=True)
        else:
            self.theta = Tensor(params["theta"], requires_grad=True)

    def _initial_means(self, seed: int) -> np.ndarray:
        z = rng.standard_normals(rng.split(seed, 0), self.layout.size)
        means = np.zeros(self.layout.size)
        for name, (start, stop, shape) in self.layout.offsets.items():
            if len(shape) == 2:
                fan_in, fan_out = shape
                means[start:stop] = z[start:stop] * np.sqrt(2.0 / (fan_in + fan_out))
        start, stop, _ = self.layout.offsets["head.scale_bias"]
        means[start] = INIT_SCALE_BIAS
        return means

    @property
    def n_parameters(self) -> int:
        return self.layout.size

    def parameters(self) -> list[Tensor]:
        if self.kind == VARIATIONAL:
            return [self.mu, self.rho]
        return [self.theta]

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        if self.kind == VARIATIONAL:
            return {"mu": self.mu.data.copy(), "rho": self.rho.data.copy()}
        return {"theta": self.theta.data.copy()}

    def posterior_std(self) -> np.ndarray:
        from .autodiff import softplus_values
        return softplus_values(self.rho.data)

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"kind": self.kind, "seed": self.seed, "architecture": self.arch.to_dict()}
        if extra_meta:
            meta.update(extra_meta)
        write_checkpoint(path, meta, self.parameter_arrays())

    @classmethod
    def load(cls, path) -> tuple["DeepONet", dict]:
        meta, arrays = read_checkpoint(path)
        arch = Architecture.from_dict(meta["architecture"])
        model = cls(arch, kind=meta["kind"], seed=meta.get("seed", 0), params=arrays)
        return model, meta


def sample_parameters(model: DeepONet, epsilon) -> Tensor:
    """Reparameterised draw theta = mu + softplus(rho) * epsilon.

    epsilon has shape (L,) for one draw or (C, L) for a stack of draws;
    the result stays differentiable with respect to (mu, rho).
    """
    if model.kind != VARIATIONAL:
        raise ValueError("sample_parameters needs a variational model")
    eps = epsilon if isinstance(epsilon, Tensor) else constant(epsilon)
    if eps.shape[-1] != model.n_parameters:
        raise ValueError(f"epsilon has length {eps.shape[-1]}, model has {model.n_parameters} parameters")
    return add(multiply(softplus(model.rho), eps), model.mu)


def _stack_forward(parts: dict[str, Tensor], net: str, dims: tuple[int, ...],
                   x: Tensor, lead: tuple[int, ...]) -> Tensor:
    h = x
    n_layers = len(dims) - 1
    for i in range(n_layers):
        w = parts[f"{net}.w{i}"]
        b = reshape(parts[f"{net}.b{i}"], lead + (1, dims[i + 1]))
        h = dense(h, w, b, activation="tanh" if i < n_layers - 1 else "identity")
    return h


def forward(model: DeepONet, theta: Tensor, a, y) -> tuple[Tensor, Tensor]:
    """Predictive mean and std per (example, query point).

    a: (N1, M) sensor samples. y: (N2, D) shared query points, or
    (N1, N2, D) per-example query points. theta: flat parameters, (L,) or
    (C, L) for a stack of Monte-Carlo draws. Output shapes are
    (N1, N2) or (C, N1, N2).
    """
    arch = model.arch
    a = a if isinstance(a, Tensor) else constant(a)
    y = y if isinstance(y, Tensor) else constant(y)
    if a.shape[-1] != arch.branch_dims[0]:
        raise ValueError(f"branch input has {a.shape[-1]} sensors, expected {arch.branch_dims[0]}")
    if y.shape[-1] != arch.trunk_dims[0]:
        raise ValueError(f"query points have dim {y.shape[-1]}, expected {arch.trunk_dims[0]}")
    lead = theta.shape[:-1]
    parts = model.layout.split(theta)
    p = arch.p

    branch_out = _stack_forward(parts, "branch", arch.branch_dims, a, lead)
    if y.ndim == 2:
        psi = _stack_forward(parts, "trunk", arch.trunk_dims, y, lead)
    elif y.ndim == 3:
        # Per-example queries run through the trunk as one flat point list,
        # then fold back to (..., N1, N2, 2P); this keeps the matmuls 2-D
        # stacks instead of many tiny batched products.
        n1, n2, d = y.shape
        y_flat = reshape(y, (n1 * n2, d))
        psi_flat = _stack_forward(parts, "trunk", arch.trunk_dims, y_flat, lead)
        psi = reshape(psi_flat, lead + (n1, n2, 2 * p))
    else:
        raise ValueError(f"query points must be 2-D or 3-D, got shape {y.shape}")

    mean = pairdot(slice_last(branch_out, 0, p), slice_last(psi, 0, p))
    raw = pairdot(slice_last(branch_out, p, 2 * p), slice_last(psi, p, 2 * p))
    bias_shape = lead + (1, 1)
    mean = add(mean, reshape(parts["head.mean_bias"], bias_shape))
    raw = add(raw, reshape(parts["head.scale_bias"], bias_shape))
    sigma = affine(softplus(raw), 1.0, arch.sigma_floor)
    return mean, sigma


def log_prior(theta: Tensor) -> Tensor:
    """Sum of log N(theta_l; 0, 1) over the last axis."""
    return tsum(gaussian_log_pdf(theta, Tensor(0.0), Tensor(1.0)), axis=-1)


def log_q(theta: Tensor, mu: Tensor, rho: Tensor) -> Tensor:
    """Sum of log N(theta_l; mu_l, softplus(rho_l)) over the last axis."""
    return tsum(gaussian_log_pdf(theta, mu, softplus(rho)), axis=-1)
