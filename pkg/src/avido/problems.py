"""Benchmark problems: reference solvers and dataset generation.

Four operators are supported, each mapping a sampled input function to a
solution field:

    antiderivative       s' = u on (0, 1], s(0) = 0
    pendulum             s1'' = -k sin(s1) + u(t), s(0) = (0, 0)
    diffusion_reaction   ds/dt = D_c d2s/dx2 + k s^2 + u(x), zero IC/BC
    advection_diffusion  ds/dt = -ds/dx + D_c d2s/dx2, periodic in x

ODE targets are evaluated by solving on a dense auxiliary grid and
linearly interpolating at continuous query locations; PDE targets are
grid values at query points drawn without replacement from the solution
grid (excluding the t=0 column, which is pinned by the initial
condition).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import rng
from .container import read_dataset, write_dataset
from .random_fields import GrfSampler, KernelSpec, sample, sample_periodic

PROBLEMS = ("antiderivative", "pendulum", "diffusion_reaction", "advection_diffusion")

PAPER_DATASET = {
    "antiderivative": {"n_examples": 3000, "n_queries": 20},
    "pendulum": {"n_examples": 3500, "n_queries": 20},
    "diffusion_reaction": {"n_examples": 500, "n_queries": 100},
    "advection_diffusion": {"n_examples": 1000, "n_queries": 100},
}

SOLVER_DEFAULTS = {
    "antiderivative": {},
    "pendulum": {"k": 1.0},
    "diffusion_reaction": {"d_c": 0.01, "k": 0.01, "n_substeps": 4},
    "advection_diffusion": {"d_c": 0.1},
}

OOD_VARIANTS = {
    "rbf_l02": {"kind": "rbf", "lengthscale": 0.2},
    "rational_quadratic": {"kind": "rational_quadratic", "lengthscale": 0.5, "scale_mixture": 1.0},
}


class SolverError(RuntimeError):
    pass


def is_ode(problem: str) -> bool:
    return problem in ("antiderivative", "pendulum")


def query_dim(problem: str) -> int:
    return 1 if is_ode(problem) else 2


@dataclass
class GridSolution:
    """Space-time solution grid; x along rows, t along columns."""

    values: np.ndarray
    x: np.ndarray
    t: np.ndarray

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def nt(self) -> int:
        return self.values.shape[1]

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


def solve_antiderivative(u: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
    """Cumulative composite-trapezoid integral with s(0) = 0."""
    u = np.asarray(u, dtype=np.float64)
    if u.size < 2:
        raise ValueError("need at least two grid points")
    x = np.linspace(0.0, 1.0, u.size) if x is None else np.asarray(x, dtype=np.float64)
    increments = 0.5 * (u[1:] + u[:-1]) * np.diff(x)
    return np.concatenate([[0.0], np.cumsum(increments)])


def rk4_integrate(f, s0, t: np.ndarray) -> np.ndarray:
    """Classic fourth-order Runge-Kutta over the given time grid."""
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(s0, dtype=np.float64).copy()
    out = np.empty((t.size,) + s.shape)
    out[0] = s
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(t.size - 1):
            h = t[j + 1] - t[j]
            k1 = f(t[j], s)
            k2 = f(t[j] + 0.5 * h, s + 0.5 * h * k1)
            k3 = f(t[j] + 0.5 * h, s + 0.5 * h * k2)
            k4 = f(t[j] + h, s + h * k3)
            s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(s)):
                raise SolverError(f"state blew up at step {j + 1} (t={t[j + 1]:.6g})")
            out[j + 1] = s
    return out


def solve_pendulum(u: np.ndarray, k: float = 1.0, t: np.ndarray | None = None) -> np.ndarray:
    """Angle trajectory of the forced pendulum from rest, RK4 on the grid.

    The forcing is linearly interpolated between grid values for the
    half-step stage evaluations.
    """
    u = np.asarray(u, dtype=np.float64)
    t = np.linspace(0.0, 1.0, u.size) if t is None else np.asarray(t, dtype=np.float64)

    def rhs(tau, s):
        force = np.interp(tau, t, u)
        return np.array([s[1], -k * math.sin(s[0]) + force])

    states = rk4_integrate(rhs, np.zeros(2), t)
    return states[:, 0]


def solve_diffusion_reaction(u, d_c: float = 0.01, k: float = 0.01, nx: int = 100,
                             nt: int = 100, n_substeps: int = 4) -> GridSolution:
    """Crank-Nicolson diffusion with explicit predictor-corrector reaction.

    The quadratic reaction and the source are evaluated explicitly: a
    CN-diffusion step with the source frozen at the substep start predicts
    the state, then the corrector re-averages the explicit terms over the
    substep endpoints (trapezoidal), keeping the scheme second order in
    time. ``u`` is a length-nx source vector, or a callable u(x, t) for
    time-dependent manufactured sources.
    """
    if n_substeps < 2:
        raise ValueError("need at least 2 substeps per output step")
    x = np.linspace(0.0, 1.0, nx)
    t = np.linspace(0.0, 1.0, nt)
    dx = x[1] - x[0]
    delta = (t[1] - t[0]) / n_substeps

    if callable(u):
        def source(tau):
            return np.asarray(u(x, tau), dtype=np.float64)[1:-1]
    else:
        u = np.asarray(u, dtype=np.float64)
        if u.size != nx:
            raise ValueError(f"source has {u.size} points, grid has {nx}")
        u_interior = u[1:-1]

        def source(tau):
            return u_interior

    lam = delta * d_c / (2.0 * dx * dx)
    n_int = nx - 2
    ab = np.zeros((3, n_int))
    ab[0, 1:] = -lam
    ab[1, :] = 1.0 + 2.0 * lam
    ab[2, :-1] = -lam

    values = np.zeros((nx, nt))
    s = np.zeros(nx)
    for j in range(1, nt):
        for m in range(n_substeps):
            tau = t[j - 1] + m * delta
            half_diff = lam * (s[:-2] - 2.0 * s[1:-1] + s[2:])
            n0 = k * s[1:-1] ** 2 + source(tau)
            predicted = solve_banded((1, 1), ab, s[1:-1] + half_diff + delta * n0)
            n1 = k * predicted ** 2 + source(tau + delta)
            s[1:-1] = solve_banded((1, 1), ab, s[1:-1] + half_diff + 0.5 * delta * (n0 + n1))
        if np.max(np.abs(s)) > 1e6:
            raise SolverError(f"diffusion-reaction solve diverged at t={t[j]:.6g}")
        values[:, j] = s
    return GridSolution(values=values, x=x, t=t)


def solve_advection_diffusion(s0: np.ndarray, d_c: float = 0.1, nt: int = 100) -> GridSolution:
    """Exact spectral evolution of the periodic advection-diffusion equation.

    The grid duplicates the periodic point (x=0 and x=1 are both stored);
    the Fourier transform runs over the unique points and the closing row
    is copied, so the periodic boundary condition holds exactly.
    """
    s0 = np.asarray(s0, dtype=np.float64)
    nx = s0.size
    if abs(s0[0] - s0[-1]) > 1e-8:
        raise SolverError(f"initial condition is not periodic: |s0[0]-s0[-1]| = {abs(s0[0] - s0[-1]):.3g}")
    x = np.linspace(0.0, 1.0, nx)
    t = np.linspace(0.0, 1.0, nt)
    n = nx - 1
    modes = np.fft.fft(s0[:-1])
    wavenumbers = np.fft.fftfreq(n, d=1.0 / n)
    omega = 2.0 * np.pi * wavenumbers
    decay = (-1j * omega - d_c * omega * omega)[:, None] * t[None, :]
    evolved = np.fft.ifft(modes[:, None] * np.exp(decay), axis=0)
    residue = np.max(np.abs(evolved.imag))
    if residue > 1e-10:
        raise SolverError(f"spectral solve left imaginary residue {residue:.3g}")
    values = np.empty((nx, nt))
    values[:-1, :] = evolved.real
    values[-1, :] = values[0, :]
    return GridSolution(values=values, x=x, t=t)


@dataclass
class OperatorDataset:
    """Supervised triples: sensor samples, query points, solution values."""

    problem: str
    branch_inputs: np.ndarray
    query_points: np.ndarray
    targets: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n1, m = self.branch_inputs.shape
        if self.query_points.shape[0] != n1 or self.targets.shape != self.query_points.shape[:2]:
            raise ValueError("inconsistent dataset array shapes")
        for name in ("branch_inputs", "query_points", "targets"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def n_examples(self) -> int:
        return self.branch_inputs.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.branch_inputs.shape[1]

    @property
    def n_queries(self) -> int:
        return self.query_points.shape[1]

    @property
    def dim(self) -> int:
        return self.query_points.shape[2]

    def save(self, path) -> None:
        meta = dict(self.meta)
        meta["problem"] = self.problem
        write_dataset(path, meta, self.branch_inputs, self.query_points, self.targets)

    @classmethod
    def load(cls, path) -> "OperatorDataset":
        meta, branch_inputs, query_points, targets = read_dataset(path)
        problem = meta.pop("problem")
        return cls(problem=problem, branch_inputs=branch_inputs,
                   query_points=query_points, targets=targets, meta=meta)


def _ode_solution(problem: str, u_sensors: np.ndarray, x_sensors: np.ndarray,
                  x_dense: np.ndarray, params: dict) -> np.ndarray:
    u_dense = np.interp(x_dense, x_sensors, u_sensors)
    if problem == "antiderivative":
        return solve_antiderivative(u_dense, x_dense)
    return solve_pendulum(u_dense, k=params["k"], t=x_dense)


def _pde_solution(problem: str, u_sensors: np.ndarray, grid_steps: int, params: dict) -> GridSolution:
    if problem == "diffusion_reaction":
        return solve_diffusion_reaction(u_sensors, d_c=params["d_c"], k=params["k"],
                                        nx=grid_steps, nt=grid_steps,
                                        n_substeps=params["n_substeps"])
    return solve_advection_diffusion(u_sensors, d_c=params["d_c"], nt=grid_steps)


def build_dataset(problem: str, *, n_examples: int | None = None, n_queries: int | None = None,
                  kernel: KernelSpec | None = None, seed: int = 0, n_sensors: int = 100,
                  query_mode: str = "random", dense_grid: int = 1001, grid_steps: int = 100,
                  solver_params: dict | None = None) -> OperatorDataset:
    """Generate one dataset with the documented sampling protocol.

    query_mode:
        random       per-example random queries (continuous in (0, 1] for
                     ODE problems, grid points with t > 0 for PDEs)
        equidistant  ODE only: shared grid of n_queries points in (0, 1]
        full_grid    PDE only: every grid point, including t = 0
    """
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}")
    defaults = PAPER_DATASET[problem]
    n1 = defaults["n_examples"] if n_examples is None else n_examples
    n2 = defaults["n_queries"] if n_queries is None else n_queries
    kernel = kernel or KernelSpec()
    params = {**SOLVER_DEFAULTS[problem], **(solver_params or {})}

    x_sensors = np.linspace(0.0, 1.0, n_sensors)
    field_seed = rng.split(seed, 0)
    query_seed = rng.split(seed, 1)
    if problem == "advection_diffusion":
        inputs = sample_periodic(kernel, x_sensors, n1, seed=field_seed)
    else:
        inputs = sample(GrfSampler.build(kernel, x_sensors, seed=field_seed), n1)

    if is_ode(problem):
        if query_mode == "full_grid":
            raise ValueError("full_grid queries only apply to PDE problems")
        x_dense = np.linspace(0.0, 1.0, dense_grid)
        query_points = np.empty((n1, n2, 1))
        targets = np.empty((n1, n2))
        shared = np.linspace(1.0 / n2, 1.0, n2) if query_mode == "equidistant" else None
        for i in range(n1):
            s_dense = _ode_solution(problem, inputs[i], x_sensors, x_dense, params)
            if shared is None:
                xq = 1.0 - rng.uniforms(rng.split(query_seed, i), n2)
            else:
                xq = shared
            query_points[i, :, 0] = xq
            targets[i] = np.interp(xq, x_dense, s_dense)
    else:
        if query_mode == "equidistant":
            raise ValueError("equidistant queries only apply to ODE problems")
        eligible = grid_steps * (grid_steps - 1)
        if query_mode == "random" and n2 > eligible:
            raise ValueError(f"cannot draw {n2} distinct grid points from {eligible}")
        if query_mode == "full_grid":
            n2 = grid_steps * grid_steps
        query_points = np.empty((n1, n2, 2))
        targets = np.empty((n1, n2))
        for i in range(n1):
            sol = _pde_solution(problem, inputs[i], grid_steps, params)
            if query_mode == "random":
                flat = rng.index_sample(rng.split(query_seed, i), eligible, n2)
                ix = flat // (grid_steps - 1)
                jt = flat % (grid_steps - 1) + 1
            else:
                ix = np.repeat(np.arange(grid_steps), grid_steps)
                jt = np.tile(np.arange(grid_steps), grid_steps)
            query_points[i, :, 0] = sol.x[ix]
            query_points[i, :, 1] = sol.t[jt]
            targets[i] = sol.values[ix, jt]

    meta = {
        "seed": seed,
        "kernel": kernel.to_dict(),
        "query_mode": query_mode,
        "solver_params": params,
        "dense_grid": dense_grid if is_ode(problem) else None,
        "grid_steps": None if is_ode(problem) else grid_steps,
    }
    return OperatorDataset(problem=problem, branch_inputs=inputs,
                           query_points=query_points, targets=targets, meta=meta)


def build_ood_set(variant: str, n: int = 100, seed: int = 0, n_sensors: int = 100,
                  grid_steps: int = 100) -> OperatorDataset:
    """Out-of-distribution advection-diffusion set, full-grid targets."""
    if variant not in OOD_VARIANTS:
        raise ValueError(f"unknown OOD variant {variant!r}, expected one of {sorted(OOD_VARIANTS)}")
    kernel = KernelSpec(**OOD_VARIANTS[variant])
    ds = build_dataset("advection_diffusion", n_examples=n, kernel=kernel, seed=seed,
                       n_sensors=n_sensors, query_mode="full_grid", grid_steps=grid_steps)
    ds.meta["variant"] = variant
    return ds
