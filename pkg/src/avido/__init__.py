"""Operator-learning toolkit: DeepONet surrogates with alpha-divergence
variational inference, benchmark data generators, and an experiment CLI."""

from .autodiff import Graph, NumericFault, ShapeMismatch, Tensor, gradcheck
from .config import ExperimentConfig, preset_config
from .divergences import (AlphaSetting, INFINITE_DIVERGENCE, kld_gaussian_closed,
                          renyi_alpha_mc_gaussian, renyi_gaussian_closed)
from .evaluation import PredictiveDistribution, evaluate_run, nll, nmse, predict
from .model import Architecture, DeepONet, forward, sample_parameters, standard_architecture
from .problems import (GridSolution, OperatorDataset, build_dataset, build_ood_set,
                       solve_advection_diffusion, solve_antiderivative,
                       solve_diffusion_reaction, solve_pendulum)
from .random_fields import GrfSampler, KernelSpec, cholesky_factor, gram, periodic_embed, sample
from .training import RunRecord, TrainConfig, convergence_filter, objective, train

__all__ = [
    "AlphaSetting", "Architecture", "DeepONet", "ExperimentConfig", "Graph",
    "GridSolution", "GrfSampler", "INFINITE_DIVERGENCE", "KernelSpec", "NumericFault",
    "OperatorDataset", "PredictiveDistribution", "RunRecord", "ShapeMismatch", "Tensor",
    "TrainConfig", "build_dataset", "build_ood_set", "cholesky_factor", "convergence_filter",
    "evaluate_run", "forward", "gradcheck", "gram", "kld_gaussian_closed", "nll", "nmse",
    "objective", "periodic_embed", "predict", "preset_config", "renyi_alpha_mc_gaussian",
    "renyi_gaussian_closed", "sample", "sample_parameters", "solve_advection_diffusion",
    "solve_antiderivative", "solve_diffusion_reaction", "solve_pendulum",
    "standard_architecture", "train",
]
