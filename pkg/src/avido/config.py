"""Experiment configuration: dataclasses, presets, JSON round-trip.

A single JSON document describes one problem's full experiment (data
generation, the alpha x seed training sweep, evaluation). CLI flags
override individual fields. The ``paper`` preset reproduces the
full-scale protocol; the ``desk`` preset shrinks example counts, epochs
and Monte-Carlo samples so the whole pipeline runs on a laptop core
while exercising identical mechanisms.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .problems import PAPER_DATASET, PROBLEMS, is_ode
from .training import TrainConfig

ALPHA_GRID_PAPER = (0.25, 0.50, 0.75, 1.00, 1.25, 1.50, 1.75, 2.00, 2.50, 3.00, 3.50)
ALPHA_GRID_DESK = (0.50, 1.00, 1.25)
OOD_ALPHAS = (0.50, 1.00, 1.75)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    n_train: int
    n_test: int
    n_queries: int
    test_queries: int
    test_query_mode: str
    lengthscale: float = 0.5
    jitter: float = 1e-6
    n_sensors: int = 100
    dense_grid: int = 1001
    grid_steps: int = 100
    ood_examples: int = 100


@dataclass(frozen=True)
class EvalConfig:
    posterior_draws: int = 100
    likelihood_draws: int = 1
    nll_mode: str = "mixture"
    export_examples: int = 2


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    results_dir: str = "results"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    alpha_grid: tuple[float, ...]
    n_seeds: int
    master_seed: int = 0
    deterministic: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = None
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if not self.alpha_grid or any(not _finite(a) for a in self.alpha_grid):
            raise ConfigError("alpha_grid must be non-empty and finite")
        if self.n_seeds < 1:
            raise ConfigError("need at least one seed")
        if self.dataset is None:
            raise ConfigError("dataset section is required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        try:
            data["alpha_grid"] = tuple(float(a) for a in data["alpha_grid"])
            data["train"] = TrainConfig(**data.get("train", {}))
            data["dataset"] = DatasetConfig(**data["dataset"])
            data["eval"] = EvalConfig(**data.get("eval", {}))
            data["paths"] = PathsConfig(**data.get("paths", {}))
            return cls(**data)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_json(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _finite(x: float) -> bool:
    return x == x and abs(x) != float("inf")


DESK_TRAIN_SIZES = {
    "antiderivative": (300, 200),
    "pendulum": (300, 200),
    "diffusion_reaction": (100, 50),
    "advection_diffusion": (100, 50),
}


def preset_config(problem: str, preset: str = "paper", master_seed: int = 0,
                  workdir: str = ".") -> ExperimentConfig:
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}")
    paths = PathsConfig(data_dir=str(Path(workdir) / "data"),
                        checkpoint_dir=str(Path(workdir) / "checkpoints"),
                        results_dir=str(Path(workdir) / "results"))
    ode = is_ode(problem)
    test_mode = "equidistant" if ode else "random"
    if preset == "paper":
        dataset = DatasetConfig(n_train=PAPER_DATASET[problem]["n_examples"], n_test=10000,
                                n_queries=PAPER_DATASET[problem]["n_queries"],
                                test_queries=100 if ode else 500, test_query_mode=test_mode)
        train = TrainConfig(epochs=10000, n_mc_samples=25)
        return ExperimentConfig(problem=problem, alpha_grid=ALPHA_GRID_PAPER, n_seeds=10,
                                master_seed=master_seed, train=train, dataset=dataset,
                                paths=paths)
    if preset == "desk":
        n_train, n_test = DESK_TRAIN_SIZES[problem]
        dataset = DatasetConfig(n_train=n_train, n_test=n_test,
                                n_queries=PAPER_DATASET[problem]["n_queries"],
                                test_queries=100 if ode else 200, test_query_mode=test_mode)
        train = TrainConfig(epochs=2000, n_mc_samples=5)
        return ExperimentConfig(problem=problem, alpha_grid=ALPHA_GRID_DESK, n_seeds=3,
                                master_seed=master_seed, train=train, dataset=dataset,
                                paths=paths)
    raise ConfigError(f"unknown preset {preset!r}")


def with_overrides(config: ExperimentConfig, **kwargs) -> ExperimentConfig:
    return replace(config, **kwargs)
