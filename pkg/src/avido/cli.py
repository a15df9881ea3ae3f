"""Batch experiment front end: generate / train / evaluate / plotdata.

Every command is a pure function of (config, input files, seed): re-runs
overwrite outputs with identical bytes. Training wall time is therefore
only written to run records when --timing is passed; by default the
wall_time_s column in the metrics CSV stays empty.

Directory layout (all under the configured paths):

    data/<problem>/train.avdn, test.avdn, ood_<variant>.avdn
    checkpoints/<problem>/<cell>/seed<k>.avck + history<k>.csv + record<k>.json
    results/<problem>/metrics.csv, aggregate.csv, ood_*.csv, ci/plot CSVs

where <cell> is alpha_<value> (two decimals) or "det".

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric fault in
every training cell.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import rng
from .config import ConfigError, ExperimentConfig, preset_config
from .evaluation import aggregate_runs, evaluate_run, interval_rows, predict
from .model import DETERMINISTIC, VARIATIONAL, DeepONet, standard_architecture
from .problems import (OperatorDataset, build_dataset, build_ood_set, is_ode,
                       solve_advection_diffusion, solve_diffusion_reaction, OOD_VARIANTS)
from .random_fields import KernelSpec
from .training import TrainConfig, train

# Substream keys of the master seed (documented so artifacts are reproducible).
STREAM_TRAIN_DATA = 10
STREAM_TEST_DATA = 11
STREAM_OOD_BASE = 12        # + variant index
STREAM_CELL_BASE = 100      # + alpha_index * 1000 + seed_index
STREAM_DET_CELL_BASE = 100000  # + seed_index
STREAM_EVAL_BASE = 200      # + cell index


class DataError(RuntimeError):
    pass


def alpha_label(alpha: float) -> str:
    return f"{alpha:.2f}"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def dataset_paths(config: ExperimentConfig) -> dict[str, Path]:
    base = Path(config.paths.data_dir) / config.problem
    paths = {"train": base / "train.avdn", "test": base / "test.avdn"}
    if config.problem == "advection_diffusion":
        for variant in OOD_VARIANTS:
            paths[f"ood_{variant}"] = base / f"ood_{variant}.avdn"
    return paths


def results_dir(config: ExperimentConfig) -> Path:
    return Path(config.paths.results_dir) / config.problem


def cell_specs(config: ExperimentConfig) -> list[dict]:
    """One spec per sweep cell, encoding (problem, alpha|det, seed index)."""
    base = Path(config.paths.checkpoint_dir) / config.problem
    cells = []
    if config.deterministic:
        for j in range(config.n_seeds):
            cell_dir = base / "det"
            cells.append({"label": "det", "alpha": None, "seed_index": j,
                          "run_seed": rng.split(config.master_seed, STREAM_DET_CELL_BASE + j),
                          "index": STREAM_DET_CELL_BASE + j,
                          "checkpoint": cell_dir / f"seed{j}.avck",
                          "history": cell_dir / f"history{j}.csv",
                          "record": cell_dir / f"record{j}.json"})
        return cells
    for i, alpha in enumerate(config.alpha_grid):
        for j in range(config.n_seeds):
            cell_dir = base / f"alpha_{alpha_label(alpha)}"
            cells.append({"label": alpha_label(alpha), "alpha": float(alpha), "seed_index": j,
                          "run_seed": rng.split(config.master_seed, STREAM_CELL_BASE + i * 1000 + j),
                          "index": i * 1000 + j,
                          "checkpoint": cell_dir / f"seed{j}.avck",
                          "history": cell_dir / f"history{j}.csv",
                          "record": cell_dir / f"record{j}.json"})
    return cells


def cmd_generate(config: ExperimentConfig, force: bool = False) -> None:
    paths = dataset_paths(config)
    dc = config.dataset
    kernel = KernelSpec(lengthscale=dc.lengthscale, jitter=dc.jitter)
    jobs: list[tuple[str, dict]] = [
        ("train", {"n_examples": dc.n_train, "n_queries": dc.n_queries,
                   "query_mode": "random", "seed": rng.split(config.master_seed, STREAM_TRAIN_DATA)}),
        ("test", {"n_examples": dc.n_test, "n_queries": dc.test_queries,
                  "query_mode": dc.test_query_mode,
                  "seed": rng.split(config.master_seed, STREAM_TEST_DATA)}),
    ]
    for name, job in jobs:
        path = paths[name]
        if path.exists() and not force:
            raise DataError(f"{path} exists; pass --force to overwrite")
        ds = build_dataset(config.problem, kernel=kernel, n_sensors=dc.n_sensors,
                           dense_grid=dc.dense_grid, grid_steps=dc.grid_steps, **job)
        ds.meta["role"] = name
        ds.save(path)
        print(f"wrote {path}: N1={ds.n_examples} M={ds.n_sensors} N2={ds.n_queries} "
              f"seed={job['seed']}")
    if config.problem == "advection_diffusion":
        for k, variant in enumerate(OOD_VARIANTS):
            path = paths[f"ood_{variant}"]
            if path.exists() and not force:
                raise DataError(f"{path} exists; pass --force to overwrite")
            seed = rng.split(config.master_seed, STREAM_OOD_BASE + k)
            ds = build_ood_set(variant, n=dc.ood_examples, seed=seed,
                               n_sensors=dc.n_sensors, grid_steps=dc.grid_steps)
            ds.meta["role"] = f"ood_{variant}"
            ds.save(path)
            print(f"wrote {path}: N1={ds.n_examples} M={ds.n_sensors} N2={ds.n_queries} "
                  f"seed={seed}")


def _train_cell(payload: dict) -> dict:
    dataset = OperatorDataset.load(payload["train_path"])
    arch = standard_architecture(payload["problem"], n_sensors=dataset.n_sensors)
    kind = DETERMINISTIC if payload["alpha"] is None else VARIATIONAL
    model = DeepONet(arch, kind=kind, seed=rng.split(payload["run_seed"], 0))
    cfg = TrainConfig(**payload["train_kwargs"], alpha=payload["alpha"] or 1.0,
                      seed=rng.split(payload["run_seed"], 1))
    record = train(model, dataset, cfg)
    ckpt = Path(payload["checkpoint"])
    model.save(ckpt, extra_meta={"problem": payload["problem"], "cell": payload["label"],
                                 "seed_index": payload["seed_index"],
                                 "alpha": payload["alpha"]})
    _write_csv(Path(payload["history"]), ["epoch", "loss"],
               [[int(e), float(v)] for e, v in zip(record.epochs, record.losses)])
    rec = {"label": payload["label"], "alpha": payload["alpha"],
           "seed_index": payload["seed_index"], "converged": record.converged,
           "fault": record.fault, "n_recorded": int(record.losses.size),
           "wall_time_s": record.wall_time if payload["timing"] else None}
    Path(payload["record"]).write_text(json.dumps(rec, sort_keys=True, indent=1))
    return {"label": payload["label"], "seed_index": payload["seed_index"],
            "fault": record.fault, "converged": record.converged}


def cmd_train(config: ExperimentConfig, resume: bool = False, workers: int = 1,
              timing: bool = False) -> int:
    train_path = dataset_paths(config)["train"]
    if not train_path.exists():
        raise DataError(f"training dataset missing: {train_path} (run generate first)")
    train_kwargs = {k: getattr(config.train, k)
                    for k in ("epochs", "learning_rate", "beta1", "beta2", "adam_eps",
                              "n_mc_samples", "record_every", "divergence_weight")}
    payloads = []
    for cell in cell_specs(config):
        if resume and cell["checkpoint"].exists() and cell["record"].exists():
            print(f"skip {cell['label']}/seed{cell['seed_index']} (complete)")
            continue
        payloads.append({"problem": config.problem, "train_path": str(train_path),
                         "train_kwargs": train_kwargs, "timing": timing, **cell})
    if not payloads:
        return 0
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_cell, payloads))
    else:
        results = [_train_cell(p) for p in payloads]
    for res in results:
        status = "fault" if res["fault"] else ("converged" if res["converged"] else "not converged")
        print(f"trained {res['label']}/seed{res['seed_index']}: {status}")
    if all(res["fault"] for res in results):
        return 4
    return 0


def _load_record(cell: dict) -> dict:
    path = Path(cell["record"])
    if path.exists():
        return json.loads(path.read_text())
    return {"converged": False, "fault": "missing record", "wall_time_s": None}


def all_cell_specs(config: ExperimentConfig) -> list[dict]:
    """Variational sweep cells plus deterministic cells, in layout order."""
    cells = cell_specs(replace(config, deterministic=False))
    cells += cell_specs(replace(config, deterministic=True))
    return cells


def cmd_evaluate(config: ExperimentConfig) -> None:
    paths = dataset_paths(config)
    if not paths["test"].exists():
        raise DataError(f"test dataset missing: {paths['test']} (run generate first)")
    test_set = OperatorDataset.load(paths["test"])
    out_dir = results_dir(config)
    rows = []
    per_alpha: dict[str, list[dict]] = {}
    for cell in all_cell_specs(config):
        if not Path(cell["checkpoint"]).exists():
            continue
        record = _load_record(cell)
        model, _ = DeepONet.load(cell["checkpoint"])
        metrics = evaluate_run(model, test_set, n_draws=config.eval.posterior_draws,
                               seed=rng.split(config.master_seed, STREAM_EVAL_BASE + cell["index"]),
                               nll_mode=config.eval.nll_mode)
        nll_value = None if cell["alpha"] is None else metrics["nll"]
        rows.append([config.problem, cell["label"], cell["seed_index"],
                     bool(record.get("converged")), metrics["nmse"], nll_value,
                     record.get("wall_time_s")])
        per_alpha.setdefault(cell["label"], []).append(
            {"converged": bool(record.get("converged")), **metrics, "cell": cell})
    if not rows:
        raise DataError("no checkpoints found to evaluate (run train first)")
    _write_csv(out_dir / "metrics.csv",
               ["problem", "alpha", "seed", "converged", "nmse", "nll", "wall_time_s"], rows)

    agg_rows = []
    best_label, best_nmse = None, None
    for alpha in config.alpha_grid:
        label = alpha_label(alpha)
        runs = [r for r in per_alpha.get(label, []) if r["converged"]]
        display = f"{label} (KLD)" if alpha == 1.0 else label
        if not runs:
            agg_rows.append([display, 0, None, None, None, None, ""])
            continue
        nmse_mean, nmse_std = aggregate_runs([r["nmse"] for r in runs])
        nll_mean, nll_std = aggregate_runs([r["nll"] for r in runs])
        agg_rows.append([display, len(runs), nmse_mean, nmse_std, nll_mean, nll_std, ""])
        if best_nmse is None or nmse_mean < best_nmse:
            best_label, best_nmse = display, nmse_mean
    for row in agg_rows:
        if row[0] == best_label:
            row[6] = "best"
    _write_csv(out_dir / "aggregate.csv",
               ["alpha", "n_converged", "nmse_mean", "nmse_std", "nll_mean", "nll_std", "flag"],
               agg_rows)

    _evaluate_ood(config, paths, per_alpha, out_dir)
    _export_intervals(config, test_set, per_alpha, out_dir)
    print(f"wrote metrics for {len(rows)} runs to {out_dir}")


def _evaluate_ood(config, paths, per_alpha, out_dir) -> None:
    variants = [v for v in OOD_VARIANTS if paths.get(f"ood_{v}", Path("/nonexistent")).exists()]
    if not variants:
        return
    ood_rows = []
    summary: dict[str, dict[str, list]] = {}
    for variant in variants:
        ood_set = OperatorDataset.load(paths[f"ood_{variant}"])
        for label, runs in sorted(per_alpha.items()):
            if label == "det":
                continue
            for run in runs:
                if not run["converged"]:
                    continue
                cell = run["cell"]
                model, _ = DeepONet.load(cell["checkpoint"])
                metrics = evaluate_run(model, ood_set, n_draws=config.eval.posterior_draws,
                                       seed=rng.split(config.master_seed,
                                                      STREAM_EVAL_BASE + cell["index"]),
                                       nll_mode=config.eval.nll_mode)
                ood_rows.append([config.problem, label, cell["seed_index"], variant,
                                 metrics["nmse"], metrics["nll"]])
                summary.setdefault(label, {}).setdefault(variant, []).append(metrics)
    if not ood_rows:
        return
    _write_csv(out_dir / "ood_metrics.csv",
               ["problem", "alpha", "seed", "variant", "nmse", "nll"], ood_rows)
    agg_rows = []
    for label in sorted(summary):
        row = [label]
        for variant in OOD_VARIANTS:
            runs = summary[label].get(variant, [])
            if runs:
                nmse_mean, nmse_std = aggregate_runs([r["nmse"] for r in runs])
                nll_mean, nll_std = aggregate_runs([r["nll"] for r in runs])
                row += [nmse_mean, nmse_std, nll_mean, nll_std]
            else:
                row += [None, None, None, None]
        agg_rows.append(row)
    header = ["alpha"]
    for variant in OOD_VARIANTS:
        header += [f"{variant}_nmse_mean", f"{variant}_nmse_std",
                   f"{variant}_nll_mean", f"{variant}_nll_std"]
    _write_csv(out_dir / "ood_aggregate.csv", header, agg_rows)


def _best_cell(config, per_alpha) -> dict | None:
    best = None
    for label, runs in per_alpha.items():
        if label == "det":
            continue
        for run in runs:
            if not run["converged"]:
                continue
            if best is None or run["nmse"] < best["nmse"]:
                best = run
    if best is None:
        for label, runs in per_alpha.items():
            if label != "det" and runs:
                return runs[0]
    return best


def _export_intervals(config, test_set, per_alpha, out_dir) -> None:
    best = _best_cell(config, per_alpha)
    if best is None:
        return
    cell = best["cell"]
    model, _ = DeepONet.load(cell["checkpoint"])
    n_export = min(config.eval.export_examples, test_set.n_examples)
    subset = OperatorDataset(problem=test_set.problem,
                             branch_inputs=test_set.branch_inputs[:n_export],
                             query_points=test_set.query_points[:n_export],
                             targets=test_set.targets[:n_export], meta=dict(test_set.meta))
    predictive = predict(model, subset.branch_inputs, subset.query_points,
                         n_draws=config.eval.posterior_draws,
                         seed=rng.split(config.master_seed, STREAM_EVAL_BASE + cell["index"]))
    for i in range(n_export):
        rows = interval_rows(predictive, subset, i,
                             likelihood_draws=config.eval.likelihood_draws,
                             seed=rng.split(config.master_seed, 400 + i))
        header = list(rows[0].keys())
        _write_csv(out_dir / f"ci_example{i}.csv", header,
                   [[row[k] for k in header] for row in rows])


def _full_grid_queries(grid_steps: int) -> np.ndarray:
    x = np.linspace(0.0, 1.0, grid_steps)
    t = np.linspace(0.0, 1.0, grid_steps)
    ix = np.repeat(np.arange(grid_steps), grid_steps)
    jt = np.tile(np.arange(grid_steps), grid_steps)
    return np.stack([x[ix], t[jt]], axis=1)


def cmd_plotdata(config: ExperimentConfig) -> None:
    paths = dataset_paths(config)
    out_dir = results_dir(config)
    metrics_path = out_dir / "metrics.csv"
    if not metrics_path.exists():
        raise DataError(f"{metrics_path} missing (run evaluate first)")
    if not paths["test"].exists():
        raise DataError(f"test dataset missing: {paths['test']}")
    test_set = OperatorDataset.load(paths["test"])

    with open(metrics_path) as fh:
        metric_rows = list(csv.DictReader(fh))
    checkpoint = _plot_checkpoint(config, metric_rows)
    if checkpoint is None:
        raise DataError("no converged run found for plot export")
    model, _ = DeepONet.load(checkpoint)

    n_export = min(config.eval.export_examples, test_set.n_examples)
    if is_ode(config.problem):
        predictive = predict(model, test_set.branch_inputs[:n_export],
                             test_set.query_points[:n_export],
                             n_draws=config.eval.posterior_draws,
                             seed=rng.split(config.master_seed, 500))
        subset = OperatorDataset(problem=test_set.problem,
                                 branch_inputs=test_set.branch_inputs[:n_export],
                                 query_points=test_set.query_points[:n_export],
                                 targets=test_set.targets[:n_export], meta=dict(test_set.meta))
        for i in range(n_export):
            rows = interval_rows(predictive, subset, i,
                                 likelihood_draws=config.eval.likelihood_draws,
                                 seed=rng.split(config.master_seed, 600 + i))
            header = list(rows[0].keys())
            _write_csv(out_dir / f"trace_example{i}.csv", header,
                       [[row[k] for k in header] for row in rows])
    else:
        grid_steps = config.dataset.grid_steps
        queries = _full_grid_queries(grid_steps)
        for i in range(n_export):
            u = test_set.branch_inputs[i]
            if config.problem == "diffusion_reaction":
                sol = solve_diffusion_reaction(u, nx=grid_steps, nt=grid_steps)
            else:
                sol = solve_advection_diffusion(u, nt=grid_steps)
            reference = sol.values.reshape(-1)
            predictive = predict(model, u[None, :], queries,
                                 n_draws=config.eval.posterior_draws,
                                 seed=rng.split(config.master_seed, 700 + i))
            mean = predictive.ensemble_mean[0]
            std = predictive.total_std[0]
            fields = {"reference": reference, "mean": mean, "std": std,
                      "abs_error": np.abs(mean - reference)}
            for name, values in fields.items():
                rows = [[queries[k, 0], queries[k, 1], float(values[k])]
                        for k in range(queries.shape[0])]
                _write_csv(out_dir / f"field_example{i}_{name}.csv", ["x", "t", "value"], rows)

    _export_bars(config, metric_rows, out_dir)
    print(f"wrote plot data to {out_dir}")


def _plot_checkpoint(config, metric_rows) -> Path | None:
    converged = [r for r in metric_rows
                 if r["converged"] == "True" and r["alpha"] != "det" and r["nmse"]]
    if not converged:
        return None
    best = min(converged, key=lambda r: float(r["nmse"]))
    cell_dir = Path(config.paths.checkpoint_dir) / config.problem / f"alpha_{best['alpha']}"
    return cell_dir / f"seed{best['seed']}.avck"


def _export_bars(config, metric_rows, out_dir) -> None:
    def collect(rows, metric):
        values = [float(r[metric]) for r in rows if r["converged"] == "True" and r[metric]]
        return aggregate_runs(values) if values else (None, None)

    det_rows = [r for r in metric_rows if r["alpha"] == "det"]
    kld_rows = [r for r in metric_rows if r["alpha"] == "1.00"]
    variational = {}
    for row in metric_rows:
        if row["alpha"] != "det":
            variational.setdefault(row["alpha"], []).append(row)
    best_label, best_stats = None, (None, None)
    for label, rows in sorted(variational.items()):
        mean, std = collect(rows, "nmse")
        if mean is not None and (best_stats[0] is None or mean < best_stats[0]):
            best_label, best_stats = label, (mean, std)
    out_rows = []
    for metric in ("nmse", "nll"):
        det_mean, det_std = collect(det_rows, metric) if metric == "nmse" else (None, None)
        kld_mean, kld_std = collect(kld_rows, metric)
        if best_label is not None:
            best_mean, best_std = collect(variational[best_label], metric)
        else:
            best_mean, best_std = None, None
        out_rows.append([metric, det_mean, det_std, kld_mean, kld_std,
                         best_label, best_mean, best_std])
    _write_csv(out_dir / "bars.csv",
               ["metric", "d_deeponet_mean", "d_deeponet_std", "kld_vi_mean", "kld_vi_std",
                "best_alpha", "best_alpha_mean", "best_alpha_std"], out_rows)


def _resolve_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.load(args.config)
    elif args.problem:
        config = preset_config(args.problem, preset=args.preset or "paper",
                               master_seed=args.seed if args.seed is not None else 0,
                               workdir=args.workdir)
    else:
        raise ConfigError("pass --config FILE or --problem NAME")
    if args.config and args.preset:
        base = preset_config(config.problem, preset=args.preset,
                             master_seed=config.master_seed, workdir=args.workdir)
        config = replace(base, paths=config.paths, master_seed=config.master_seed)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if getattr(args, "deterministic", False):
        config = replace(config, deterministic=True)
    return config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avido", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "evaluate", "plotdata"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--problem", choices=("antiderivative", "pendulum",
                                             "diffusion_reaction", "advection_diffusion"))
        p.add_argument("--preset", choices=("paper", "desk"))
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workdir", default=".")
        if name == "generate":
            p.add_argument("--force", action="store_true")
        if name == "train":
            p.add_argument("--resume", action="store_true")
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--deterministic", action="store_true")
            p.add_argument("--timing", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        if args.command == "generate":
            cmd_generate(config, force=args.force)
        elif args.command == "train":
            return cmd_train(config, resume=args.resume, workers=args.workers,
                             timing=args.timing)
        elif args.command == "evaluate":
            cmd_evaluate(config)
        elif args.command == "plotdata":
            cmd_plotdata(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
