import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from avido.cli import (DataError, alpha_label, cell_specs, cmd_evaluate, cmd_generate,
                       cmd_plotdata, cmd_train, dataset_paths, main, results_dir)
from avido.config import (ALPHA_GRID_PAPER, ConfigError, DatasetConfig, ExperimentConfig,
                          preset_config)
from avido.problems import OperatorDataset
from avido.training import TrainConfig


def micro_config(tmp_path, problem="antiderivative", **overrides):
    base = preset_config(problem, preset="desk", master_seed=11, workdir=str(tmp_path))
    cfg = replace(
        base,
        alpha_grid=(0.5, 1.0),
        n_seeds=2,
        dataset=replace(base.dataset, n_train=16, n_test=6, n_queries=5,
                        test_queries=10, grid_steps=100, ood_examples=3),
        train=replace(base.train, epochs=30, n_mc_samples=2, record_every=1),
        eval=replace(base.eval, posterior_draws=6, export_examples=2),
    )
    return replace(cfg, **overrides) if overrides else cfg


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = micro_config(tmp_path)
        again = ExperimentConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = micro_config(tmp_path)
        path = tmp_path / "cfg.json"
        cfg.save(path)
        assert ExperimentConfig.load(path) == cfg

    def test_paper_preset_defaults(self, tmp_path):
        cfg = preset_config("antiderivative", preset="paper", workdir=str(tmp_path))
        assert cfg.alpha_grid == ALPHA_GRID_PAPER
        assert len(cfg.alpha_grid) == 11
        assert cfg.n_seeds == 10
        assert cfg.dataset.n_train == 3000 and cfg.dataset.n_queries == 20
        assert cfg.train.epochs == 10000 and cfg.train.n_mc_samples == 25

    def test_desk_preset_shrinks(self, tmp_path):
        cfg = preset_config("antiderivative", preset="desk", workdir=str(tmp_path))
        assert cfg.dataset.n_train == 300 and cfg.dataset.n_test == 200
        assert cfg.train.epochs == 2000 and cfg.train.n_mc_samples == 5
        assert cfg.n_seeds == 3 and cfg.alpha_grid == (0.5, 1.0, 1.25)

    def test_validation_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            preset_config("heat_equation")
        with pytest.raises(ConfigError):
            ExperimentConfig(problem="antiderivative", alpha_grid=(), n_seeds=1,
                             dataset=DatasetConfig(n_train=1, n_test=1, n_queries=1,
                                                   test_queries=1, test_query_mode="random"))

    def test_cell_layout_unique(self, tmp_path):
        cfg = micro_config(tmp_path)
        cells = cell_specs(cfg)
        assert len(cells) == 4
        assert len({c["checkpoint"] for c in cells}) == 4
        assert all(f"alpha_{c['label']}" in str(c["checkpoint"]) for c in cells)

    def test_alpha_labels(self):
        assert alpha_label(0.5) == "0.50"
        assert alpha_label(1.0) == "1.00"
        assert alpha_label(3.5) == "3.50"


class TestGenerate:
    def test_writes_datasets_with_metadata(self, tmp_path, capsys):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        out = capsys.readouterr().out
        assert "N1=16" in out and "N2=5" in out and "M=100" in out
        paths = dataset_paths(cfg)
        train_ds = OperatorDataset.load(paths["train"])
        assert train_ds.n_examples == 16 and train_ds.n_queries == 5
        test_ds = OperatorDataset.load(paths["test"])
        assert test_ds.n_examples == 6 and test_ds.meta["query_mode"] == "equidistant"

    def test_refuses_overwrite_without_force(self, tmp_path):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        with pytest.raises(DataError, match="force"):
            cmd_generate(cfg)
        cmd_generate(cfg, force=True)

    def test_regeneration_identical_bytes(self, tmp_path):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        first = dataset_paths(cfg)["train"].read_bytes()
        cmd_generate(cfg, force=True)
        assert dataset_paths(cfg)["train"].read_bytes() == first

    def test_ood_files_for_advection_diffusion(self, tmp_path):
        cfg = micro_config(tmp_path, problem="advection_diffusion")
        cfg = replace(cfg, dataset=replace(cfg.dataset, n_train=4, n_test=3,
                                           n_queries=20, test_queries=20))
        cmd_generate(cfg)
        paths = dataset_paths(cfg)
        for variant in ("rbf_l02", "rational_quadratic"):
            ds = OperatorDataset.load(paths[f"ood_{variant}"])
            assert ds.n_examples == 3
            assert ds.meta["variant"] == variant
            assert ds.n_queries == 100 * 100


class TestTrainCommand:
    def test_sweep_produces_cells(self, tmp_path):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        assert cmd_train(cfg) == 0
        cells = cell_specs(cfg)
        assert len(cells) == 2 * 2
        for cell in cells:
            assert cell["checkpoint"].exists()
            assert cell["history"].exists()
            record = json.loads(cell["record"].read_text())
            assert record["wall_time_s"] is None  # timing off by default
            history = read_csv(cell["history"])
            assert history[0]["epoch"] == "0"
            assert len(history) == cfg.train.epochs

    def test_missing_dataset_is_data_error(self, tmp_path):
        cfg = micro_config(tmp_path)
        with pytest.raises(DataError, match="generate"):
            cmd_train(cfg)

    def test_resume_skips_completed(self, tmp_path, capsys):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        cmd_train(cfg)
        capsys.readouterr()
        cmd_train(cfg, resume=True)
        out = capsys.readouterr().out
        assert out.count("skip") == 4

    def test_deterministic_mode(self, tmp_path):
        cfg = replace(micro_config(tmp_path), deterministic=True)
        cmd_generate(cfg)
        cmd_train(cfg)
        cells = cell_specs(cfg)
        assert len(cells) == 2  # one per seed
        assert all(c["label"] == "det" for c in cells)
        from avido.model import DeepONet
        model, meta = DeepONet.load(cells[0]["checkpoint"])
        assert model.kind == "deterministic"

    def test_timing_flag_records_wall_time(self, tmp_path):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        cmd_train(cfg, timing=True)
        record = json.loads(cell_specs(cfg)[0]["record"].read_text())
        assert record["wall_time_s"] > 0

    def test_worker_pool_matches_sequential(self, tmp_path):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        cmd_train(cfg)
        sequential = {c["checkpoint"]: c["checkpoint"].read_bytes() for c in cell_specs(cfg)}
        assert cmd_train(cfg, workers=2) == 0  # overwrite via the pool
        for path, blob in sequential.items():
            assert path.read_bytes() == blob

    def test_all_cells_faulting_returns_code_4(self, tmp_path):
        cfg = replace(micro_config(tmp_path), alpha_grid=(0.5,), n_seeds=1)
        cmd_generate(cfg)
        # Poison the training targets with a finite but extreme value that
        # overflows the Gaussian log density at the first epoch.
        path = dataset_paths(cfg)["train"]
        ds = OperatorDataset.load(path)
        ds.targets[0, 0] = 1e200
        ds.save(path)
        assert cmd_train(cfg) == 4
        record = json.loads(cell_specs(cfg)[0]["record"].read_text())
        assert record["converged"] is False and "epoch 0" in record["fault"]


class TestEvaluateCommand:
    @pytest.fixture()
    def trained(self, tmp_path):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        cmd_train(cfg)
        det_cfg = replace(cfg, deterministic=True)
        cmd_train(det_cfg)
        return cfg

    def test_metrics_and_aggregate(self, trained):
        cfg = trained
        cmd_evaluate(cfg)
        out = results_dir(cfg)
        metrics = read_csv(out / "metrics.csv")
        assert len(metrics) == 6  # 4 variational + 2 deterministic cells
        det_rows = [r for r in metrics if r["alpha"] == "det"]
        assert len(det_rows) == 2 and all(r["nll"] == "" for r in det_rows)
        assert all(r["wall_time_s"] == "" for r in metrics)

        agg = read_csv(out / "aggregate.csv")
        labels = [r["alpha"] for r in agg]
        assert labels == ["0.50", "1.00 (KLD)"]
        flagged = [r for r in agg if r["flag"] == "best"]
        populated = [r for r in agg if r["nmse_mean"]]
        if populated:
            best = min(populated, key=lambda r: float(r["nmse_mean"]))
            assert flagged and flagged[0]["alpha"] == best["alpha"]

    def test_aggregate_excludes_non_converged(self, trained):
        cfg = trained
        # Falsify one cell's record and re-evaluate.
        cell = cell_specs(cfg)[0]
        record = json.loads(cell["record"].read_text())
        record["converged"] = False
        cell["record"].write_text(json.dumps(record))
        cmd_evaluate(cfg)
        metrics = read_csv(results_dir(cfg) / "metrics.csv")
        flagged = [r for r in metrics if r["alpha"] == cell["label"]]
        assert any(r["converged"] == "False" for r in flagged)
        agg = read_csv(results_dir(cfg) / "aggregate.csv")
        row = next(r for r in agg if r["alpha"].startswith(cell["label"]))
        assert int(row["n_converged"]) <= 1

    def test_ci_export(self, trained):
        cfg = trained
        cmd_evaluate(cfg)
        rows = read_csv(results_dir(cfg) / "ci_example0.csv")
        assert len(rows) == cfg.dataset.test_queries
        for row in rows:
            assert float(row["lower95"]) <= float(row["mean"]) <= float(row["upper95"])

    def test_missing_checkpoints_is_data_error(self, tmp_path):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        with pytest.raises(DataError):
            cmd_evaluate(cfg)


class TestOodEvaluation:
    def test_ood_outputs_match_table_structure(self, tmp_path):
        # Two variants x two metrics per aggregate row.
        cfg = micro_config(tmp_path, problem="advection_diffusion")
        cfg = replace(cfg, alpha_grid=(0.5, 1.0), n_seeds=1,
                      dataset=replace(cfg.dataset, n_train=6, n_test=3, n_queries=20,
                                      test_queries=25, ood_examples=2),
                      eval=replace(cfg.eval, posterior_draws=4))
        cmd_generate(cfg)
        cmd_train(cfg)
        cmd_evaluate(cfg)
        out = results_dir(cfg)
        ood = read_csv(out / "ood_metrics.csv")
        assert {r["variant"] for r in ood} == {"rbf_l02", "rational_quadratic"}
        agg = read_csv(out / "ood_aggregate.csv")
        expected_cols = {"alpha"}
        for variant in ("rbf_l02", "rational_quadratic"):
            for metric in ("nmse", "nll"):
                expected_cols |= {f"{variant}_{metric}_mean", f"{variant}_{metric}_std"}
        assert set(agg[0]) == expected_cols
        # only converged cells are aggregated
        assert agg and {r["alpha"] for r in agg} <= {"0.50", "1.00"}


class TestPlotdata:
    def test_ode_traces_and_bars(self, tmp_path):
        cfg = micro_config(tmp_path)
        cmd_generate(cfg)
        cmd_train(cfg)
        cmd_train(replace(cfg, deterministic=True))
        cmd_evaluate(cfg)
        cmd_plotdata(cfg)
        out = results_dir(cfg)
        assert (out / "trace_example0.csv").exists()
        bars = read_csv(out / "bars.csv")
        assert [r["metric"] for r in bars] == ["nmse", "nll"]
        assert {"d_deeponet_mean", "kld_vi_mean", "best_alpha"} <= set(bars[0])

    def test_pde_field_export_has_full_grid(self, tmp_path):
        cfg = micro_config(tmp_path, problem="diffusion_reaction")
        cfg = replace(cfg, alpha_grid=(1.0,), n_seeds=1,
                      dataset=replace(cfg.dataset, n_train=6, n_test=3, n_queries=20,
                                      test_queries=25),
                      eval=replace(cfg.eval, export_examples=1, posterior_draws=4))
        cmd_generate(cfg)
        cmd_train(cfg)
        cmd_evaluate(cfg)
        cmd_plotdata(cfg)
        out = results_dir(cfg)
        for field in ("reference", "mean", "std", "abs_error"):
            rows = read_csv(out / f"field_example0_{field}.csv")
            assert len(rows) == 100 * 100


class TestMainEntry:
    def test_exit_codes(self, tmp_path):
        missing = main(["train", "--problem", "antiderivative", "--preset", "desk",
                        "--workdir", str(tmp_path)])
        assert missing == 3
        bad_config = tmp_path / "bad.json"
        bad_config.write_text("{not json")
        assert main(["generate", "--config", str(bad_config)]) == 2
        assert main(["generate"]) == 2  # neither --config nor --problem

    def test_generate_via_main(self, tmp_path):
        code = main(["generate", "--problem", "antiderivative", "--preset", "desk",
                     "--workdir", str(tmp_path), "--seed", "5"])
        # Desk preset generates 300 train + 200 test quickly.
        assert code == 0
        data = tmp_path / "data" / "antiderivative"
        assert (data / "train.avdn").exists() and (data / "test.avdn").exists()
