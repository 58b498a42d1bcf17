"""Tests for run configuration loading and validation."""

from pathlib import Path

import pytest
import yaml
from pydantic import ValidationError

from rstr_cdmer.config import RunConfig, SweepGrid, create_example_config, load_config, save_config
from rstr_cdmer.core.model import RstrHyperparams
from rstr_cdmer.errors import ConfigError
from rstr_cdmer.services.protocol import TaskSpec


class TestRunConfig:
    """Tests for the RunConfig model."""

    def test_defaults(self) -> None:
        """The default run covers the builtin protocol on synthetic stand-ins."""
        cfg = RunConfig()
        assert len(cfg.task_list()) == 12
        assert cfg.data_source == "synthetic"
        assert cfg.method == "both"
        assert cfg.sweep is None
        assert cfg.find_task("Exp.8").target_id == "C"

    def test_unknown_task(self) -> None:
        """find_task rejects ids outside the catalogue."""
        with pytest.raises(ConfigError):
            RunConfig().find_task("Exp.13")

    def test_manifest_ids_from_keys(self) -> None:
        """Manifests keyed by id need not repeat dataset_id."""
        cfg = RunConfig(manifests={"Z": {"class_counts": {"a": 3, "b": 3}}})
        assert cfg.manifest("Z").dataset_id == "Z"
        assert cfg.manifest("H").n_samples == 164

    def test_files_need_feature_files(self) -> None:
        """File-backed runs require a feature file for every dataset used."""
        with pytest.raises(ValidationError, match="feature_file"):
            RunConfig(data_source="files")

    def test_unknown_dataset(self) -> None:
        """Tasks must refer to known datasets."""
        task = TaskSpec(task_id="T", source_id="H", target_id="Q", type_tag="TYPE-I")
        with pytest.raises(ValidationError):
            RunConfig(tasks=[task])

    def test_duplicate_task_ids(self) -> None:
        """Task ids must be unique."""
        task = TaskSpec(task_id="T", source_id="H", target_id="V", type_tag="TYPE-I")
        with pytest.raises(ValidationError):
            RunConfig(tasks=[task, task])

    def test_log_level(self) -> None:
        """Log levels are normalized and checked."""
        assert RunConfig(log_level="debug").log_level == "DEBUG"
        with pytest.raises(ValidationError):
            RunConfig(log_level="LOUD")


class TestSweepGrid:
    """Tests for hyperparameter grids."""

    def test_default_search_space(self) -> None:
        """6 lambda values, 50 mu values and 10 tau values."""
        grid = SweepGrid()
        assert grid.lambda_grid == [0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0]
        assert grid.mu_grid[0] == 0.1 and grid.mu_grid[-1] == 5.0 and len(grid.mu_grid) == 50
        assert grid.tau_grid[0] == 0.01 and grid.tau_grid[-1] == 0.1 and len(grid.tau_grid) == 10
        assert grid.size == 3000

    def test_point_order(self) -> None:
        """Points run lambda-major, then mu, with tau fastest; tau sets gamma."""
        grid = SweepGrid(lambda_grid=[1.0, 2.0], mu_grid=[0.1, 0.2], tau_grid=[0.5, 0.6])
        points = grid.points(RstrHyperparams(outer_max_iters=7))
        assert [(p.lam, p.mu, p.gamma) for p in points[:3]] == [(1.0, 0.1, 0.5), (1.0, 0.1, 0.6), (1.0, 0.2, 0.5)]
        assert len(points) == 8
        assert all(p.outer_max_iters == 7 for p in points)

    def test_empty_grid(self) -> None:
        """Grids cannot be empty or negative."""
        with pytest.raises(ValidationError):
            SweepGrid(mu_grid=[])
        with pytest.raises(ValidationError):
            SweepGrid(lambda_grid=[-1.0])


class TestLoadConfig:
    """Tests for YAML loading and saving."""

    def test_creates_default(self, tmp_path) -> None:
        """A missing file is created with defaults."""
        path = tmp_path / "config.yaml"
        cfg = load_config(path)
        assert path.exists()
        assert cfg.method == "both"

    def test_round_trip(self, tmp_path) -> None:
        """Saved configs load back equal."""
        path = tmp_path / "config.yaml"
        cfg = RunConfig(method="rstr", hyperparams=RstrHyperparams(lam=3.0), seed=4, sweep=SweepGrid(mu_grid=[0.1]))
        save_config(cfg, path)
        loaded = load_config(path)
        assert loaded.hyperparams.lam == 3.0
        assert loaded.seed == 4
        assert loaded.sweep.mu_grid == [0.1]
        assert "lambda" in yaml.safe_load(path.read_text())["hyperparams"]

    def test_invalid_yaml(self, tmp_path) -> None:
        """Unparsable YAML is a ConfigError."""
        path = tmp_path / "config.yaml"
        path.write_text("method: [rstr\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_invalid_values(self, tmp_path) -> None:
        """Validation failures surface as ConfigError."""
        path = tmp_path / "config.yaml"
        path.write_text("method: svm\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_relative_feature_files(self, tmp_path) -> None:
        """Feature files resolve against the config file's directory."""
        path = tmp_path / "sub" / "config.yaml"
        path.parent.mkdir()
        path.write_text(yaml.safe_dump({
            "data_source": "files",
            "tasks": [{"task_id": "T", "source_id": "A", "target_id": "B", "type_tag": "TYPE-I"}],
            "manifests": {
                "A": {"feature_file": "features/A.cdmer"},
                "B": {"feature_file": "/abs/B.cdmer"},
            },
        }))
        cfg = load_config(path)
        assert cfg.manifest("A").feature_file == path.parent / "features" / "A.cdmer"
        assert cfg.manifest("B").feature_file == Path("/abs/B.cdmer")

    def test_example_config_is_valid(self) -> None:
        """The example YAML parses into a valid RunConfig."""
        cfg = RunConfig(**yaml.safe_load(create_example_config()))
        assert [t.task_id for t in cfg.task_list()] == ["Exp.1", "Exp.8"]
        assert cfg.data_source == "files"
        assert cfg.sweep.size == 27
