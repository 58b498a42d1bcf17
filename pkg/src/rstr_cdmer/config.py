"""Configuration management for RSTR CDMER."""

import itertools
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .core.baseline import DEFAULT_RIDGE
from .core.model import RstrHyperparams
from .errors import ConfigError
from .services.features import DatasetManifest
from .services.protocol import BUILTIN_DATASETS, TaskSpec, builtin_protocol, check_unique_ids, load_protocol
from .services.synthetic import SyntheticShiftConfig
from .utils.paths import get_config_file_path


def _arange(start: float, stop: float, step: float) -> List[float]:
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(count)]


class SweepGrid(BaseModel):
    """
    Hyperparameter grids searched per task.

    ``tau_grid`` is the third trade-off grid of the published search space; ``tau_maps_to``
    names the model parameter it is applied to.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_grid: List[float] = Field(default_factory=lambda: [0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0])
    mu_grid: List[float] = Field(default_factory=lambda: _arange(0.1, 5.0, 0.1))
    tau_grid: List[float] = Field(default_factory=lambda: _arange(0.01, 0.1, 0.01))
    tau_maps_to: Literal["gamma"] = "gamma"

    @field_validator('lambda_grid', 'mu_grid', 'tau_grid')
    @classmethod
    def validate_grid(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("sweep grids must not be empty")
        if any(not np.isfinite(v) or v < 0 for v in values):
            raise ValueError("sweep grid values must be finite and non-negative")
        return values

    @property
    def size(self) -> int:
        return len(self.lambda_grid) * len(self.mu_grid) * len(self.tau_grid)

    def points(self, base: RstrHyperparams) -> List[RstrHyperparams]:
        """Grid points in lambda-major, then mu, then tau order."""
        return [
            base.model_copy(update={"lam": lam, "mu": mu, self.tau_maps_to: tau})
            for lam, mu, tau in itertools.product(self.lambda_grid, self.mu_grid, self.tau_grid)
        ]


class RunConfig(BaseModel):
    """Main configuration for protocol and task runs."""

    model_config = ConfigDict(extra="ignore")

    tasks: Union[Literal["builtin"], List[TaskSpec]] = "builtin"
    protocol_file: Optional[Path] = Field(default=None, description="YAML task catalogue, overrides tasks")
    manifests: Dict[str, DatasetManifest] = Field(default_factory=dict)
    data_source: Literal["files", "synthetic"] = Field(
        default="synthetic",
        description="files: read each manifest's feature file; synthetic: generate stand-ins",
    )
    synthetic: SyntheticShiftConfig = Field(default_factory=SyntheticShiftConfig)
    method: Literal["rstr", "baseline", "both"] = "both"
    hyperparams: RstrHyperparams = Field(default_factory=RstrHyperparams)
    sweep: Optional[SweepGrid] = None
    baseline_ridge: float = Field(default=DEFAULT_RIDGE, gt=0)
    output: Optional[Path] = None
    report_format: Literal["tsv", "json"] = "tsv"
    seed: int = Field(default=0, ge=0)
    jobs: int = Field(default=1, ge=1, description="Parallel workers for tasks and grid points")
    log_level: str = Field(default="INFO", description="Logging level")

    @model_validator(mode="before")
    @classmethod
    def _fill_manifest_ids(cls, data: Any) -> Any:
        """Allow manifests keyed by id without repeating ``dataset_id``."""
        if not isinstance(data, dict) or not isinstance(data.get("manifests"), dict):
            return data

        data = data.copy()
        manifests = {}
        for dataset_id, entry in data["manifests"].items():
            if isinstance(entry, dict) and "dataset_id" not in entry:
                entry = {**entry, "dataset_id": dataset_id}
            manifests[dataset_id] = entry
        data["manifests"] = manifests
        return data

    @model_validator(mode="after")
    def check_tasks(self) -> "RunConfig":
        if self.protocol_file is None:
            tasks = self.task_list()
            check_unique_ids(tasks)
            self.check_resolvable(tasks)
        return self

    @field_validator('log_level')
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        allowed = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in allowed:
            raise ValueError(f"Log level must be one of {allowed}")
        return v.upper()

    def task_list(self) -> Tuple[TaskSpec, ...]:
        """Tasks to run, in catalogue order."""
        if self.protocol_file is not None:
            return load_protocol(self.protocol_file)
        if self.tasks == "builtin":
            return builtin_protocol()
        return tuple(self.tasks)

    def find_task(self, task_id: str) -> TaskSpec:
        for task in self.task_list():
            if task.task_id == task_id:
                return task
        raise ConfigError(f"unknown task id {task_id}")

    def manifest(self, dataset_id: str) -> DatasetManifest:
        """Manifest for ``dataset_id``; configured entries take precedence over the builtin catalogue."""
        if dataset_id in self.manifests:
            return self.manifests[dataset_id]
        if dataset_id in BUILTIN_DATASETS:
            return BUILTIN_DATASETS[dataset_id]
        raise ConfigError(f"dataset id {dataset_id} is not in the manifests")

    def check_resolvable(self, tasks: Tuple[TaskSpec, ...]) -> None:
        """
        Raise unless every task's datasets can be loaded or generated.

        Raises:
            ConfigError: On an unknown dataset id, or a missing feature file / class counts
        """
        for task in tasks:
            for dataset_id in (task.source_id, task.target_id):
                manifest = self.manifest(dataset_id)
                if self.data_source == "files" and manifest.feature_file is None:
                    raise ConfigError(
                        f"task {task.task_id}: dataset {dataset_id} has no feature_file"
                    )
                if self.data_source == "synthetic" and not manifest.class_counts:
                    raise ConfigError(
                        f"task {task.task_id}: dataset {dataset_id} has no class_counts "
                        "to generate from"
                    )


def _resolve_relative_paths(config: RunConfig, base_dir: Path) -> RunConfig:
    """Feature files and the protocol file are relative to the config file's directory."""
    manifests = {
        dataset_id: manifest.model_copy(update={"feature_file": base_dir / manifest.feature_file})
        if manifest.feature_file is not None and not manifest.feature_file.is_absolute()
        else manifest
        for dataset_id, manifest in config.manifests.items()
    }
    update: Dict[str, Any] = {"manifests": manifests}
    if config.protocol_file is not None and not config.protocol_file.is_absolute():
        update["protocol_file"] = base_dir / config.protocol_file
    return config.model_copy(update=update)


def load_config(config_file: Optional[Path] = None) -> RunConfig:
    """
    Load configuration from YAML file.

    Args:
        config_file: Optional path to config file. If None, uses default path.

    Returns:
        RunConfig object

    Raises:
        ConfigError: If the file cannot be parsed or fails validation
    """
    if config_file is None:
        config_file = get_config_file_path()

    if not config_file.exists():
        # Create default config
        config = RunConfig()
        save_config(config, config_file)
        logging.info(f"Created default config at {config_file}")
        return config

    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}

        config = _resolve_relative_paths(RunConfig(**data), config_file.parent)
        logging.debug(f"Loaded config from {config_file}")
        return config

    except (yaml.YAMLError, ValueError, TypeError) as e:
        logging.error(f"Error loading config from {config_file}: {e}")
        raise ConfigError(f"Invalid config {config_file}: {e}") from e


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json", by_alias=True, exclude_none=True)


def save_config(config: RunConfig, config_file: Optional[Path] = None) -> None:
    """
    Save configuration to YAML file.

    Args:
        config: RunConfig object to save
        config_file: Optional path to config file. If None, uses default path.
    """
    if config_file is None:
        config_file = get_config_file_path()

    config_file.parent.mkdir(parents=True, exist_ok=True)

    try:
        with open(config_file, 'w', encoding='utf-8') as f:
            yaml.safe_dump(config_to_dict(config), f, default_flow_style=False, indent=2, sort_keys=False)

        logging.debug(f"Saved config to {config_file}")

    except (OSError, yaml.YAMLError) as e:
        logging.error(f"Error saving config to {config_file}: {e}")
        raise


def create_example_config() -> str:
    """Create an example configuration YAML string."""
    example_config = RunConfig(
        tasks=[
            TaskSpec(task_id="Exp.1", source_id="H", target_id="V", type_tag="TYPE-I"),
            TaskSpec(task_id="Exp.8", source_id="H", target_id="C", type_tag="TYPE-II"),
        ],
        manifests={
            dataset_id: BUILTIN_DATASETS[dataset_id].model_copy(
                update={"feature_file": Path(f"features/{dataset_id}.cdmer")}
            )
            for dataset_id in ("H", "V", "C")
        },
        data_source="files",
        method="both",
        hyperparams=RstrHyperparams(lam=10.0, mu=0.5, gamma=0.05),
        sweep=SweepGrid(lambda_grid=[1.0, 10.0, 100.0], mu_grid=[0.1, 0.5, 1.0], tau_grid=[0.01, 0.05, 0.1]),
        report_format="tsv",
        seed=0,
        jobs=2,
        log_level="INFO",
    )

    return yaml.safe_dump(config_to_dict(example_config), default_flow_style=False, indent=2, sort_keys=False)
