"""The cross-database task catalogue and the builtin dataset metadata."""

import logging
from pathlib import Path
from typing import Dict, Literal, Mapping, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from ..errors import ConfigError
from .features import DatasetManifest


logger = logging.getLogger(__name__)

TypeTag = Literal["TYPE-I", "TYPE-II"]
CLASS_NAMES: Tuple[str, ...] = ("Positive", "Negative", "Surprise")


class TaskSpec(BaseModel):
    """One cross-database experiment ``task_id: source_id -> target_id``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    task_id: str
    source_id: str
    target_id: str
    type_tag: TypeTag

    @model_validator(mode="after")
    def check_distinct(self) -> "TaskSpec":
        if self.source_id == self.target_id:
            raise ValueError(
                f"task {self.task_id}: source and target must differ ({self.source_id})"
            )
        return self

    def describe(self) -> str:
        return f"{self.task_id}: {self.source_id} -> {self.target_id}"


def _builtin_datasets() -> Dict[str, DatasetManifest]:
    counts = {
        "H": ("SMIC(HS)", (51, 70, 43)),
        "V": ("SMIC(VIS)", (23, 28, 20)),
        "N": ("SMIC(NIR)", (23, 28, 20)),
        "C": ("Selected CASME II", (32, 73, 25)),
    }
    return {
        dataset_id: DatasetManifest(
            dataset_id=dataset_id,
            name=name,
            class_counts=dict(zip(CLASS_NAMES, per_class)),
        )
        for dataset_id, (name, per_class) in counts.items()
    }


# Sample constitution of the four databases; feature files are supplied per run.
BUILTIN_DATASETS: Mapping[str, DatasetManifest] = _builtin_datasets()

_BUILTIN_TASKS: Tuple[TaskSpec, ...] = tuple(
    TaskSpec(task_id=task_id, source_id=source, target_id=target, type_tag=type_tag)
    for task_id, source, target, type_tag in (
        ("Exp.1", "H", "V", "TYPE-I"),
        ("Exp.2", "V", "H", "TYPE-I"),
        ("Exp.3", "H", "N", "TYPE-I"),
        ("Exp.4", "N", "H", "TYPE-I"),
        ("Exp.5", "V", "N", "TYPE-I"),
        ("Exp.6", "N", "V", "TYPE-I"),
        ("Exp.7", "C", "H", "TYPE-II"),
        ("Exp.8", "H", "C", "TYPE-II"),
        ("Exp.9", "C", "V", "TYPE-II"),
        ("Exp.10", "V", "C", "TYPE-II"),
        ("Exp.11", "C", "N", "TYPE-II"),
        ("Exp.12", "N", "C", "TYPE-II"),
    )
)


def builtin_protocol() -> Tuple[TaskSpec, ...]:
    """The 12 standard tasks: Exp.1-6 within SMIC, Exp.7-12 between CASME II and SMIC."""
    return _BUILTIN_TASKS


def check_unique_ids(tasks: Tuple[TaskSpec, ...]) -> None:
    seen = set()
    for task in tasks:
        if task.task_id in seen:
            raise ConfigError(f"duplicate task id {task.task_id}")
        seen.add(task.task_id)


def load_protocol(path: Union[str, Path]) -> Tuple[TaskSpec, ...]:
    """
    Read a task catalogue from YAML.

    The file holds either a list of task mappings or ``{tasks: [...]}``.

    Raises:
        ConfigError: If the file is missing or any task is invalid
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"protocol file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or []
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}")

    if isinstance(data, dict):
        data = data.get("tasks", [])
    if not isinstance(data, list) or not data:
        raise ConfigError(f"{path} does not list any tasks")

    try:
        tasks = tuple(TaskSpec(**entry) for entry in data)
    except (TypeError, ValidationError) as e:
        raise ConfigError(f"invalid task in {path}: {e}")
    check_unique_ids(tasks)
    logger.debug(f"Loaded {len(tasks)} tasks from {path}")
    return tasks
