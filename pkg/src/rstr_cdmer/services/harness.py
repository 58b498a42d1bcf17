"""
Task and protocol runs: train on labeled source plus unlabeled target, score on target.

Under a sweep every grid point is trained and scored and the point with the highest target
mean F1 is kept (ties: higher accuracy, then earlier grid index). That choice peeks at the
target labels, so reports built from swept runs are labeled ``oracle-selected``.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, TypeVar

import numpy as np

from ..config import RunConfig
from ..core.baseline import predict_baseline, train_baseline
from ..core.kernels import BlockedFeatureSet, check_compatible
from ..core.metrics import score
from ..core.model import LabelMatrix, RstrHyperparams, RstrModel, predict, train
from ..errors import FeatureFileError
from .features import load_features
from .protocol import TaskSpec
from .synthetic import generate_domain_family
from .writer import atomic_write_text


logger = logging.getLogger(__name__)

Method = Literal["rstr", "baseline"]
ORACLE_NOTE = "oracle-selected: best grid point per task by target mean F1, ties by accuracy"
TOP_REGIONS = 3

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class TaskData:
    """Everything one task trains and scores on."""

    source: BlockedFeatureSet
    source_labels: LabelMatrix
    target: BlockedFeatureSet
    target_labels: Optional[LabelMatrix]


@dataclass(frozen=True)
class TaskResult:
    """Target scores of one method on one task, with the hyperparameters that produced them."""

    task_id: str
    type_tag: str
    method: Method
    mean_f1: float
    accuracy: float
    hyperparams: Dict[str, Any]
    wall_time: float
    trace_summary: Dict[str, Any] = field(default_factory=dict)
    region_weights: Optional[Tuple[float, ...]] = None
    grid_size: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.mean_f1 <= 1.0:
            raise ValueError(f"mean F1 {self.mean_f1} outside [0, 1]")
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 100]")

    @property
    def cell(self) -> str:
        return format_cell(self.mean_f1, self.accuracy)

    def top_regions(self, count: int = TOP_REGIONS) -> List[int]:
        if self.region_weights is None:
            return []
        weights = np.asarray(self.region_weights)
        order = np.argsort(-weights, kind="stable")
        return [int(i) for i in order[:count] if weights[i] > 0]

    def to_dict(self) -> Dict[str, Any]:
        """Report view; wall time is left out so reruns render identically."""
        return {
            "task_id": self.task_id,
            "type": self.type_tag,
            "method": self.method,
            "mean_f1": self.mean_f1,
            "accuracy": self.accuracy,
            "cell": self.cell,
            "hyperparams": self.hyperparams,
            "grid_size": self.grid_size,
            "trace": self.trace_summary,
            "region_weights": list(self.region_weights) if self.region_weights is not None else None,
            "top_regions": self.top_regions(),
        }


@dataclass(frozen=True)
class ProtocolRun:
    """Results of a protocol run, in task order, plus the tasks that failed."""

    tasks: Tuple[TaskSpec, ...]
    results: Tuple[TaskResult, ...]
    failures: Dict[str, str]
    oracle_selected: bool

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def averages(self) -> List[Dict[str, Any]]:
        """Per-method average over all scored tasks, then per task type."""
        rows = []
        methods = sorted({r.method for r in self.results}, key=_method_order)
        for group in ("all", "TYPE-I", "TYPE-II"):
            for method in methods:
                scored = [
                    r for r in self.results
                    if r.method == method and (group == "all" or r.type_tag == group)
                ]
                if not scored:
                    continue
                mean_f1 = float(np.mean([r.mean_f1 for r in scored]))
                accuracy = float(np.mean([r.accuracy for r in scored]))
                rows.append({
                    "group": group,
                    "method": method,
                    "tasks": len(scored),
                    "mean_f1": mean_f1,
                    "accuracy": accuracy,
                    "cell": format_cell(mean_f1, accuracy),
                })
        return rows


def format_cell(mean_f1: float, accuracy: float) -> str:
    """``<mean F1, 4 decimals> / <accuracy, 2 decimals>``."""
    return f"{mean_f1:.4f} / {accuracy:.2f}"


def _method_order(method: str) -> int:
    return 0 if method == "rstr" else 1


def _methods(cfg: RunConfig) -> Tuple[Method, ...]:
    if cfg.method == "both":
        return ("rstr", "baseline")
    return (cfg.method,)


def parallel_map(function: Callable[[T], R], items: Sequence[T], jobs: int) -> List[R]:
    """Map in a thread pool; results keep the order of ``items``."""
    if jobs <= 1 or len(items) <= 1:
        return [function(item) for item in items]
    with ThreadPool(min(jobs, len(items))) as pool:
        return pool.map(function, items)


def _synthetic_datasets(
    cfg: RunConfig, tasks: Sequence[TaskSpec]
) -> Dict[str, Tuple[BlockedFeatureSet, LabelMatrix]]:
    dataset_ids = sorted({d for task in tasks for d in (task.source_id, task.target_id)})
    manifests = {dataset_id: cfg.manifest(dataset_id) for dataset_id in dataset_ids}
    synthetic = cfg.synthetic.model_copy(update={"seed": cfg.seed})
    return generate_domain_family(synthetic, manifests)


def load_task_data(
    cfg: RunConfig,
    task: TaskSpec,
    synthetic_cache: Optional[Mapping[str, Tuple[BlockedFeatureSet, LabelMatrix]]] = None,
) -> TaskData:
    """
    Load (or generate) the source and target sets of ``task``.

    Raises:
        ConfigError: If a dataset id cannot be resolved
        FeatureFileError: If a file is malformed or the source set is unlabeled
        DimensionMismatchError: If source and target block layouts differ
    """
    cfg.check_resolvable((task,))
    if cfg.data_source == "synthetic":
        datasets = synthetic_cache or _synthetic_datasets(cfg, cfg.task_list())
        source, source_labels = datasets[task.source_id]
        target, target_labels = datasets[task.target_id]
        data = TaskData(
            source=source.with_tag("source"),
            source_labels=source_labels,
            target=target.with_tag("target"),
            target_labels=target_labels,
        )
    else:
        source, labels = load_features(cfg.manifest(task.source_id), domain_tag="source")
        target, target_labels = load_features(cfg.manifest(task.target_id), domain_tag="target")
        if labels is None:
            raise FeatureFileError(f"source dataset {task.source_id} has no labels")
        data = TaskData(source=source, source_labels=labels, target=target, target_labels=target_labels)

    check_compatible(data.source, data.target)
    if data.target_labels is not None and data.target_labels.class_names != data.source_labels.class_names:
        raise FeatureFileError(
            f"task {task.task_id}: target classes {data.target_labels.class_names} differ "
            f"from source classes {data.source_labels.class_names}"
        )
    return data


def _trace_summary(model: RstrModel) -> Dict[str, Any]:
    trace = model.objective_trace
    return {
        "outer_iterations": len(trace),
        "initial_objective": trace[0] if trace else None,
        "final_objective": trace[-1] if trace else None,
        "converged": model.converged,
    }


@dataclass(frozen=True)
class _Evaluation:
    mean_f1: float
    accuracy: float
    hyperparams: RstrHyperparams
    model: RstrModel


def _evaluate_rstr(data: TaskData, truths: np.ndarray, hp: RstrHyperparams) -> _Evaluation:
    model = train(data.source, data.source_labels, data.target, hp)
    predicted = predict(model, data.target.with_tag("test"))
    f1, acc, _ = score(predicted.hard_labels, truths, data.source_labels.n_classes)
    return _Evaluation(mean_f1=f1, accuracy=acc, hyperparams=hp, model=model)


def select_best(scores: Sequence[Tuple[float, float]]) -> int:
    """
    Index of the best (mean F1, accuracy) pair.

    Mean F1 decides; accuracy only breaks exact ties; remaining ties go to the first index.
    """
    if not scores:
        raise ValueError("no grid points to select from")
    best = 0
    for index, candidate in enumerate(scores[1:], start=1):
        if candidate > scores[best]:
            best = index
    return best


def run_task(
    cfg: RunConfig,
    task: TaskSpec,
    data: Optional[TaskData] = None,
    jobs: Optional[int] = None,
) -> List[TaskResult]:
    """
    Train and score every configured method on one task.

    Returns:
        One TaskResult per method, RSTR first

    Raises:
        FeatureFileError: If the target set carries no labels to score against
    """
    data = data or load_task_data(cfg, task)
    if data.target_labels is None:
        raise FeatureFileError(f"task {task.task_id}: target labels are required for scoring")
    truths = data.target_labels.indices
    jobs = cfg.jobs if jobs is None else jobs
    results = []

    for method in _methods(cfg):
        started = time.perf_counter()
        if method == "rstr":
            points = cfg.sweep.points(cfg.hyperparams) if cfg.sweep else [cfg.hyperparams]
            evaluations = parallel_map(lambda hp: _evaluate_rstr(data, truths, hp), points, jobs)
            best = evaluations[select_best([(e.mean_f1, e.accuracy) for e in evaluations])]
            result = TaskResult(
                task_id=task.task_id,
                type_tag=task.type_tag,
                method="rstr",
                mean_f1=best.mean_f1,
                accuracy=best.accuracy,
                hyperparams=best.hyperparams.summary(),
                wall_time=time.perf_counter() - started,
                trace_summary=_trace_summary(best.model),
                region_weights=tuple(float(v) for v in best.model.w),
                grid_size=len(points),
            )
        else:
            model = train_baseline(data.source, data.source_labels, ridge=cfg.baseline_ridge)
            predicted = predict_baseline(model, data.target)
            f1, acc, _ = score(predicted.hard_labels, truths, data.source_labels.n_classes)
            result = TaskResult(
                task_id=task.task_id,
                type_tag=task.type_tag,
                method="baseline",
                mean_f1=f1,
                accuracy=acc,
                hyperparams={"ridge": cfg.baseline_ridge},
                wall_time=time.perf_counter() - started,
            )

        logger.info(
            f"{task.describe()} [{method}] {result.cell} "
            f"({result.grid_size} grid point(s), {result.wall_time:.2f}s)"
        )
        results.append(result)
    return results


def run_protocol(cfg: RunConfig, tasks: Optional[Sequence[TaskSpec]] = None) -> ProtocolRun:
    """
    Run every task; a failing task is recorded and the run is marked partial.

    Tasks run in parallel when ``cfg.jobs > 1``; results are always in task order.
    """
    tasks = tuple(tasks) if tasks is not None else cfg.task_list()
    cache = _synthetic_datasets(cfg, tasks) if cfg.data_source == "synthetic" else None
    task_jobs = 1 if cfg.jobs > 1 and len(tasks) > 1 else cfg.jobs

    def run_one(task: TaskSpec) -> Tuple[List[TaskResult], Optional[str]]:
        try:
            data = load_task_data(cfg, task, synthetic_cache=cache)
            return run_task(cfg, task, data=data, jobs=task_jobs), None
        except Exception as e:
            logger.error(f"{task.describe()} failed: {e}")
            return [], str(e)

    outcomes = parallel_map(run_one, list(tasks), cfg.jobs)
    results: List[TaskResult] = []
    failures: Dict[str, str] = {}
    for task, (task_results, error) in zip(tasks, outcomes):
        results.extend(task_results)
        if error is not None:
            failures[task.task_id] = error

    if failures:
        logger.warning(f"Protocol run is partial: {len(failures)} of {len(tasks)} tasks failed")
    return ProtocolRun(
        tasks=tasks,
        results=tuple(results),
        failures=failures,
        oracle_selected=cfg.sweep is not None,
    )


def _format_hyperparams(hyperparams: Dict[str, Any]) -> str:
    parts = []
    for key, value in hyperparams.items():
        parts.append(f"{key}={value:g}" if isinstance(value, float) else f"{key}={value}")
    return " ".join(parts)


def render_tsv(run: ProtocolRun) -> str:
    """Tab-separated report: one row per (task, method), then the average rows."""
    lines = []
    if run.oracle_selected:
        lines.append(f"# {ORACLE_NOTE}")
    lines.append("\t".join(["task", "type", "method", "mean_f1 / accuracy", "hyperparams", "top_regions"]))
    for result in run.results:
        lines.append("\t".join([
            result.task_id,
            result.type_tag,
            result.method,
            result.cell,
            _format_hyperparams(result.hyperparams),
            ",".join(str(i) for i in result.top_regions()) or "-",
        ]))
    for row in run.averages():
        lines.append("\t".join(["Average", row["group"], row["method"], row["cell"], "-", "-"]))
    if run.partial:
        lines.append(f"# partial run: {len(run.failures)} task(s) failed")
        for task_id, error in run.failures.items():
            lines.append(f"# {task_id}: {error}")
    return "\n".join(lines) + "\n"


def render_json(run: ProtocolRun) -> str:
    document = {
        "oracle_selected": run.oracle_selected,
        "note": ORACLE_NOTE if run.oracle_selected else None,
        "partial": run.partial,
        "tasks": [task.model_dump() for task in run.tasks],
        "results": [result.to_dict() for result in run.results],
        "averages": run.averages(),
        "failures": run.failures,
    }
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def render_report(run: ProtocolRun, report_format: str = "tsv") -> str:
    if report_format == "json":
        return render_json(run)
    if report_format == "tsv":
        return render_tsv(run)
    raise ValueError(f"Unknown report format: {report_format}")


def write_report(run: ProtocolRun, cfg: RunConfig) -> str:
    """Render the run in the configured format and write it to ``cfg.output`` when set."""
    text = render_report(run, cfg.report_format)
    if cfg.output is not None:
        atomic_write_text(cfg.output, text)
        logger.info(f"Wrote {cfg.report_format} report to {cfg.output}")
    return text
