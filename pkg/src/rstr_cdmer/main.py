"""Main RSTR CDMER application."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import ValidationError

from .config import RunConfig, SweepGrid, config_to_dict, create_example_config, load_config
from .core.baseline import predict_baseline, train_baseline
from .core.model import LabelMatrix, PredictedLabels, predict, train
from .errors import ConfigError, FeatureFileError
from .services.artifacts import load_model, read_artifact, save_model
from .services.features import read_features, save_features
from .services.harness import ProtocolRun, TaskResult, run_protocol, run_task, write_report
from .services.protocol import BUILTIN_DATASETS
from .services.synthetic import SyntheticShiftConfig, generate_domain_family, generate_synthetic
from .services.verify import VerificationReport, run_verification
from .services.writer import atomic_write_text
from .utils.paths import get_log_dir, get_project_dir


class CdmerApp:
    """Main RSTR CDMER application."""

    def __init__(self, config_file: Optional[Path] = None, **overrides: Any):
        """
        Initialize the application.

        Args:
            config_file: Optional path to configuration file
            overrides: Flag values that replace config file values when not None
        """
        self.config_file = config_file
        self.last_report = ""
        self.config = self.apply_overrides(load_config(config_file), **overrides)

        # Setup logging
        self._setup_logging()

        logging.debug("RSTR CDMER initialized")

    @staticmethod
    def apply_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
        """
        Return ``config`` with every non-None override applied and re-validated.

        Raises:
            ConfigError: If the merged configuration is invalid
        """
        updates = {key: value for key, value in overrides.items() if value is not None}
        if not updates:
            return config
        data = config.model_dump(by_alias=True)
        for key, value in updates.items():
            # nested sections (hyperparams, synthetic) merge key by key
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        try:
            return RunConfig(**data)
        except ValidationError as e:
            raise ConfigError(f"Invalid option: {e}") from e

    def _setup_logging(self) -> None:
        """Setup logging configuration."""
        log_dir = get_log_dir()
        log_file = log_dir / "rstr-cdmer.log"

        # Convert string log level to logging constant
        log_level = getattr(logging, self.config.log_level.upper(), logging.INFO)

        # Create formatter
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

        # Setup file handler
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(log_level)
        file_handler.setFormatter(formatter)

        # Setup console handler
        console_handler = logging.StreamHandler()
        console_handler.setLevel(log_level)
        console_handler.setFormatter(formatter)

        # Configure root logger
        root_logger = logging.getLogger()
        root_logger.setLevel(log_level)
        root_logger.handlers = []  # Clear existing handlers
        root_logger.addHandler(file_handler)
        root_logger.addHandler(console_handler)

    def set_verbose(self, verbose: bool) -> None:
        if verbose:
            root_logger = logging.getLogger()
            root_logger.setLevel(logging.DEBUG)
            for handler in root_logger.handlers:
                handler.setLevel(logging.DEBUG)

    def train_method(self, method: Optional[str] = None) -> str:
        """
        The single method ``train`` fits: ``method`` if given, else the configured one.

        A configured ``both`` (the protocol default) trains RSTR.

        Raises:
            ConfigError: If ``method`` is given and is not ``rstr`` or ``baseline``
        """
        if method is None:
            return "rstr" if self.config.method == "both" else self.config.method
        if method not in ("rstr", "baseline"):
            raise ConfigError(f"train needs a single method: rstr or baseline, got {method!r}")
        return method

    def train(
        self,
        source_file: Path,
        target_file: Path,
        out: Path,
        method: Optional[str] = None,
    ) -> Tuple[Any, Path]:
        """
        Train one method (see ``train_method``) and save the artifact.

        Raises:
            ConfigError: If ``method`` is not ``rstr`` or ``baseline``
            FeatureFileError: If the source file is unlabeled or malformed
        """
        method = self.train_method(method)
        source, labels = read_features(source_file, domain_tag="source")
        if labels is None:
            raise FeatureFileError(f"{source_file} has no labels")

        if method == "baseline":
            model = train_baseline(source, labels, ridge=self.config.baseline_ridge)
            return model, save_model(out, model)

        target, _ = read_features(target_file, domain_tag="target")
        model = train(source, labels, target, self.config.hyperparams)
        feature_files = {"source": str(Path(source_file).resolve()), "target": str(Path(target_file).resolve())}
        return model, save_model(out, model, feature_files=feature_files)

    def predict(
        self,
        model_file: Path,
        test_file: Path,
        source_file: Optional[Path] = None,
        target_file: Optional[Path] = None,
    ) -> Tuple[List[str], PredictedLabels, Optional[LabelMatrix]]:
        """
        Predict the classes of every sample in ``test_file``.

        RSTR artifacts reload their training sets from the recorded feature files unless
        ``source_file`` / ``target_file`` are given.

        Returns:
            Class names, the predictions and the test labels if the file carries any
        """
        document = read_artifact(model_file)
        test, test_labels = read_features(test_file, domain_tag="test")

        model: Any
        if document["method"] == "baseline":
            model = load_model(model_file)
            predicted = predict_baseline(model, test)
        else:
            recorded = document.get("feature_files", {})
            source_path = source_file or recorded.get("source")
            target_path = target_file or recorded.get("target")
            if not source_path or not target_path:
                raise ConfigError("RSTR prediction needs --source and --target")
            source, _ = read_features(Path(source_path), domain_tag="source")
            target, _ = read_features(Path(target_path), domain_tag="target")
            model = load_model(model_file, source, target)
            predicted = predict(model, test)
        return list(model.class_names), predicted, test_labels

    def run_task(self, task_id: str) -> List[TaskResult]:
        """Run one task by id and write its report."""
        task = self.config.find_task(task_id)
        results = run_task(self.config, task)
        run = ProtocolRun(
            tasks=(task,),
            results=tuple(results),
            failures={},
            oracle_selected=self.config.sweep is not None,
        )
        self.last_report = write_report(run, self.config)
        return results

    def run_protocol(self) -> ProtocolRun:
        """Run every configured task and write the report."""
        run = run_protocol(self.config)
        self.last_report = write_report(run, self.config)
        return run

    def enable_sweep(self) -> None:
        """Use the configured sweep grids, or the default search space when none are set."""
        if self.config.sweep is None:
            self.config = self.config.model_copy(update={"sweep": SweepGrid()})

    def generate_synthetic(
        self,
        out_dir: Path,
        synthetic: Optional[SyntheticShiftConfig] = None,
        family: bool = False,
    ) -> Dict[str, Path]:
        """
        Write synthetic feature files.

        A pair run writes ``source.cdmer`` and ``target.cdmer`` (both labeled; target labels
        are for scoring only). A family run writes one stand-in per builtin dataset id.
        """
        synthetic = synthetic or self.config.synthetic.model_copy(update={"seed": self.config.seed})
        out_dir = Path(out_dir)
        written: Dict[str, Path] = {}

        if family:
            datasets = generate_domain_family(synthetic, BUILTIN_DATASETS)
            for dataset_id, (features, labels) in datasets.items():
                written[dataset_id] = save_features(out_dir / f"{dataset_id}.cdmer", features, labels)
        else:
            task = generate_synthetic(synthetic)
            written["source"] = save_features(out_dir / "source.cdmer", task.source, task.source_labels)
            written["target"] = save_features(out_dir / "target.cdmer", task.target, task.target_labels)

        logging.info(f"Wrote {len(written)} synthetic feature file(s) to {out_dir}")
        return written

    def verify(self, seed: Optional[int] = None, only: Optional[List[int]] = None) -> VerificationReport:
        report = run_verification(
            seed=self.config.seed if seed is None else seed,
            only=only,
            jobs=self.config.jobs,
        )
        if self.config.output is not None:
            atomic_write_text(self.config.output, report.render())
        return report

    def get_info(self) -> Dict[str, Any]:
        """
        Get application information.

        Returns:
            Dictionary with application info
        """
        from . import __version__

        tasks = self.config.task_list()
        return {
            "version": __version__,
            "project_dir": str(get_project_dir()),
            "config_file": str(self.config_file) if self.config_file else "default",
            "log_level": self.config.log_level,
            "data_source": self.config.data_source,
            "method": self.config.method,
            "tasks": len(tasks),
            "sweep_points": self.config.sweep.size if self.config.sweep else 1,
            "jobs": self.config.jobs,
        }

    def config_dict(self) -> Dict[str, Any]:
        return config_to_dict(self.config)

    def create_example_config(self) -> str:
        """Create example configuration."""
        return create_example_config()
