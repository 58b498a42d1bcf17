"""CLI interface for RSTR CDMER using Typer."""

from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
import yaml
from pydantic import ValidationError
from typing_extensions import Annotated

from . import __version__
from .core.metrics import score
from .errors import ConfigError, DataError, DimensionMismatchError, FeatureFileError, KernelConfigMismatchError
from .main import CdmerApp
from .services.synthetic import SyntheticShiftConfig
from .services.writer import atomic_write_text
from .utils.paths import get_log_dir, get_project_dir


app = typer.Typer(
    name="rstr-cdmer",
    help="Region selective transfer regression for cross-database micro-expression recognition",
    add_completion=False,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_VERIFY = 3

ConfigOption = Annotated[Optional[Path], typer.Option("--config", "-c", help="Path to config file")]
MethodOption = Annotated[Optional[str], typer.Option("--method", help="rstr|baseline|both")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", min=0, help="Random seed")]
OutOption = Annotated[Optional[Path], typer.Option("--out", "-o", help="Output path")]
FormatOption = Annotated[Optional[str], typer.Option("--format", help="Report format: tsv|json")]
JobsOption = Annotated[Optional[int], typer.Option("--jobs", "-j", min=1, help="Parallel workers")]
VerboseOption = Annotated[bool, typer.Option("--verbose", "-v", help="Show detailed output")]


def _exit_code(error: Exception) -> int:
    """Map an exception to the documented exit code."""
    if isinstance(error, (ConfigError, ValidationError)):
        return EXIT_CONFIG
    if isinstance(
        error,
        (DataError, FeatureFileError, DimensionMismatchError, KernelConfigMismatchError, FileNotFoundError),
    ):
        return EXIT_DATA
    return EXIT_CONFIG


def _fail(error: Exception) -> None:
    typer.echo(f"✗ Error: {error}", err=True)
    raise typer.Exit(_exit_code(error))


def _hyperparam_overrides(lam: Optional[float], mu: Optional[float], gamma: Optional[float]) -> Optional[Dict[str, Any]]:
    values = {"lambda": lam, "mu": mu, "gamma": gamma}
    values = {key: value for key, value in values.items() if value is not None}
    return values or None


def _make_app(config_file: Optional[Path], verbose: bool, **overrides: Any) -> CdmerApp:
    app_instance = CdmerApp(config_file, **overrides)
    app_instance.set_verbose(verbose)
    return app_instance


@app.command()
def train(
    source: Annotated[Path, typer.Option("--source", "-s", help="Labeled source feature file")],
    target: Annotated[Path, typer.Option("--target", "-t", help="Unlabeled target feature file")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Model artifact to write")],
    method: MethodOption = None,
    lam: Annotated[Optional[float], typer.Option("--lambda", help="Region-weight sparsity")] = None,
    mu: Annotated[Optional[float], typer.Option("--mu", help="Coefficient sparsity")] = None,
    gamma: Annotated[Optional[float], typer.Option("--gamma", help="Relaxed MMD weight")] = None,
    config_file: ConfigOption = None,
    verbose: VerboseOption = False,
) -> None:
    """Train RSTR (or the baseline) on a source/target pair and save the model."""
    try:
        app_instance = _make_app(
            config_file, verbose, hyperparams=_hyperparam_overrides(lam, mu, gamma)
        )
        trained = app_instance.train_method(method)
        model, path = app_instance.train(source, target, out, method=trained)
    except Exception as e:
        _fail(e)

    typer.echo(f"✓ Saved {trained} model to {path}")
    if trained == "rstr":
        ranking = ", ".join(str(i) for i in model.region_ranking()[:5])
        typer.echo(f"  Outer iterations: {len(model.objective_trace)} (converged={model.converged})")
        typer.echo(f"  Top regions: {ranking}")
        for warning in model.warnings:
            typer.echo(f"  Warning: {warning}")


@app.command()
def predict(
    model_file: Annotated[Path, typer.Option("--model", "-m", help="Model artifact")],
    test: Annotated[Path, typer.Option("--test", help="Feature file to label")],
    source: Annotated[Optional[Path], typer.Option("--source", "-s", help="Training source file (RSTR)")] = None,
    target: Annotated[Optional[Path], typer.Option("--target", "-t", help="Training target file (RSTR)")] = None,
    out: OutOption = None,
    config_file: ConfigOption = None,
    verbose: VerboseOption = False,
) -> None:
    """Predict class labels for a feature file."""
    try:
        app_instance = _make_app(config_file, verbose)
        class_names, predicted, truths = app_instance.predict(model_file, test, source, target)
    except Exception as e:
        _fail(e)

    lines = ["sample\tclass\t" + "\t".join(class_names)]
    for j, index in enumerate(predicted.hard_labels):
        vector = "\t".join(f"{v:.6f}" for v in predicted.label_vectors[:, j])
        lines.append(f"{j}\t{class_names[index]}\t{vector}")
    text = "\n".join(lines) + "\n"

    if out is not None:
        atomic_write_text(out, text)
        typer.echo(f"✓ Wrote {len(predicted.hard_labels)} predictions to {out}")
    else:
        typer.echo(text, nl=False)

    if truths is not None:
        f1, acc, _ = score(predicted.hard_labels, truths.indices, len(class_names))
        typer.echo(f"mean F1 / accuracy: {f1:.4f} / {acc:.2f}")


@app.command("run-task")
def run_task(
    task: Annotated[str, typer.Option("--task", help="Task id, e.g. Exp.1")],
    method: MethodOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    report_format: FormatOption = None,
    jobs: JobsOption = None,
    config_file: ConfigOption = None,
    verbose: VerboseOption = False,
) -> None:
    """Run one protocol task and print its report."""
    try:
        app_instance = _make_app(
            config_file, verbose, method=method, seed=seed, output=out, report_format=report_format, jobs=jobs
        )
        app_instance.run_task(task)
    except Exception as e:
        _fail(e)
    typer.echo(app_instance.last_report, nl=False)


@app.command("run-protocol")
def run_protocol(
    method: MethodOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    report_format: FormatOption = None,
    jobs: JobsOption = None,
    config_file: ConfigOption = None,
    verbose: VerboseOption = False,
) -> None:
    """Run every configured task and print the summary report."""
    try:
        app_instance = _make_app(
            config_file, verbose, method=method, seed=seed, output=out, report_format=report_format, jobs=jobs
        )
        run = app_instance.run_protocol()
    except Exception as e:
        _fail(e)
    typer.echo(app_instance.last_report, nl=False)
    if run.partial:
        typer.echo(f"✗ Partial run: {len(run.failures)} task(s) failed", err=True)
        raise typer.Exit(EXIT_DATA)


@app.command()
def sweep(
    task: Annotated[Optional[str], typer.Option("--task", help="Task id; all tasks when omitted")] = None,
    method: MethodOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    report_format: FormatOption = None,
    jobs: JobsOption = None,
    config_file: ConfigOption = None,
    verbose: VerboseOption = False,
) -> None:
    """Search the hyperparameter grids and report the oracle-selected best point per task."""
    try:
        app_instance = _make_app(
            config_file, verbose, method=method, seed=seed, output=out, report_format=report_format, jobs=jobs
        )
        app_instance.enable_sweep()
        if task:
            app_instance.run_task(task)
            partial = False
        else:
            partial = app_instance.run_protocol().partial
    except Exception as e:
        _fail(e)
    typer.echo(app_instance.last_report, nl=False)
    if partial:
        raise typer.Exit(EXIT_DATA)


@app.command("generate-synthetic")
def generate_synthetic(
    out: Annotated[Path, typer.Option("--out", "-o", help="Directory to write feature files to")],
    seed: SeedOption = None,
    family: Annotated[bool, typer.Option("--family", help="Write stand-ins for the builtin datasets")] = False,
    blocks: Annotated[Optional[int], typer.Option("--blocks", "-K", min=1, help="Blocks per sample")] = None,
    dim: Annotated[Optional[int], typer.Option("--dim", "-d", min=1, help="Block dimension")] = None,
    n_source: Annotated[Optional[int], typer.Option("--n-source", min=1)] = None,
    n_target: Annotated[Optional[int], typer.Option("--n-target", min=1)] = None,
    separation: Annotated[Optional[float], typer.Option("--separation", min=0.0)] = None,
    shift: Annotated[Optional[float], typer.Option("--shift", min=0.0)] = None,
    informative: Annotated[Optional[str], typer.Option("--informative", help="Comma-separated block indices")] = None,
    config_file: ConfigOption = None,
    verbose: VerboseOption = False,
) -> None:
    """Write seeded synthetic domain-shift feature files."""
    try:
        app_instance = _make_app(config_file, verbose, seed=seed)
        updates = {
            "seed": app_instance.config.seed,
            "n_blocks": blocks,
            "dim": dim,
            "n_source": n_source,
            "n_target": n_target,
            "class_separation": separation,
            "shift_magnitude": shift,
            "informative_blocks": [int(i) for i in informative.split(",")] if informative else None,
        }
        data = app_instance.config.synthetic.model_dump()
        data.update({key: value for key, value in updates.items() if value is not None})
        synthetic = SyntheticShiftConfig(**data)
        written = app_instance.generate_synthetic(out, synthetic, family=family)
    except Exception as e:
        _fail(e)

    for name, path in written.items():
        typer.echo(f"✓ {name}: {path}")


@app.command()
def verify(
    seed: SeedOption = None,
    only: Annotated[Optional[List[int]], typer.Option("--only", help="Run only these criteria (repeatable)")] = None,
    out: OutOption = None,
    jobs: JobsOption = None,
    config_file: ConfigOption = None,
    verbose: VerboseOption = False,
) -> None:
    """Run the synthetic acceptance suite; exits 3 if any criterion fails."""
    try:
        app_instance = _make_app(config_file, verbose, seed=seed, output=out, jobs=jobs)
        report = app_instance.verify(only=only)
    except Exception as e:
        _fail(e)

    typer.echo(report.render(), nl=False)
    if not report.passed:
        raise typer.Exit(EXIT_VERIFY)


@app.command()
def config(
    show: Annotated[bool, typer.Option("--show", help="Show current config")] = False,
    example: Annotated[bool, typer.Option("--example", help="Generate example config")] = False,
    config_file: ConfigOption = None,
) -> None:
    """Manage RSTR CDMER configuration."""
    if example:
        try:
            from .config import create_example_config
            typer.echo(create_example_config())
        except Exception as e:
            typer.echo(f"✗ Error generating example config: {e}", err=True)
            raise typer.Exit(EXIT_CONFIG)
    elif show:
        try:
            from .config import config_to_dict, load_config
            config_obj = load_config(config_file)
            typer.echo(yaml.safe_dump(config_to_dict(config_obj), default_flow_style=False, indent=2, sort_keys=False))
        except Exception as e:
            typer.echo(f"✗ Error loading config: {e}", err=True)
            raise typer.Exit(EXIT_CONFIG)
    else:
        typer.echo("Use --show to view config or --example to generate example")


@app.command()
def info(
    config_file: ConfigOption = None,
) -> None:
    """Show version and project information."""
    typer.echo(f"RSTR CDMER v{__version__}")
    typer.echo(f"Project Directory: {get_project_dir()}")
    typer.echo(f"Log Directory: {get_log_dir()}")

    # Show application info if config is available
    try:
        app_instance = CdmerApp(config_file)
        info_data = app_instance.get_info()
        typer.echo(f"\nApplication Info:")
        typer.echo(f"  Config file: {info_data.get('config_file', 'N/A')}")
        typer.echo(f"  Log level: {info_data.get('log_level', 'N/A')}")
        typer.echo(f"  Data source: {info_data.get('data_source', 'N/A')}")
        typer.echo(f"  Method: {info_data.get('method', 'N/A')}")
        typer.echo(f"  Tasks: {info_data.get('tasks', 0)}")
        typer.echo(f"  Sweep points per task: {info_data.get('sweep_points', 1)}")
        typer.echo(f"  Jobs: {info_data.get('jobs', 1)}")
    except Exception as e:
        typer.echo(f"Warning: Could not load application info: {e}")


if __name__ == "__main__":
    app()
