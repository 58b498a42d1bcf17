"""
Desk-scale acceptance suite.

Each criterion returns a CriterionResult with the measured quantity, so a failing check says
by how much it failed. Solver non-convergence and failed checks are report contents, never
exceptions.
"""

import logging
import re
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import RunConfig, SweepGrid
from ..core.baseline import predict_baseline, train_baseline
from ..core.kernels import build_kernel_set
from ..core.metrics import ConfusionMatrix, accuracy, confusion, mean_f1
from ..core.model import RstrHyperparams, predict, relaxed_mmd, train
from ..core.optimizer import (
    IalmParams,
    LassoProblem,
    PSubproblem,
    lasso_kkt_residual,
    project_simplex,
    q_step_objective,
    soft_threshold,
    solve_nonneg_lasso,
    solve_p_subproblem,
    solve_q,
)
from ..errors import ConfigError, FeatureFileError
from .features import read_features
from .harness import TaskData, parallel_map, render_report, run_protocol, run_task
from .protocol import builtin_protocol
from .synthetic import SyntheticShiftConfig, generate_synthetic


logger = logging.getLogger(__name__)

CELL_RE = re.compile(r"^\d\.\d{4} / \d{1,3}\.\d{2}$")

EXPECTED_PROTOCOL: Tuple[Tuple[str, str, str, str], ...] = (
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

# Malformed feature files the loader must reject, with the row the error must name.
BAD_FIXTURES: Dict[str, Tuple[str, Optional[int]]] = {
    "bad_header": ("#cdmer-features v2 K=1 d=2 N=1 classes=a,b\na 1 2\n", 0),
    "empty_dataset": ("#cdmer-features v1 K=1 d=2 N=0 classes=a,b\n", None),
    "short_row": ("#cdmer-features v1 K=2 d=3 N=2 classes=a,b\na 1 2 3 4 5 6\nb 1 2 3 4 5\n", 2),
    "unknown_class": ("#cdmer-features v1 K=1 d=2 N=2 classes=a,b\na 1 2\nz 1 2\n", 2),
    "non_finite": ("#cdmer-features v1 K=1 d=2 N=2 classes=a,b\na 1 2\nb nan 2\n", 2),
    "mixed_labels": ("#cdmer-features v1 K=1 d=2 N=2 classes=a,b\na 1 2\n1 2\n", 2),
    "too_few_rows": ("#cdmer-features v1 K=1 d=2 N=3 classes=a,b\na 1 2\nb 1 2\n", None),
}


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: str
    seconds: float
    budget_seconds: float

    def render(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        timing = f"{self.seconds:.1f}s"
        if self.seconds > self.budget_seconds:
            timing += f" (over {self.budget_seconds:.0f}s budget)"
        return f"[{status}] {self.number:>2}. {self.name}: {self.measured} [{timing}]"


@dataclass(frozen=True)
class VerificationReport:
    seed: int
    results: Tuple[CriterionResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def render(self) -> str:
        lines = [f"Verification suite (seed={self.seed})"]
        lines.extend(r.render() for r in self.results)
        passed = sum(r.passed for r in self.results)
        lines.append(f"{passed}/{len(self.results)} criteria passed")
        return "\n".join(lines) + "\n"


def _onehot(rng: np.random.Generator, n_classes: int, n_samples: int) -> np.ndarray:
    L = np.zeros((n_classes, n_samples))
    L[rng.integers(0, n_classes, size=n_samples), np.arange(n_samples)] = 1.0
    return L


def _random_p_problem(rng: np.random.Generator, mu: float, gamma: float) -> PSubproblem:
    return PSubproblem(
        ks_tilde=rng.standard_normal((12, 6)),
        kst_tilde=rng.standard_normal(12),
        labels=_onehot(rng, 3, 6),
        mu=mu,
        gamma=gamma,
    )


def check_soft_threshold(rng: np.random.Generator) -> Tuple[bool, str]:
    a = rng.normal(scale=3.0, size=10000)
    zeta = rng.uniform(0.0, 3.0, size=10000)
    mismatches = 0
    for a_i, zeta_i in zip(a, zeta):
        if a_i > zeta_i:
            expected = a_i - zeta_i
        elif a_i < -zeta_i:
            expected = a_i + zeta_i
        else:
            expected = 0.0
        if soft_threshold(a_i, zeta_i) != expected:
            mismatches += 1
    return mismatches == 0, f"{mismatches} mismatches in 10000 pairs"


def _fd_gradient(f: Callable[[np.ndarray], float], X: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        step = np.zeros_like(X)
        step[idx] = h
        grad[idx] = (f(X + step) - f(X - step)) / (2.0 * h)
    return grad


def check_q_step(rng: np.random.Generator) -> Tuple[bool, str]:
    worst = 0.0
    for _ in range(20):
        problem = _random_p_problem(rng, mu=rng.uniform(0, 1), gamma=rng.uniform(0, 2))
        P = rng.standard_normal((12, 3))
        T = rng.standard_normal((12, 3))
        kappa = float(rng.uniform(0.1, 10.0))

        def f(Q: np.ndarray) -> float:
            return q_step_objective(problem, Q, P, T, kappa)

        Q = solve_q(problem, P, T, kappa)
        reference = np.max(np.abs(_fd_gradient(f, rng.standard_normal(Q.shape))))
        at_solution = np.max(np.abs(_fd_gradient(f, Q)))
        worst = max(worst, at_solution / reference)
    return worst <= 1e-6, f"max relative gradient {worst:.2e} (limit 1e-6)"


def check_ialm_least_squares(rng: np.random.Generator) -> Tuple[bool, str]:
    worst = 0.0
    for _ in range(10):
        problem = _random_p_problem(rng, mu=0.0, gamma=0.0)
        result = solve_p_subproblem(problem, IalmParams(max_iters=2000))
        oracle, *_ = np.linalg.lstsq(problem.ks_tilde.T, problem.labels.T, rcond=None)
        worst = max(worst, float(np.max(np.abs(result.P - oracle))))
    return worst <= 1e-5, f"max elementwise gap {worst:.2e} (limit 1e-5)"


def _two_variable_grid_minimum(problem: LassoProblem) -> float:
    grid = np.round(np.arange(0, 5001) * 1e-3, 10)
    H = problem.D.T @ problem.D
    b = problem.D.T @ problem.y
    yy = float(problem.y @ problem.y)
    best = np.inf
    for w1 in grid:
        values = (
            yy
            - 2.0 * (b[0] * w1 + b[1] * grid)
            + H[0, 0] * w1**2
            + 2.0 * H[0, 1] * w1 * grid
            + H[1, 1] * grid**2
            + problem.lam * (w1 + grid)
        )
        best = min(best, float(values.min()))
    return best


def check_lasso(rng: np.random.Generator) -> Tuple[bool, str]:
    worst_kkt = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 21))
        m = int(rng.integers(n, 2 * n + 5))
        problem = LassoProblem(
            y=rng.standard_normal(m), D=rng.standard_normal((m, n)), lam=float(rng.uniform(0.01, 5))
        )
        result = solve_nonneg_lasso(problem)
        worst_kkt = max(worst_kkt, lasso_kkt_residual(problem, result.w))

    worst_gap = -np.inf
    for _ in range(10):
        D = rng.standard_normal((6, 2))
        w_true = rng.uniform(0.5, 4.0, size=2)
        problem = LassoProblem(y=D @ w_true + 0.1 * rng.standard_normal(6), D=D, lam=float(rng.uniform(0.01, 1)))
        solved = problem.objective(solve_nonneg_lasso(problem).w)
        worst_gap = max(worst_gap, solved - _two_variable_grid_minimum(problem))

    passed = worst_kkt <= 1e-5 and worst_gap <= 1e-6
    return passed, f"max KKT residual {worst_kkt:.2e}, max excess over grid oracle {worst_gap:.2e}"


def _simplex_grid_oracle(v: np.ndarray, step: float = 1e-3) -> np.ndarray:
    ticks = np.round(np.arange(0, int(round(1 / step)) + 1) * step, 10)
    l1, l2 = np.meshgrid(ticks, ticks, indexing="ij")
    l3 = 1.0 - l1 - l2
    feasible = l3 >= -1e-12
    candidates = np.stack([l1[feasible], l2[feasible], np.maximum(l3[feasible], 0.0)], axis=1)
    distances = np.sum((candidates - v) ** 2, axis=1)
    return candidates[np.argmin(distances)]


def check_simplex(rng: np.random.Generator) -> Tuple[bool, str]:
    failures = 0
    for _ in range(1000):
        v = rng.normal(scale=2.0, size=int(rng.integers(2, 11)))
        p = project_simplex(v)
        perm = rng.permutation(v.size)
        ok = (
            np.all(p >= 0)
            and abs(p.sum() - 1.0) <= 1e-12
            and np.allclose(project_simplex(p), p, atol=1e-12)
            and np.allclose(project_simplex(v[perm]), p[perm], atol=1e-12)
            and np.argmax(p) == np.argmax(v)
        )
        failures += not ok

    v = np.array([0.5, 0.4, -0.3])
    grid_gap = float(np.max(np.abs(project_simplex(v) - _simplex_grid_oracle(v))))
    passed = failures == 0 and grid_gap <= 2e-3
    return passed, f"{failures} property failures in 1000 vectors, grid-oracle gap {grid_gap:.1e}"


def check_monotone(rng: np.random.Generator) -> Tuple[bool, str]:
    worst_increase = -np.inf
    iterations = []
    all_converged = True
    for _ in range(5):
        task = generate_synthetic(SyntheticShiftConfig(
            seed=int(rng.integers(0, 2**31)), n_blocks=6, dim=8, n_source=60, n_target=60
        ))
        model = train(task.source, task.source_labels, task.target, RstrHyperparams())
        trace = np.asarray(model.objective_trace)
        if trace.size > 1:
            worst_increase = max(worst_increase, float(np.max(np.diff(trace))))
        iterations.append(trace.size)
        all_converged = all_converged and model.converged and trace.size <= 50
    passed = worst_increase <= 1e-8 and all_converged
    return passed, (
        f"largest objective increase {worst_increase:.2e}, outer iterations {iterations}, "
        f"all converged={all_converged}"
    )


# Criteria 7 and 8: the full lambda grid, one mu and three points of the default tau grid
ADAPTATION_LAMBDA_GRID: List[float] = SweepGrid().lambda_grid
ADAPTATION_TAU_GRID: List[float] = [0.01, 0.05, 0.1]


def _adaptation_run(seed: int) -> Tuple[float, float, bool]:
    """(RSTR mean F1, baseline mean F1, informative blocks outweigh noise) for one seed."""
    task = generate_synthetic(SyntheticShiftConfig(
        seed=seed,
        n_blocks=6,
        dim=8,
        n_source=90,
        n_target=90,
        class_separation=3.0,
        shift_magnitude=2.0,
        informative_blocks=(0, 1),
    ))
    cfg = RunConfig(
        method="both",
        hyperparams=RstrHyperparams(mu=0.1),
        sweep=SweepGrid(
            lambda_grid=ADAPTATION_LAMBDA_GRID,
            mu_grid=[0.1],
            tau_grid=ADAPTATION_TAU_GRID,
        ),
        seed=seed,
    )
    data = TaskData(
        source=task.source,
        source_labels=task.source_labels,
        target=task.target,
        target_labels=task.target_labels,
    )
    spec = builtin_protocol()[0]
    rstr, baseline = run_task(cfg, spec, data=data, jobs=1)
    weights = np.asarray(rstr.region_weights)
    informative = list(task.config.informative_blocks)
    noise = list(task.config.noise_blocks)
    selects = bool(weights[informative].mean() > weights[noise].mean())
    return rstr.mean_f1, baseline.mean_f1, selects


def check_adaptation(seed: int, jobs: int) -> Tuple[Tuple[bool, str], Tuple[bool, str]]:
    runs = parallel_map(_adaptation_run, [seed * 1000 + s for s in range(20)], jobs)
    rstr = np.array([r[0] for r in runs])
    baseline = np.array([r[1] for r in runs])
    selects = sum(r[2] for r in runs)
    median_gain = float(np.median(rstr - baseline))
    median_margin = float(np.median(rstr) - np.median(baseline))
    benefit = (
        median_gain > 0 and median_margin >= 0.05,
        f"median F1 gain {median_gain:+.4f}, median RSTR {np.median(rstr):.4f} vs "
        f"baseline {np.median(baseline):.4f} (margin {median_margin:+.4f}, need >= 0.05)",
    )
    selection = (selects >= 15, f"informative blocks outweigh noise blocks in {selects}/20 seeds")
    return benefit, selection


def check_no_shift(rng: np.random.Generator) -> Tuple[bool, str]:
    task = generate_synthetic(SyntheticShiftConfig(
        seed=int(rng.integers(0, 2**31)), shift_magnitude=0.0, n_source=90, n_target=90
    ))
    target = task.source.with_tag("target")
    model = train(task.source, task.source_labels, target, RstrHyperparams())
    kernels = build_kernel_set(task.source, target, model.kernel)
    gap = relaxed_mmd(model.P, model.w, kernels)
    limit = 1e-8 * float(np.sum(task.source_labels.onehot**2))

    truths = task.source_labels.indices
    c = task.source_labels.n_classes
    rstr_acc = accuracy(confusion(predict(model, task.source.with_tag("test")).hard_labels, truths, c))
    base = train_baseline(task.source, task.source_labels)
    base_acc = accuracy(confusion(predict_baseline(base, task.source).hard_labels, truths, c))
    passed = gap <= limit and abs(rstr_acc - base_acc) <= 5.0
    return passed, (
        f"relaxed MMD {gap:.2e} (limit {limit:.2e}), accuracy RSTR {rstr_acc:.2f} vs "
        f"baseline {base_acc:.2f}"
    )


def _naive_scores(preds: np.ndarray, truths: np.ndarray, c: int) -> Tuple[float, float]:
    f1_terms = []
    for k in range(c):
        tp = sum(1 for p, t in zip(preds, truths) if p == k and t == k)
        predicted = sum(1 for p in preds if p == k)
        actual = sum(1 for t in truths if t == k)
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        f1_terms.append(
            2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        )
    correct = sum(1 for p, t in zip(preds, truths) if p == t)
    return sum(f1_terms) / c, 100.0 * correct / len(truths)


def check_metrics(rng: np.random.Generator) -> Tuple[bool, str]:
    worst = 0.0
    for _ in range(100):
        c = int(rng.integers(2, 6))
        n = int(rng.integers(1, 80))
        preds = rng.integers(0, c, size=n)
        truths = rng.integers(0, c, size=n)
        cm = confusion(preds, truths, c)
        naive_f1, naive_acc = _naive_scores(preds, truths, c)
        worst = max(worst, abs(mean_f1(cm) - naive_f1), abs(accuracy(cm) - naive_acc) / 100.0)

    fixtures = [
        (mean_f1(ConfusionMatrix(np.array([[5, 5], [5, 5]]))), 0.5),
        (mean_f1(ConfusionMatrix(np.array([[3, 1, 0], [1, 3, 0], [1, 1, 0]]))), 4.0 / 9.0),
        (accuracy(ConfusionMatrix(np.array([[71, 29], [0, 0]]))), 71.0),
    ]
    fixture_gap = max(abs(value - expected) for value, expected in fixtures)
    passed = worst <= 1e-12 and fixture_gap <= 1e-12
    return passed, f"max deviation from naive recomputation {worst:.1e}, fixtures off by {fixture_gap:.1e}"


def check_protocol(seed: int) -> Tuple[bool, str]:
    snapshot = tuple((t.task_id, t.source_id, t.target_id, t.type_tag) for t in builtin_protocol())
    snapshot_ok = snapshot == EXPECTED_PROTOCOL

    cfg = RunConfig(data_source="synthetic", method="both", seed=seed)
    first = render_report(run_protocol(cfg), "tsv")
    second = render_report(run_protocol(cfg), "tsv")
    cells = [line.split("\t")[3] for line in first.splitlines()[1:] if not line.startswith("#")]
    cells_ok = bool(cells) and all(CELL_RE.match(cell) for cell in cells)
    identical = first == second
    return snapshot_ok and cells_ok and identical, (
        f"snapshot match={snapshot_ok}, {len(cells)} cells well-formed={cells_ok}, "
        f"byte-identical rerun={identical}"
    )


def check_loader() -> Tuple[bool, str]:
    problems = []
    with tempfile.TemporaryDirectory() as tmp:
        for name, (text, row) in BAD_FIXTURES.items():
            path = Path(tmp) / f"{name}.cdmer"
            path.write_text(text, encoding="utf-8")
            try:
                read_features(path)
                problems.append(f"{name}: accepted")
            except FeatureFileError as e:
                if row is not None and e.row != row:
                    problems.append(f"{name}: reported row {e.row}, expected {row} ({e})")
                logger.debug(f"{name} rejected: {e}")
    measured = f"{len(BAD_FIXTURES) - len(problems)}/{len(BAD_FIXTURES)} malformed files rejected precisely"
    if problems:
        measured += "; " + "; ".join(problems)
    return not problems, measured


CRITERIA: Dict[int, Tuple[str, float]] = {
    1: ("soft-threshold oracle", 1),
    2: ("Q-step stationarity", 5),
    3: ("IALM vs least squares", 10),
    4: ("non-negative Lasso KKT and grid oracle", 30),
    5: ("simplex projection", 5),
    6: ("block-coordinate monotonicity", 60),
    7: ("adaptation benefit", 600),
    8: ("region selection", 600),
    9: ("no-shift sanity", 60),
    10: ("metrics oracle", 1),
    11: ("protocol fidelity", 305),
    12: ("loader validation", 1),
}


def run_verification(
    seed: int = 0,
    only: Optional[Sequence[int]] = None,
    jobs: int = 1,
) -> VerificationReport:
    """
    Run the acceptance criteria (all of them unless ``only`` names a subset).

    Criteria 7 and 8 share one set of 20 synthetic runs.
    """
    selected = sorted(set(only)) if only else sorted(CRITERIA)
    unknown = [n for n in selected if n not in CRITERIA]
    if unknown:
        raise ConfigError(f"Unknown criteria: {unknown}")

    outcomes: Dict[int, Tuple[Tuple[bool, str], float]] = {}
    seeded: Dict[int, Callable[[np.random.Generator], Tuple[bool, str]]] = {
        1: check_soft_threshold,
        2: check_q_step,
        3: check_ialm_least_squares,
        4: check_lasso,
        5: check_simplex,
        6: check_monotone,
        9: check_no_shift,
        10: check_metrics,
    }

    for number in selected:
        if number in outcomes:
            continue
        logger.info(f"Criterion {number}: {CRITERIA[number][0]}")
        started = time.perf_counter()
        if number in seeded:
            rng = np.random.default_rng([seed, number])
            outcomes[number] = (seeded[number](rng), time.perf_counter() - started)
        elif number in (7, 8):
            benefit, selection = check_adaptation(seed, jobs)
            elapsed = time.perf_counter() - started
            outcomes[7] = (benefit, elapsed)
            outcomes[8] = (selection, elapsed)
        elif number == 11:
            outcomes[11] = (check_protocol(seed), time.perf_counter() - started)
        else:
            outcomes[12] = (check_loader(), time.perf_counter() - started)

    results = []
    for number in selected:
        (passed, measured), seconds = outcomes[number]
        name, budget = CRITERIA[number]
        results.append(CriterionResult(
            number=number,
            name=name,
            passed=bool(passed),
            measured=measured,
            seconds=seconds,
            budget_seconds=budget,
        ))
        if not passed:
            logger.warning(f"Criterion {number} ({name}) failed: {measured}")
    return VerificationReport(seed=seed, results=tuple(results))
