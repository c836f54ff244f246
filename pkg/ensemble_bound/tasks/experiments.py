"""Seeded simulation sweeps over the number of injected mistakes."""

import functools
import logging
import math
import os
from typing import Callable, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from ensemble_bound.core.exceptions import InvalidInputError
from ensemble_bound.core.settings import get_settings
from ensemble_bound.schemas.bounds import Strategy
from ensemble_bound.schemas.mistakes import (
    ExperimentRow,
    ExperimentTable,
    Placement,
    RerouteMode,
)
from ensemble_bound.services.bound_service import bound_pipeline
from ensemble_bound.services.mistakes_service import (
    plant_correlated_truth,
    plant_truth,
    simulate_outputs,
)
from ensemble_bound.services.occupancy_service import (
    build_occupancy_from_array,
    diagonal_mass,
)
from ensemble_bound.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

# (mistake_bound, total_coherence, actual_mistakes, diagonal_mass or None)
TrialOutcome = tuple[int, int, int, Optional[float]]
Trial = Callable[[int, int], TrialOutcome]


def resolve_threads(threads: Optional[int]) -> int:
    """Explicit value, then ``CB_ENSEMBLE_THREADS``, then the logical core count."""
    if threads is None:
        threads = get_settings().THREADS
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise InvalidInputError("threads must be at least 1")
    return threads


def _check_sweep(m_values: Sequence[int], trials: int) -> None:
    if not m_values:
        raise InvalidInputError("at least one mistake count is required")
    if trials < 1:
        raise InvalidInputError("trials must be at least 1")


def _monotonicity_trial(
    class_count: int,
    class_size: int,
    arity: int,
    label_count: int,
    solver: Strategy,
    placement: Placement,
    mode: RerouteMode,
    mistakes: int,
    seed: int,
) -> TrialOutcome:
    truth = plant_truth(class_count, class_size, arity, label_count, seed, placement)
    outputs, _, actual = simulate_outputs(truth, mistakes, seed, mode)
    table = build_occupancy_from_array(outputs, label_count)
    result = bound_pipeline(table, class_count, class_size, solver)
    return result.mistake_bound, result.total_coherence, actual, None


def _correlated_trial(
    class_count: int,
    class_size: int,
    label_count: int,
    agreement: float,
    solver: Strategy,
    mode: RerouteMode,
    mistakes: int,
    seed: int,
) -> TrialOutcome:
    truth = plant_correlated_truth(
        class_count, class_size, label_count, agreement, seed
    )
    outputs, _, actual = simulate_outputs(truth, mistakes, seed, mode)
    table = build_occupancy_from_array(outputs, label_count)
    result = bound_pipeline(table, class_count, class_size, solver)
    return result.mistake_bound, result.total_coherence, actual, diagonal_mass(table)


def _aggregate(m: int, seed: int, outcomes: Sequence[TrialOutcome]) -> ExperimentRow:
    bounds = np.array([o[0] for o in outcomes], dtype=np.float64)
    diagonals = [o[3] for o in outcomes if o[3] is not None]
    return ExperimentRow(
        m=m,
        mean_bound=float(bounds.mean()),
        std_bound=float(bounds.std()),
        mean_actual=float(np.mean([o[2] for o in outcomes])),
        trials=len(outcomes),
        seed=seed,
        mean_coherence=float(np.mean([o[1] for o in outcomes])),
        mean_diagonal=float(np.mean(diagonals)) if diagonals else None,
    )


def _run_sweep(
    trial: Trial,
    m_values: Sequence[int],
    trials: int,
    seed: int,
    threads: Optional[int],
) -> list[ExperimentRow]:
    """Trial seeds derive from (seed, row, trial); rows keep their row seed."""
    row_seeds = [derive_seed(seed, index) for index in range(len(m_values))]
    outcomes = Parallel(n_jobs=resolve_threads(threads))(
        delayed(trial)(m, derive_seed(row_seed, t))
        for m, row_seed in zip(m_values, row_seeds)
        for t in range(trials)
    )

    rows = []
    for index, (m, row_seed) in enumerate(zip(m_values, row_seeds)):
        row = _aggregate(m, row_seed, outcomes[index * trials : (index + 1) * trials])
        logger.info(
            f"m={m}: mean bound {row.mean_bound:.2f} +/- {row.std_bound:.2f}, "
            f"mean actual {row.mean_actual:.2f}"
        )
        rows.append(row)
    return rows


def _finite(statistics: dict[str, float]) -> dict[str, float]:
    return {key: value for key, value in statistics.items() if math.isfinite(value)}


def monotonicity_experiment(
    class_count: int,
    class_size: int,
    arity: int,
    label_count: int,
    m_values: Sequence[int],
    trials: int,
    seed: int,
    solver: Strategy = Strategy.AUTO,
    placement: Placement = Placement.INJECTIVE,
    mode: RerouteMode = RerouteMode.CLASS,
    threads: Optional[int] = None,
) -> ExperimentTable:
    """
    Mean mistake bound (and coherence) as a function of injected mistakes.

    Each trial plants a fresh truth, reroutes ``m`` samples, and runs the
    bound pipeline on the resulting occupancy. ``spearman_rho`` in the
    statistics is the rank correlation between ``m`` and the mean bound.

    Raises:
        InvalidInputError: If the sweep is empty or a parameter is out of range
    """
    _check_sweep(m_values, trials)
    trial = functools.partial(
        _monotonicity_trial,
        class_count,
        class_size,
        arity,
        label_count,
        Strategy(solver),
        Placement(placement),
        RerouteMode(mode),
    )
    rows = _run_sweep(trial, m_values, trials, seed, threads)

    statistics: dict[str, float] = {}
    if len(rows) >= 2:
        rho, p_value = stats.spearmanr(
            [r.m for r in rows], [r.mean_bound for r in rows]
        )
        statistics = {"spearman_rho": float(rho), "spearman_p": float(p_value)}
    return ExperimentTable(
        kind="monotonicity", rows=rows, statistics=_finite(statistics)
    )


def correlated_pair_experiment(
    class_count: int,
    class_size: int,
    label_count: int,
    agreement: float,
    m_values: Sequence[int],
    trials: int,
    seed: int,
    solver: Strategy = Strategy.AUTO,
    mode: RerouteMode = RerouteMode.OUTPUT,
    threads: Optional[int] = None,
) -> ExperimentTable:
    """
    Sweep mistakes over two classifiers that agree on a fraction of classes.

    By default a mistake changes one classifier's output, so at full
    agreement every mistake leaves the diagonal. Class mode moves a sample
    onto another class's cell, which stays on the diagonal when both
    classifiers agree.

    Rows carry the mean diagonal mass; the statistics hold the least-squares
    line of mean bound on ``m`` (slope, intercept, r_squared).
    """
    _check_sweep(m_values, trials)
    if not 0.0 <= agreement <= 1.0:
        raise InvalidInputError(f"agreement {agreement} outside [0, 1]")
    trial = functools.partial(
        _correlated_trial,
        class_count,
        class_size,
        label_count,
        agreement,
        Strategy(solver),
        RerouteMode(mode),
    )
    rows = _run_sweep(trial, m_values, trials, seed, threads)

    statistics: dict[str, float] = {}
    if len({r.m for r in rows}) >= 2:
        fit = stats.linregress([r.m for r in rows], [r.mean_bound for r in rows])
        statistics = {
            "slope": float(fit.slope),
            "intercept": float(fit.intercept),
            "r_squared": float(fit.rvalue**2),
        }
    return ExperimentTable(kind="correlated", rows=rows, statistics=_finite(statistics))
