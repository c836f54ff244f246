import logging
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from ensemble_bound.core.exceptions import InfeasibleInstanceError, InvalidInputError
from ensemble_bound.core.settings import Settings, get_settings
from ensemble_bound.schemas.bounds import Strategy
from ensemble_bound.schemas.embeddings import (
    DerivedLearner,
    EmbeddingSet,
    LearnerKind,
    LearnerSpec,
    RepresentativeSet,
    StudyReport,
    StudyRow,
)
from ensemble_bound.services.bound_service import bound_pipeline
from ensemble_bound.services.metric_service import (
    choose_representatives,
    derive_coordinate_subset,
    derive_pair_projection,
    false_same_count,
    identity_learner,
    nearest_representative_classify,
    true_same_count,
)
from ensemble_bound.services.occupancy_service import (
    build_occupancy_from_array,
    diagonal_mass,
)
from ensemble_bound.tasks.experiments import resolve_threads
from ensemble_bound.utils.seeding import derive_seed

logger = logging.getLogger(__name__)


def derive_learner(
    embeddings: EmbeddingSet,
    spec: LearnerSpec,
    seed: int,
    settings: Optional[Settings] = None,
) -> DerivedLearner:
    """Build the learner a spec describes; identical specs give identical learners."""
    learner_seed = derive_seed(seed, spec.seed)
    if spec.kind is LearnerKind.IDENTITY:
        return identity_learner(embeddings.dimension)
    if spec.kind is LearnerKind.PAIR_PROJECTION:
        return derive_pair_projection(embeddings, spec.size, learner_seed, settings)
    return derive_coordinate_subset(embeddings.dimension, spec.size, learner_seed)


def individual_accuracy(
    predictions: np.ndarray, labels: np.ndarray, reps: RepresentativeSet
) -> float:
    """Share of samples from represented classes labeled with their own class."""
    classes = np.asarray(reps.classes)
    represented = np.isin(labels, classes)
    if not represented.any():
        return 0.0
    return float(np.mean(classes[predictions[represented]] == labels[represented]))


def _class_size(labels: np.ndarray, class_size: Optional[int]) -> tuple[int, int]:
    """(K, S) for the bound; S defaults to the common class size of the labels."""
    total = labels.size
    if class_size is None:
        sizes = np.unique(np.unique(labels, return_counts=True)[1])
        if sizes.size != 1:
            raise InvalidInputError("class sizes differ; pass S explicitly")
        class_size = int(sizes[0])
    if class_size < 1 or total % class_size:
        raise InfeasibleInstanceError(
            f"N = {total} is not a multiple of S = {class_size}"
        )
    return total // class_size, class_size


def _pair_row(
    pair: int,
    names: tuple[str, str],
    predictions: tuple[np.ndarray, np.ndarray],
    accuracies: tuple[float, float],
    labels: np.ndarray,
    label_count: int,
    class_count: int,
    class_size: int,
) -> StudyRow:
    first, second = predictions
    table = build_occupancy_from_array(np.column_stack([first, second]), label_count)
    result = bound_pipeline(table, class_count, class_size, Strategy.GREEDY)
    return StudyRow(
        pair=pair,
        learner_a=names[0],
        learner_b=names[1],
        mistake_bound=result.mistake_bound,
        coherence=result.total_coherence,
        false_same=false_same_count(first, second, labels),
        true_same=true_same_count(first, second, labels),
        acc_a=accuracies[0],
        acc_b=accuracies[1],
        diagonal_mass=diagonal_mass(table),
    )


def pairwise_ensemble_study(
    embeddings: EmbeddingSet,
    learner_specs: Sequence[LearnerSpec],
    label_count: int,
    class_size: Optional[int],
    seed: int,
    threads: Optional[int] = None,
    settings: Optional[Settings] = None,
) -> StudyReport:
    """
    Compare the label-free bound with false-same errors over every learner pair.

    All learners share one draw of ``label_count`` represented classes, and
    only samples of those classes enter the pairs, so the bound sees K = L
    classes. Each pair's Q=2 occupancy goes through the greedy pipeline; the
    report fits false_same against mistake_bound across pairs.

    Raises:
        InvalidInputError: If labels are missing or fewer than two learners are given
    """
    settings = settings or get_settings()
    if embeddings.labels is None:
        raise InvalidInputError("the study needs labeled embeddings")
    if len(learner_specs) < 2:
        raise InvalidInputError("the study needs at least two learners")
    labels = embeddings.labels
    classes = choose_representatives(embeddings, label_count, 1, seed).classes
    represented = np.isin(labels, classes)
    labels = labels[represented]
    class_count, class_size = _class_size(labels, class_size)
    logger.info(
        f"{labels.size} of {represented.size} samples in the {label_count} "
        f"represented classes"
    )

    names: list[str] = []
    predictions: list[np.ndarray] = []
    accuracies: list[float] = []
    for index, spec in enumerate(learner_specs):
        per_class = spec.per_class(settings.REPRESENTATIVES_PER_CLASS)
        reps = choose_representatives(embeddings, label_count, per_class, seed)
        learner = derive_learner(embeddings, spec, seed, settings)
        predicted = nearest_representative_classify(embeddings, reps, learner)
        predicted = predicted[represented]
        names.append(spec.label(index, per_class))
        predictions.append(predicted)
        accuracies.append(individual_accuracy(predicted, labels, reps))
        logger.info(f"learner {names[-1]}: accuracy {accuracies[-1]:.3f}")

    pairs = list(combinations(range(len(learner_specs)), 2))
    rows = Parallel(n_jobs=resolve_threads(threads))(
        delayed(_pair_row)(
            pair,
            (names[a], names[b]),
            (predictions[a], predictions[b]),
            (accuracies[a], accuracies[b]),
            labels,
            label_count,
            class_count,
            class_size,
        )
        for pair, (a, b) in enumerate(pairs)
    )
    rows = sorted(rows, key=lambda row: row.pair)

    slope = intercept = pearson_r = None
    bounds = [row.mistake_bound for row in rows]
    if len(set(bounds)) >= 2:
        fit = stats.linregress(bounds, [row.false_same for row in rows])
        slope = float(fit.slope)
        intercept = float(fit.intercept)
        pearson_r = float(fit.rvalue)
        logger.info(
            f"false_same ~ {slope:.3f} * mistake_bound + {intercept:.1f}, "
            f"r={pearson_r:.3f}"
        )
    else:
        logger.warning("mistake bounds do not vary across pairs; no regression fitted")

    return StudyReport(
        rows=rows,
        slope=slope,
        intercept=intercept,
        pearson_r=pearson_r,
        learner_count=len(learner_specs),
        class_count=class_count,
        class_size=class_size,
        seed=seed,
    )
