import logging
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from ensemble_bound.core.exceptions import InvalidInputError
from ensemble_bound.core.settings import Settings, get_settings
from ensemble_bound.schemas.embeddings import (
    DerivedLearner,
    EmbeddingSet,
    LearnerKind,
    RepresentativeSet,
)
from ensemble_bound.utils.seeding import make_rng

logger = logging.getLogger(__name__)

# Per-sample labels, by position or keyed by sample id
Labeling = Union[Sequence[int], Mapping[str, int]]


def one_hot_learner(
    classifier_outputs: Mapping[str, int], class_count: int
) -> dict[str, np.ndarray]:
    """
    Metric learner of a multi-class classifier: class k maps to e_k in R^K.

    Same-class samples land at distance 0, others at sqrt(2).
    """
    basis = np.eye(class_count)
    embedded: dict[str, np.ndarray] = {}
    for sample_id, k in classifier_outputs.items():
        if not 0 <= k < class_count:
            raise InvalidInputError(
                f"sample {sample_id!r}: class {k} outside [0, {class_count})"
            )
        embedded[sample_id] = basis[k].copy()
    return embedded


def identity_learner(dimension: int) -> DerivedLearner:
    """
    Learner that passes embeddings through unchanged.

    Args:
        dimension: Embedding dimension d

    Returns:
        DerivedLearner with input and output dimension d
    """
    return DerivedLearner(
        kind=LearnerKind.IDENTITY, input_dimension=dimension, output_dimension=dimension
    )


def derive_pair_projection(
    embeddings: EmbeddingSet,
    pair_count: int,
    seed: int,
    settings: Optional[Settings] = None,
) -> DerivedLearner:
    """
    Project onto lines through random sample pairs, centered at each midpoint.

    Coordinate j of v is <v - midpoint_j, direction_j> / |segment_j|, so the
    pair's endpoints land at -1/2 and +1/2.

    Raises:
        InvalidInputError: If a pair finds no distinct vectors within the retries
    """
    settings = settings or get_settings()
    if embeddings.size < 2:
        raise InvalidInputError("pair projection needs at least 2 samples")
    if pair_count < 1:
        raise InvalidInputError("pair_count must be positive")

    retries = settings.PAIR_DRAW_RETRIES
    rng = make_rng(seed, 2)
    midpoints, directions, lengths = [], [], []
    for j in range(pair_count):
        for _ in range(retries):
            a, b = rng.choice(embeddings.size, size=2, replace=False)
            segment = embeddings.vectors[b] - embeddings.vectors[a]
            length = float(np.linalg.norm(segment))
            if length > 0:
                break
        else:
            raise InvalidInputError(
                f"pair {j}: no distinct vectors after {retries} draws"
            )
        midpoints.append((embeddings.vectors[a] + embeddings.vectors[b]) / 2)
        directions.append(segment / length)
        lengths.append(length)

    return DerivedLearner(
        kind=LearnerKind.PAIR_PROJECTION,
        input_dimension=embeddings.dimension,
        output_dimension=pair_count,
        midpoints=np.asarray(midpoints),
        directions=np.asarray(directions),
        lengths=np.asarray(lengths),
    )


def derive_coordinate_subset(
    dimension: int, subset_size: int, seed: int
) -> DerivedLearner:
    """Keep ``subset_size`` random coordinates, in index order."""
    if not 1 <= subset_size <= dimension:
        raise InvalidInputError(f"subset size {subset_size} outside [1, {dimension}]")
    rng = make_rng(seed, 3)
    picked = rng.choice(dimension, size=subset_size, replace=False)
    coordinates = sorted(int(c) for c in picked)
    return DerivedLearner(
        kind=LearnerKind.COORDINATE_SUBSET,
        input_dimension=dimension,
        output_dimension=subset_size,
        coordinates=coordinates,
    )


def choose_representatives(
    embeddings: EmbeddingSet,
    label_count: int,
    per_class: int,
    seed: int,
) -> RepresentativeSet:
    """
    Pick ``label_count`` random classes and up to ``per_class`` samples of each.

    The class draw depends on ``seed`` only, so learners with different
    ``per_class`` share the same L classes.
    """
    if embeddings.labels is None:
        raise InvalidInputError("choosing representatives needs labels")
    classes = np.unique(embeddings.labels)
    if label_count > classes.size:
        raise InvalidInputError(
            f"L = {label_count} exceeds the {classes.size} labeled classes"
        )
    picked = make_rng(seed, 4).choice(classes, label_count, replace=False)
    chosen = sorted(int(k) for k in picked)
    rng = make_rng(seed, 5)
    blocks = []
    for k in chosen:
        members = np.flatnonzero(embeddings.labels == k)
        order = rng.permutation(members)
        blocks.append(embeddings.vectors[order[:per_class]])
    return RepresentativeSet(classes=chosen, vectors=blocks)


def nearest_representative_classify(
    embeddings: EmbeddingSet,
    reps: RepresentativeSet,
    learner: DerivedLearner,
    batch_size: int = 4096,
) -> np.ndarray:
    """
    Label index in [0, L) of the nearest representative entry per sample.

    Distances are Euclidean in the learner's output space; an entry's
    distance is the minimum over its vectors; ties go to the lowest entry.
    """
    if reps.count == 0:
        raise InvalidInputError("the representative set is empty")
    owners = np.concatenate(
        [np.full(block.shape[0], j) for j, block in enumerate(reps.vectors)]
    )
    anchors = learner.transform(np.concatenate(reps.vectors))
    starts = np.flatnonzero(np.r_[True, owners[1:] != owners[:-1]])
    anchors_sq = np.sum(anchors**2, axis=1)

    labels = np.empty(embeddings.size, dtype=np.int64)
    for begin in range(0, embeddings.size, batch_size):
        batch = learner.transform(embeddings.vectors[begin : begin + batch_size])
        # ||a - b||^2 = ||a||^2 + ||b||^2 - 2 a.b
        distances = (
            np.sum(batch**2, axis=1, keepdims=True) + anchors_sq - 2 * batch @ anchors.T
        )
        per_entry = np.minimum.reduceat(distances, starts, axis=1)
        labels[begin : begin + batch_size] = np.argmin(per_entry, axis=1)
    return labels


def _pairs(counts: np.ndarray) -> int:
    counts = np.asarray(counts, dtype=np.int64)
    return int((counts * (counts - 1) // 2).sum())


def _joint_counts(*columns: np.ndarray) -> np.ndarray:
    stacked = np.stack([np.asarray(c, dtype=np.int64) for c in columns], axis=1)
    _, counts = np.unique(stacked, axis=0, return_counts=True)
    return counts


def _aligned(*columns: Labeling) -> list[np.ndarray]:
    """
    Columns as aligned arrays.

    Sequences are matched by position. Mappings are keyed by sample id and
    matched by id; they cannot be mixed with sequences.
    """
    mismatch = "predictions and labels must cover the same samples"
    mapped = [isinstance(column, Mapping) for column in columns]
    if any(mapped):
        if not all(mapped):
            raise InvalidInputError("pass every labeling by sample id or none")
        ids = sorted(columns[-1])
        if any(set(column) != set(ids) for column in columns):
            raise InvalidInputError(mismatch)
        columns = tuple([column[i] for i in ids] for column in columns)
    if len({len(column) for column in columns}) != 1:
        raise InvalidInputError(mismatch)
    return [np.asarray(column, dtype=np.int64) for column in columns]


def false_same_count(
    predictions_a: Labeling, predictions_b: Labeling, labels: Labeling
) -> int:
    """
    Different-class sample pairs that both classifiers put together.

    Per joint cell: C(|cell|, 2) minus the same-class pairs inside it.

    Args:
        predictions_a: Labels of the first classifier, by position or sample id
        predictions_b: Labels of the second classifier, aligned the same way
        labels: True classes, aligned the same way

    Returns:
        The number of false-same pairs
    """
    predictions_a, predictions_b, labels = _aligned(
        predictions_a, predictions_b, labels
    )
    if len(labels) < 2:
        return 0
    together = _pairs(_joint_counts(predictions_a, predictions_b))
    return together - true_same_count(predictions_a, predictions_b, labels)


def true_same_count(
    predictions_a: Labeling, predictions_b: Labeling, labels: Labeling
) -> int:
    """Same-class sample pairs that both classifiers put together."""
    predictions_a, predictions_b, labels = _aligned(
        predictions_a, predictions_b, labels
    )
    if len(labels) < 2:
        return 0
    return _pairs(_joint_counts(predictions_a, predictions_b, labels))


def gaussian_cluster_embeddings(
    class_count: int,
    class_size: int,
    dimension: int,
    separation: float,
    seed: int,
) -> EmbeddingSet:
    """
    Synthetic labeled embeddings: K isotropic unit-variance clusters.

    Cluster means are drawn from N(0, separation^2 I), so ``separation`` is
    the spread of the means in units of the within-cluster deviation.
    """
    if min(class_count, class_size, dimension) < 1:
        raise InvalidInputError("K, S and d must be positive")
    rng = make_rng(seed, 6)
    means = rng.normal(0.0, separation, size=(class_count, dimension))
    labels = np.repeat(np.arange(class_count), class_size)
    vectors = means[labels] + rng.normal(size=(labels.size, dimension))
    return EmbeddingSet(
        sample_ids=[f"c{k}-{i % class_size}" for i, k in enumerate(labels)],
        vectors=vectors,
        labels=labels,
    )


def cluster_means(embeddings: EmbeddingSet) -> RepresentativeSet:
    """One representative per labeled class: the class mean."""
    if embeddings.labels is None:
        raise InvalidInputError("cluster means need labels")
    classes = [int(k) for k in np.unique(embeddings.labels)]
    blocks = [
        embeddings.vectors[embeddings.labels == k].mean(axis=0, keepdims=True)
        for k in classes
    ]
    return RepresentativeSet(classes=classes, vectors=blocks)
