from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class EmbeddingSet(BaseModel):
    """Sample vectors of a common dimension, optionally labeled."""

    sample_ids: list[str]
    vectors: np.ndarray
    labels: Optional[np.ndarray] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("vectors", mode="before")
    @classmethod
    def as_matrix(cls, v) -> np.ndarray:
        matrix = np.asarray(v, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {matrix.shape}")
        if not np.isfinite(matrix).all():
            raise ValueError("vectors must be finite")
        return matrix

    @field_validator("labels", mode="before")
    @classmethod
    def as_labels(cls, v) -> Optional[np.ndarray]:
        if v is None:
            return None
        labels = np.asarray(v, dtype=np.int64)
        if labels.ndim != 1 or (labels < 0).any():
            raise ValueError("labels must be a 1-D array of class indices")
        return labels

    @model_validator(mode="after")
    def check_lengths(self) -> "EmbeddingSet":
        if len(self.sample_ids) != self.vectors.shape[0]:
            raise ValueError("one sample id per vector is required")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValueError("sample ids must be unique")
        if self.labels is not None and self.labels.shape[0] != self.vectors.shape[0]:
            raise ValueError("one label per vector is required")
        return self

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


class RepresentativeSet(BaseModel):
    """L labeled entries, each with one or more representative vectors."""

    classes: list[int]
    vectors: list[np.ndarray]

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def check_entries(self) -> "RepresentativeSet":
        if len(self.classes) != len(self.vectors):
            raise ValueError("one vector block per class is required")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("representative classes must be distinct")
        dimensions = set()
        for block in self.vectors:
            if block.ndim != 2 or block.shape[0] < 1:
                raise ValueError("every entry needs at least one vector")
            dimensions.add(block.shape[1])
        if len(dimensions) > 1:
            raise ValueError("representative vectors differ in dimension")
        return self

    @property
    def count(self) -> int:
        return len(self.classes)


class LearnerKind(str, Enum):
    """Ways of deriving a metric learner from base embeddings."""

    IDENTITY = "identity"
    PAIR_PROJECTION = "pair_projection"
    COORDINATE_SUBSET = "coordinate_subset"


class DerivedLearner(BaseModel):
    """A linear map applied to base embeddings before classification."""

    kind: LearnerKind
    input_dimension: int = Field(ge=1)
    output_dimension: int = Field(ge=1)
    # pair_projection: one row per anchor pair
    midpoints: Optional[np.ndarray] = None
    directions: Optional[np.ndarray] = None
    lengths: Optional[np.ndarray] = None
    # coordinate_subset: kept coordinates in index order
    coordinates: Optional[list[int]] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def check_parameters(self) -> "DerivedLearner":
        if self.kind is LearnerKind.IDENTITY:
            if self.output_dimension != self.input_dimension:
                raise ValueError("identity keeps the dimension")
        elif self.kind is LearnerKind.PAIR_PROJECTION:
            expected = (self.output_dimension, self.input_dimension)
            if (
                self.midpoints is None
                or self.directions is None
                or self.lengths is None
                or self.midpoints.shape != expected
                or self.directions.shape != expected
                or self.lengths.shape != (self.output_dimension,)
            ):
                raise ValueError(
                    "pair projection needs one midpoint, direction and length per pair"
                )
            if (self.lengths <= 0).any():
                raise ValueError("anchor pairs must have positive length")
        else:
            coords = self.coordinates or []
            if len(coords) != self.output_dimension or coords != sorted(set(coords)):
                raise ValueError("coordinates must be distinct and sorted")
            if coords and not 0 <= coords[0] <= coords[-1] < self.input_dimension:
                raise ValueError("coordinates outside the input dimension")
        return self

    def transform(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.shape[-1] != self.input_dimension:
            raise ValueError(
                f"learner expects dimension {self.input_dimension}, "
                f"got {vectors.shape[-1]}"
            )
        if self.kind is LearnerKind.IDENTITY:
            return vectors
        if self.kind is LearnerKind.COORDINATE_SUBSET:
            return vectors[..., self.coordinates]
        # <v - midpoint_j, direction_j> / |segment_j|
        offsets = vectors @ self.directions.T - np.einsum(
            "jd,jd->j", self.midpoints, self.directions
        )
        return offsets / self.lengths


class LearnerSpec(BaseModel):
    """Recipe for one ensemble member in a pairwise study."""

    name: Optional[str] = None
    kind: LearnerKind
    size: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0)
    representatives: Optional[int] = Field(default=None, ge=1)
    # without an explicit count, falls back to REPRESENTATIVES_PER_CLASS
    multi_representative: bool = False

    @model_validator(mode="after")
    def check_size(self) -> "LearnerSpec":
        if self.kind is not LearnerKind.IDENTITY and self.size is None:
            raise ValueError(f"{self.kind.value} needs a size")
        return self

    def per_class(self, default: int) -> int:
        """Representatives per class; ``default`` is the multi-representative count."""
        if self.representatives is not None:
            return self.representatives
        return default if self.multi_representative else 1

    def label(self, index: int, per_class: int = 1) -> str:
        if self.name:
            return self.name
        suffix = f"{self.size}" if self.size is not None else ""
        reps = f"x{per_class}" if per_class > 1 else ""
        return f"{index}:{self.kind.value}{suffix}{reps}"


class StudyRow(BaseModel):
    """Bound and label-based errors of one learner pair."""

    pair: int
    learner_a: str
    learner_b: str
    mistake_bound: int
    coherence: int
    false_same: int
    true_same: int
    acc_a: float
    acc_b: float
    diagonal_mass: float


class StudyReport(BaseModel):
    """All pair rows plus the regression of false_same on mistake_bound."""

    rows: list[StudyRow]
    # None when fewer than two distinct bounds make the fit undefined
    slope: Optional[float] = None
    intercept: Optional[float] = None
    pearson_r: Optional[float] = None
    learner_count: int
    # Bound instance over the represented classes
    class_count: int = Field(ge=1)
    class_size: int = Field(ge=1)
    seed: int
