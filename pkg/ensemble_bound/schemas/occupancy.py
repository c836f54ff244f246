from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ensemble_bound.core.exceptions import InvalidRecordError

# A joint cell: one label per classifier. Tuples order lexicographically.
CellIndex = tuple[int, ...]


class PredictionRecord(BaseModel):
    """Outputs of the Q ensemble members for one sample."""

    sample_id: str
    outputs: tuple[int, ...] = Field(min_length=1)
    # Validation only; the bound path never reads it.
    true_label: Optional[int] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_non_negative(self) -> "PredictionRecord":
        if any(label < 0 for label in self.outputs):
            raise InvalidRecordError(
                f"negative label in {self.outputs}", self.sample_id
            )
        if self.true_label is not None and self.true_label < 0:
            raise InvalidRecordError(
                f"negative true label {self.true_label}", self.sample_id
            )
        return self


class OccupancyTable(BaseModel):
    """
    Sparse count of samples per joint output cell.

    Cells are kept in lexicographic order of their coordinates and only
    occupied cells are stored.
    """

    arity: int = Field(ge=1)
    label_count: int = Field(ge=1)
    cells: dict[CellIndex, int] = Field(default_factory=dict)
    total: int = Field(default=0, ge=0)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_counts(self) -> "OccupancyTable":
        running = 0
        for cell, count in self.cells.items():
            if count < 1:
                raise ValueError(f"cell {cell} has non-positive count {count}")
            if len(cell) != self.arity:
                raise ValueError(f"cell {cell} does not have arity {self.arity}")
            if any(not 0 <= c < self.label_count for c in cell):
                raise ValueError(
                    f"cell {cell} has a label outside [0, {self.label_count})"
                )
            running += count
        if running != self.total:
            raise ValueError(f"counts sum to {running} but total is {self.total}")
        return self

    @property
    def occupied(self) -> int:
        return len(self.cells)

    def sorted_cells(self) -> list[tuple[CellIndex, int]]:
        return sorted(self.cells.items())

    def count(self, cell: CellIndex) -> int:
        return self.cells.get(tuple(cell), 0)

    def merge(self, other: "OccupancyTable") -> "OccupancyTable":
        """Add the counts of a table built from a disjoint shard."""
        if (self.arity, self.label_count) != (other.arity, other.label_count):
            raise ValueError(
                "cannot merge tables with different dimensions: "
                f"({self.arity}, {self.label_count}) "
                f"vs ({other.arity}, {other.label_count})"
            )
        merged = dict(self.cells)
        for cell, count in other.cells.items():
            merged[cell] = merged.get(cell, 0) + count
        return OccupancyTable(
            arity=self.arity,
            label_count=self.label_count,
            cells=dict(sorted(merged.items())),
            total=self.total + other.total,
        )

    def marginal(self, axis: int) -> np.ndarray:
        """Per-label histogram of classifier ``axis``."""
        if not 0 <= axis < self.arity:
            raise ValueError(f"axis {axis} outside [0, {self.arity})")
        histogram = np.zeros(self.label_count, dtype=np.int64)
        for cell, count in self.cells.items():
            histogram[cell[axis]] += count
        return histogram


class InstanceSpec(BaseModel):
    """
    Problem dimensions plus the reduced cell-size multiset fed to solvers.

    ``reduced_cell_sizes[i]`` is the size of cell position ``i``; when the
    instance comes from a table, ``reduced_cells[i]`` holds its coordinates
    and positions follow lexicographic cell order.
    """

    class_count: int = Field(ge=0)
    class_size: int = Field(ge=1)
    reduced_cell_sizes: list[int] = Field(default_factory=list)
    reduced_class_count: int = Field(ge=0)
    removed_pairs: int = Field(default=0, ge=0)
    reduced_cells: Optional[list[CellIndex]] = None
    removed_cells: list[CellIndex] = Field(default_factory=list)
    # Experimental per-class sizes; only the brute-force solver accepts them.
    class_sizes: Optional[list[int]] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_marginals(self) -> "InstanceSpec":
        if any(size < 1 for size in self.reduced_cell_sizes):
            raise ValueError("reduced cell sizes must be positive")
        if self.reduced_class_count != self.class_count - self.removed_pairs:
            raise ValueError(
                f"K_r={self.reduced_class_count} != K - removed_pairs = "
                f"{self.class_count} - {self.removed_pairs}"
            )
        if self.class_sizes is not None:
            if len(self.class_sizes) != self.reduced_class_count:
                raise ValueError("class_sizes must list one size per reduced class")
            if any(size < 1 for size in self.class_sizes):
                raise ValueError("class sizes must be positive")
        if sum(self.reduced_cell_sizes) != self.reduced_total:
            raise ValueError(
                f"reduced cells hold {sum(self.reduced_cell_sizes)} samples "
                f"but {self.reduced_class_count} classes need {self.reduced_total}"
            )
        if self.reduced_cells is not None and len(self.reduced_cells) != len(
            self.reduced_cell_sizes
        ):
            raise ValueError("reduced_cells and reduced_cell_sizes differ in length")
        if len(self.removed_cells) not in (0, self.removed_pairs):
            raise ValueError("removed_cells must list one cell per removed pair")
        return self

    @property
    def reduced_total(self) -> int:
        if self.class_sizes is not None:
            return sum(self.class_sizes)
        return self.reduced_class_count * self.class_size

    @property
    def largest_cell(self) -> int:
        return max(self.reduced_cell_sizes, default=0)

    @property
    def is_uniform(self) -> bool:
        return self.class_sizes is None

    def row_sizes(self) -> list[int]:
        if self.class_sizes is not None:
            return list(self.class_sizes)
        return [self.class_size] * self.reduced_class_count


class ResolutionAdvisory(BaseModel):
    """Outcome of the L^Q > K resolution check."""

    ok: bool
    class_count: int
    cell_count: int
    message: str
