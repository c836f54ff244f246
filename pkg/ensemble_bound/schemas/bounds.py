from enum import Enum
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ensemble_bound.core.exceptions import MarginalViolationError
from ensemble_bound.schemas.occupancy import CellIndex


class SolverTag(str, Enum):
    """Solver that produced a bound."""

    BRUTEFORCE = "bruteforce"
    EXACT_DP = "exact_dp"
    GREEDY = "greedy"


class Strategy(str, Enum):
    """Solver selection for the pipeline."""

    AUTO = "auto"
    BRUTEFORCE = "bruteforce"
    EXACT_DP = "exact_dp"
    GREEDY = "greedy"


class AssignmentMatrix(BaseModel):
    """
    Sparse integer matrix H (classes x cells).

    ``entries[(k, i)]`` is the number of class-``k`` samples placed in cell
    position ``i``. Only positive entries are stored. Marginals are checked by
    :meth:`check_marginals` rather than at construction, so an infeasible
    matrix can be represented and reported.
    """

    class_count: int = Field(ge=0)
    cell_sizes: list[int] = Field(default_factory=list)
    class_sizes: list[int] = Field(default_factory=list)
    entries: dict[tuple[int, int], int] = Field(default_factory=dict)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_entries(self) -> "AssignmentMatrix":
        if len(self.class_sizes) != self.class_count:
            raise ValueError("class_sizes must list one size per class")
        for (k, i), value in self.entries.items():
            if value < 1:
                raise ValueError(f"entry ({k}, {i}) is not positive")
            if not 0 <= k < self.class_count or not 0 <= i < len(self.cell_sizes):
                raise ValueError(f"entry ({k}, {i}) is outside the matrix")
        return self

    @classmethod
    def from_dense(
        cls,
        matrix: np.ndarray | list[list[int]],
        cell_sizes: list[int],
        class_sizes: list[int],
    ) -> "AssignmentMatrix":
        dense = np.asarray(matrix, dtype=np.int64)
        entries = {
            (int(k), int(i)): int(dense[k, i]) for k, i in zip(*np.nonzero(dense))
        }
        return cls(
            class_count=len(class_sizes),
            cell_sizes=list(cell_sizes),
            class_sizes=list(class_sizes),
            entries=entries,
        )

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.class_count, len(self.cell_sizes)), dtype=np.int64)
        for (k, i), value in self.entries.items():
            dense[k, i] = value
        return dense

    def rows(self) -> list[dict[int, int]]:
        rows: list[dict[int, int]] = [{} for _ in range(self.class_count)]
        for (k, i), value in self.entries.items():
            rows[k][i] = value
        return rows

    def check_marginals(self) -> None:
        """Raise MarginalViolationError naming the first broken class or cell."""
        row_sums = [0] * self.class_count
        column_sums = [0] * len(self.cell_sizes)
        for (k, i), value in self.entries.items():
            row_sums[k] += value
            column_sums[i] += value
        for k, (got, want) in enumerate(zip(row_sums, self.class_sizes)):
            if got != want:
                raise MarginalViolationError(
                    f"class {k} holds {got} samples, expected {want}"
                )
        for i, (got, want) in enumerate(zip(column_sums, self.cell_sizes)):
            if got != want:
                raise MarginalViolationError(
                    f"cell {i} holds {got} samples, expected {want}"
                )


class BoundResult(BaseModel):
    """Coherence, mistake bound and class-to-cell map for one instance."""

    coherence: int = Field(ge=0)
    mistake_bound: int = Field(ge=0)
    phi_star: dict[int, int] = Field(default_factory=dict)
    witness: AssignmentMatrix
    solver: SolverTag
    exact: bool
    class_size: int = Field(ge=1)
    removed_pairs: int = Field(default=0, ge=0)
    total_coherence: int = Field(ge=0)
    oracle_mistake_bound: Optional[int] = Field(default=None, ge=0)
    cells: Optional[list[CellIndex]] = None
    removed_cells: list[CellIndex] = Field(default_factory=list)
    enumerated: Optional[int] = None
    states: Optional[int] = None

    @model_validator(mode="after")
    def check_witness(self) -> "BoundResult":
        squares = sum(value * value for value in self.witness.entries.values())
        if squares != self.coherence:
            raise ValueError(
                f"coherence {self.coherence} differs from witness value {squares}"
            )
        expected_total = self.coherence + self.removed_pairs * self.class_size**2
        if self.total_coherence != expected_total:
            raise ValueError("total_coherence must add S^2 per removed pair")
        if set(self.phi_star) != set(range(self.witness.class_count)):
            raise ValueError("phi_star must map every reduced class")
        return self

    @property
    def reduced_class_count(self) -> int:
        return self.witness.class_count

    def cell_label(self, position: int) -> list[int] | int:
        if self.cells is not None:
            return list(self.cells[position])
        return position

    def to_payload(self) -> dict[str, Any]:
        """JSON-ready dict; witness entries sorted by (class, cell)."""
        phi = [
            {"class": k, "cell": self.cell_label(i)}
            for k, i in sorted(self.phi_star.items())
        ]
        offset = self.reduced_class_count
        phi.extend(
            {"class": offset + j, "cell": list(cell)}
            for j, cell in enumerate(self.removed_cells)
        )
        witness = [
            {"class": k, "cell": self.cell_label(i), "count": value}
            for (k, i), value in sorted(self.witness.entries.items())
        ]
        return {
            "coherence": self.coherence,
            "total_coherence": self.total_coherence,
            "mistake_bound": self.mistake_bound,
            "oracle_mistake_bound": self.oracle_mistake_bound,
            "solver": self.solver.value,
            "exact": self.exact,
            "removed_pairs": self.removed_pairs,
            "phi_star": phi,
            "witness": witness,
        }
