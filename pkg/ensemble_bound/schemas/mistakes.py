from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ensemble_bound.schemas.occupancy import CellIndex


class Placement(str, Enum):
    """How planted classes are assigned to cells."""

    INDEPENDENT = "independent"
    INJECTIVE = "injective"


class RerouteMode(str, Enum):
    """Where a misclassified sample is sent."""

    CLASS = "class"
    # One classifier, drawn uniformly, outputs a different label.
    OUTPUT = "output"
    # Not part of the uniform-target mistake model; for sensitivity analysis.
    CELL = "cell"


class PlantedTruth(BaseModel):
    """Ground-truth cell of every class in a simulation."""

    class_count: int = Field(ge=1)
    class_size: int = Field(ge=1)
    arity: int = Field(ge=1)
    label_count: int = Field(ge=1)
    class_cells: dict[int, CellIndex]
    seed: int = Field(ge=0)
    placement: Placement = Placement.INJECTIVE

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_cells(self) -> "PlantedTruth":
        if set(self.class_cells) != set(range(self.class_count)):
            raise ValueError("class_cells must cover every class")
        for k, cell in self.class_cells.items():
            if len(cell) != self.arity or any(
                not 0 <= c < self.label_count for c in cell
            ):
                raise ValueError(f"class {k} has an invalid cell {cell}")
        return self

    @property
    def sample_count(self) -> int:
        return self.class_count * self.class_size


class MistakeArc(BaseModel):
    """A misrouted sample, from its true cell to its observed cell."""

    source: CellIndex
    target: CellIndex
    sample_id: str

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_not_loop(self) -> "MistakeArc":
        if self.source == self.target:
            raise ValueError(f"sample {self.sample_id} is in its true cell")
        return self


class MistakesGraph(BaseModel):
    """Directed multigraph of misrouted samples."""

    nodes: set[CellIndex] = Field(default_factory=set)
    arcs: list[MistakeArc] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_endpoints(self) -> "MistakesGraph":
        for arc in self.arcs:
            if arc.source not in self.nodes or arc.target not in self.nodes:
                raise ValueError(f"arc of {arc.sample_id} leaves the node set")
        return self

    @property
    def arc_count(self) -> int:
        return len(self.arcs)


class MistakeDecomposition(BaseModel):
    """Hidden / visible split of the mistakes multigraph."""

    hidden: int = Field(ge=0)
    visible: int = Field(ge=0)
    cycles_used: int = Field(ge=0)
    paths_used: int = Field(ge=0)
    exact: bool = False

    @property
    def arc_count(self) -> int:
        return self.hidden + self.visible


class ExperimentRow(BaseModel):
    """Aggregate of all trials at one mistake count."""

    m: int
    mean_bound: float
    std_bound: float
    mean_actual: float
    trials: int
    seed: int
    mean_coherence: float
    mean_diagonal: Optional[float] = None


class ExperimentTable(BaseModel):
    """Plot-ready experiment output plus its trend statistics."""

    kind: str
    rows: list[ExperimentRow]
    statistics: dict[str, float] = Field(default_factory=dict)
