from typing import Optional

from pydantic import BaseModel, Field

from ensemble_bound import __version__


class RunConfig(BaseModel):
    """Resolved configuration of one CLI run, stored next to its artifacts."""

    subcommand: str
    version: str = __version__
    predictions: Optional[str] = None
    embeddings: Optional[str] = None
    learners: Optional[str] = None
    out: Optional[str] = None
    classes: Optional[int] = None
    class_size: Optional[int] = None
    labels: Optional[int] = None
    arity: Optional[int] = None
    solver: Optional[str] = None
    seed: Optional[int] = None
    seed_source: Optional[str] = None
    trials: Optional[int] = None
    mistakes: list[int] = Field(default_factory=list)
    memory_budget: Optional[int] = None
    threads: Optional[int] = None
    experiment: Optional[str] = None
    agreement: Optional[float] = None
    placement: Optional[str] = None
    reroute: Optional[str] = None
