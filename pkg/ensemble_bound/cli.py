import logging
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

import typer
from pydantic import ValidationError

from ensemble_bound.core.exceptions import EnsembleBoundError, InvalidInputError
from ensemble_bound.core.logging import setup_logging
from ensemble_bound.core.settings import get_settings
from ensemble_bound.schemas.bounds import Strategy
from ensemble_bound.schemas.mistakes import Placement, RerouteMode
from ensemble_bound.schemas.occupancy import PredictionRecord
from ensemble_bound.schemas.run_config import RunConfig
from ensemble_bound.services.bound_service import bound_pipeline
from ensemble_bound.services.occupancy_service import build_occupancy, check_resolution
from ensemble_bound.tasks.experiments import (
    correlated_pair_experiment,
    monotonicity_experiment,
)
from ensemble_bound.tasks.study import pairwise_ensemble_study
from ensemble_bound.utils import io
from ensemble_bound.utils.seeding import resolve_seed

logger = logging.getLogger("ensemble_bound.cli")

app = typer.Typer(
    help="Label-free mistake bounds for classifier ensembles",
    no_args_is_help=True,
    add_completion=False,
)


class SolverChoice(str, Enum):
    AUTO = "auto"
    BRUTEFORCE = "bruteforce"
    DP = "dp"
    GREEDY = "greedy"

    @property
    def strategy(self) -> Strategy:
        if self is SolverChoice.DP:
            return Strategy.EXACT_DP
        return Strategy(self.value)


class ExperimentKind(str, Enum):
    MONOTONICITY = "monotonicity"
    CORRELATED = "correlated"


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Turn library errors into exit codes with a one-line message on stderr."""
    try:
        yield
    except EnsembleBoundError as e:
        typer.echo(f"error: {e.detail}", err=True)
        raise typer.Exit(e.exit_code)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        typer.echo(f"error: invalid {e.title} {where}: {first['msg']}", err=True)
        raise typer.Exit(InvalidInputError.exit_code)


def _parse_mistakes(value: str) -> list[int]:
    try:
        counts = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise InvalidInputError(
            f"--mistakes must be integers separated by commas, got {value!r}"
        ) from None
    if not counts:
        raise InvalidInputError("--mistakes needs at least one value")
    return counts


def _infer_label_count(records: list[PredictionRecord], labels: Optional[int]) -> int:
    if labels is not None:
        return labels
    return max((max(r.outputs) for r in records), default=0) + 1


@app.callback()
def main(
    verbose: bool = typer.Option(
        False, "--verbose", "-v", help="Log progress to stderr"
    ),
) -> None:
    setup_logging()
    if verbose:
        logging.getLogger("ensemble_bound").setLevel(logging.INFO)


@app.command()
def bound(
    predictions: Path = typer.Option(..., "--predictions", help="Predictions CSV"),
    classes: int = typer.Option(..., "--classes", "-K", help="Number of classes K"),
    class_size: int = typer.Option(
        ..., "--class-size", "-S", help="Samples per class S"
    ),
    labels: Optional[int] = typer.Option(
        None, "--labels", "-L", help="Labels per classifier (default: largest seen + 1)"
    ),
    solver: SolverChoice = typer.Option(SolverChoice.AUTO, "--solver"),
    memory_budget: Optional[int] = typer.Option(
        None, "--memory-budget", help="Exact DP budget in bytes"
    ),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out", help="Also write the JSON here"),
):
    """Compute the coherence bound and mistake bound of a predictions file."""
    with _exit_codes():
        settings = get_settings()
        run_seed, source = resolve_seed(seed, settings)
        records, arity = io.read_predictions(predictions)
        label_count = _infer_label_count(records, labels)
        table = build_occupancy(records, arity, label_count)
        check_resolution(classes, arity, label_count)
        result = bound_pipeline(
            table, classes, class_size, solver.strategy, memory_budget, settings
        )

        config = RunConfig(
            subcommand="bound",
            predictions=str(predictions),
            out=str(out) if out else None,
            classes=classes,
            class_size=class_size,
            labels=label_count,
            arity=arity,
            solver=solver.value,
            seed=run_seed,
            seed_source=source,
            memory_budget=memory_budget,
        )
        payload = result.to_payload()
        payload["config"] = config.model_dump()
        typer.echo(io.dump_json(payload), nl=False)
        if out is not None:
            io.write_json(out, payload)
            io.write_config_sidecar(out, config)


@app.command()
def simulate(
    classes: int = typer.Option(..., "--classes", "-K"),
    class_size: int = typer.Option(..., "--class-size", "-S"),
    labels: int = typer.Option(..., "--labels", "-L"),
    mistakes: str = typer.Option(
        ..., "--mistakes", help="Mistake counts, e.g. 0,15,30"
    ),
    out: Path = typer.Option(..., "--out", help="Experiment CSV"),
    arity: int = typer.Option(2, "--arity", "-Q"),
    trials: int = typer.Option(1, "--trials"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    solver: SolverChoice = typer.Option(SolverChoice.AUTO, "--solver"),
    experiment: ExperimentKind = typer.Option(
        ExperimentKind.MONOTONICITY, "--experiment"
    ),
    agreement: float = typer.Option(
        1.0, "--agreement", help="Correlated experiment only"
    ),
    placement: Placement = typer.Option(Placement.INJECTIVE, "--placement"),
    reroute: Optional[RerouteMode] = typer.Option(
        None, "--reroute", help="Default: class, or output when correlated"
    ),
    threads: Optional[int] = typer.Option(None, "--threads"),
):
    """Sweep injected mistakes over a planted truth and write plot-ready rows."""
    with _exit_codes():
        run_seed, source = resolve_seed(seed)
        m_values = _parse_mistakes(mistakes)
        correlated = experiment is ExperimentKind.CORRELATED
        if reroute is None:
            reroute = RerouteMode.OUTPUT if correlated else RerouteMode.CLASS
        if correlated:
            if arity != 2:
                raise InvalidInputError("the correlated experiment uses Q = 2")
            table = correlated_pair_experiment(
                classes,
                class_size,
                labels,
                agreement,
                m_values,
                trials,
                run_seed,
                solver.strategy,
                reroute,
                threads,
            )
        else:
            table = monotonicity_experiment(
                classes,
                class_size,
                arity,
                labels,
                m_values,
                trials,
                run_seed,
                solver.strategy,
                placement,
                reroute,
                threads,
            )

        io.write_experiment_csv(out, table)
        config = RunConfig(
            subcommand="simulate",
            out=str(out),
            classes=classes,
            class_size=class_size,
            labels=labels,
            arity=arity,
            solver=solver.value,
            seed=run_seed,
            seed_source=source,
            trials=trials,
            mistakes=m_values,
            threads=threads,
            experiment=experiment.value,
            agreement=agreement if correlated else None,
            placement=None if correlated else placement.value,
            reroute=reroute.value,
        )
        io.write_config_sidecar(out, config)
        typer.echo(
            io.dump_json(
                {
                    "experiment": table.kind,
                    "rows": len(table.rows),
                    "statistics": table.statistics,
                    "seed": run_seed,
                    "out": str(out),
                }
            ),
            nl=False,
        )


@app.command()
def study(
    embeddings: Path = typer.Option(
        ..., "--embeddings", help="Embeddings CSV or binary"
    ),
    learners: Path = typer.Option(..., "--learners", help="JSON list of learner specs"),
    labels: int = typer.Option(..., "--labels", "-L", help="Represented classes L"),
    out: Path = typer.Option(..., "--out", help="Per-pair CSV"),
    class_size: Optional[int] = typer.Option(
        None, "--class-size", "-S", help="Samples per class (default: from labels)"
    ),
    seed: Optional[int] = typer.Option(None, "--seed"),
    threads: Optional[int] = typer.Option(None, "--threads"),
):
    """Bound every pair of derived learners and compare with false-same errors."""
    with _exit_codes():
        run_seed, source = resolve_seed(seed)
        embedding_set = io.read_embeddings(embeddings)
        specs = io.read_learner_specs(learners)
        report = pairwise_ensemble_study(
            embedding_set, specs, labels, class_size, run_seed, threads
        )

        io.write_study_csv(out, report)
        summary = io.study_summary(report)
        summary_path = out.with_suffix(".summary.json")
        io.write_json(summary_path, summary)
        config = RunConfig(
            subcommand="study",
            embeddings=str(embeddings),
            learners=str(learners),
            out=str(out),
            labels=labels,
            class_size=class_size,
            seed=run_seed,
            seed_source=source,
            threads=threads,
        )
        io.write_config_sidecar(out, config)
        payload = {**summary, "out": str(out), "summary": str(summary_path)}
        typer.echo(io.dump_json(payload), nl=False)


@app.command()
def occupancy(
    predictions: Path = typer.Option(..., "--predictions", help="Predictions CSV"),
    labels: Optional[int] = typer.Option(None, "--labels", "-L"),
    out: Optional[Path] = typer.Option(
        None, "--out", help="Write the JSON here instead of stdout"
    ),
    seed: Optional[int] = typer.Option(None, "--seed"),
):
    """Build the joint occupancy table of a predictions file."""
    with _exit_codes():
        run_seed, source = resolve_seed(seed)
        records, arity = io.read_predictions(predictions)
        label_count = _infer_label_count(records, labels)
        table = build_occupancy(records, arity, label_count)
        payload = io.occupancy_payload(table)
        if out is None:
            typer.echo(io.dump_json(payload), nl=False)
            return
        io.write_json(out, payload)
        io.write_config_sidecar(
            out,
            RunConfig(
                subcommand="occupancy",
                predictions=str(predictions),
                out=str(out),
                labels=label_count,
                arity=arity,
                seed=run_seed,
                seed_source=source,
            ),
        )


if __name__ == "__main__":
    app()
