"""
Readers and writers for every on-disk format.

Predictions and embeddings arrive as CSV (embeddings also in a packed
binary layout); tables, bounds and summaries leave as JSON; experiment and
study rows leave as CSV. Parse problems raise InputFormatError with the
offending line number.
"""

import csv
import json
import logging
import struct
from io import StringIO
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from pydantic import TypeAdapter, ValidationError

from ensemble_bound.core.exceptions import InputFormatError
from ensemble_bound.schemas.embeddings import EmbeddingSet, LearnerSpec, StudyReport
from ensemble_bound.schemas.mistakes import ExperimentTable
from ensemble_bound.schemas.occupancy import OccupancyTable, PredictionRecord
from ensemble_bound.schemas.run_config import RunConfig

logger = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"CBEM"
# little-endian u32 d, u64 count
_EMBEDDING_HEADER = struct.Struct("<IQ")
_RECORD_PREFIX = struct.Struct("<I")
_LABEL = struct.Struct("<i")

EXPERIMENT_FIELDS = [
    "m",
    "mean_bound",
    "std_bound",
    "mean_actual",
    "trials",
    "seed",
    "mean_coherence",
]
STUDY_FIELDS = [
    "pair",
    "learner_a",
    "learner_b",
    "mistake_bound",
    "coherence",
    "false_same",
    "acc_a",
    "acc_b",
    "true_same",
    "diagonal_mass",
]


def _decode_utf8(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        line_number = data.count(b"\n", 0, e.start) + 1
        raise InputFormatError("not valid UTF-8", line_number) from None


def _open_text(path: Path) -> StringIO:
    """Whole file as text; undecodable bytes raise with their line number."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise InputFormatError(f"cannot read {path}: {e.strerror or e}") from e
    return StringIO(_decode_utf8(data), newline="")


def _parse_label(value: str, line_number: int, what: str) -> Optional[int]:
    value = value.strip()
    if not value:
        return None
    try:
        parsed = int(value)
    except ValueError:
        raise InputFormatError(
            f"{what} {value!r} is not an integer", line_number
        ) from None
    if parsed < 0:
        raise InputFormatError(f"{what} {parsed} is negative", line_number)
    return parsed


def read_predictions(path: Path) -> tuple[list[PredictionRecord], int]:
    """
    Read a predictions CSV with header ``sample_id,label,f_1,...,f_Q``.

    Returns:
        The records and the arity Q taken from the header
    """
    with _open_text(Path(path)) as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise InputFormatError("missing header", 1)
        arity = len(header) - 2
        expected = ["sample_id", "label"] + [f"f_{q}" for q in range(1, arity + 1)]
        if arity < 1 or [h.strip() for h in header] != expected:
            raise InputFormatError(
                "header must be sample_id,label,f_1,...,f_Q", 1
            )

        records: list[PredictionRecord] = []
        for row in reader:
            line_number = reader.line_num
            if not row:
                continue
            if len(row) != arity + 2:
                raise InputFormatError(
                    f"expected {arity + 2} fields, got {len(row)}", line_number
                )
            sample_id = row[0].strip()
            if not sample_id:
                raise InputFormatError("empty sample_id", line_number)
            outputs = []
            for value in row[2:]:
                label = _parse_label(value, line_number, "output")
                if label is None:
                    raise InputFormatError("empty classifier output", line_number)
                outputs.append(label)
            records.append(
                PredictionRecord(
                    sample_id=sample_id,
                    outputs=tuple(outputs),
                    true_label=_parse_label(row[1], line_number, "label"),
                )
            )
    logger.debug(f"Read {len(records)} predictions with Q={arity} from {path}")
    return records, arity


def write_predictions(
    path: Path, records: Iterable[PredictionRecord], arity: int
) -> None:
    """
    Write records in the layout :func:`read_predictions` reads.

    Args:
        path: Destination CSV
        records: Records with ``arity`` outputs each; a missing label stays empty
        arity: Number of classifier columns Q
    """
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        header = ["sample_id", "label"] + [f"f_{q}" for q in range(1, arity + 1)]
        writer.writerow(header)
        for record in records:
            label = "" if record.true_label is None else record.true_label
            writer.writerow([record.sample_id, label, *record.outputs])


def dump_json(payload: Any) -> str:
    """
    Serialize a payload the way every command prints it.

    Args:
        payload: JSON-compatible value

    Returns:
        Compact JSON followed by a newline
    """
    return json.dumps(payload) + "\n"


def write_json(path: Path, payload: Any) -> None:
    Path(path).write_text(dump_json(payload), encoding="utf-8")


def occupancy_payload(table: OccupancyTable) -> dict[str, Any]:
    """
    JSON form of an occupancy table.

    Args:
        table: Table to serialize

    Returns:
        Arity, label count, total and the occupied cells in lexicographic order
    """
    return {
        "arity": table.arity,
        "label_count": table.label_count,
        "total": table.total,
        "cells": [
            {"coords": list(cell), "count": count}
            for cell, count in table.sorted_cells()
        ],
    }


def read_occupancy(path: Path) -> OccupancyTable:
    """Load an occupancy JSON written by :func:`occupancy_payload`."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        cells = {tuple(entry["coords"]): entry["count"] for entry in payload["cells"]}
        return OccupancyTable(
            arity=payload["arity"],
            label_count=payload["label_count"],
            cells=cells,
            total=payload["total"],
        )
    except OSError as e:
        raise InputFormatError(f"cannot read {path}: {e.strerror or e}") from e
    except (ValueError, KeyError, TypeError) as e:
        raise InputFormatError(f"malformed occupancy file {path}: {e}") from e


def _format_float(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_experiment_csv(path: Path, table: ExperimentTable) -> None:
    """
    Write one row per mistake count.

    Args:
        path: Destination CSV
        table: Sweep rows; ``mean_diagonal`` becomes a column when any row has it
    """
    fields = list(EXPERIMENT_FIELDS)
    if any(row.mean_diagonal is not None for row in table.rows):
        fields.append("mean_diagonal")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in table.rows:
            values = row.model_dump(include=set(fields))
            writer.writerow(
                {
                    field: value if isinstance(value, int) else _format_float(value)
                    for field, value in values.items()
                }
            )


def _read_embeddings_csv(data: bytes) -> EmbeddingSet:
    with StringIO(_decode_utf8(data), newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise InputFormatError("missing header", 1)
        dimension = len(header) - 2
        expected = ["sample_id", "label"] + [f"v_{j}" for j in range(dimension)]
        if dimension < 1 or [h.strip() for h in header] != expected:
            raise InputFormatError("header must be sample_id,label,v_0,...,v_{d-1}", 1)

        ids: list[str] = []
        labels: list[Optional[int]] = []
        rows: list[list[float]] = []
        for row in reader:
            line_number = reader.line_num
            if not row:
                continue
            if len(row) != dimension + 2:
                raise InputFormatError(
                    f"expected {dimension + 2} fields, got {len(row)}", line_number
                )
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise InputFormatError(
                    "vector entries must be numbers", line_number
                ) from None
            if not np.isfinite(values).all():
                raise InputFormatError("vector entries must be finite", line_number)
            ids.append(row[0].strip())
            labels.append(_parse_label(row[1], line_number, "label"))
            rows.append(values)

    present = [label is not None for label in labels]
    if any(present) and not all(present):
        raise InputFormatError("labels must be given for every sample or for none")
    vectors = np.asarray(rows, dtype=np.float64).reshape(len(rows), dimension)
    return _embedding_set(ids, vectors, labels if all(present) and labels else None)


def _embedding_set(
    ids: list[str], vectors: np.ndarray, labels: Optional[Sequence[int]]
) -> EmbeddingSet:
    try:
        return EmbeddingSet(sample_ids=ids, vectors=vectors, labels=labels)
    except ValidationError as e:
        raise InputFormatError(f"invalid embeddings: {e.errors()[0]['msg']}") from e


def _read_embeddings_binary(data: bytes) -> EmbeddingSet:
    try:
        offset = len(EMBEDDING_MAGIC)
        dimension, count = _EMBEDDING_HEADER.unpack_from(data, offset)
        offset += _EMBEDDING_HEADER.size
        ids: list[str] = []
        labels: list[int] = []
        vectors = np.empty((count, dimension), dtype=np.float64)
        for index in range(count):
            (id_length,) = _RECORD_PREFIX.unpack_from(data, offset)
            offset += _RECORD_PREFIX.size
            ids.append(data[offset : offset + id_length].decode("utf-8"))
            offset += id_length
            (label,) = _LABEL.unpack_from(data, offset)
            offset += _LABEL.size
            labels.append(label)
            vectors[index] = np.frombuffer(
                data, dtype="<f8", count=dimension, offset=offset
            )
            offset += 8 * dimension
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise InputFormatError(f"truncated or corrupt binary embeddings: {e}") from e
    if offset != len(data):
        raise InputFormatError(
            f"{len(data) - offset} trailing bytes after {count} records"
        )

    has_label = [label >= 0 for label in labels]
    if any(has_label) and not all(has_label):
        raise InputFormatError("labels must be given for every sample or for none")
    return _embedding_set(ids, vectors, labels if labels and all(has_label) else None)


def read_embeddings(path: Path) -> EmbeddingSet:
    """Read embeddings, choosing the binary or CSV codec by the magic bytes."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise InputFormatError(f"cannot read {path}: {e.strerror or e}") from e
    if data.startswith(EMBEDDING_MAGIC):
        embeddings = _read_embeddings_binary(data)
    else:
        embeddings = _read_embeddings_csv(data)
    logger.debug(
        f"Read {embeddings.size} embeddings of dimension {embeddings.dimension}"
    )
    return embeddings


def write_embeddings_csv(path: Path, embeddings: EmbeddingSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["sample_id", "label"] + [f"v_{j}" for j in range(embeddings.dimension)]
        )
        for index, sample_id in enumerate(embeddings.sample_ids):
            label = "" if embeddings.labels is None else int(embeddings.labels[index])
            values = (repr(float(v)) for v in embeddings.vectors[index])
            writer.writerow([sample_id, label, *values])


def write_embeddings_binary(path: Path, embeddings: EmbeddingSet) -> None:
    """Magic, u32 d, u64 count, then per record: u32 id length, id, i32 label, d f64."""
    header = _EMBEDDING_HEADER.pack(embeddings.dimension, embeddings.size)
    chunks = [EMBEDDING_MAGIC, header]
    vectors = embeddings.vectors.astype("<f8")
    for index, sample_id in enumerate(embeddings.sample_ids):
        encoded = sample_id.encode("utf-8")
        label = -1 if embeddings.labels is None else int(embeddings.labels[index])
        chunks.extend(
            [
                _RECORD_PREFIX.pack(len(encoded)),
                encoded,
                _LABEL.pack(label),
                vectors[index].tobytes(),
            ]
        )
    Path(path).write_bytes(b"".join(chunks))


_LEARNER_SPECS = TypeAdapter(list[LearnerSpec])


def read_learner_specs(path: Path) -> list[LearnerSpec]:
    """
    Read a JSON list of learner specs, or an object with a ``learners`` list.

    Raises:
        InputFormatError: If the file is missing or not JSON
        pydantic.ValidationError: If a spec is invalid
    """
    try:
        payload = json.loads(_open_text(path).getvalue())
    except json.JSONDecodeError as e:
        raise InputFormatError(f"invalid JSON: {e.msg}", e.lineno) from e
    if isinstance(payload, dict):
        payload = payload.get("learners")
    if not isinstance(payload, list):
        raise InputFormatError("learner specs must be a JSON list")
    return _LEARNER_SPECS.validate_python(payload)


def write_study_csv(path: Path, report: StudyReport) -> None:
    """
    Write one row per learner pair in :data:`STUDY_FIELDS` order.

    Args:
        path: Destination CSV
        report: Study whose rows are written
    """
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=STUDY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in report.rows:
            values = row.model_dump()
            writer.writerow(
                {
                    field: repr(value) if isinstance(value, float) else value
                    for field, value in values.items()
                }
            )


def study_summary(report: StudyReport) -> dict[str, Any]:
    """
    Pair count, bound instance and regression of a study.

    Args:
        report: Finished study

    Returns:
        JSON-compatible summary; fit fields are None when no line was fitted
    """
    return {
        "pairs": len(report.rows),
        "learner_count": report.learner_count,
        "class_count": report.class_count,
        "class_size": report.class_size,
        "slope": report.slope,
        "intercept": report.intercept,
        "pearson_r": report.pearson_r,
        "seed": report.seed,
    }


def sidecar_path(out: Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".config.json")


def write_config_sidecar(out: Path, config: RunConfig) -> Path:
    """Store the resolved run configuration next to an artifact."""
    path = sidecar_path(out)
    path.write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path
