import functools
import logging
from typing import Iterable, Optional, Sequence

import numpy as np

from ensemble_bound.core.exceptions import (
    InfeasibleInstanceError,
    InvalidInputError,
    InvalidRecordError,
)
from ensemble_bound.schemas.occupancy import (
    CellIndex,
    InstanceSpec,
    OccupancyTable,
    PredictionRecord,
    ResolutionAdvisory,
)

logger = logging.getLogger(__name__)

# Largest L^Q for which cells are packed into a single int64 code.
_MAX_PACKED_CELLS = 2**62
# Packed codes are counted with np.bincount while L^Q stays within
# max(_DENSE_CELLS_PER_SAMPLE * N, _DENSE_MIN_CELLS); np.unique otherwise.
_DENSE_CELLS_PER_SAMPLE = 4
_DENSE_MIN_CELLS = 2**16


def build_occupancy_from_array(
    outputs: np.ndarray,
    label_count: int,
    sample_ids: Optional[Sequence[str]] = None,
) -> OccupancyTable:
    """
    Count samples per joint cell from an (N, Q) array of labels.

    Cells are packed into mixed-radix integer codes whose numeric order is the
    lexicographic order of the coordinates. Small code ranges are counted in
    linear time with ``np.bincount``, larger ones with ``np.unique``.

    Args:
        outputs: Integer array with one row per sample, one column per classifier
        label_count: Number of labels L each classifier may output
        sample_ids: Optional ids used to name an offending sample in errors

    Returns:
        OccupancyTable over the Q classifiers
    """
    outputs = np.asarray(outputs)
    if outputs.ndim != 2:
        raise InvalidInputError(
            f"outputs must be a 2-D array, got shape {outputs.shape}"
        )
    if label_count < 1:
        raise InvalidInputError("label_count must be positive")
    n_samples, arity = outputs.shape
    if arity < 1:
        raise InvalidInputError("arity must be positive")
    if n_samples == 0:
        return OccupancyTable(arity=arity, label_count=label_count)
    if not np.issubdtype(outputs.dtype, np.integer):
        raise InvalidInputError("labels must be integers")

    bad = np.flatnonzero(((outputs < 0) | (outputs >= label_count)).any(axis=1))
    if bad.size:
        row = int(bad[0])
        sample_id = sample_ids[row] if sample_ids is not None else f"#{row}"
        cell = tuple(int(v) for v in outputs[row])
        message = f"label outside [0, {label_count}) in {cell}"
        raise InvalidRecordError(message, sample_id)

    if label_count**arity <= _MAX_PACKED_CELLS:
        radix = label_count ** np.arange(arity - 1, -1, -1, dtype=np.int64)
        codes = outputs.astype(np.int64) @ radix
        dense_limit = max(_DENSE_CELLS_PER_SAMPLE * n_samples, _DENSE_MIN_CELLS)
        if label_count**arity <= dense_limit:
            counts = np.bincount(codes, minlength=label_count**arity)
            unique_codes = np.flatnonzero(counts)
            counts = counts[unique_codes]
        else:
            unique_codes, counts = np.unique(codes, return_counts=True)
        coords = (unique_codes[:, None] // radix) % label_count
    else:
        coords, counts = np.unique(outputs, axis=0, return_counts=True)

    cells = {
        tuple(int(c) for c in cell): int(count) for cell, count in zip(coords, counts)
    }
    return OccupancyTable(
        arity=arity, label_count=label_count, cells=cells, total=int(n_samples)
    )


def build_occupancy(
    records: Iterable[PredictionRecord], arity: int, label_count: int
) -> OccupancyTable:
    """
    Build the occupancy table of a stream of prediction records.

    Raises:
        InvalidRecordError: If a record has the wrong arity or an out-of-range label
    """
    rows: list[tuple[int, ...]] = []
    ids: list[str] = []
    for record in records:
        if len(record.outputs) != arity:
            raise InvalidRecordError(
                f"has {len(record.outputs)} outputs, expected arity {arity}",
                record.sample_id,
            )
        if any(label >= label_count for label in record.outputs):
            raise InvalidRecordError(
                f"label outside [0, {label_count}) in {record.outputs}",
                record.sample_id,
            )
        rows.append(record.outputs)
        ids.append(record.sample_id)

    if not rows:
        return OccupancyTable(arity=arity, label_count=label_count)
    table = build_occupancy_from_array(
        np.asarray(rows, dtype=np.int64), label_count, sample_ids=ids
    )
    logger.debug(f"Counted {table.total} samples into {table.occupied} cells")
    return table


def merge_tables(tables: Iterable[OccupancyTable]) -> OccupancyTable:
    """Merge tables built from disjoint shards; order does not matter."""
    tables = list(tables)
    if not tables:
        raise InvalidInputError("nothing to merge")
    return functools.reduce(OccupancyTable.merge, tables)


def check_resolution(
    class_count: int, arity: int, label_count: int
) -> ResolutionAdvisory:
    """Advise whether L^Q strictly exceeds K."""
    if min(class_count, arity, label_count) < 1:
        raise InvalidInputError("K, Q and L must all be positive")
    cell_count = label_count**arity
    if cell_count > class_count:
        return ResolutionAdvisory(
            ok=True,
            class_count=class_count,
            cell_count=cell_count,
            message=(
                f"{label_count}^{arity} = {cell_count} cells exceed "
                f"{class_count} classes"
            ),
        )
    message = (
        f"{label_count}^{arity} = {cell_count} cells do not exceed "
        f"{class_count} classes: "
        "a perfect classification could fill every cell and hide all errors; "
        f"use L > {class_count}^(1/{arity})"
    )
    logger.warning(message)
    return ResolutionAdvisory(
        ok=False, class_count=class_count, cell_count=cell_count, message=message
    )


def instance_from_sizes(
    cell_sizes: Sequence[int],
    class_count: int,
    class_size: int,
    reduce: bool = True,
    cells: Optional[Sequence[CellIndex]] = None,
    class_sizes: Optional[Sequence[int]] = None,
) -> InstanceSpec:
    """
    Build an InstanceSpec from a multiset of cell sizes.

    With ``reduce`` every cell of size exactly S is paired with one class and
    removed (uniform class sizes only).
    """
    sizes = [int(s) for s in cell_sizes]
    if cells is not None and len(cells) != len(sizes):
        raise InvalidInputError("cells and cell_sizes differ in length")
    if class_sizes is not None:
        if reduce:
            raise InvalidInputError("reduction needs a uniform class size")
        return InstanceSpec(
            class_count=class_count,
            class_size=class_size,
            reduced_cell_sizes=sizes,
            reduced_class_count=class_count,
            reduced_cells=list(cells) if cells is not None else None,
            class_sizes=list(class_sizes),
        )

    total = sum(sizes)
    if total != class_count * class_size:
        raise InfeasibleInstanceError(
            f"N = {total} but K * S = {class_count} * {class_size} = "
            f"{class_count * class_size}"
        )

    kept_sizes: list[int] = []
    kept_cells: list[CellIndex] = []
    removed_cells: list[CellIndex] = []
    removed = 0
    for position, size in enumerate(sizes):
        if reduce and size == class_size and removed < class_count:
            removed += 1
            if cells is not None:
                removed_cells.append(tuple(cells[position]))
            continue
        kept_sizes.append(size)
        if cells is not None:
            kept_cells.append(tuple(cells[position]))

    return InstanceSpec(
        class_count=class_count,
        class_size=class_size,
        reduced_cell_sizes=kept_sizes,
        reduced_class_count=class_count - removed,
        removed_pairs=removed,
        reduced_cells=kept_cells if cells is not None else None,
        removed_cells=removed_cells,
    )


def reduce_instance(
    table: OccupancyTable, class_count: int, class_size: int
) -> InstanceSpec:
    """
    Remove (size-S cell, class) pairs from the table.

    Raises:
        InfeasibleInstanceError: If N != K * S
    """
    if class_count < 1 or class_size < 1:
        raise InvalidInputError("K and S must be positive")
    if table.total != class_count * class_size:
        raise InfeasibleInstanceError(
            f"N = {table.total} but K * S = {class_count} * {class_size} = "
            f"{class_count * class_size}; pass an effective K = round(N / S)"
        )
    ordered = table.sorted_cells()
    spec = instance_from_sizes(
        [count for _, count in ordered],
        class_count,
        class_size,
        reduce=True,
        cells=[cell for cell, _ in ordered],
    )
    logger.info(
        f"Reduced K={class_count} to K_r={spec.reduced_class_count} "
        f"({spec.removed_pairs} size-{class_size} cells removed, "
        f"{len(spec.reduced_cell_sizes)} cells left)"
    )
    return spec


def diagonal_mass(table: OccupancyTable) -> float:
    """Fraction of samples on which two classifiers output the same label."""
    if table.arity != 2:
        raise InvalidInputError(f"diagonal mass needs arity 2, got {table.arity}")
    if table.total == 0:
        return 0.0
    on_diagonal = sum(count for (a, b), count in table.cells.items() if a == b)
    return on_diagonal / table.total
