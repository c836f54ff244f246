import random
from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError

from ensemble_bound.core.exceptions import (
    InfeasibleInstanceError,
    InvalidInputError,
    InvalidRecordError,
)
from ensemble_bound.schemas.occupancy import OccupancyTable, PredictionRecord
from ensemble_bound.services.mistakes_service import inject_mistakes, plant_truth
from ensemble_bound.services.occupancy_service import (
    build_occupancy,
    build_occupancy_from_array,
    check_resolution,
    diagonal_mass,
    instance_from_sizes,
    merge_tables,
    reduce_instance,
)


def _table(cells: dict, label_count: int = 4) -> OccupancyTable:
    arity = len(next(iter(cells)))
    return OccupancyTable(
        arity=arity, label_count=label_count, cells=cells, total=sum(cells.values())
    )


@pytest.mark.services
def test_build_occupancy_counts(four_records):
    """Test direct counting of four records."""
    table = build_occupancy(four_records, arity=2, label_count=3)

    assert table.cells == {(0, 0): 3, (1, 2): 1}
    assert table.total == 4
    assert table.occupied == 2


@pytest.mark.services
def test_build_occupancy_empty_stream():
    table = build_occupancy([], arity=2, label_count=3)

    assert table.total == 0
    assert table.cells == {}


@pytest.mark.services
def test_build_occupancy_is_permutation_invariant(rng):
    """Test that shuffling the stream yields an identical table."""
    outputs = rng.integers(0, 5, size=(300, 3))
    records = [
        PredictionRecord(sample_id=str(i), outputs=tuple(int(v) for v in row))
        for i, row in enumerate(outputs)
    ]
    shuffled = records[:]
    random.Random(3).shuffle(shuffled)

    first = build_occupancy(records, 3, 5)
    second = build_occupancy(shuffled, 3, 5)

    assert first.sorted_cells() == second.sorted_cells()
    assert first.total == second.total == 300


@pytest.mark.services
def test_build_occupancy_rejects_out_of_range_label(four_records):
    """Test that the offending sample is named."""
    records = four_records + [PredictionRecord(sample_id="bad-7", outputs=(0, 3))]

    with pytest.raises(InvalidRecordError) as exc_info:
        build_occupancy(records, arity=2, label_count=3)

    assert exc_info.value.sample_id == "bad-7"


@pytest.mark.services
def test_build_occupancy_rejects_inconsistent_arity(four_records):
    records = four_records + [PredictionRecord(sample_id="short", outputs=(1,))]

    with pytest.raises(InvalidRecordError) as exc_info:
        build_occupancy(records, arity=2, label_count=3)

    assert exc_info.value.sample_id == "short"


@pytest.mark.services
def test_negative_label_names_the_sample():
    with pytest.raises(InvalidRecordError) as exc_info:
        PredictionRecord(sample_id="x-3", outputs=(0, -1))
    assert exc_info.value.sample_id == "x-3"
    assert str(exc_info.value).startswith("sample 'x-3':")

    with pytest.raises(InvalidRecordError, match="negative true label"):
        PredictionRecord(sample_id="x-4", outputs=(0, 1), true_label=-2)


@pytest.mark.services
def test_array_path_matches_record_path(rng):
    """Test the vectorized builder against the record builder."""
    outputs = rng.integers(0, 7, size=(500, 2))
    records = [
        PredictionRecord(sample_id=str(i), outputs=tuple(int(v) for v in row))
        for i, row in enumerate(outputs)
    ]

    expected = build_occupancy(records, 2, 7).cells
    assert build_occupancy_from_array(outputs, 7).cells == expected


@pytest.mark.services
def test_dense_and_sorted_counting_agree(rng):
    """bincount over packed codes gives the same table as np.unique."""
    outputs = rng.integers(0, 9, size=(300, 3))
    module = "ensemble_bound.services.occupancy_service"

    dense = build_occupancy_from_array(outputs, 9)
    with patch(f"{module}._DENSE_CELLS_PER_SAMPLE", 0), patch(
        f"{module}._DENSE_MIN_CELLS", 0
    ):
        sorted_table = build_occupancy_from_array(outputs, 9)

    assert dense.cells == sorted_table.cells
    assert list(dense.cells) == sorted(dense.cells)
    assert dense.total == 300


@pytest.mark.services
def test_array_path_without_packing():
    """L^Q beyond 2^62 falls back to row-wise unique."""
    outputs = np.array([[999, 0, 5, 1, 2, 3, 4]] * 2 + [[1] * 7])
    table = build_occupancy_from_array(outputs, label_count=1000)

    assert 1000**7 > 2**62
    assert table.cells == {(1, 1, 1, 1, 1, 1, 1): 1, (999, 0, 5, 1, 2, 3, 4): 2}


@pytest.mark.services
def test_zero_mistake_simulation_fills_one_cell_per_class():
    """10,000 records of a planted truth without mistakes give 100 cells of 100."""
    truth = plant_truth(100, 100, arity=2, label_count=20, seed=5)
    records, actual = inject_mistakes(truth, 0, seed=5)

    table = build_occupancy(records, 2, 20)

    assert actual == 0
    assert table.occupied == 100
    assert set(table.cells.values()) == {100}


@pytest.mark.services
def test_merge_is_order_independent(rng):
    """Test that merging shards in any order rebuilds the full table."""
    outputs = rng.integers(0, 4, size=(120, 2))
    shards = [
        build_occupancy_from_array(part, 4) for part in np.array_split(outputs, 4)
    ]
    whole = build_occupancy_from_array(outputs, 4)

    forward = merge_tables(shards)
    backward = merge_tables(reversed(shards))

    assert forward.sorted_cells() == backward.sorted_cells() == whole.sorted_cells()
    assert forward.total == 120


@pytest.mark.services
def test_merge_rejects_mismatched_tables():
    with pytest.raises(ValueError):
        _table({(0, 0): 1}, label_count=2).merge(_table({(0, 0, 0): 1}, label_count=2))
    with pytest.raises(InvalidInputError):
        merge_tables([])


@pytest.mark.services
def test_marginals_match_record_histograms(rng):
    """For Q=2, summing over either axis gives each classifier's histogram."""
    outputs = rng.integers(0, 6, size=(400, 2))
    table = build_occupancy_from_array(outputs, 6)

    for axis in (0, 1):
        np.testing.assert_array_equal(
            table.marginal(axis), np.bincount(outputs[:, axis], minlength=6)
        )


@pytest.mark.services
@pytest.mark.parametrize(
    "classes, arity, labels, ok",
    [
        (6, 2, 3, True),
        (9, 2, 3, False),
        (1_000_000, 3, 100, False),
        (1_000_000, 3, 101, True),
    ],
)
def test_check_resolution(classes, arity, labels, ok):
    """L^Q must strictly exceed K."""
    advisory = check_resolution(classes, arity, labels)

    assert advisory.ok is ok
    assert advisory.cell_count == labels**arity


@pytest.mark.services
def test_check_resolution_logs_warning():
    """Test that a failed check is logged as a warning."""
    with patch("ensemble_bound.services.occupancy_service.logger") as mock_logger:
        advisory = check_resolution(9, 2, 3)

        assert "hide all errors" in advisory.message
        mock_logger.warning.assert_called_once_with(advisory.message)


@pytest.mark.services
def test_reduce_perfect_partition():
    """Cells {a:2, b:2} with K=2, S=2 reduce completely."""
    spec = reduce_instance(_table({(0, 0): 2, (1, 1): 2}), 2, 2)

    assert spec.reduced_cell_sizes == []
    assert spec.reduced_class_count == 0
    assert spec.removed_pairs == 2


@pytest.mark.services
def test_reduce_removes_only_size_s_cells():
    """Cells {3,2,1} with K=3, S=2 reduce to {3,1}."""
    spec = reduce_instance(_table({(0, 0): 3, (1, 1): 2, (2, 2): 1}), 3, 2)

    assert spec.reduced_cell_sizes == [3, 1]
    assert spec.reduced_cells == [(0, 0), (2, 2)]
    assert spec.removed_cells == [(1, 1)]
    assert spec.reduced_class_count == 2
    assert spec.removed_pairs == 1


@pytest.mark.services
def test_reduce_one_of_equal_size_cells():
    """Cells {4,3,3,2} with K=3, S=4 reduce to {3,3,2}."""
    spec = reduce_instance(_table({(0, 0): 4, (0, 1): 3, (1, 0): 3, (1, 1): 2}), 3, 4)

    assert sorted(spec.reduced_cell_sizes) == [2, 3, 3]
    assert spec.reduced_class_count == 2
    assert spec.removed_pairs == 1


@pytest.mark.services
def test_reduction_conservation_and_idempotence(rng):
    """Reduced cells and removed pairs hold N samples; a second pass is a no-op."""
    for _ in range(20):
        class_size = int(rng.integers(1, 5))
        class_count = int(rng.integers(2, 6))
        seed = int(rng.integers(1 << 30))
        truth = plant_truth(class_count, class_size, 2, 4, seed=seed)
        mistakes = int(rng.integers(0, class_count * class_size + 1))
        records, _ = inject_mistakes(truth, mistakes, 3)
        table = build_occupancy(records, 2, 4)

        spec = reduce_instance(table, class_count, class_size)
        kept = sum(spec.reduced_cell_sizes)
        assert kept + spec.removed_pairs * class_size == table.total

        again = instance_from_sizes(
            spec.reduced_cell_sizes, spec.reduced_class_count, class_size
        )
        # Cells of size S may remain only when they outnumber the classes.
        assert again.removed_pairs == 0 or spec.reduced_class_count == 0


@pytest.mark.services
def test_reduce_rejects_wrong_total():
    """Test that N != K * S reports both values."""
    with pytest.raises(InfeasibleInstanceError) as exc_info:
        reduce_instance(_table({(0, 0): 3, (1, 1): 2}), 2, 2)

    assert "N = 5" in exc_info.value.detail
    assert "K * S = 2 * 2 = 4" in exc_info.value.detail


@pytest.mark.services
def test_instance_from_sizes_without_reduction():
    spec = instance_from_sizes([4, 3, 3, 2], 3, 4, reduce=False)

    assert spec.reduced_cell_sizes == [4, 3, 3, 2]
    assert spec.reduced_class_count == 3
    assert spec.largest_cell == 4
    assert spec.is_uniform


@pytest.mark.services
def test_instance_with_class_sizes_cannot_reduce():
    with pytest.raises(InvalidInputError):
        instance_from_sizes([3, 2], 2, 2, reduce=True, class_sizes=[3, 2])

    spec = instance_from_sizes([3, 2], 2, 2, reduce=False, class_sizes=[3, 2])
    assert spec.row_sizes() == [3, 2]
    assert not spec.is_uniform


@pytest.mark.services
@pytest.mark.parametrize(
    "cells, expected",
    [
        ({(0, 0): 3, (1, 1): 3}, 1.0),
        ({(0, 1): 4}, 0.0),
        ({(0, 0): 3, (0, 1): 1}, 0.75),
    ],
)
def test_diagonal_mass(cells, expected):
    assert diagonal_mass(_table(cells)) == pytest.approx(expected)


@pytest.mark.services
def test_diagonal_mass_needs_two_classifiers():
    with pytest.raises(InvalidInputError):
        diagonal_mass(_table({(0, 0, 0): 2}))


@pytest.mark.services
def test_table_invariants():
    """Zero counts and wrong totals are rejected."""
    with pytest.raises(ValidationError):
        OccupancyTable(arity=2, label_count=2, cells={(0, 0): 0}, total=0)
    with pytest.raises(ValidationError):
        OccupancyTable(arity=2, label_count=2, cells={(0, 0): 2}, total=3)
    with pytest.raises(ValidationError):
        OccupancyTable(arity=2, label_count=2, cells={(0, 2): 1}, total=1)
