import json

import numpy as np
import pytest
from pydantic import ValidationError

from ensemble_bound.core.exceptions import InputFormatError
from ensemble_bound.schemas.embeddings import (
    EmbeddingSet,
    LearnerKind,
    StudyReport,
    StudyRow,
)
from ensemble_bound.schemas.mistakes import ExperimentRow, ExperimentTable
from ensemble_bound.schemas.occupancy import OccupancyTable, PredictionRecord
from ensemble_bound.schemas.run_config import RunConfig
from ensemble_bound.utils import io
from tests.conftest import write_predictions_csv


@pytest.mark.utils
def test_read_predictions(split_cell_predictions):
    records, arity = io.read_predictions(split_cell_predictions)

    assert arity == 2
    assert [r.sample_id for r in records] == ["a0", "a1", "b0", "b1"]
    assert records[3].outputs == (1, 1)
    assert records[3].true_label == 1


@pytest.mark.utils
def test_read_predictions_without_labels(tmp_path):
    path = write_predictions_csv(tmp_path / "p.csv", [("x", "", (2, 0, 1))])

    records, arity = io.read_predictions(path)

    assert arity == 3
    assert records[0].true_label is None


@pytest.mark.utils
@pytest.mark.parametrize(
    "body, line, message",
    [
        ("sample_id,label,f_1,f_2\na,0,1\n", 2, "expected 4 fields, got 3"),
        ("sample_id,label,f_1,f_2\na,0,0,0\nb,0,x,1\n", 3, "'x' is not an integer"),
        ("sample_id,label,f_1,f_2\na,0,-1,0\n", 2, "-1 is negative"),
        ("sample_id,label,f_1,f_2\na,0,,0\n", 2, "empty classifier output"),
        ("sample,label,f_1\na,0,1\n", 1, "header must be"),
        ("sample_id,label,f_2\na,0,1\n", 1, "header must be"),
    ],
)
def test_read_predictions_reports_line(tmp_path, body, line, message):
    """Test that parse errors name the offending line."""
    path = tmp_path / "bad.csv"
    path.write_text(body, encoding="utf-8")

    with pytest.raises(InputFormatError) as exc_info:
        io.read_predictions(path)

    assert exc_info.value.line_number == line
    assert message in exc_info.value.detail


@pytest.mark.utils
def test_read_predictions_missing_file(tmp_path):
    with pytest.raises(InputFormatError) as exc_info:
        io.read_predictions(tmp_path / "absent.csv")

    assert exc_info.value.exit_code == 2


@pytest.mark.utils
@pytest.mark.parametrize(
    "reader, header",
    [
        (io.read_predictions, b"sample_id,label,f_1,f_2\n"),
        (io.read_embeddings, b"sample_id,label,v_0,v_1\n"),
    ],
)
def test_undecodable_bytes_report_line(tmp_path, reader, header):
    path = tmp_path / "latin.csv"
    path.write_bytes(header + b"ok,0,0,0\n\xff\xfe,0,0,0\n")

    with pytest.raises(InputFormatError) as exc_info:
        reader(path)

    assert exc_info.value.line_number == 3
    assert exc_info.value.exit_code == 2
    assert "UTF-8" in exc_info.value.detail


@pytest.mark.utils
def test_undecodable_learner_specs(tmp_path):
    path = tmp_path / "learners.json"
    path.write_bytes(b'[{"kind": "identity"}]\xff')

    with pytest.raises(InputFormatError, match="UTF-8"):
        io.read_learner_specs(path)


@pytest.mark.utils
def test_read_predictions_header_only(tmp_path):
    path = write_predictions_csv(tmp_path / "empty.csv", [])

    assert io.read_predictions(path) == ([], 2)


@pytest.mark.utils
def test_write_predictions_replays(tmp_path):
    records = [
        PredictionRecord(sample_id="c0-0", outputs=(1, 2), true_label=0),
        PredictionRecord(sample_id="c1-0", outputs=(0, 0)),
    ]
    path = tmp_path / "out.csv"

    io.write_predictions(path, records, arity=2)

    assert path.read_text() == "sample_id,label,f_1,f_2\nc0-0,0,1,2\nc1-0,,0,0\n"
    assert io.read_predictions(path) == (records, 2)


@pytest.mark.utils
def test_occupancy_payload_text():
    """Cells are listed in lexicographic order."""
    cells = {(1, 2): 1, (0, 0): 3}
    table = OccupancyTable(arity=2, label_count=3, cells=cells, total=4)

    assert io.dump_json(io.occupancy_payload(table)) == (
        '{"arity": 2, "label_count": 3, "total": 4, "cells": '
        '[{"coords": [0, 0], "count": 3}, {"coords": [1, 2], "count": 1}]}\n'
    )


@pytest.mark.utils
def test_read_occupancy(tmp_path):
    table = OccupancyTable(arity=3, label_count=2, cells={(1, 0, 1): 2}, total=2)
    path = tmp_path / "table.json"
    io.write_json(path, io.occupancy_payload(table))

    assert io.read_occupancy(path) == table


@pytest.mark.utils
def test_read_occupancy_rejects_malformed(tmp_path):
    path = tmp_path / "table.json"
    path.write_text('{"arity": 2, "cells": []}', encoding="utf-8")

    with pytest.raises(InputFormatError):
        io.read_occupancy(path)


@pytest.mark.utils
def test_experiment_csv(tmp_path):
    table = ExperimentTable(
        kind="monotonicity",
        rows=[
            ExperimentRow(
                m=0,
                mean_bound=0.0,
                std_bound=0.0,
                mean_actual=0.0,
                trials=2,
                seed=11,
                mean_coherence=45.0,
            ),
            ExperimentRow(
                m=15,
                mean_bound=2.5,
                std_bound=0.5,
                mean_actual=15.0,
                trials=2,
                seed=12,
                mean_coherence=40.5,
            ),
        ],
    )
    path = tmp_path / "exp.csv"

    io.write_experiment_csv(path, table)

    assert path.read_text().splitlines() == [
        "m,mean_bound,std_bound,mean_actual,trials,seed,mean_coherence",
        "0,0.0,0.0,0.0,2,11,45.0",
        "15,2.5,0.5,15.0,2,12,40.5",
    ]


@pytest.mark.utils
def test_experiment_csv_adds_diagonal_column(tmp_path):
    row = ExperimentRow(
        m=0,
        mean_bound=0.0,
        std_bound=0.0,
        mean_actual=0.0,
        trials=1,
        seed=1,
        mean_coherence=4.0,
        mean_diagonal=1.0,
    )
    path = tmp_path / "exp.csv"

    io.write_experiment_csv(path, ExperimentTable(kind="correlated", rows=[row]))

    header, line = path.read_text().splitlines()
    assert header.endswith(",mean_coherence,mean_diagonal")
    assert line.endswith(",4.0,1.0")


@pytest.mark.utils
def test_embeddings_csv_round_trip(tmp_path):
    embeddings = EmbeddingSet(
        sample_ids=["a", "b"], vectors=[[0.5, -1.25], [3.0, 1e-9]], labels=[0, 1]
    )
    path = tmp_path / "emb.csv"

    io.write_embeddings_csv(path, embeddings)
    loaded = io.read_embeddings(path)

    assert path.read_text().splitlines()[0] == "sample_id,label,v_0,v_1"
    assert loaded.sample_ids == ["a", "b"]
    np.testing.assert_array_equal(loaded.vectors, embeddings.vectors)
    np.testing.assert_array_equal(loaded.labels, [0, 1])


@pytest.mark.utils
def test_embeddings_binary_round_trip(tmp_path):
    embeddings = EmbeddingSet(
        sample_ids=["é", "b"], vectors=[[0.1, 0.2, 0.3], [1, 2, 3]]
    )
    path = tmp_path / "emb.bin"

    io.write_embeddings_binary(path, embeddings)
    loaded = io.read_embeddings(path)

    assert path.read_bytes().startswith(io.EMBEDDING_MAGIC)
    assert loaded.sample_ids == ["é", "b"]
    assert loaded.labels is None
    np.testing.assert_array_equal(loaded.vectors, embeddings.vectors)


@pytest.mark.utils
def test_binary_embeddings_truncated_or_padded(tmp_path):
    embeddings = EmbeddingSet(sample_ids=["a"], vectors=[[1.0, 2.0]], labels=[3])
    path = tmp_path / "emb.bin"
    io.write_embeddings_binary(path, embeddings)
    data = path.read_bytes()

    path.write_bytes(data[:-4])
    with pytest.raises(InputFormatError):
        io.read_embeddings(path)

    path.write_bytes(data + b"\x00")
    with pytest.raises(InputFormatError) as exc_info:
        io.read_embeddings(path)
    assert "1 trailing bytes" in exc_info.value.detail


@pytest.mark.utils
@pytest.mark.parametrize(
    "body, line",
    [
        ("sample_id,label,v_0\na,0,nan\n", 2),
        ("sample_id,label,v_0\na,0,abc\n", 2),
        ("sample_id,label,v_0\na,0,1.0,2.0\n", 2),
        ("id,label,v_0\na,0,1.0\n", 1),
    ],
)
def test_embeddings_csv_errors(tmp_path, body, line):
    path = tmp_path / "emb.csv"
    path.write_text(body, encoding="utf-8")

    with pytest.raises(InputFormatError) as exc_info:
        io.read_embeddings(path)

    assert exc_info.value.line_number == line


@pytest.mark.utils
def test_embeddings_csv_partial_labels(tmp_path):
    path = tmp_path / "emb.csv"
    path.write_text("sample_id,label,v_0\na,0,1.0\nb,,2.0\n", encoding="utf-8")

    with pytest.raises(InputFormatError):
        io.read_embeddings(path)


@pytest.mark.utils
def test_read_learner_specs(tmp_path):
    path = tmp_path / "learners.json"
    path.write_text(
        json.dumps(
            {
                "learners": [
                    {"kind": "identity"},
                    {
                        "kind": "pair_projection",
                        "size": 4,
                        "seed": 2,
                        "representatives": 3,
                    },
                ]
            }
        ),
        encoding="utf-8",
    )

    specs = io.read_learner_specs(path)

    assert [s.kind for s in specs] == [
        LearnerKind.IDENTITY,
        LearnerKind.PAIR_PROJECTION,
    ]
    assert specs[1].representatives == 3


@pytest.mark.utils
def test_read_learner_specs_errors(tmp_path):
    path = tmp_path / "learners.json"

    path.write_text('[{"kind": "coordinate_subset"}]', encoding="utf-8")
    with pytest.raises(ValidationError):
        io.read_learner_specs(path)

    path.write_text("[{", encoding="utf-8")
    with pytest.raises(InputFormatError):
        io.read_learner_specs(path)

    path.write_text('{"kind": "identity"}', encoding="utf-8")
    with pytest.raises(InputFormatError):
        io.read_learner_specs(path)


@pytest.mark.utils
def test_study_csv_and_summary(tmp_path):
    report = StudyReport(
        rows=[
            StudyRow(
                pair=0,
                learner_a="a",
                learner_b="b",
                mistake_bound=3,
                coherence=40,
                false_same=5,
                true_same=7,
                acc_a=0.5,
                acc_b=0.25,
                diagonal_mass=0.75,
            )
        ],
        learner_count=2,
        class_count=2,
        class_size=4,
        seed=9,
    )
    path = tmp_path / "pairs.csv"

    io.write_study_csv(path, report)

    assert path.read_text().splitlines() == [
        ",".join(io.STUDY_FIELDS),
        "0,a,b,3,40,5,0.5,0.25,7,0.75",
    ]
    assert io.study_summary(report) == {
        "pairs": 1,
        "learner_count": 2,
        "class_count": 2,
        "class_size": 4,
        "slope": None,
        "intercept": None,
        "pearson_r": None,
        "seed": 9,
    }


@pytest.mark.utils
def test_config_sidecar(tmp_path):
    out = tmp_path / "result.json"

    path = io.write_config_sidecar(out, RunConfig(subcommand="bound", seed=5))

    assert path == tmp_path / "result.json.config.json"
    stored = json.loads(path.read_text())
    assert stored["subcommand"] == "bound"
    assert stored["seed"] == 5
