import os
from pathlib import Path

import numpy as np
import pytest

# Set test environment
os.environ["CB_ENSEMBLE_ENV_MODE"] = "testing"
os.environ["CB_ENSEMBLE_THREADS"] = "1"
os.environ.pop("CB_ENSEMBLE_SEED", None)
os.environ.pop("CB_ENSEMBLE_LOG_FILE", None)

# Import the package after setting environment variables
from ensemble_bound.core.settings import Settings, get_settings  # noqa: E402
from ensemble_bound.schemas.occupancy import PredictionRecord  # noqa: E402


@pytest.fixture
def settings() -> Settings:
    """Fresh settings for the testing environment."""
    return Settings()


@pytest.fixture(autouse=True)
def clear_settings_cache():
    """Every test sees settings built from its own environment."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def four_records() -> list[PredictionRecord]:
    """Outputs (0,0),(0,0),(1,2),(0,0) of two classifiers over L=3 labels."""
    outputs = [(0, 0), (0, 0), (1, 2), (0, 0)]
    return [
        PredictionRecord(sample_id=f"s{i}", outputs=cell)
        for i, cell in enumerate(outputs)
    ]


def write_predictions_csv(
    path: Path, rows: list[tuple[str, str, tuple[int, ...]]]
) -> Path:
    """Write ``(sample_id, label, outputs)`` rows in the predictions CSV format."""
    arity = len(rows[0][2]) if rows else 2
    lines = ["sample_id,label," + ",".join(f"f_{q}" for q in range(1, arity + 1))]
    lines.extend(
        f"{sample_id},{label}," + ",".join(str(v) for v in outputs)
        for sample_id, label, outputs in rows
    )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def split_cell_predictions(tmp_path: Path) -> Path:
    """Cells {(0,0): 3, (1,1): 1}; with K=2, S=2 the bound is one mistake."""
    return write_predictions_csv(
        tmp_path / "split.csv",
        [
            ("a0", "0", (0, 0)),
            ("a1", "0", (0, 0)),
            ("b0", "1", (0, 0)),
            ("b1", "1", (1, 1)),
        ],
    )


@pytest.fixture
def perfect_predictions(tmp_path: Path) -> Path:
    """Three classes of two samples, each in its own cell."""
    return write_predictions_csv(
        tmp_path / "perfect.csv",
        [(f"c{k}-{j}", str(k), (k, (k + 1) % 3)) for k in range(3) for j in range(2)],
    )
