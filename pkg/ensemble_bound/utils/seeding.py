"""Seeded, splittable random streams."""

from typing import Optional

import numpy as np

from ensemble_bound.core.settings import Settings, get_settings


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed of ``seed`` for the path ``keys`` (e.g. row, trial)."""
    sequence = np.random.SeedSequence([seed, *keys])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator on the stream ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def resolve_seed(
    explicit: Optional[int], settings: Optional[Settings] = None
) -> tuple[int, str]:
    """
    Pick the run seed: explicit flag, then ``CB_ENSEMBLE_SEED``, then fresh entropy.

    Returns:
        The seed and where it came from ("flag", "env" or "generated")
    """
    if explicit is not None:
        return explicit, "flag"
    settings = settings or get_settings()
    if settings.SEED is not None:
        return settings.SEED, "env"
    entropy = np.random.SeedSequence().entropy
    return int(entropy) % 2**63, "generated"
