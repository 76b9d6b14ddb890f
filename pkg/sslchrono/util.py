"""Utility functions and the error hierarchy."""
import hashlib
import os
from pathlib import Path
from typing import Iterable, Union

import numpy as np

__all__ = [
    "SslchronoError",
    "SslchronoWarning",
    "checksum",
    "derive_rng",
    "derive_seed",
    "ensure_writable_dir",
    "write_csv",
]


class SslchronoWarning(RuntimeWarning):
    pass


class SslchronoError(RuntimeError):

    """Base class for every error sslchrono raises on purpose.

    `category` is the machine-readable tag the CLI prints on stderr.
    """

    category = "error"


class ShapeError(SslchronoError, ValueError):
    category = "shape"


class ParameterError(SslchronoError, ValueError):
    category = "parameter"


class StaleTapeError(SslchronoError):
    category = "stale-tape"


class NonFiniteError(SslchronoError, FloatingPointError):
    category = "non-finite"


class ConfigError(SslchronoError, ValueError):
    category = "config"


class HorizonTooShortError(ConfigError):
    category = "horizon"


class InsufficientParticipantsError(SslchronoError):
    category = "insufficient-participants"


class ZeroVarianceError(SslchronoError):
    category = "zero-variance"

    def __init__(self, feature: str):
        super().__init__(f"Feature {feature!r} has zero standard deviation")
        self.feature = feature


class EmptyDatasetError(SslchronoError):
    category = "empty-dataset"


class DatasetError(SslchronoError):
    category = "dataset"


class UndefinedAUCError(SslchronoError):
    category = "undefined-auc"


class HeadMismatchError(SslchronoError):
    category = "head-mismatch"


class CheckpointError(SslchronoError):
    category = "checkpoint"


class LeakageError(SslchronoError):
    category = "leakage"


class DestinationNotWritableError(SslchronoError):
    category = "unwritable"

    def __init__(self, filename: Union[str, Path]):
        super().__init__(f"Can't write to {filename}")
        self.filename = filename


_SEED_PURPOSES = ("cohort", "split", "init", "train", "head", "windows")


def derive_seed(master: int, purpose: str, *keys: int) -> int:
    """Derive an independent 32-bit seed for `purpose` from the master seed.

    Extra integer `keys` (participant index, sweep size, ...) select further
    sub-streams, so the same (master, purpose, keys) always gives the same seed.
    """
    if purpose not in _SEED_PURPOSES:
        raise ValueError(f"Unknown seed purpose {purpose!r}")
    entropy = [int(master), _SEED_PURPOSES.index(purpose), *map(int, keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def derive_rng(master: int, purpose: str, *keys: int) -> np.random.Generator:
    """Return a numpy Generator seeded with `derive_seed(master, purpose, *keys)`."""
    return np.random.default_rng(derive_seed(master, purpose, *keys))


def checksum(arrays: Iterable[np.ndarray]) -> str:
    """SHA-256 over the little-endian float32 bytes of each array, in order."""
    digest = hashlib.sha256()
    for array in arrays:
        digest.update(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return digest.hexdigest()


def ensure_writable_dir(path: Union[str, Path]) -> Path:
    """Create `path` if needed and check we can write into it.

    Raises: DestinationNotWritableError
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError:
        raise DestinationNotWritableError(path)
    if not os.access(path, os.W_OK):
        raise DestinationNotWritableError(path)
    return path


def write_csv(frame, path: Union[str, Path], float_format: str = "%.6g"):
    """Write a DataFrame as a locale-independent, LF-terminated CSV.

    Raises: DestinationNotWritableError
    """
    path = Path(path)
    ensure_writable_dir(path.parent)
    try:
        with path.open("w", newline="", encoding="utf8") as f:
            frame.to_csv(f, index=False, lineterminator="\n", float_format=float_format)
    except OSError:
        raise DestinationNotWritableError(path)
    return path
