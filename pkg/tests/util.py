import json
from pathlib import Path
from typing import Iterable, List

import numpy as np
import pytest
import toml
import yaml

from sslchrono.synth_cohort import CohortParams, ParticipantSeries
from sslchrono.transformer import ModelConfig

RUN_CONFIG_FILE = "run_config.json"


@pytest.fixture
def tmpdir_cd(tmpdir):
    """Create a temporary directory and change to it for the duration of the test."""
    with tmpdir.as_cwd():
        yield tmpdir


def write_config(config_file_path, config: dict):
    """Write an sslchrono config file in toml, yaml, or json format.

    `config` maps section (class) names to dicts of trait values.
    """
    path = Path(config_file_path)
    path.parent.mkdir(exist_ok=True, parents=True)
    with path.open("w") as f:
        if path.suffix == ".yaml" or path.suffix == ".yml":
            yaml.dump(config, f)
        elif path.suffix == ".json":
            json.dump(config, f)
        else:
            toml.dump(config, f)


def _strip_trailing_slash(pattern_or_patterns):
    if pattern_or_patterns is None:
        return []
    elif type(pattern_or_patterns) in (list, tuple):
        return [_strip_trailing_slash(pattern) for pattern in pattern_or_patterns]
    else:
        pattern = str(pattern_or_patterns)
        if pattern.endswith("/"):
            pattern = pattern[:-1]
        return pattern


def _path_expected(path: Path, expected):
    """Check if the given path or one of its parent dirs is in `expected`.

    The run config every command writes is always allowed.
    """
    if _strip_trailing_slash(path) in expected:
        return True
    for parent in path.parents:
        if str(parent) in expected:
            return True
    return path.name == RUN_CONFIG_FILE


def no_extra_files(path=".", expected: Iterable = None):
    """Check if the given path contains only files and dirs from `expected`."""
    expected = _strip_trailing_slash(expected)
    unexpected_dirs = []  # type: List[str]
    for file in Path(path).glob("**/*"):
        if _path_expected(file, expected):
            # Drop parent dir from unexpected_dirs list
            for parent in file.parents:
                if str(parent) in unexpected_dirs:
                    unexpected_dirs.remove(str(parent))
            continue
        if file.is_dir():
            unexpected_dirs.append(str(file))
            continue
        print("Unexpected file", file)
        return False
    return len(unexpected_dirs) == 0


def toy_model_config(**overrides) -> ModelConfig:
    """The small model the gradient and invariant tests run on."""
    values = dict(n_blocks=2, d_model=8, n_heads=1, seq_len=10, dropout_p=0.0)
    values.update(overrides)
    return ModelConfig(**values)


def small_cohort_params(**overrides) -> CohortParams:
    """A cohort big enough to split with two small adaptation sizes."""
    values = dict(
        n_participants=80,
        horizon_days=24,
        prevalence=0.5,
        adaptation_sizes=[8, 16],
        test_size=16,
        min_ssl_participants=16,
    )
    values.update(overrides)
    return CohortParams(**values)


def make_series(
    values,
    missing=None,
    ili_positive=None,
    participant_id: int = 0,
    units: str = "raw",
) -> ParticipantSeries:
    """A participant series from a (days, 3) array; defaults to fully observed."""
    values = np.asarray(values, dtype=np.float64)
    days = len(values)
    if missing is None:
        missing = np.zeros((days, 3), dtype=np.int8)
    if ili_positive is None:
        ili_positive = np.zeros(days, dtype=np.int8)
    return ParticipantSeries(
        participant_id,
        values,
        np.asarray(missing, dtype=np.int8),
        np.asarray(ili_positive, dtype=np.int8),
        units=units,
    )


def random_windows(
    rng: np.random.Generator, n: int, seq_len: int = 10, dtype=np.float32
) -> np.ndarray:
    """Standard normal features with random 0/1 missingness flags."""
    features = rng.standard_normal((n, seq_len, 3))
    flags = (rng.random((n, seq_len, 3)) < 0.1).astype(np.float64)
    return np.concatenate([features, flags], axis=2).astype(dtype)


def assert_close(actual, expected, atol: float = 1e-6):
    np.testing.assert_allclose(np.asarray(actual), np.asarray(expected), rtol=0, atol=atol)
