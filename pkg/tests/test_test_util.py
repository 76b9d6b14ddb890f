"""Units tests for test utils."""

from pathlib import Path

import numpy as np

from .util import make_series, no_extra_files, random_windows


def test_no_extra_files(tmpdir_cd):
    assert no_extra_files()

    Path("test.txt").touch()
    assert not no_extra_files()
    assert no_extra_files(expected="test.txt")
    Path("test.txt").unlink()

    Path("out").mkdir()
    assert not no_extra_files()
    assert no_extra_files(expected=["out/"])
    assert no_extra_files(expected=["out"])
    assert not no_extra_files(expected=["out/sweep.csv"])

    Path("out/sweep.csv").touch()
    assert not no_extra_files()
    assert not no_extra_files(expected=["sweep.csv"])
    assert no_extra_files(expected=["out/sweep.csv"])
    assert no_extra_files(expected=["out/"])


def test_no_extra_files_allows_run_config(tmpdir_cd):
    Path("out").mkdir()
    Path("out/run_config.json").touch()
    assert no_extra_files()


def test_make_series():
    series = make_series(np.zeros((12, 3)), participant_id=4)
    assert series.n_days == 12
    assert series.participant_id == 4
    assert series.missing.sum() == 0
    assert series.day(0).ili_positive == 0


def test_random_windows():
    windows = random_windows(np.random.default_rng(0), 5)
    assert windows.shape == (5, 10, 6)
    assert windows.dtype == np.float32
    assert set(np.unique(windows[..., 3:])) <= {0.0, 1.0}
