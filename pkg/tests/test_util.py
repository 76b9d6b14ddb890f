from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from sslchrono.util import (
    ConfigError,
    DestinationNotWritableError,
    HorizonTooShortError,
    SslchronoError,
    checksum,
    derive_rng,
    derive_seed,
    ensure_writable_dir,
    write_csv,
)


def test_derive_seed_is_stable_and_separated():
    assert derive_seed(0, "cohort", 3) == derive_seed(0, "cohort", 3)
    seeds = {
        derive_seed(0, "cohort", 3),
        derive_seed(0, "cohort", 4),
        derive_seed(1, "cohort", 3),
        derive_seed(0, "split"),
        derive_seed(0, "init"),
        derive_seed(0, "head", 25),
    }
    assert len(seeds) == 6
    assert all(0 <= s < 2 ** 32 for s in seeds)


def test_derive_seed_unknown_purpose():
    with pytest.raises(ValueError):
        derive_seed(0, "shuffle")


def test_derive_rng():
    a = derive_rng(5, "train").random(3)
    b = derive_rng(5, "train").random(3)
    assert np.array_equal(a, b)


def test_checksum():
    a = [np.arange(4, dtype=np.float32), np.ones((2, 2))]
    b = [np.arange(4, dtype=np.float64), np.ones((2, 2), dtype=np.float32)]
    assert checksum(a) == checksum(b)
    assert len(checksum(a)) == 64
    assert checksum(a) != checksum(a[::-1])


def test_error_categories():
    assert ConfigError.category == "config"
    assert issubclass(HorizonTooShortError, ConfigError)
    assert HorizonTooShortError.category == "horizon"
    assert issubclass(DestinationNotWritableError, SslchronoError)


def test_ensure_writable_dir(tmpdir_cd):
    path = ensure_writable_dir("a/b")
    assert path.is_dir()
    Path("file").touch()
    with pytest.raises(DestinationNotWritableError) as e:
        ensure_writable_dir("file/sub")
    assert str(e.value.filename) == "file/sub"


def test_write_csv(tmpdir_cd):
    frame = pd.DataFrame({"name": ["a", "b"], "value": [1 / 3, 2.0]})
    write_csv(frame, "out/values.csv")
    raw = Path("out/values.csv").read_bytes()
    assert b"\r" not in raw
    assert raw == b"name,value\na,0.333333\nb,2\n"
