"""Shared fixtures for the RSTR CDMER test suite."""

import numpy as np
import pytest

from rstr_cdmer.services.synthetic import SyntheticShiftConfig, SyntheticTask, generate_synthetic


@pytest.fixture(autouse=True)
def isolated_data_dir(tmp_path, monkeypatch):
    """Keep configs, logs and reports out of the real project data directory."""
    data_dir = tmp_path / "data"
    monkeypatch.setenv("RSTR_CDMER_DATA_DIR", str(data_dir))
    return data_dir


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


@pytest.fixture
def small_task() -> SyntheticTask:
    """Three blocks of dimension four, block 0 carries the class signal."""
    return generate_synthetic(SyntheticShiftConfig(
        seed=7,
        n_blocks=3,
        dim=4,
        n_source=30,
        n_target=30,
        informative_blocks=(0,),
    ))
