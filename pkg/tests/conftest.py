"""Shared fixtures: surrogate data, a small trained model, optional real data.

The real turbofan files are looked up via the CMAPSS_DATA environment
variable or a data/ directory next to the package; data-dependent tests
skip with a notice when the files are absent.
"""

import os
from pathlib import Path

import pytest

from tdcae import dataio, tdc


def cmapss_file(subset: str) -> Path | None:
    candidates = []
    env = os.environ.get("CMAPSS_DATA")
    if env:
        candidates.append(Path(env))
    candidates += [Path("data"), Path(__file__).resolve().parent.parent / "data"]
    for root in candidates:
        path = root / f"train_{subset}.txt"
        if path.is_file():
            return path
    return None


def require_cmapss(subset: str) -> Path:
    path = cmapss_file(subset)
    if path is None:
        pytest.skip(f"train_{subset}.txt not found (set CMAPSS_DATA or add data/); "
                    "skipping data-dependent check")
    return path


@pytest.fixture(scope="session")
def surrogate_runs():
    return dataio.synthetic_runs(n_engines=8, mean_life=90, seed=11)


@pytest.fixture(scope="session")
def trained_setup(surrogate_runs):
    """Small end-to-end training: (params, history, scaler, split, runs, config)."""
    split = dataio.split_engines(surrogate_runs, 0.25, seed=5)
    train_runs = [r for r in surrogate_runs if r.unit_id in split.train_engines]
    scaler = dataio.fit_scaler(train_runs)
    scaled = [dataio.apply_scaler(r, scaler) for r in train_runs]
    config = tdc.TrainingConfig(epochs=12, seed=3)
    params, history = tdc.train(scaled, config)
    return params, history, scaler, split, surrogate_runs, config
