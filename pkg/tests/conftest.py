import numpy as np
import pytest

from flucmia.datasets import DatasetConfig, ROLES, generate, split_dataset, stack
from flucmia.genmodels import TrainConfig, handle_for, train_ddpm, train_vae
from flucmia.numerics import make_rng


def small_counts(n):
    return {r: n for r in ROLES}


@pytest.fixture(scope="session")
def blob_data():
    """Small noisy blob corpus with a 64-per-role split."""
    cfg = DatasetConfig(kind="blobs-image", counts=small_counts(64), side=8, noise=0.3, seed=5)
    records = generate(cfg, make_rng(5, 1))
    split = split_dataset(records, cfg, make_rng(5, 2))
    return records, split


@pytest.fixture(scope="session")
def overfit_ddpm(blob_data):
    """DDPM trained well past its early-stop marker on 64 members."""
    records, split = blob_data
    cfg = TrainConfig(epochs=600, eval_every=25, snapshot_every=200)
    series = train_ddpm(stack(records, split.target_member), stack(records, split.target_nonmember), cfg,
                        make_rng(5, 3))
    return series, handle_for(series.last().model)


@pytest.fixture(scope="session")
def overfit_vae(blob_data):
    records, split = blob_data
    cfg = TrainConfig(epochs=400, eval_every=25, snapshot_every=200)
    series = train_vae(stack(records, split.target_member), stack(records, split.target_nonmember), cfg,
                       make_rng(5, 4))
    return series, handle_for(series.last().model)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
