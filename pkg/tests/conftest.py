import datetime as dt

import numpy as np
import pytest

from ttfm.data import ALWAYS_OPEN, NEVER_CLOSED, Panel
from ttfm.model import TTFM, LatentParams, ModelDims
from ttfm.observables import ObservableLayout


def random_panel(rng, n_users, n_restaurants, n_visits, n_weeks=3, ragged=True):
    """Panel with per-user random choice sets (at least two slots each)."""
    width = n_restaurants
    alt_idx = np.zeros((n_users, width), dtype=np.int64)
    alt_mask = np.zeros((n_users, width), dtype=bool)
    for u in range(n_users):
        n = rng.integers(2, n_restaurants + 1) if ragged else n_restaurants
        alt_idx[u, :n] = np.sort(rng.choice(n_restaurants, n, replace=False))
        alt_mask[u, :n] = True
    users = rng.integers(n_users, size=n_visits)
    pos = np.array([rng.integers(alt_mask[u].sum()) for u in users], dtype=np.int64)
    return Panel(
        user_ids=[f"u{n:03d}" for n in range(n_users)],
        restaurant_ids=[f"r{n:03d}" for n in range(n_restaurants)],
        alt_idx=alt_idx, alt_mask=alt_mask,
        log_dist=np.where(alt_mask, np.log(rng.uniform(0.05, 15.0, alt_idx.shape)), 0.0),
        open_day=np.full(n_restaurants, ALWAYS_OPEN), close_day=np.full(n_restaurants, NEVER_CLOSED),
        n_weeks=n_weeks, users=users, restaurants=alt_idx[users, pos],
        days=rng.integers(7 * n_weeks, size=n_visits), pos=pos)


def random_model(rng, n_users=3, n_restaurants=4, n_weeks=3, k1=4, k2=4, k3=2,
                 counts=(1, 2, 3), scale=0.5):
    layout = ObservableLayout.from_counts(*counts)
    dims = ModelDims(n_users, n_restaurants, n_weeks, layout.k_obs, k1, k2, k3)
    x = rng.normal(size=(n_restaurants, layout.k_obs))
    model = TTFM(dims, x, layout)
    params = {k: scale * rng.normal(size=s) for k, s in dims.shapes().items()}
    for k, m in model.masks.items():
        params[k] = params[k] * m
    return model, params


def as_latent(params):
    return LatentParams.from_dict(params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


START = dt.date(2017, 1, 2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
