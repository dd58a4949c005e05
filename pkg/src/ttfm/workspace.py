"""Loading datasets and fitted models from a run's directories."""

import os
from dataclasses import dataclass

import numpy as np

from . import io
from .data import build_panel
from .errors import DataError
from .inference import posterior_mean_params
from .model import MNL, TTFM, ModelDims
from .observables import build_observables
from .snapshot import load_posterior

DATA_FILES = {"restaurants": "restaurants.csv", "visits": "visits.csv",
              "choice_sets": "choice_sets.csv", "morning": "morning.csv",
              "events": "events.csv"}


@dataclass
class Dataset:
    restaurants: list
    visits: list
    choice_sets: list
    morning: dict
    panel: object
    obs: object
    paths: dict

    @property
    def records(self):
        """Restaurant records in panel order."""
        by_id = {r.restaurant_id: r for r in self.restaurants}
        return [by_id[r] for r in self.panel.restaurant_ids]


def load_dataset(data_dir, pipeline_config):
    paths = {k: os.path.join(data_dir, f) for k, f in DATA_FILES.items()}
    for k in ("restaurants", "visits", "choice_sets"):
        if not os.path.exists(paths[k]):
            raise DataError(f"{paths[k]}: missing dataset file")
    restaurants = io.read_restaurants(paths["restaurants"])
    visits = io.read_visits(paths["visits"])
    choice_sets = io.read_choice_sets(paths["choice_sets"])
    morning = io.read_morning(paths["morning"]) if os.path.exists(paths["morning"]) else {}
    if not visits:
        raise DataError(f"{paths['visits']}: no visits")
    used = {r for cs in choice_sets for r in cs.restaurant_ids}
    rests = [r for r in restaurants if r.restaurant_id in used]
    known = {r.restaurant_id for r in rests}
    missing = sorted(used - known)
    if missing:
        raise DataError(f"{paths['choice_sets']}: restaurant {missing[0]} absent from "
                        f"{paths['restaurants']}")
    n_weeks = max(pipeline_config.n_weeks, max(v.week_index for v in visits) + 1)
    panel = build_panel(choice_sets, visits, rests, pipeline_config.sample_start, n_weeks)
    obs = build_observables(rests)
    return Dataset(rests, visits, choice_sets, morning, panel, obs,
                   {k: p for k, p in paths.items() if os.path.exists(p)})


def make_model(kind, dataset, k1=8, k2=4, k3=5, prior=None):
    p, o = dataset.panel, dataset.obs
    if kind == "ttfm":
        dims = ModelDims(p.n_users, p.n_restaurants, p.n_weeks, o.layout.k_obs, k1, k2, k3)
        return TTFM(dims, o.x, o.layout, prior)
    if kind == "mnl":
        return MNL(o.x)
    raise ValueError(f"unknown model kind {kind!r}")


def snapshot_path(fit_dir, kind):
    return os.path.join(fit_dir, f"posterior_{kind}.snapshot")


def load_fitted(fit_dir, kind, dataset, prior=None):
    """(model, posterior-mean params, meta) from a fit directory."""
    path = snapshot_path(fit_dir, kind)
    if not os.path.exists(path):
        raise DataError(f"{path}: no fitted {kind} snapshot")
    meta, q = load_posterior(path)
    if kind == "ttfm":
        model = make_model(kind, dataset, int(meta["k1"]), int(meta["k2"]), int(meta["k3"]),
                           prior)
    else:
        model = make_model(kind, dataset)
    expected = {k: s.shape for k, s in model.families().items()}
    got = {k: v.shape for k, v in q.means.items()}
    if expected != got:
        raise DataError(f"{path}: snapshot shapes do not match the dataset")
    return model, posterior_mean_params(q), meta


def read_split(path, n_visits):
    labels = {"train": 0, "validation": 1, "test": 2}
    parts = np.full(n_visits, -1)
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"{path}: cannot open split ({exc.strerror}); run fit first") from None
    with fh:
        next(fh, None)
        for n, line in enumerate(fh):
            label = line.rstrip("\n").split(",")[-1]
            if n >= n_visits or label not in labels:
                raise DataError(f"{path}:{n + 2}: split does not match the dataset")
            parts[n] = labels[label]
    if (parts < 0).any():
        raise DataError(f"{path}: split does not cover every visit")
    return tuple(np.flatnonzero(parts == k) for k in range(3))
