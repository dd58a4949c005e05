"""Synthetic ground truth, visit panels and raw pings drawn from the model itself.

Restaurants and users are scattered over a square box (optionally with
density clusters). Restaurants are kept apart so no two share or touch a
geohash8 cell, and users' morning and home geohash7 cells avoid every
restaurant's 3x3 geohash8 patch. Those two rules make the ping round trip
exact: a simulated lunch visit always maps to one restaurant and is never
excluded as a home or workplace artefact.
"""

import datetime as dt
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import geo
from .data import build_panel
from .errors import ConfigError
from .model import TTFM, LatentParams, ModelDims, PriorSpec, block_mask
from .observables import build_observables
from .pipeline import (AREA_PRECISION, BROAD_PRECISION, NARROW_PRECISION, VISIT_PRECISION,
                       MorningLocation, PipelineConfig, Ping, RestaurantIndex,
                       RestaurantRecord, Visit, build_choice_set, week_index)

logger = logging.getLogger(__name__)

MILES_PER_DEG_LAT = 69.0
CATEGORY_NAMES = ("american", "burgers", "chinese", "indian", "italian", "japanese",
                  "mexican", "pizza", "salads", "sandwiches", "thai", "vietnamese")
MORNING_TIMES = (dt.time(9, 30), dt.time(10, 0), dt.time(10, 30))


@dataclass
class SynthSpec:
    n_users: int = 500
    n_restaurants: int = 200
    n_weeks: int = 40
    visits_per_user: int = 50
    visits_distribution: str = "fixed"   # fixed | poisson
    k1: int = 8
    k2: int = 4
    k3: int = 5
    prior: PriorSpec = field(default_factory=PriorSpec)
    center_lat: float = 37.45
    center_lon: float = -122.15
    box_miles: float = 10.0
    n_clusters: int = 0
    cluster_sd_miles: float = 0.75
    cluster_fraction: float = 0.5
    n_categories: int = 6
    second_category_prob: float = 0.3
    price_probs: tuple = (0.35, 0.4, 0.2, 0.05)
    rating_mean: float = 3.7
    rating_sd: float = 0.6
    rating_missing_prob: float = 0.1
    churn_fraction: float = 0.0
    distance_loading_mean: float = 0.0
    sample_start: dt.date = dt.date(2017, 1, 2)
    seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_restaurants", "n_weeks", "visits_per_user"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synth: {name} must be positive, got {getattr(self, name)}")
        if self.visits_distribution not in ("fixed", "poisson"):
            raise ConfigError(f"synth: unknown visits_distribution {self.visits_distribution!r}")
        if not 1 <= self.n_categories <= len(CATEGORY_NAMES):
            raise ConfigError(f"synth: n_categories must be in 1..{len(CATEGORY_NAMES)}")
        if self.k1 % 4 or self.k2 % 4 or min(self.k1, self.k2, self.k3) < 0:
            raise ConfigError("synth: k1 and k2 must be non-negative multiples of 4")
        if not self.box_miles > 0:
            raise ConfigError("synth: box_miles must be positive")
        if len(self.price_probs) != 4 or abs(sum(self.price_probs) - 1) > 1e-9:
            raise ConfigError("synth: price_probs needs four probabilities summing to 1")
        if not 0 <= self.churn_fraction <= 1:
            raise ConfigError("synth: churn_fraction must lie in [0, 1]")

    @property
    def sample_end(self):
        return self.sample_start + dt.timedelta(days=7 * self.n_weeks - 1)

    def pipeline_config(self, **overrides):
        return PipelineConfig(sample_start=self.sample_start, sample_end=self.sample_end,
                              **overrides)

    def weekdays(self):
        monday = self.sample_start - dt.timedelta(days=self.sample_start.weekday())
        days = [monday + dt.timedelta(days=7 * w + d)
                for w in range(self.n_weeks) for d in range(5)]
        return [d for d in days if self.sample_start <= d <= self.sample_end]


@dataclass
class Geometry:
    user_ids: list
    morning: dict
    homes: dict
    restaurants: list
    choice_sets: list
    area: frozenset
    bounds: geo.BBox
    sample_start: dt.date
    n_weeks: int

    def panel(self, visits=()):
        return build_panel(self.choice_sets, list(visits), self.restaurants,
                           self.sample_start, self.n_weeks)


def _box(spec):
    half_lat = spec.box_miles / 2 / MILES_PER_DEG_LAT
    half_lon = half_lat / math.cos(math.radians(spec.center_lat))
    return geo.BBox(spec.center_lat - half_lat, spec.center_lat + half_lat,
                    spec.center_lon - half_lon, spec.center_lon + half_lon)


def _point_sampler(spec, box, rng):
    """Closure drawing points uniformly over the box or around cluster centres."""
    centres = np.column_stack([rng.uniform(box.lat_min, box.lat_max, spec.n_clusters),
                               rng.uniform(box.lon_min, box.lon_max, spec.n_clusters)])
    sd_lat = spec.cluster_sd_miles / MILES_PER_DEG_LAT
    sd_lon = sd_lat / math.cos(math.radians(spec.center_lat))

    def draw():
        while True:
            if spec.n_clusters and rng.random() < spec.cluster_fraction:
                c = centres[rng.integers(spec.n_clusters)]
                lat, lon = c[0] + rng.normal(0, sd_lat), c[1] + rng.normal(0, sd_lon)
            else:
                lat = rng.uniform(box.lat_min, box.lat_max)
                lon = rng.uniform(box.lon_min, box.lon_max)
            if box.contains((lat, lon)):
                return float(lat), float(lon)
    return draw


def _area_cells(box):
    """Every geohash5 cell meeting the box."""
    h, w = geo.cell_size(AREA_PRECISION)
    cells = set()
    for lat in np.append(np.arange(box.lat_min, box.lat_max, h / 2), box.lat_max):
        for lon in np.append(np.arange(box.lon_min, box.lon_max, w / 2), box.lon_max):
            cells.add(geo.encode(lat, lon, AREA_PRECISION))
    return frozenset(cells)


def _rating(spec, rng, n_mean):
    if rng.random() < spec.rating_missing_prob:
        return None, 0
    r = float(np.clip(np.round(2 * rng.normal(spec.rating_mean, spec.rating_sd)) / 2, 1, 5))
    return r, int(rng.poisson(n_mean)) + 1


def _restaurants(spec, draw, rng):
    taken = set()
    out = []
    cats = CATEGORY_NAMES[:spec.n_categories]
    churn = rng.random(spec.n_restaurants) < spec.churn_fraction
    days = spec.weekdays()
    lo, hi = int(0.3 * len(days)), max(int(0.7 * len(days)), int(0.3 * len(days)) + 1)
    for n in range(spec.n_restaurants):
        for _ in range(10_000):
            lat, lon = draw()
            cell = geo.encode(lat, lon, VISIT_PRECISION)
            if cell not in taken:
                break
        else:
            raise ConfigError("synth: cannot place restaurants without overlapping patches")
        taken |= {cell} | geo.adjacent(cell)
        major = cats[rng.integers(len(cats))]
        labels = (major,)
        if len(cats) > 1 and rng.random() < spec.second_category_prob:
            other = [c for c in cats if c != major]
            labels += (other[rng.integers(len(other))],)
        price = int(rng.choice(4, p=spec.price_probs)) + 1
        r_all, n_all = _rating(spec, rng, 120)
        r_in, n_in = _rating(spec, rng, 15)
        open_date = close_date = None
        if churn[n]:
            change = days[rng.integers(lo, hi)]
            if rng.random() < 0.5:
                open_date = change
            else:
                close_date = change
        out.append(RestaurantRecord(
            restaurant_id=f"r{n:05d}", name=f"Restaurant {n:05d}", lat=lat, lon=lon,
            price_range=price, rating_overall=r_all, n_ratings_overall=n_all,
            rating_in_sample=r_in, n_ratings_in_sample=n_in, categories=labels,
            open_date=open_date, close_date=close_date,
            city="city-" + geo.encode(lat, lon, 4)))
    return out


def _users(spec, draw, rng, box, blocked_gh7):
    morning, homes = {}, {}
    ids = [f"u{n:05d}" for n in range(spec.n_users)]
    home_sd = 1.0 / MILES_PER_DEG_LAT
    for uid in ids:
        for _ in range(10_000):
            lat, lon = draw()
            narrow = geo.encode(lat, lon, NARROW_PRECISION)
            if narrow in blocked_gh7:
                continue
            c = geo.decode(narrow)
            hlat, hlon = c.lat + rng.normal(0, home_sd), c.lon + rng.normal(0, home_sd)
            if not box.contains((hlat, hlon)):
                continue
            home = geo.encode(hlat, hlon, NARROW_PRECISION)
            if home in blocked_gh7:
                continue
            break
        else:
            raise ConfigError("synth: cannot place users away from restaurant patches")
        morning[uid] = MorningLocation(uid, narrow[:BROAD_PRECISION], narrow, 1.0, 1.0, 1.0)
        homes[uid] = home
    return ids, morning, homes


def generate_geometry(spec, rng):
    box = _box(spec)
    draw = _point_sampler(spec, box, rng)
    restaurants = _restaurants(spec, draw, rng)
    blocked = set().union(*RestaurantIndex(restaurants).patch_gh7.values())
    user_ids, morning, homes = _users(spec, draw, rng, box, blocked)
    config = spec.pipeline_config()
    choice_sets = [build_choice_set(morning[u], restaurants, config) for u in user_ids]
    return Geometry(user_ids, morning, homes, restaurants, choice_sets, _area_cells(box), box,
                    spec.sample_start, spec.n_weeks)


def sample_prior(dims, x, prior, masks, rng):
    """One draw of every latent family from the hierarchical prior."""
    sd = {k: math.sqrt(prior.family_variance(k)) for k in
          ("lam", "theta", "gamma", "mu", "delta", "H_alpha", "H_beta")}
    shapes = dims.shapes()
    H_a = rng.normal(0, sd["H_alpha"], shapes["H_alpha"]) * masks["H_alpha"]
    H_b = rng.normal(0, sd["H_beta"], shapes["H_beta"]) * masks["H_beta"]
    return LatentParams(
        lam=rng.normal(0, sd["lam"], shapes["lam"]),
        theta=rng.normal(0, sd["theta"], shapes["theta"]),
        alpha=x @ H_a.T + rng.normal(0, math.sqrt(prior.sigma2_alpha), shapes["alpha"]),
        gamma=rng.normal(0, sd["gamma"], shapes["gamma"]),
        beta=x @ H_b.T + rng.normal(0, math.sqrt(prior.sigma2_beta), shapes["beta"]),
        mu=rng.normal(0, sd["mu"], shapes["mu"]),
        delta=rng.normal(0, sd["delta"], shapes["delta"]),
        H_alpha=H_a, H_beta=H_b)


def generate_ground_truth(spec, rng=None):
    """Sample geometry, covariates and latents; returns (truth, observables, geometry).

    Latent rows follow the sorted user and restaurant ids. With a nonzero
    ``distance_loading_mean`` every entry of gamma and beta is shifted by
    it, making gamma . beta strongly positive on average.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    geometry = generate_geometry(spec, rng)
    obs = build_observables(geometry.restaurants, CATEGORY_NAMES[:spec.n_categories])
    dims = ModelDims(spec.n_users, spec.n_restaurants, spec.n_weeks, obs.layout.k_obs,
                     spec.k1, spec.k2, spec.k3)
    masks = {"H_alpha": block_mask(dims.k1, obs.layout), "H_beta": block_mask(dims.k2, obs.layout)}
    truth = sample_prior(dims, obs.x, spec.prior, masks, rng)
    if spec.distance_loading_mean:
        truth.gamma += spec.distance_loading_mean
        truth.beta += spec.distance_loading_mean
    return truth, obs, geometry


def sample_choices(U, mask, rng, method="categorical"):
    """Index of one draw per row from softmax(U) over ``mask``.

    ``categorical`` inverts the CDF with one uniform per row; ``gumbel``
    takes the argmax of utilities plus standard Gumbel noise.
    """
    U = np.asarray(U, float)
    mask = np.asarray(mask, bool)
    if method == "gumbel":
        noisy = np.where(mask, U + rng.gumbel(size=U.shape), -np.inf)
        return noisy.argmax(axis=1)
    if method != "categorical":
        raise ValueError(f"unknown sampler {method!r}")
    Um = np.where(mask, U, -np.inf)
    p = np.exp(Um - Um.max(axis=1, keepdims=True))
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(U))[:, None] * cdf[:, -1:]
    pick = (cdf <= u).sum(axis=1)
    # guard against u landing on the final edge through rounding
    last = mask.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)
    return np.minimum(pick, last)


def _user_rng(root, index):
    return np.random.default_rng([root, index])


def simulate_visits(truth, geometry, spec, rng=None, method="categorical", dwell_minutes=6.0,
                    ping_count=3):
    """Visits drawn from the exact softmax, one per sampled weekday per user.

    Each user gets an independent stream derived from a root seed and the
    user's index, so the panel does not depend on processing order.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    root = int(rng.integers(2**63 - 1))
    panel = geometry.panel()
    model = TTFM(truth.dims, np.zeros((truth.dims.n_restaurants, truth.dims.k_obs)))
    params = truth.as_dict()
    days = spec.weekdays()
    monday = geometry.sample_start - dt.timedelta(days=geometry.sample_start.weekday())
    visits = []
    for u, uid in enumerate(panel.user_ids):
        urng = _user_rng(root, u)
        n = spec.visits_per_user
        if spec.visits_distribution == "poisson":
            n = max(1, int(urng.poisson(spec.visits_per_user)))
        n = min(n, len(days))
        chosen_days = sorted(urng.choice(len(days), size=n, replace=False))
        dates = [days[k] for k in chosen_days]
        day_nums = np.array([(d - monday).days for d in dates], dtype=np.int64)
        users = np.full(n, u)
        mask = panel.available(users, day_nums)
        ok = mask.any(axis=1)
        U = model.utilities(params, users, day_nums // 7, panel.alt_idx[users],
                            panel.log_dist[users])
        slots = sample_choices(U[ok], mask[ok], urng, method)
        for d, a in zip(np.asarray(dates, dtype=object)[ok], slots):
            rid = panel.restaurant_ids[panel.alt_idx[u, a]]
            visits.append(Visit(uid, rid, d, week_index(d, geometry.sample_start),
                                dwell_minutes, ping_count))
    return visits


def _jitter_in(code, rng, margin=0.2):
    b = geo.bbox(code)
    dl = (b.lat_max - b.lat_min) * margin
    dn = (b.lon_max - b.lon_min) * margin
    return (float(rng.uniform(b.lat_min + dl, b.lat_max - dl)),
            float(rng.uniform(b.lon_min + dn, b.lon_max - dn)))


def simulate_pings(visits, geometry, noise=0.0, rng=None, lunch_pings=3, spacing_minutes=3.0):
    """Raw pings consistent with ``visits``.

    Every user pings three times each weekday morning inside the narrow
    morning cell; each visit yields ``lunch_pings`` pings ``spacing_minutes``
    apart inside the restaurant's geohash8 cell. ``noise`` is the mean
    number of extra pings per user-day, placed anywhere in the box in the
    afternoon or evening.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    monday = geometry.sample_start - dt.timedelta(days=geometry.sample_start.weekday())
    all_days = [monday + dt.timedelta(days=k) for k in range(7 * geometry.n_weeks)]
    all_days = [d for d in all_days if d >= geometry.sample_start]
    rests = {r.restaurant_id: r for r in geometry.restaurants}
    by_user = {}
    for v in visits:
        by_user.setdefault(v.user_id, []).append(v)
    box = geometry.bounds
    span = dt.timedelta(minutes=spacing_minutes * max(lunch_pings - 1, 0))
    pings = []
    for uid in geometry.user_ids:
        narrow = geometry.morning[uid].narrow
        for day in all_days:
            if day.weekday() < 5:
                for t in MORNING_TIMES:
                    lat, lon = _jitter_in(narrow, rng)
                    pings.append(Ping(uid, dt.datetime.combine(day, t), lat, lon, 10.0))
            if noise > 0:
                for _ in range(rng.poisson(noise)):
                    minute = int(rng.integers(14 * 60, 22 * 60))
                    ts = dt.datetime.combine(day, dt.time(minute // 60, minute % 60))
                    pings.append(Ping(uid, ts, float(rng.uniform(box.lat_min, box.lat_max)),
                                      float(rng.uniform(box.lon_min, box.lon_max)), 50.0))
        for v in by_user.get(uid, ()):
            cell = rests[v.restaurant_id].geohash8
            latest = 13 * 60 + 30 - int(math.ceil(span.total_seconds() / 60))
            start = dt.datetime.combine(v.date, dt.time(11, 30)) + dt.timedelta(
                minutes=int(rng.integers(0, latest - (11 * 60 + 30) + 1)))
            for k in range(lunch_pings):
                lat, lon = _jitter_in(cell, rng)
                ts = start + dt.timedelta(minutes=spacing_minutes * k)
                pings.append(Ping(uid, ts, lat, lon, 10.0))
    pings.sort(key=lambda p: (p.user_id, p.timestamp))
    return pings


def synthesize(spec, method="categorical"):
    """Ground truth, observables, geometry and visits from ``spec.seed``."""
    root = np.random.SeedSequence(spec.seed)
    g_seq, v_seq = root.spawn(2)
    truth, obs, geometry = generate_ground_truth(spec, np.random.default_rng(g_seq))
    visits = simulate_visits(truth, geometry, spec, np.random.default_rng(v_seq), method)
    return truth, obs, geometry, visits



def tiny_panel(rng, n_users=4, n_restaurants=2, n_visits=20, n_weeks=1, probs=None):
    """Every user sees every restaurant at a random distance; choices uniform or ``probs``."""
    from .data import ALWAYS_OPEN, NEVER_CLOSED, Panel

    alt_idx = np.tile(np.arange(n_restaurants), (n_users, 1))
    users = rng.integers(n_users, size=n_visits)
    p = np.full(n_restaurants, 1.0 / n_restaurants) if probs is None else np.asarray(probs)
    pos = rng.choice(n_restaurants, size=n_visits, p=p)
    return Panel(
        user_ids=[f"u{n}" for n in range(n_users)],
        restaurant_ids=[f"r{n}" for n in range(n_restaurants)],
        alt_idx=alt_idx, alt_mask=np.ones_like(alt_idx, dtype=bool),
        log_dist=np.log(rng.uniform(0.2, 5.0, size=alt_idx.shape)),
        open_day=np.full(n_restaurants, ALWAYS_OPEN), close_day=np.full(n_restaurants, NEVER_CLOSED),
        n_weeks=n_weeks, users=users, restaurants=pos.copy(),
        days=rng.integers(7 * n_weeks, size=n_visits), pos=pos)


def lambda_only_instance(rng, n_users=4, n_visits=20, prior=None):
    """TTFM with no factors and two restaurants: the latents are the two intercepts."""
    from .oracles import LinearChoiceDesign

    prior = prior or PriorSpec()
    panel = tiny_panel(rng, n_users, 2, n_visits, probs=rng.dirichlet([2.0, 2.0]))
    dims = ModelDims(n_users, 2, 1, 1, k1=0, k2=0, k3=0)
    model = TTFM(dims, rng.normal(size=(2, 1)), prior=prior)
    feats = np.broadcast_to(np.eye(2), (n_visits, 2, 2)).copy()
    design = LinearChoiceDesign(np.zeros((n_visits, 2)), feats, np.ones((n_visits, 2), bool),
                                panel.pos.copy(), np.full(2, math.sqrt(prior.var_lambda)))
    return model, panel, design


def mnl_instance(rng, n_users=4, n_restaurants=3, n_visits=20, fixed_distance_coef=None):
    """MNL with one covariate (plus the distance slope unless fixed)."""
    from .model import MNL
    from .oracles import LinearChoiceDesign

    panel = tiny_panel(rng, n_users, n_restaurants, n_visits)
    x = rng.normal(size=(n_restaurants, 1))
    model = MNL(x, fixed_distance_coef=fixed_distance_coef)
    logd = panel.log_dist[panel.users]
    xv = np.broadcast_to(x[:, 0], logd.shape)
    if fixed_distance_coef is None:
        feats, offset = np.stack([xv, -logd], axis=2), np.zeros_like(logd)
        sd = np.sqrt([model.coef_var, model.dist_var])
    else:
        feats, offset = xv[..., None].copy(), -fixed_distance_coef * logd
        sd = np.sqrt([model.coef_var])
    design = LinearChoiceDesign(offset, feats, np.ones_like(logd, bool), panel.pos.copy(), sd)
    return model, panel, design
