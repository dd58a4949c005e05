"""Prediction-only counterfactuals on a fitted model.

Sessions are observed visit contexts ``(user, day)`` given as indices into
a ``Panel``. Restaurant availability in a session follows the panel's
open/close dates unless a roster (boolean per restaurant) is supplied.
"""

import datetime as dt
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import geo
from .data import _day_number
from .errors import DataError
from .evaluation import DEFAULT_BANDS, band_of
from .model import softmax_rows

logger = logging.getLogger(__name__)

DEGENERATE_SHARE = 1e-6


def replacement_utility(utility_i_prime, sensitivity, d_site, d_own):
    """Utility of i' moved to site i: only the log-distance term changes.

    ``utility_i_prime`` is i''s utility at its own distance ``d_own`` and
    ``sensitivity`` is gamma_u . beta_i'.
    """
    if not (d_site > 0 and d_own > 0):
        raise ValueError("distances must be positive")
    return utility_i_prime - sensitivity * (math.log(d_site) - math.log(d_own))


def _sessions(panel, sessions):
    return np.arange(panel.n_visits) if sessions is None else np.asarray(sessions, np.int64)


def site_sessions(panel, site, sessions=None):
    """Sessions whose user has ``site`` in the choice set, with its slot."""
    sessions = _sessions(panel, sessions)
    slots = panel.slot_lookup()[panel.users[sessions], site]
    keep = slots >= 0
    return sessions[keep], slots[keep]


def _base(model, params, panel, sessions, roster):
    users = panel.users[sessions]
    U = model.utilities(params, users, panel.weeks[sessions], panel.alt_idx[users],
                        panel.log_dist[users])
    mask = panel.available(users, panel.days[sessions], roster)
    return users, U, mask


def replacement_demands(model, params, panel, site, candidates, sessions=None, roster=None):
    """Demand_{i';site} for every i' in ``candidates`` (summed over sessions).

    The site's slot holds i' with its own characteristics at the site's
    distance; the site's original restaurant and i''s own slot leave the
    choice set. The site is treated as open in every session.
    """
    ss, slot = site_sessions(panel, site, sessions)
    candidates = np.atleast_1d(np.asarray(candidates, np.int64))
    if len(ss) == 0:
        return np.zeros(len(candidates))
    users, U, mask = _base(model, params, panel, ss, roster)
    rows = np.arange(len(ss))
    mask[rows, slot] = True
    logd_site = panel.log_dist[users, slot][:, None]
    lookup = panel.slot_lookup()
    weeks = panel.weeks[ss]
    out = np.empty(len(candidates))
    for n, c in enumerate(candidates):
        Uc = U.copy()
        Uc[rows, slot] = model.utilities(params, users, weeks, np.full((len(ss), 1), c),
                                         logd_site)[:, 0]
        mc = mask.copy()
        own = lookup[users, c]
        hit = (own >= 0) & (own != slot)
        mc[rows[hit], own[hit]] = False
        p, _ = softmax_rows(Uc, mc)
        out[n] = p[rows, slot].sum()
    return out


def counterfactual_demand(model, params, panel, i_prime, site, sessions=None, roster=None):
    return float(replacement_demands(model, params, panel, site, [i_prime], sessions, roster)[0])


def predicted_demand(model, params, panel, restaurant, sessions=None, roster=None):
    """Model-predicted visits to ``restaurant`` over sessions (site forced open)."""
    ss, slot = site_sessions(panel, restaurant, sessions)
    if len(ss) == 0:
        return 0.0
    _, U, mask = _base(model, params, panel, ss, roster)
    rows = np.arange(len(ss))
    mask[rows, slot] = True
    p, _ = softmax_rows(U, mask)
    return float(p[rows, slot].sum())


def all_demands(model, params, panel, sessions=None, roster=None):
    """Predicted visits to every restaurant with date-based availability."""
    ss = _sessions(panel, sessions)
    out = np.zeros(panel.n_restaurants)
    for chunk in np.array_split(ss, max(1, len(ss) // 20_000)):
        users, U, mask = _base(model, params, panel, chunk, roster)
        p, _ = softmax_rows(U, mask)
        out += np.bincount(panel.alt_idx[users].ravel(), weights=np.where(mask, p, 0).ravel(),
                           minlength=panel.n_restaurants)
    return out


# ------------------------------------------------------------ open/close events

@dataclass(frozen=True)
class OpenCloseEvent:
    restaurant_id: str
    kind: str
    change_date: dt.date
    period1: tuple
    period2: tuple

    def __post_init__(self):
        if self.kind not in ("opening", "closing"):
            raise ValueError(f"event kind must be opening or closing, got {self.kind!r}")
        for a, b in (self.period1, self.period2):
            if a > b:
                raise ValueError("period start after end")
        if not self.period1[1] < self.period2[0]:
            raise ValueError("periods must be disjoint and ordered")

    @property
    def open_period(self):
        return self.period2 if self.kind == "opening" else self.period1

    @property
    def closed_period(self):
        return self.period1 if self.kind == "opening" else self.period2

    @property
    def event_id(self):
        return f"{self.restaurant_id}:{self.kind}:{self.change_date.isoformat()}"


@dataclass
class EventCohort:
    event: OpenCloseEvent
    target: int
    users: np.ndarray
    weights: np.ndarray
    eligible_restaurants: np.ndarray
    open_sessions: np.ndarray
    closed_sessions: np.ndarray
    open_roster: np.ndarray
    closed_roster: np.ndarray
    consideration: dict = field(default_factory=dict)


def _period_days(panel, period, sample_start):
    return _day_number(period[0], sample_start), _day_number(period[1], sample_start)


def period_roster(panel, lo, hi):
    """Restaurants open on every day of [lo, hi]."""
    return (panel.open_day <= lo) & (panel.close_day > hi)


def build_cohort(panel, event, sample_start, radius_miles=3.0, min_consideration=500):
    """Users within ``radius_miles`` of the target and restaurants they often consider.

    A restaurant is eligible when it is available in at least
    ``min_consideration`` sessions of cohort users in each period. User
    weights are shares of the cohort's open-period visits to eligible
    restaurants.
    """
    rix = {r: k for k, r in enumerate(panel.restaurant_ids)}
    if event.restaurant_id not in rix:
        raise DataError(f"event target {event.restaurant_id} is not in the panel")
    target = rix[event.restaurant_id]
    lookup = panel.slot_lookup()
    slot = lookup[:, target]
    near = np.flatnonzero(slot >= 0)
    near = near[np.exp(panel.log_dist[near, slot[near]]) <= radius_miles]
    in_cohort = np.zeros(panel.n_users, bool)
    in_cohort[near] = True
    o_lo, o_hi = _period_days(panel, event.open_period, sample_start)
    c_lo, c_hi = _period_days(panel, event.closed_period, sample_start)
    days = panel.days
    open_s = np.flatnonzero(in_cohort[panel.users] & (days >= o_lo) & (days <= o_hi))
    closed_s = np.flatnonzero(in_cohort[panel.users] & (days >= c_lo) & (days <= c_hi))

    def considered(ss):
        users = panel.users[ss]
        m = panel.available(users, days[ss])
        return np.bincount(panel.alt_idx[users][m], minlength=panel.n_restaurants)

    n_open, n_closed = considered(open_s), considered(closed_s)
    eligible = np.flatnonzero((n_open >= min_consideration) & (n_closed >= min_consideration))
    elig_mask = np.zeros(panel.n_restaurants, bool)
    elig_mask[eligible] = True
    counted = open_s[elig_mask[panel.restaurants[open_s]]]
    counts = np.bincount(panel.users[counted], minlength=panel.n_users)[near].astype(float)
    weights = counts / counts.sum() if counts.sum() > 0 else np.zeros(len(near))
    open_roster = period_roster(panel, o_lo, o_hi)
    closed_roster = period_roster(panel, c_lo, c_hi)
    open_roster[target] = True
    closed_roster[target] = False
    return EventCohort(event, target, near, weights, eligible, open_s, closed_s,
                       open_roster, closed_roster,
                       {"open": n_open, "closed": n_closed})


def _user_shares(model, params, panel, sessions, roster, users):
    """(n_users_in_cohort, R) mean choice probabilities per cohort user."""
    R = panel.n_restaurants
    pos = {u: k for k, u in enumerate(users)}
    tot = np.zeros((len(users), R))
    n = np.zeros(len(users))
    if len(sessions):
        su, U, mask = _base(model, params, panel, sessions, roster)
        p, _ = softmax_rows(U, mask)
        p = np.where(mask, p, 0.0)
        rowsel = np.array([pos[u] for u in su])
        flat = rowsel[:, None] * R + panel.alt_idx[su]
        tot = np.bincount(flat.ravel(), weights=p.ravel(), minlength=len(users) * R).reshape(-1, R)
        n = np.bincount(rowsel, minlength=len(users)).astype(float)
    return tot, n


def market_shares(model, params, panel, cohort, regime="target-open"):
    """Cohort-weighted shares per restaurant under a roster regime.

    ``target-open``: open-period sessions, open-period roster with the target.
    ``target-closed``: closed-period sessions, closed-period roster without it.
    ``baseline``: open-period sessions, open-period roster without the target.
    Users with no sessions in the period drop out and the rest are reweighted.
    """
    if regime == "target-open":
        ss, roster = cohort.open_sessions, cohort.open_roster
    elif regime == "target-closed":
        ss, roster = cohort.closed_sessions, cohort.closed_roster
    elif regime == "baseline":
        ss, roster = cohort.open_sessions, cohort.open_roster.copy()
        roster[cohort.target] = False
    else:
        raise ValueError(f"unknown regime {regime!r}")
    tot, n = _user_shares(model, params, panel, ss, roster, cohort.users)
    w = np.where(n > 0, cohort.weights, 0.0)
    if w.sum() <= 0:
        return np.zeros(panel.n_restaurants)
    w = w / w.sum()
    return (w / np.maximum(n, 1)) @ tot


@dataclass
class RedistributionRow:
    event_id: str
    target_share: float
    band_shares: np.ndarray
    deltas: np.ndarray


def band_labels(edges):
    edges = list(edges)
    labels = [f"{edges[k]:g}-{edges[k + 1]:g}" for k in range(len(edges) - 1)]
    return labels + [f"{edges[-1]:g}-inf"]


def restaurant_distances(restaurants_by_index, target):
    """Miles from restaurant ``target`` to every restaurant (list of records)."""
    lat = np.array([r.lat for r in restaurants_by_index])
    lon = np.array([r.lon for r in restaurants_by_index])
    return geo.haversine_matrix(lat[[target]], lon[[target]], lat, lon)[0]


def redistribution_by_distance(model, params, panel, cohort, distances,
                               band_edges=DEFAULT_BANDS):
    """Where the target's market share goes, by distance band from the target.

    Per restaurant: (closed-regime share - open-regime share) minus the
    baseline between-period change (closed-regime share minus the
    open-period share without the target), divided by the target's
    open-regime share. Bands are (lo, hi] with distance 0 in the first
    band and an extra band past the last edge, so shares sum to one.
    """
    edges = np.asarray(band_edges, float)
    s_open = market_shares(model, params, panel, cohort, "target-open")
    s_closed = market_shares(model, params, panel, cohort, "target-closed")
    s_base = market_shares(model, params, panel, cohort, "baseline")
    target_share = float(s_open[cohort.target])
    if not target_share > DEGENERATE_SHARE:
        raise DataError(f"degenerate-event: {cohort.event.event_id} has target share "
                        f"{target_share:.3g}")
    deltas = (s_closed - s_open) - (s_closed - s_base)
    deltas[cohort.target] = 0.0
    d = np.asarray(distances, float)
    b = band_of(np.maximum(d, np.nextafter(edges[0], np.inf)), edges)
    b = np.where(d > edges[-1], len(edges) - 1, b)
    shares = np.bincount(b, weights=deltas, minlength=len(edges)) / target_share
    return RedistributionRow(cohort.event.event_id, target_share, shares, deltas)


def _observed_shares(panel, cohort, sessions):
    """Cohort-weighted empirical visit shares per restaurant in ``sessions``."""
    R = panel.n_restaurants
    pos = np.full(panel.n_users, -1)
    pos[cohort.users] = np.arange(len(cohort.users))
    rows = pos[panel.users[sessions]]
    tot = np.bincount(rows * R + panel.restaurants[sessions],
                      minlength=len(cohort.users) * R).reshape(-1, R).astype(float)
    n = tot.sum(axis=1)
    w = np.where(n > 0, cohort.weights, 0.0)
    if w.sum() <= 0:
        return np.zeros(R)
    return (w / w.sum() / np.maximum(n, 1)) @ tot


def actual_redistribution(panel, cohort, distances, band_edges=DEFAULT_BANDS):
    """Observed counterpart of ``redistribution_by_distance``.

    Per restaurant: closed-period visit share minus open-period visit share
    among cohort users, weighted like the predictions and divided by the
    target's observed open-period share. No baseline is available for
    observed data, so band shares need not sum to one.
    """
    edges = np.asarray(band_edges, float)
    s_open = _observed_shares(panel, cohort, cohort.open_sessions)
    s_closed = _observed_shares(panel, cohort, cohort.closed_sessions)
    target_share = float(s_open[cohort.target])
    if not target_share > DEGENERATE_SHARE:
        raise DataError(f"degenerate-event: {cohort.event.event_id} has no observed visits "
                        "to the target in the open period")
    deltas = s_closed - s_open
    deltas[cohort.target] = 0.0
    d = np.asarray(distances, float)
    b = band_of(np.maximum(d, np.nextafter(edges[0], np.inf)), edges)
    b = np.where(d > edges[-1], len(edges) - 1, b)
    shares = np.bincount(b, weights=deltas, minlength=len(edges)) / target_share
    return RedistributionRow(cohort.event.event_id, target_share, shares, deltas)


def event_summary(rows):
    """Across-event mean per band and SE = SD / sqrt(n) (missing when n < 2)."""
    if not rows:
        raise ValueError("no events to summarise")
    M = np.array([r.band_shares for r in rows], float)
    mean = M.mean(axis=0)
    if len(rows) < 2:
        se = np.full(M.shape[1], np.nan)
    else:
        se = M.std(axis=0, ddof=1) / math.sqrt(len(rows))
    return mean, se


# ------------------------------------------------------ alternative restaurants

def alternative_comparison(model, params, panel, target, categories, rng, n_per_stratum=100,
                           sessions=None, roster=None):
    """Target's own demand vs mean demand of sampled replacements at its site.

    ``categories[k]`` is the tuple of category labels of restaurant ``k``;
    the first label is the major category. Same-category candidates share
    the target's major category; different-category candidates share no
    label with it.
    """
    mine = set(categories[target])
    major = categories[target][0] if categories[target] else None
    idx = np.arange(panel.n_restaurants)
    same = [k for k in idx if k != target and categories[k] and categories[k][0] == major]
    diff = [k for k in idx if k != target and not mine.intersection(categories[k])]
    picks = []
    for name, pool in (("same", same), ("different", diff)):
        if len(pool) < n_per_stratum:
            logger.warning("only %d %s-category candidates for %s", len(pool), name,
                           panel.restaurant_ids[target])
            picks.append(np.asarray(pool, np.int64))
        else:
            picks.append(np.sort(rng.choice(pool, size=n_per_stratum, replace=False)))
    cand = np.concatenate([[target], *picks]).astype(np.int64)
    dem = replacement_demands(model, params, panel, target, cand, sessions, roster)
    n_same = len(picks[0])
    same_d, diff_d = dem[1:1 + n_same], dem[1 + n_same:]
    return {"restaurant_id": panel.restaurant_ids[target], "target_demand": float(dem[0]),
            "same_category_mean": float(same_d.mean()) if len(same_d) else float("nan"),
            "different_category_mean": float(diff_d.mean()) if len(diff_d) else float("nan"),
            "n_same": n_same, "n_different": len(diff_d)}


# --------------------------------------------------------------- location maps

def select_category_reps(demand, major_categories, rng, band_sd=0.1):
    """One random restaurant per major category with demand within ``band_sd`` SD of the mean."""
    demand = np.asarray(demand, float)
    share = demand / demand.sum()
    m, s = share.mean(), share.std()
    ok = np.abs(share - m) <= band_sd * s
    reps = {}
    for cat in sorted({c for c in major_categories if c}):
        pool = [k for k, c in enumerate(major_categories) if c == cat and ok[k]]
        if not pool:
            logger.warning("no %s restaurant within %.2g SD of mean share", cat, band_sd)
            continue
        reps[cat] = int(pool[rng.integers(len(pool))])
    return reps


def select_sites(restaurants_by_index, rng, sessions_available=None):
    """One random restaurant per geohash6 cell, keyed by cell."""
    cells = defaultdict(list)
    for k, r in enumerate(restaurants_by_index):
        if sessions_available is None or sessions_available[k]:
            cells[geo.encode(r.lat, r.lon, 6)].append(k)
    return {c: int(cells[c][rng.integers(len(cells[c]))]) for c in sorted(cells)}


def best_location_map(model, params, panel, reps, sites, sessions=None, roster=None):
    """Rows (geohash6, category, rep, site, demand) for every rep at every site."""
    rows = []
    cats = sorted(reps)
    for cell in sorted(sites):
        site = sites[cell]
        dem = replacement_demands(model, params, panel, site, [reps[c] for c in cats],
                                  sessions, roster)
        for c, d in zip(cats, dem):
            rows.append({"geohash6": cell, "category": c,
                         "rep_id": panel.restaurant_ids[reps[c]],
                         "site_id": panel.restaurant_ids[site], "demand": float(d)})
    return rows


def best_category_map(grid, groups):
    """Per site and group, the category whose rep has the highest demand.

    ``groups`` maps a group name to the categories it compares. Ties go to
    the alphabetically first category.
    """
    by_site = defaultdict(dict)
    for row in grid:
        by_site[row["geohash6"]][row["category"]] = row["demand"]
    out = []
    for cell in sorted(by_site):
        dem = by_site[cell]
        for gname in sorted(groups):
            cands = sorted(c for c in groups[gname] if c in dem)
            if not cands:
                continue
            top = max(dem[c] for c in cands)
            best = min(c for c in cands if dem[c] == top)
            out.append({"geohash6": cell, "group": gname, "category": best,
                        "demand": float(top)})
    return out


# ------------------------------------------------------------------ similarity

def user_utility_matrix(model, params, panel, user_points, coords, floor=0.01):
    """(R, U) utility of each restaurant for each user, averaged over the user's visits.

    Distances run from each user's point to every restaurant (no cull), so
    every restaurant gets a full vector.
    """
    up = np.asarray(user_points, float)
    rc = np.asarray(coords, float)
    D = np.maximum(geo.haversine_matrix(up[:, 0], up[:, 1], rc[:, 0], rc[:, 1]), floor)
    R = panel.n_restaurants
    tot = np.zeros((panel.n_users, R))
    cnt = np.bincount(panel.users, minlength=panel.n_users).astype(float)
    alts_all = np.arange(R)
    step = max(1, 2_000_000 // max(R, 1))
    for s in range(0, panel.n_visits, step):
        users = panel.users[s:s + step]
        alts = np.broadcast_to(alts_all, (len(users), R))
        U = model.utilities(params, users, panel.weeks[s:s + step], alts, np.log(D[users]))
        np.add.at(tot, users, U)
    seen = cnt > 0
    return (tot[seen] / cnt[seen, None]).T


def similar_restaurants(model, params, restaurant, n, space="latent", panel=None,
                        user_points=None, coords=None):
    """The ``n`` nearest restaurants to ``restaurant`` by Euclidean distance.

    ``latent`` compares the vectors returned by ``model.latent_vectors``
    (alpha for TTFM); ``utility`` compares per-user mean utility vectors.
    Returns (index, distance) pairs, nearest first, ties by index.
    """
    if space == "latent":
        V = np.asarray(model.latent_vectors(params), float)
    elif space == "utility":
        if panel is None or user_points is None or coords is None:
            raise ValueError("utility space needs the panel, user points and coordinates")
        V = user_utility_matrix(model, params, panel, user_points, coords)
    else:
        raise ValueError(f"unknown similarity space {space!r}")
    d = np.sqrt(((V - V[restaurant]) ** 2).sum(axis=1))
    order = [k for k in np.lexsort((np.arange(len(d)), d)) if k != restaurant]
    return [(int(k), float(d[k])) for k in order[:n]]
