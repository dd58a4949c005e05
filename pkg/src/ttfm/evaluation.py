"""Held-out splits, fit metrics, distance elasticities and variance decomposition.

Metric functions take a fitted model object (``TTFM`` or ``MNL``), a parameter
dict, a ``Panel`` and optionally the visit indices to evaluate on.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .data import Panel
from .model import softmax_rows

logger = logging.getLogger(__name__)

DEFAULT_BANDS = (0.0, 1.0, 2.0, 5.0, 20.0)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.706
    validation: float = 0.050
    test: float = 0.244
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.validation, self.test) < 0:
            raise ValueError("split fractions must be non-negative")
        if abs(self.train + self.validation + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    def sizes(self, n):
        n_val = int(round(self.validation * n))
        n_test = int(round(self.test * n))
        return n - n_val - n_test, n_val, n_test


def split_indices(users, spec):
    """Seeded (train, validation, test) index arrays over visits.

    Part sizes are fixed by the fractions. Users left without a training
    visit have one held-out visit swapped with a training visit of a user
    holding at least two; single-visit users always train (with a warning).
    """
    users = np.asarray(users)
    n = len(users)
    if n == 0:
        raise ValueError("no visits to split")
    n_train, n_val, _ = spec.sizes(n)
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    part = np.empty(n, dtype=np.int8)
    part[perm[:n_train]] = 0
    part[perm[n_train:n_train + n_val]] = 1
    part[perm[n_train + n_val:]] = 2
    order = np.empty(n, dtype=np.int64)
    order[perm] = np.arange(n)

    total = np.bincount(users)
    singles = np.flatnonzero(total == 1)
    if len(singles):
        logger.warning("%d users have a single visit; it stays in training", len(singles))
    while True:
        in_train = np.bincount(users[part == 0], minlength=len(total))
        needy = np.flatnonzero((in_train == 0) & (total > 0))
        if len(needy) == 0:
            break
        u = needy[0]
        mine = np.flatnonzero((users == u) & (part != 0))
        take = mine[np.argmin(order[mine])]
        donors = np.flatnonzero((part == 0) & (in_train[users] >= 2))
        if len(donors) == 0:
            logger.warning("no training visit can be spared for user %d", u)
            part[take] = 0
            continue
        give = donors[np.argmax(order[donors])]
        part[take], part[give] = 0, part[take]
    return tuple(np.flatnonzero(part == k) for k in range(3))


def split_dataset(visits, spec):
    """Partition a ``Panel`` (into sub-panels) or a list of visits (into lists)."""
    if isinstance(visits, Panel):
        return tuple(visits.subset(ix) for ix in split_indices(visits.users, spec))
    ids = sorted({v.user_id for v in visits})
    uix = {u: k for k, u in enumerate(ids)}
    parts = split_indices([uix[v.user_id] for v in visits], spec)
    return tuple([visits[i] for i in ix] for ix in parts)


def _idx(panel, idx):
    return np.arange(panel.n_visits) if idx is None else np.asarray(idx, dtype=np.int64)


def _visit_probs(model, params, panel, idx):
    users = panel.users[idx]
    mask = panel.visit_mask(idx)
    U = model.utilities(params, users, panel.weeks[idx], panel.alt_idx[users],
                        panel.log_dist[users])
    p, _ = softmax_rows(U, mask)
    return p, mask


def chosen_ranks(model, params, panel, idx=None):
    """0-based rank of each chosen restaurant (probability descending, id ascending)."""
    idx = _idx(panel, idx)
    p, mask = _visit_probs(model, params, panel, idx)
    rows = np.arange(len(idx))
    pos = panel.pos[idx]
    pc = p[rows, pos][:, None]
    alts = panel.alt_idx[panel.users[idx]]
    ac = alts[rows, pos][:, None]
    ahead = mask & ((p > pc) | ((p == pc) & (alts < ac)))
    return ahead.sum(axis=1)


def precision_at_k(model, params, panel, k, idx=None):
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = chosen_ranks(model, params, panel, idx)
    return float(np.mean(ranks < k)) if len(ranks) else float("nan")


def mean_loglik(model, params, panel, idx=None):
    idx = _idx(panel, idx)
    return model.loglik(params, panel, idx) / max(len(idx), 1)


# ------------------------------------------------------------------ elasticity

def distance_elasticity(gamma_beta, p):
    """d log p_ui / d log d_ui for a softmax with a ``-(gamma.beta) log d`` term."""
    return -np.asarray(gamma_beta) * (1.0 - np.asarray(p))


def visit_elasticities(model, params, panel, idx=None):
    """(B, A) elasticities of every available slot in each visit's context."""
    idx = _idx(panel, idx)
    p, mask = _visit_probs(model, params, panel, idx)
    users = panel.users[idx]
    s = model.distance_sensitivity(params, users, panel.alt_idx[users])
    return np.where(mask, distance_elasticity(s, p), np.nan), mask


@dataclass(frozen=True)
class ElasticityRecord:
    user_id: str
    restaurant_id: str
    elasticity: float
    weight: float

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("weight must be non-negative")


def pair_elasticities(model, params, panel, idx=None, draws=None):
    """Per (user, choice-set slot) elasticity averaged over the user's visit contexts.

    Returns ``(E, W, has)``: (U, A) mean elasticity, trip counts of the user
    to that restaurant, and a flag for pairs that were ever available.
    With ``draws`` (a list of parameter dicts, e.g. posterior samples) the
    elasticity is averaged over the draws and ``params`` is ignored.
    """
    idx = _idx(panel, idx)
    users = panel.users[idx]
    U, A = panel.alt_idx.shape
    tot = np.zeros((U, A))
    for P in (draws if draws else [params]):
        E, mask = visit_elasticities(model, P, panel, idx)
        np.add.at(tot, users, np.where(mask, E, 0.0))
    tot /= len(draws) if draws else 1
    cnt = np.zeros((U, A))
    np.add.at(cnt, users, mask)
    W = np.zeros((U, A))
    np.add.at(W, (users, panel.pos[idx]), 1.0)
    has = cnt > 0
    return np.where(has, tot / np.maximum(cnt, 1), np.nan), W, has


def elasticity_records(model, params, panel, idx=None, include_unvisited=False, draws=None):
    E, W, has = pair_elasticities(model, params, panel, idx, draws)
    keep = has & ((W > 0) | include_unvisited)
    out = []
    for u, a in zip(*np.nonzero(keep)):
        out.append(ElasticityRecord(panel.user_ids[u], panel.restaurant_ids[panel.alt_idx[u, a]],
                                    float(E[u, a]), float(W[u, a])))
    return out


SUMMARY_COLUMNS = ("group", "n_records", "total_weight", "mean", "sd",
                   "sd_of_means", "mean_of_sds")


def _wstats(x, w):
    tw = w.sum()
    if tw <= 0:
        return float("nan"), float("nan")
    m = float(w @ x / tw)
    return m, float(math.sqrt(max(w @ (x - m) ** 2 / tw, 0.0)))


def _decompose(x, w, keys):
    """Weighted SD of group means and weighted mean of within-group SDs."""
    groups = defaultdict(list)
    for n, k in enumerate(keys):
        groups[k].append(n)
    means, sds, gw = [], [], []
    for k in sorted(groups):
        ix = np.asarray(groups[k])
        if w[ix].sum() <= 0:
            continue
        m, s = _wstats(x[ix], w[ix])
        means.append(m)
        sds.append(s)
        gw.append(w[ix].sum())
    gw = np.asarray(gw)
    return _wstats(np.asarray(means), gw)[1], _wstats(np.asarray(sds), gw)[0]


def elasticity_summary(records, grouping="overall", keys=None):
    """Trip-weighted elasticity summaries as a list of row dicts.

    ``overall`` gives one row; ``by-user`` and ``by-item`` give one row
    whose ``sd_of_means``/``mean_of_sds`` decompose the dispersion across
    and within users (items). Any other grouping aggregates item-level
    means by ``keys[restaurant_id]`` (category, price, city, geohash6...),
    one row per key.
    """
    if not records:
        raise ValueError("no elasticity records")
    x = np.array([r.elasticity for r in records])
    w = np.array([r.weight for r in records])
    if grouping in ("overall", "by-user", "by-item"):
        m, s = _wstats(x, w)
        row = {"group": {"overall": "all", "by-user": "within-user",
                         "by-item": "within-item"}[grouping],
               "n_records": len(records), "total_weight": float(w.sum()), "mean": m, "sd": s,
               "sd_of_means": float("nan"), "mean_of_sds": float("nan")}
        if grouping != "overall":
            attr = "user_id" if grouping == "by-user" else "restaurant_id"
            row["sd_of_means"], row["mean_of_sds"] = _decompose(
                x, w, [getattr(r, attr) for r in records])
        return [row]
    if keys is None:
        raise ValueError(f"grouping {grouping!r} needs a restaurant -> key mapping")
    items = defaultdict(list)
    for n, r in enumerate(records):
        items[r.restaurant_id].append(n)
    by_key = defaultdict(list)
    for rid in sorted(items):
        ix = np.asarray(items[rid])
        if w[ix].sum() <= 0:
            continue
        m, s = _wstats(x[ix], w[ix])
        by_key[keys.get(rid)].append((m, s, w[ix].sum(), len(ix)))
    rows = []
    for key in sorted(k for k in by_key if k is not None):
        vals = by_key[key]
        ms = np.array([v[0] for v in vals])
        ss = np.array([v[1] for v in vals])
        ws = np.array([v[2] for v in vals])
        m, s = _wstats(ms, ws)
        rows.append({"group": str(key), "n_records": int(sum(v[3] for v in vals)),
                     "total_weight": float(ws.sum()), "mean": m, "sd": s,
                     "sd_of_means": s, "mean_of_sds": _wstats(ss, ws)[0]})
    if None in by_key:
        logger.warning("%d restaurants have no %s key; omitted", len(by_key[None]), grouping)
    return rows


# --------------------------------------------------------------- share tables

def _bands(edges):
    edges = np.asarray(edges, float)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("band edges must be strictly increasing")
    return edges


def band_of(distance, edges):
    """Index of the (lo, hi] band holding each distance, -1 outside."""
    d = np.asarray(distance, float)
    b = np.searchsorted(edges, d, side="left") - 1
    return np.where((d > edges[0]) & (d <= edges[-1]), b, -1)


def share_by_distance(model, params, panel, band_edges=DEFAULT_BANDS, idx=None):
    """Rows of (lo, hi, actual_share, predicted_share) over (lo, hi] bands."""
    edges = _bands(band_edges)
    idx = _idx(panel, idx)
    p, mask = _visit_probs(model, params, panel, idx)
    users = panel.users[idx]
    d = np.exp(panel.log_dist[users])
    b = band_of(d, edges)
    if np.any((b < 0) & mask):
        raise ValueError("band edges do not cover every choice-set distance")
    nb = len(edges) - 1
    chosen_band = b[np.arange(len(idx)), panel.pos[idx]]
    actual = np.bincount(chosen_band, minlength=nb) / len(idx)
    pred = np.array([(p * (b == k)).sum() for k in range(nb)]) / len(idx)
    return [{"lo": float(edges[k]), "hi": float(edges[k + 1]),
             "actual_share": float(actual[k]), "predicted_share": float(pred[k])}
            for k in range(nb)]


def deciles(counts):
    """Decile (0..9) per entity from counts; ties ordered by entity index."""
    counts = np.asarray(counts)
    order = np.lexsort((np.arange(len(counts)), counts))
    out = np.empty(len(counts), dtype=np.int64)
    for d, chunk in enumerate(np.array_split(order, 10)):
        out[chunk] = d
    return out


def share_by_decile(model, params, panel, idx, train_idx, axis="restaurant-frequency"):
    """Actual vs predicted shares per training-frequency decile.

    On the restaurant axis the predicted share is the mean probability mass
    the model places on the decile's restaurants. On the user axis visits
    are grouped by their user's decile; the actual share is the decile's
    fraction of visits and the predicted share its fraction of the total
    probability the model assigns to the chosen restaurants. Both axes
    also report the decile's mean log-likelihood per visit.
    """
    idx = _idx(panel, idx)
    train_idx = _idx(panel, train_idx)
    p, mask = _visit_probs(model, params, panel, idx)
    rows = np.arange(len(idx))
    pos = panel.pos[idx]
    ll = np.log(p[rows, pos])
    users = panel.users[idx]
    if axis == "restaurant-frequency":
        dec = deciles(np.bincount(panel.restaurants[train_idx], minlength=panel.n_restaurants))
        slot_dec = dec[panel.alt_idx[users]]
        vdec = dec[panel.restaurants[idx]]
        pred = np.array([(p * (slot_dec == k)).sum() for k in range(10)]) / len(idx)
    elif axis == "user-frequency":
        dec = deciles(np.bincount(panel.users[train_idx], minlength=panel.n_users))
        vdec = dec[users]
        pc = p[rows, pos]
        pred = np.bincount(vdec, weights=pc, minlength=10) / pc.sum()
    else:
        raise ValueError(f"unknown decile axis {axis!r}")
    n = np.bincount(vdec, minlength=10)
    actual = n / len(idx)
    lls = np.bincount(vdec, weights=ll, minlength=10)
    return [{"decile": k + 1, "n_visits": int(n[k]), "actual_share": float(actual[k]),
             "predicted_share": float(pred[k]),
             "mean_loglik": float(lls[k] / n[k]) if n[k] else float("nan")}
            for k in range(10)]


# ------------------------------------------------------- variance decomposition

def _r2(y, X):
    """OLS R^2 of y on [1, X]; collinear columns are dropped with a warning."""
    n = len(y)
    A = np.column_stack([np.ones(n), X]) if X.size else np.ones((n, 1))
    _, R, piv = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > diag.max() * max(A.shape) * np.finfo(float).eps).sum())
    if rank < A.shape[1]:
        logger.warning("dropping %d collinear column(s)", A.shape[1] - rank)
        A = A[:, np.sort(piv[:rank])]
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ beta
    tss = ((y - y.mean()) ** 2).sum()
    if tss == 0:
        return 0.0
    return float(1.0 - (resid ** 2).sum() / tss)


def variance_decomposition(mean_utilities, groups):
    """R^2 of each covariate group alone and given all the others.

    ``groups`` maps a group name to its (R, m) design block. Rows are
    (group, r2_alone, r2_incremental) plus a final ``all`` row.
    """
    y = np.asarray(mean_utilities, float)
    names = list(groups)
    blocks = [np.asarray(groups[g], float).reshape(len(y), -1) for g in names]
    full = np.hstack(blocks) if blocks else np.zeros((len(y), 0))
    r2_all = _r2(y, full)
    rows = []
    for n, g in enumerate(names):
        rest = [b for m, b in enumerate(blocks) if m != n]
        others = np.hstack(rest) if rest else np.zeros((len(y), 0))
        rows.append({"group": g, "r2_alone": _r2(y, blocks[n]),
                     "r2_incremental": r2_all - _r2(y, others)})
    rows.append({"group": "all", "r2_alone": r2_all, "r2_incremental": r2_all})
    return rows


def one_hot(labels):
    levels = sorted(set(labels))
    ix = {v: k for k, v in enumerate(levels)}
    out = np.zeros((len(labels), len(levels)))
    for n, v in enumerate(labels):
        out[n, ix[v]] = 1.0
    return out


def observable_groups(obs, restaurants):
    """Price, category and rating blocks of ``obs`` plus city indicators.

    One-hot blocks drop their first level so they are not collinear with
    the regression intercept.
    """
    by_id = {r.restaurant_id: r for r in restaurants}
    a, b = obs.layout.price
    groups = {"price": obs.x[:, a + 1:b]}
    for name, (a, b) in (("category", obs.layout.category), ("rating", obs.layout.rating)):
        groups[name] = obs.x[:, a:b]
    cities = [by_id[rid].city or "" for rid in obs.restaurant_ids]
    if len(set(cities)) > 1:
        groups["city"] = one_hot(cities)[:, 1:]
    return groups
