"""Restaurant covariate matrix for the hierarchical prior."""

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

PRICE_LEVELS = (1, 2, 3, 4)


@dataclass(frozen=True)
class ObservableLayout:
    """Column spans ``[start, stop)`` of each covariate group."""

    price: tuple
    category: tuple
    rating: tuple

    @property
    def k_obs(self):
        return max(self.price[1], self.category[1], self.rating[1])

    @classmethod
    def from_counts(cls, n_price, n_category, n_rating):
        a = n_price
        b = a + n_category
        return cls((0, a), (a, b), (b, b + n_rating))


@dataclass
class Observables:
    x: np.ndarray
    layout: ObservableLayout
    names: list
    restaurant_ids: list


def _zscore(col):
    sd = col.std()
    if sd == 0:
        return np.zeros_like(col)
    return (col - col.mean()) / sd


def _impute(values):
    """Replace missing by the observed mean; return (values, missing flag)."""
    v = np.array([np.nan if x is None else float(x) for x in values])
    missing = np.isnan(v)
    fill = v[~missing].mean() if (~missing).any() else 0.0
    v[missing] = fill
    return v, missing.astype(float)


def build_observables(restaurants, categories=None):
    """Covariates ordered as price one-hot | category indicators | ratings.

    The rating block holds in-sample rating, its missing flag, overall
    rating, its missing flag, and both rating counts. Missing ratings take
    the sample mean with the flag set; continuous columns are z-scored
    after imputation. A missing price range takes the most common level.
    """
    rs = sorted(restaurants, key=lambda r: r.restaurant_id)
    if categories is None:
        categories = sorted({c for r in rs for c in r.categories})
    categories = list(categories)
    cix = {c: k for k, c in enumerate(categories)}

    prices = [r.price_range for r in rs]
    known = [p for p in prices if p is not None]
    mode = Counter(known).most_common(1)[0][0] if known else PRICE_LEVELS[0]
    if len(known) < len(prices):
        logger.warning("%d restaurants lack a price range; using level %d",
                       len(prices) - len(known), mode)
    price = np.zeros((len(rs), len(PRICE_LEVELS)))
    for n, p in enumerate(prices):
        p = mode if p is None else p
        if p not in PRICE_LEVELS:
            raise ValueError(f"price range must be one of {PRICE_LEVELS}, got {p}")
        price[n, PRICE_LEVELS.index(p)] = 1.0

    cat = np.zeros((len(rs), len(categories)))
    for n, r in enumerate(rs):
        for c in r.categories:
            if c in cix:
                cat[n, cix[c]] = 1.0

    rin, rin_missing = _impute([r.rating_in_sample for r in rs])
    rall, rall_missing = _impute([r.rating_overall for r in rs])
    nin = np.array([r.n_ratings_in_sample for r in rs], float)
    nall = np.array([r.n_ratings_overall for r in rs], float)
    rating = np.column_stack([_zscore(rin), rin_missing, _zscore(rall), rall_missing,
                              _zscore(nin), _zscore(nall)])

    x = np.hstack([price, cat, rating])
    names = ([f"price_{'$' * p}" for p in PRICE_LEVELS]
             + [f"category_{c}" for c in categories]
             + ["rating_in_sample", "rating_in_sample_missing", "rating_overall",
                "rating_overall_missing", "n_ratings_in_sample", "n_ratings_overall"])
    layout = ObservableLayout.from_counts(price.shape[1], cat.shape[1], rating.shape[1])
    return Observables(x, layout, names, [r.restaurant_id for r in rs])
