"""Dense array form of choice sets and visits."""

import datetime as dt
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError

NEVER_CLOSED = np.iinfo(np.int64).max // 4
ALWAYS_OPEN = -NEVER_CLOSED


@dataclass
class Panel:
    """Padded per-user choice sets plus a visit table indexing into them.

    ``alt_idx[u, a]`` is the restaurant at slot ``a`` of user ``u``'s choice
    set, valid where ``alt_mask`` is set; ``log_dist`` holds log miles.
    Restaurants are available on days in ``[open_day, close_day)``, with
    days counted from the Monday of the first sample week. Each visit
    records its user, chosen restaurant, day, week and the chosen slot.
    """

    user_ids: list
    restaurant_ids: list
    alt_idx: np.ndarray
    alt_mask: np.ndarray
    log_dist: np.ndarray
    open_day: np.ndarray
    close_day: np.ndarray
    n_weeks: int
    users: np.ndarray
    restaurants: np.ndarray
    days: np.ndarray
    pos: np.ndarray

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_restaurants(self):
        return len(self.restaurant_ids)

    @property
    def n_visits(self):
        return len(self.users)

    @property
    def weeks(self):
        return self.days // 7

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, users=self.users[idx], restaurants=self.restaurants[idx],
                       days=self.days[idx], pos=self.pos[idx])

    def available(self, users, days, roster=None):
        """(B, A) availability of each choice-set slot.

        ``roster`` (boolean per restaurant) overrides the open/close dates.
        """
        alts = self.alt_idx[users]
        mask = self.alt_mask[users].copy()
        if roster is not None:
            mask &= np.asarray(roster, bool)[alts]
        else:
            d = np.asarray(days)[:, None]
            mask &= (self.open_day[alts] <= d) & (d < self.close_day[alts])
        return mask

    def visit_mask(self, idx=None):
        """Availability for visits; the chosen slot is always available."""
        idx = np.arange(self.n_visits) if idx is None else np.asarray(idx)
        mask = self.available(self.users[idx], self.days[idx])
        mask[np.arange(len(idx)), self.pos[idx]] = True
        return mask

    def distance(self, user, restaurant):
        """Miles from user to restaurant, or None if outside the choice set."""
        row = self.alt_idx[user]
        hits = np.flatnonzero((row == restaurant) & self.alt_mask[user])
        if len(hits) == 0:
            return None
        return float(np.exp(self.log_dist[user, hits[0]]))

    def slot_lookup(self):
        """(U, R) array of choice-set slot per (user, restaurant), -1 if absent."""
        out = np.full((self.n_users, self.n_restaurants), -1, dtype=np.int64)
        u, a = np.nonzero(self.alt_mask)
        out[u, self.alt_idx[u, a]] = a
        return out


def _day_number(day, sample_start):
    monday = sample_start - dt.timedelta(days=sample_start.weekday())
    return (day - monday).days


def build_panel(choice_sets, visits, restaurants, sample_start, n_weeks=None):
    """Assemble a ``Panel`` from pipeline objects.

    Visits of users without a choice set are an error, as is a visit whose
    restaurant is not in the user's choice set.
    """
    restaurant_ids = sorted(r.restaurant_id for r in restaurants)
    rix = {r: k for k, r in enumerate(restaurant_ids)}
    choice_sets = sorted(choice_sets, key=lambda c: c.user_id)
    user_ids = [c.user_id for c in choice_sets]
    uix = {u: k for k, u in enumerate(user_ids)}
    width = max((len(c) for c in choice_sets), default=0)
    U = len(user_ids)
    alt_idx = np.zeros((U, width), dtype=np.int64)
    alt_mask = np.zeros((U, width), dtype=bool)
    log_dist = np.zeros((U, width))
    slots = []
    for u, cs in enumerate(choice_sets):
        n = len(cs)
        try:
            alt_idx[u, :n] = [rix[r] for r in cs.restaurant_ids]
        except KeyError as exc:
            raise DataError(f"choice set of {cs.user_id} names unknown restaurant {exc}") from None
        alt_mask[u, :n] = True
        log_dist[u, :n] = np.log(cs.distances)
        slots.append({r: a for a, r in enumerate(cs.restaurant_ids)})

    by_id = {r.restaurant_id: r for r in restaurants}
    open_day = np.full(len(restaurant_ids), ALWAYS_OPEN, dtype=np.int64)
    close_day = np.full(len(restaurant_ids), NEVER_CLOSED, dtype=np.int64)
    for k, rid in enumerate(restaurant_ids):
        r = by_id[rid]
        if r.open_date is not None:
            open_day[k] = _day_number(r.open_date, sample_start)
        if r.close_date is not None:
            close_day[k] = _day_number(r.close_date, sample_start)

    V = len(visits)
    users = np.zeros(V, dtype=np.int64)
    rests = np.zeros(V, dtype=np.int64)
    days = np.zeros(V, dtype=np.int64)
    pos = np.zeros(V, dtype=np.int64)
    for n, v in enumerate(visits):
        if v.user_id not in uix:
            raise DataError(f"visit {n} ({v.user_id}, {v.restaurant_id}, {v.date}): "
                            "user has no choice set")
        u = uix[v.user_id]
        a = slots[u].get(v.restaurant_id)
        if a is None:
            raise DataError(f"visit {n} ({v.user_id}, {v.restaurant_id}, {v.date}): "
                            "restaurant not in the user's choice set")
        users[n] = u
        rests[n] = rix[v.restaurant_id]
        days[n] = _day_number(v.date, sample_start)
        pos[n] = a
    if n_weeks is None:
        n_weeks = int(days.max() // 7 + 1) if V else 1
    return Panel(user_ids, restaurant_ids, alt_idx, alt_mask, log_dist, open_day, close_day,
                 int(n_weeks), users, rests, days, pos)
