"""From raw location pings to an estimation panel.

Covers morning-location inference, the user-base filters, lunch visit
detection against a deduplicated restaurant roster, choice-set
construction with the 20-mile cull, and the fixed-point sample filter.
Every function here is pure over its inputs so per-user work can be
farmed out freely.
"""

import datetime as dt
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import geo
from .errors import DataError

logger = logging.getLogger(__name__)

BROAD_PRECISION = 6
NARROW_PRECISION = 7
AREA_PRECISION = 5
VISIT_PRECISION = 8


class Ping(NamedTuple):
    user_id: str
    timestamp: dt.datetime
    lat: float
    lon: float
    accuracy_m: float = 0.0

    @property
    def point(self):
        return geo.GeoPoint(self.lat, self.lon)


@dataclass(frozen=True)
class MorningLocation:
    user_id: str
    broad: str
    narrow: str
    share_in_area: float
    share_broad: float
    share_narrow: float

    @property
    def point(self):
        """Representative point: center of the narrow cell."""
        return geo.decode(self.narrow)


class Rejection(NamedTuple):
    user_id: str
    reason: str


@dataclass(frozen=True)
class Visit:
    user_id: str
    restaurant_id: str
    date: dt.date
    week_index: int
    dwell_minutes: float
    ping_count: int


@dataclass(frozen=True)
class RestaurantRecord:
    restaurant_id: str
    name: str
    lat: float
    lon: float
    price_range: Optional[int] = None
    rating_overall: Optional[float] = None
    n_ratings_overall: int = 0
    rating_in_sample: Optional[float] = None
    n_ratings_in_sample: int = 0
    categories: tuple = ()
    open_date: Optional[dt.date] = None
    close_date: Optional[dt.date] = None
    city: Optional[str] = None

    @property
    def point(self):
        return geo.GeoPoint(self.lat, self.lon)

    @property
    def geohash8(self):
        return geo.encode(self.lat, self.lon, VISIT_PRECISION)

    @property
    def major_category(self):
        """First listed category; inputs list the most common label first."""
        return self.categories[0] if self.categories else ""

    def is_open_on(self, day):
        if self.open_date is not None and day < self.open_date:
            return False
        if self.close_date is not None and day >= self.close_date:
            return False
        return True


@dataclass(frozen=True)
class ChoiceSet:
    user_id: str
    restaurant_ids: tuple
    distances: tuple

    def __len__(self):
        return len(self.restaurant_ids)


@dataclass
class PipelineConfig:
    sample_start: dt.date = dt.date(2017, 1, 2)
    sample_end: dt.date = dt.date(2017, 10, 31)
    morning_start: dt.time = dt.time(9, 0)
    morning_end: dt.time = dt.time(11, 15)
    lunch_start: dt.time = dt.time(11, 30)
    lunch_end: dt.time = dt.time(13, 30)
    min_share_in_area: float = 0.80
    min_share_broad: float = 0.60
    min_share_narrow: float = 0.40
    min_active_weeks: int = 12
    min_pings_per_week: float = 10.0
    require_home: bool = True
    min_visit_pings: int = 2
    min_dwell_minutes: float = 3.0
    max_distance_miles: float = 20.0
    distance_floor_miles: float = 0.01
    min_user_visits: int = 3
    min_weekly_restaurant_visits: float = 1.0
    min_total_restaurant_visits: int = 5

    @property
    def n_weeks(self):
        return week_index(self.sample_end, self.sample_start) + 1


# thresholds are inclusive; the tolerance absorbs float error in count ratios
_EPS = 1e-12


def week_index(day, sample_start):
    """Weeks since the Monday of the sample's first ISO week."""
    if isinstance(day, dt.datetime):
        day = day.date()
    monday = sample_start - dt.timedelta(days=sample_start.weekday())
    return (day - monday).days // 7


def _is_weekday(ts):
    return ts.weekday() < 5


def _mode(codes):
    counts = Counter(codes)
    best = max(counts.values())
    return min(c for c, n in counts.items() if n == best)


def infer_morning_location(pings, area, config=None):
    """Modal weekday-morning geohash6/geohash7 cells for one user.

    Returns a ``MorningLocation`` or a ``Rejection`` whose reason is one of
    ``no-morning-pings``, ``broad-outside-area``, ``share-in-area``,
    ``share-broad``, ``share-narrow``.
    """
    config = config or PipelineConfig()
    morning = [p for p in pings
               if _is_weekday(p.timestamp)
               and config.morning_start <= p.timestamp.time() <= config.morning_end]
    user_id = pings[0].user_id if pings else ""
    if not morning:
        return Rejection(user_id, "no-morning-pings")
    cells7 = [geo.encode(p.lat, p.lon, NARROW_PRECISION) for p in morning]
    cells6 = [c[:BROAD_PRECISION] for c in cells7]
    n = len(morning)
    broad = _mode(cells6)
    narrow = _mode([c for c in cells7 if c.startswith(broad)])
    in_area = sum(c[:AREA_PRECISION] in area for c in cells7) / n
    share_broad = sum(c == broad for c in cells6) / n
    share_narrow = sum(c == narrow for c in cells7) / n
    if broad[:AREA_PRECISION] not in area:
        return Rejection(user_id, "broad-outside-area")
    if in_area < config.min_share_in_area - _EPS:
        return Rejection(user_id, "share-in-area")
    if share_broad < config.min_share_broad - _EPS:
        return Rejection(user_id, "share-broad")
    if share_narrow < config.min_share_narrow - _EPS:
        return Rejection(user_id, "share-narrow")
    return MorningLocation(user_id, broad, narrow, in_area, share_broad, share_narrow)


@dataclass
class UserBase:
    users: list
    morning: dict
    rejections: dict = field(default_factory=dict)

    def rejection_counts(self):
        return Counter(self.rejections.values())


def filter_user_base(users_pings, area, config=None, homes=None):
    """Apply the activity and morning-location filters to every user.

    ``users_pings`` maps user id to that user's pings. Only weekday pings
    count towards active weeks and the per-week in-area ping average.
    When ``config.require_home`` is set, users absent from ``homes`` are
    rejected with ``no-home``.
    """
    config = config or PipelineConfig()
    homes = homes or {}
    kept, morning, rejections = [], {}, {}
    for user_id in sorted(users_pings):
        pings = users_pings[user_id]
        if not pings:
            rejections[user_id] = "no-pings"
            continue
        if config.require_home and user_id not in homes:
            rejections[user_id] = "no-home"
            continue
        weekday = [p for p in pings if _is_weekday(p.timestamp)]
        weeks = {week_index(p.timestamp, config.sample_start) for p in weekday}
        if len(weeks) < config.min_active_weeks:
            rejections[user_id] = "active-weeks"
            continue
        n_in_area = sum(geo.encode(p.lat, p.lon, AREA_PRECISION) in area for p in weekday)
        if n_in_area / len(weeks) < config.min_pings_per_week - _EPS:
            rejections[user_id] = "pings-per-week"
            continue
        loc = infer_morning_location(pings, area, config)
        if isinstance(loc, Rejection):
            rejections[user_id] = loc.reason
            continue
        kept.append(user_id)
        morning[user_id] = loc
    return UserBase(kept, morning, rejections)


def dedupe_restaurants(restaurants):
    """Keep one restaurant per geohash8: the first by case-insensitive name."""
    by_cell = defaultdict(list)
    for r in restaurants:
        by_cell[r.geohash8].append(r)
    out = [min(group, key=lambda r: (r.name.casefold(), r.name, r.restaurant_id))
           for group in by_cell.values()]
    return sorted(out, key=lambda r: r.restaurant_id)


class RestaurantIndex:
    """Lookup from geohash8 cell to restaurants whose 3x3 patch contains it."""

    def __init__(self, restaurants):
        self.restaurants = {r.restaurant_id: r for r in restaurants}
        self.by_cell = defaultdict(list)
        self.patch_gh7 = {}
        for r in restaurants:
            cell = r.geohash8
            patch = {cell} | geo.adjacent(cell)
            for c in patch:
                self.by_cell[c].append(r.restaurant_id)
            self.patch_gh7[r.restaurant_id] = {c[:NARROW_PRECISION] for c in patch}

    def candidates(self, cell):
        return self.by_cell.get(cell, ())


def detect_visits(pings, restaurants, morning=None, home=None, config=None):
    """Lunch visits of one user.

    A candidate is a (restaurant, day) with lunch-window pings in the
    restaurant's geohash8 or its neighbours. It becomes a visit when it has
    enough pings and dwell, and the restaurant's patch does not overlap
    the user's home or narrow morning geohash7. Candidates sharing a ping
    go to the longest dwell, ties to the smallest restaurant id.
    ``restaurants`` may be a list of records or a prebuilt ``RestaurantIndex``.
    """
    config = config or PipelineConfig()
    index = restaurants if isinstance(restaurants, RestaurantIndex) else RestaurantIndex(restaurants)
    blocked = set()
    if morning is not None:
        blocked.add(morning.narrow)
    if home:
        blocked.add(home[:NARROW_PRECISION])
    lunch = sorted((p for p in pings
                    if config.lunch_start <= p.timestamp.time() <= config.lunch_end),
                   key=lambda p: p.timestamp)
    by_day = defaultdict(list)
    for p in lunch:
        by_day[p.timestamp.date()].append(p)
    visits = []
    min_dwell = dt.timedelta(minutes=config.min_dwell_minutes)
    for day in sorted(by_day):
        day_pings = by_day[day]
        matched = defaultdict(list)
        for k, p in enumerate(day_pings):
            for rid in index.candidates(geo.encode(p.lat, p.lon, VISIT_PRECISION)):
                matched[rid].append(k)
        valid = []
        for rid, ks in matched.items():
            if len(ks) < config.min_visit_pings:
                continue
            dwell = day_pings[ks[-1]].timestamp - day_pings[ks[0]].timestamp
            if dwell < min_dwell:
                continue
            if blocked & index.patch_gh7[rid]:
                continue
            valid.append((dwell, rid, ks))
        valid.sort(key=lambda v: (-v[0], v[1]))
        used = set()
        for dwell, rid, ks in valid:
            if used.intersection(ks):
                continue
            used.update(ks)
            visits.append(Visit(
                user_id=day_pings[0].user_id,
                restaurant_id=rid,
                date=day,
                week_index=week_index(day, config.sample_start),
                dwell_minutes=dwell.total_seconds() / 60.0,
                ping_count=len(ks),
            ))
    visits.sort(key=lambda v: (v.date, v.restaurant_id))
    return visits


def build_choice_set(morning, restaurants, config=None):
    """All restaurants within the distance cull of the narrow morning cell."""
    config = config or PipelineConfig()
    if not restaurants:
        raise DataError(f"no-alternatives: user {morning.user_id}")
    origin = morning.point
    rs = sorted(restaurants, key=lambda r: r.restaurant_id)
    d = geo.haversine_matrix([origin.lat], [origin.lon],
                             [r.lat for r in rs], [r.lon for r in rs])[0]
    keep = d <= config.max_distance_miles
    if not keep.any():
        raise DataError(f"no-alternatives: user {morning.user_id}")
    d = np.maximum(d[keep], config.distance_floor_miles)
    ids = tuple(r.restaurant_id for r, k in zip(rs, keep) if k)
    return ChoiceSet(morning.user_id, ids, tuple(float(x) for x in d))


def filter_estimation_sample(visits, config=None, user_base=None):
    """Iterate the user and restaurant visit floors to a fixed point.

    Users need ``min_user_visits``; restaurants need either an average of
    ``min_weekly_restaurant_visits`` per week from user-base members or
    ``min_total_restaurant_visits`` overall. The 3-visit rule applies only
    to user-base members (everyone, when ``user_base`` is None); outside
    visits are retained while their restaurant survives since they count
    toward the overall floor.

    Returns ``(visits, users, restaurants)`` with sorted id lists.
    """
    config = config or PipelineConfig()
    n_weeks = config.n_weeks
    base = None if user_base is None else set(user_base)
    def in_base(u):
        return base is None or u in base

    current = list(visits)
    while True:
        per_user = Counter(v.user_id for v in current)
        drop_users = {u for u, n in per_user.items()
                      if in_base(u) and n < config.min_user_visits}
        total = Counter(v.restaurant_id for v in current)
        from_base = Counter(v.restaurant_id for v in current if in_base(v.user_id))
        keep_rest = {r for r in total
                     if from_base[r] / n_weeks >= config.min_weekly_restaurant_visits - _EPS
                     or total[r] >= config.min_total_restaurant_visits}
        nxt = [v for v in current if v.user_id not in drop_users and v.restaurant_id in keep_rest]
        if len(nxt) == len(current):
            break
        current = nxt
    users = sorted({v.user_id for v in current if in_base(v.user_id)})
    restaurants = sorted({v.restaurant_id for v in current})
    return current, users, restaurants
