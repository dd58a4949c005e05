"""CSV readers and writers for pings, restaurants, visits, choice sets and tables.

Readers raise ``DataError`` naming the file and line of the first bad row.
Writers produce LF line endings, a fixed header and ``repr`` floats, so
identical inputs give byte-identical files.
"""

import csv
import datetime as dt
import io
import os
from collections import defaultdict

from .counterfactuals import OpenCloseEvent
from .errors import DataError
from .pipeline import ChoiceSet, MorningLocation, Ping, RestaurantRecord, Visit
from .snapshot import atomic_write_text

PING_HEADER = ("user_id", "timestamp", "lat", "lon", "accuracy_m")
RESTAURANT_HEADER = ("restaurant_id", "name", "lat", "lon", "price_range", "rating_overall",
                     "n_ratings_overall", "rating_in_sample", "n_ratings_in_sample",
                     "categories", "open_date", "close_date")
VISIT_HEADER = ("user_id", "restaurant_id", "date", "week_index", "dwell_minutes", "ping_count")
CHOICE_HEADER = ("user_id", "restaurant_id", "distance_miles")
MORNING_HEADER = ("user_id", "broad", "narrow", "share_in_area", "share_broad", "share_narrow")
EVENT_HEADER = ("restaurant_id", "kind", "change_date", "period1_start", "period1_end",
                "period2_start", "period2_end")
HOME_HEADER = ("user_id", "geohash7")


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dt.date, dt.datetime)):
        return v.isoformat()
    return str(v)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def write_table(path, rows, columns=None):
    """List of dicts to CSV; columns default to the first row's keys."""
    columns = list(columns or (rows[0].keys() if rows else ()))
    write_csv(path, columns, ([r.get(c) for c in columns] for r in rows))


def _rows(path, header, optional=()):
    """Yield (line number, dict) checking the header against ``header``."""
    path = os.fspath(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None:
            return
        got = [h.strip() for h in got]
        need = list(header)
        if got[:len(need)] != need or any(h not in optional for h in got[len(need):]):
            raise DataError(f"{path}:1: expected header {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(got):
                raise DataError(f"{path}:{line}: expected {len(got)} fields, found {len(row)}")
            yield line, dict(zip(got, (c.strip() for c in row)))


def _parse(path, line, field, conv, value):
    try:
        return conv(value)
    except (ValueError, TypeError):
        raise DataError(f"{path}:{line}: bad {field} {value!r}") from None


def _opt(conv):
    return lambda v: None if v == "" else conv(v)


def _date(v):
    return dt.date.fromisoformat(v)


def read_pings(path):
    out = []
    for line, r in _rows(path, PING_HEADER[:4], optional=("accuracy_m",)):
        if not r["user_id"]:
            raise DataError(f"{path}:{line}: empty user_id")
        out.append(Ping(
            r["user_id"],
            _parse(path, line, "timestamp", dt.datetime.fromisoformat, r["timestamp"]),
            _parse(path, line, "lat", _lat, r["lat"]),
            _parse(path, line, "lon", _lon, r["lon"]),
            _parse(path, line, "accuracy_m", float, r.get("accuracy_m") or "0")))
    return out


def _lat(v):
    x = float(v)
    if not -90 <= x <= 90:
        raise ValueError
    return x


def _lon(v):
    x = float(v)
    if not -180 <= x <= 180:
        raise ValueError
    return x


def group_pings(pings):
    out = defaultdict(list)
    for p in pings:
        out[p.user_id].append(p)
    for v in out.values():
        v.sort(key=lambda p: p.timestamp)
    return dict(out)


def write_pings(path, pings):
    write_csv(path, PING_HEADER, pings)


def read_restaurants(path):
    out = []
    for line, r in _rows(path, RESTAURANT_HEADER, optional=("city",)):
        p = lambda f, c: _parse(path, line, f, c, r[f])  # noqa: E731
        if not r["restaurant_id"]:
            raise DataError(f"{path}:{line}: empty restaurant_id")
        price = p("price_range", _opt(int))
        if price is not None and price not in (1, 2, 3, 4):
            raise DataError(f"{path}:{line}: bad price_range {price}")
        out.append(RestaurantRecord(
            restaurant_id=r["restaurant_id"], name=r["name"], lat=p("lat", _lat),
            lon=p("lon", _lon), price_range=price,
            rating_overall=p("rating_overall", _opt(float)),
            n_ratings_overall=p("n_ratings_overall", _opt(int)) or 0,
            rating_in_sample=p("rating_in_sample", _opt(float)),
            n_ratings_in_sample=p("n_ratings_in_sample", _opt(int)) or 0,
            categories=tuple(c for c in r["categories"].split(";") if c),
            open_date=p("open_date", _opt(_date)), close_date=p("close_date", _opt(_date)),
            city=r.get("city") or None))
    return out


def write_restaurants(path, restaurants):
    rows = sorted(restaurants, key=lambda r: r.restaurant_id)
    write_csv(path, RESTAURANT_HEADER + ("city",), (
        (r.restaurant_id, r.name, r.lat, r.lon, r.price_range, r.rating_overall,
         r.n_ratings_overall, r.rating_in_sample, r.n_ratings_in_sample,
         ";".join(r.categories), r.open_date, r.close_date, r.city) for r in rows))


def read_visits(path):
    out = []
    for line, r in _rows(path, VISIT_HEADER):
        p = lambda f, c: _parse(path, line, f, c, r[f])  # noqa: E731
        out.append(Visit(r["user_id"], r["restaurant_id"], p("date", _date),
                         p("week_index", int), p("dwell_minutes", float), p("ping_count", int)))
    return out


def write_visits(path, visits):
    rows = sorted(visits, key=lambda v: (v.user_id, v.date, v.restaurant_id))
    write_csv(path, VISIT_HEADER, ((v.user_id, v.restaurant_id, v.date, v.week_index,
                                    float(v.dwell_minutes), v.ping_count) for v in rows))


def read_choice_sets(path):
    by_user = defaultdict(list)
    for line, r in _rows(path, CHOICE_HEADER):
        d = _parse(path, line, "distance_miles", float, r["distance_miles"])
        if not d > 0:
            raise DataError(f"{path}:{line}: distance must be positive")
        by_user[r["user_id"]].append((r["restaurant_id"], d))
    out = []
    for u in sorted(by_user):
        alts = sorted(by_user[u])
        out.append(ChoiceSet(u, tuple(a for a, _ in alts), tuple(d for _, d in alts)))
    return out


def write_choice_sets(path, choice_sets):
    rows = []
    for cs in sorted(choice_sets, key=lambda c: c.user_id):
        rows.extend((cs.user_id, r, float(d)) for r, d in zip(cs.restaurant_ids, cs.distances))
    write_csv(path, CHOICE_HEADER, rows)


def read_morning(path):
    out = {}
    for line, r in _rows(path, MORNING_HEADER):
        p = lambda f: _parse(path, line, f, float, r[f])  # noqa: E731
        out[r["user_id"]] = MorningLocation(r["user_id"], r["broad"], r["narrow"],
                                            p("share_in_area"), p("share_broad"),
                                            p("share_narrow"))
    return out


def write_morning(path, morning):
    write_csv(path, MORNING_HEADER, (
        (m.user_id, m.broad, m.narrow, float(m.share_in_area), float(m.share_broad),
         float(m.share_narrow)) for _, m in sorted(morning.items())))


def read_events(path):
    out = []
    for line, r in _rows(path, EVENT_HEADER):
        p = lambda f: _parse(path, line, f, _date, r[f])  # noqa: E731
        try:
            out.append(OpenCloseEvent(r["restaurant_id"], r["kind"], p("change_date"),
                                      (p("period1_start"), p("period1_end")),
                                      (p("period2_start"), p("period2_end"))))
        except ValueError as exc:
            raise DataError(f"{path}:{line}: {exc}") from None
    return out


def write_events(path, events):
    write_csv(path, EVENT_HEADER, ((e.restaurant_id, e.kind, e.change_date, *e.period1,
                                    *e.period2) for e in events))


def read_homes(path):
    return {r["user_id"]: r["geohash7"] for _, r in _rows(path, HOME_HEADER)}


def write_homes(path, homes):
    write_csv(path, HOME_HEADER, sorted(homes.items()))


def read_area(path):
    """One geohash5 code per line (blank lines and '#' comments ignored)."""
    try:
        with open(path) as fh:
            return frozenset(s.strip() for s in fh if s.strip() and not s.startswith("#"))
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None


def write_area(path, area):
    atomic_write_text(path, "".join(f"{c}\n" for c in sorted(area)))
