import datetime as dt

import pytest

from ttfm import geo
from ttfm.errors import DataError
from ttfm.pipeline import (MorningLocation, Ping, PipelineConfig, RestaurantRecord, Rejection,
                           Visit, build_choice_set, dedupe_restaurants, detect_visits,
                           filter_estimation_sample, filter_user_base, infer_morning_location,
                           week_index)

START = dt.date(2017, 1, 2)  # a Monday
HOME = geo.encode(37.45, -122.15, 7)
AREA = frozenset({HOME[:5]})
CFG = PipelineConfig(sample_start=START, sample_end=dt.date(2017, 10, 31))


def at(day, hh, mm, ss=0):
    return dt.datetime.combine(day, dt.time(hh, mm, ss))


def cell_point(code):
    return geo.decode(code)


def children(code, n):
    """``n`` distinct child cells one level below ``code``."""
    return [code + c for c in geo.BASE32[:n]]


def morning_pings(user, cells, day=START):
    """One 10:00-ish weekday ping per entry of ``cells`` (geohash codes)."""
    out = []
    for k, c in enumerate(cells):
        p = cell_point(c)
        out.append(Ping(user, at(day, 9, 30) + dt.timedelta(minutes=k % 100), p.lat, p.lon))
    return out


def weekly_pings(user, n_weeks, per_week, cell=HOME):
    p = cell_point(cell)
    out = []
    for w in range(n_weeks):
        day = START + dt.timedelta(weeks=w)
        for k in range(per_week):
            out.append(Ping(user, at(day, 9, 0) + dt.timedelta(minutes=k), p.lat, p.lon))
    return out


def base(pings, user="u", area=AREA, homes=None):
    homes = {user: HOME} if homes is None else homes
    return filter_user_base({user: pings}, area, CFG, homes)


# ---------------------------------------------------------------- morning location

def test_morning_all_in_one_cell():
    loc = infer_morning_location(morning_pings("u", [HOME] * 5), AREA, CFG)
    assert isinstance(loc, MorningLocation)
    assert (loc.share_in_area, loc.share_broad, loc.share_narrow) == (1.0, 1.0, 1.0)
    assert loc.narrow == HOME and loc.broad == HOME[:6]


def test_morning_ignores_weekend_and_afternoon():
    sat = START + dt.timedelta(days=5)
    far = geo.encode(40.0, -100.0, 7)
    pings = morning_pings("u", [HOME] * 3) + morning_pings("u", [far] * 10, day=sat)
    p = cell_point(far)
    pings += [Ping("u", at(START, 15, k), p.lat, p.lon) for k in range(10)]
    loc = infer_morning_location(pings, AREA, CFG)
    assert isinstance(loc, MorningLocation) and loc.narrow == HOME


def test_morning_window_edges_inclusive():
    p = cell_point(HOME)
    pings = [Ping("u", at(START, 9, 0), p.lat, p.lon), Ping("u", at(START, 11, 15), p.lat, p.lon)]
    assert isinstance(infer_morning_location(pings, AREA, CFG), MorningLocation)
    late = [Ping("u", at(START, 11, 15, 1), p.lat, p.lon)]
    assert infer_morning_location(late, AREA, CFG).reason == "no-morning-pings"


def _other_area_cell():
    # a geohash7 in a different geohash5 from HOME
    return geo.encode(37.45, -121.0, 7)


@pytest.mark.parametrize("n_in, ok", [(8, True), (7, False)])
def test_share_in_area_boundary(n_in, ok):
    out = _other_area_cell()
    loc = infer_morning_location(morning_pings("u", [HOME] * n_in + [out] * (10 - n_in)),
                                 AREA, CFG)
    if ok:
        assert isinstance(loc, MorningLocation) and loc.share_in_area == 0.8
    else:
        assert loc.reason == "share-in-area"


def _broad_cells():
    """Three distinct geohash6 cells inside HOME's geohash5."""
    g6 = [c for c in children(HOME[:5], 32) if c != HOME[:6]][:2]
    return [HOME[:6]] + g6


@pytest.mark.parametrize("split, ok", [((6, 4, 0), True), ((5, 3, 2), False)])
def test_share_broad_boundary(split, ok):
    cells = [c + "0" for c in _broad_cells()]
    pings = morning_pings("u", sum(([c] * n for c, n in zip(cells, split)), []))
    loc = infer_morning_location(pings, AREA, CFG)
    if ok:
        assert isinstance(loc, MorningLocation) and loc.share_broad == 0.6
    else:
        assert loc.reason == "share-broad"


def test_half_in_modal_broad_rejected():
    cells = [c + "0" for c in _broad_cells()]
    loc = infer_morning_location(morning_pings("u", [cells[0]] * 5 + [cells[1]] * 5), AREA, CFG)
    # modal tie resolves to the smaller code, whose share is 0.5
    assert loc.reason == "share-broad"


@pytest.mark.parametrize("split, ok", [((4, 3, 3), True), ((3, 3, 3, 1), False)])
def test_share_narrow_boundary(split, ok):
    cells = children(HOME[:6], 4)
    pings = morning_pings("u", sum(([c] * n for c, n in zip(cells, split)), []))
    loc = infer_morning_location(pings, AREA, CFG)
    if ok:
        assert isinstance(loc, MorningLocation) and loc.share_narrow == 0.4
    else:
        assert loc.reason == "share-narrow"


def test_broad_outside_area_rejected_regardless():
    loc = infer_morning_location(morning_pings("u", [HOME] * 10), frozenset({"9q8yy"}), CFG)
    assert loc.reason == "broad-outside-area"


# ---------------------------------------------------------------- user base

@pytest.mark.parametrize("weeks, ok", [(12, True), (11, False)])
def test_active_weeks_boundary(weeks, ok):
    ub = base(weekly_pings("u", weeks, 10))
    assert (ub.users == ["u"]) is ok
    if not ok:
        assert ub.rejections["u"] == "active-weeks"


@pytest.mark.parametrize("drop, ok", [(0, True), (1, False)])
def test_pings_per_week_boundary(drop, ok):
    pings = weekly_pings("u", 12, 10)[drop:]
    ub = base(pings)
    assert (ub.users == ["u"]) is ok
    if not ok:
        assert ub.rejections["u"] == "pings-per-week"


def test_weekend_pings_do_not_count():
    pings = weekly_pings("u", 12, 10)[1:]
    sat = START + dt.timedelta(days=5)
    p = cell_point(HOME)
    pings.append(Ping("u", at(sat, 10, 0), p.lat, p.lon))
    assert base(pings).rejections["u"] == "pings-per-week"


def test_all_thresholds_exactly_at_boundary_included():
    # 12 weeks, an average of exactly 10 in-area pings, morning shares 0.8/0.6/0.4
    g6 = _broad_cells()
    narrow = children(g6[0], 3)
    other_broad = g6[1] + "0"
    outside = _other_area_cell()
    week0 = ([narrow[0]] * 4 + [narrow[1]] * 1 + [narrow[2]] * 1 + [other_broad] * 2
             + [outside] * 2)
    pings = morning_pings("u", week0)
    # remaining in-area pings at 14:00 so they do not affect morning shares
    p = cell_point(narrow[0])
    extra = 12 * 10 - 8
    for k in range(extra):
        day = START + dt.timedelta(weeks=k % 12)
        pings.append(Ping("u", at(day, 14, 0) + dt.timedelta(minutes=k // 12), p.lat, p.lon))
    ub = base(pings)
    assert ub.users == ["u"]
    m = ub.morning["u"]
    assert (m.share_in_area, m.share_broad, m.share_narrow) == (0.8, 0.6, 0.4)


def test_empty_and_homeless_users():
    ub = filter_user_base({"a": [], "b": weekly_pings("b", 12, 10)}, AREA, CFG, homes={})
    assert ub.rejections == {"a": "no-pings", "b": "no-home"}
    assert ub.rejection_counts()["no-home"] == 1
    cfg = PipelineConfig(require_home=False)
    assert filter_user_base({"b": weekly_pings("b", 12, 10)}, AREA, cfg, {}).users == ["b"]


# ---------------------------------------------------------------- visits

R_CELL = geo.encode(37.47, -122.12, 8)


def rest(rid, cell=R_CELL, name=None, **kw):
    p = cell_point(cell)
    return RestaurantRecord(rid, name or rid, p.lat, p.lon, **kw)


def lunch(user, cell, minutes, day=START):
    p = cell_point(cell)
    return [Ping(user, at(day, 12, 0) + dt.timedelta(minutes=m), p.lat, p.lon) for m in minutes]


MORNING = MorningLocation("u", HOME[:6], HOME, 1.0, 1.0, 1.0)


@pytest.mark.parametrize("minutes, n", [((0, 3.0), 1), ((0, 2.99), 0), ((0,), 0)])
def test_two_pings_three_minutes_boundary(minutes, n):
    vs = detect_visits(lunch("u", R_CELL, minutes), [rest("r1")], MORNING, HOME, CFG)
    assert len(vs) == n
    if n:
        v = vs[0]
        assert (v.restaurant_id, v.ping_count, v.dwell_minutes) == ("r1", 2, 3.0)
        assert v.week_index == 0


def test_adjacent_cell_pings_count():
    nb = sorted(geo.adjacent(R_CELL))[0]
    vs = detect_visits(lunch("u", nb, (0, 5)), [rest("r1")], MORNING, HOME, CFG)
    assert [v.restaurant_id for v in vs] == ["r1"]


def test_overlap_with_morning_cell_suppresses():
    cell = MORNING.narrow + "5"
    vs = detect_visits(lunch("u", cell, range(0, 11, 2)), [rest("r1", cell)], MORNING, None, CFG)
    assert vs == []


def test_overlap_with_home_suppresses_and_missing_home_skips():
    home = geo.encode(37.47, -122.12, 7)
    pings = lunch("u", R_CELL, (0, 5))
    assert detect_visits(pings, [rest("r1")], MORNING, home, CFG) == []
    assert len(detect_visits(pings, [rest("r1")], MORNING, None, CFG)) == 1


def test_longest_dwell_wins():
    nb = sorted(geo.adjacent(R_CELL))
    # r2 sits two cells away so only the shared middle pings touch both patches
    r1 = rest("r1", R_CELL)
    far = geo.encode(geo.decode(R_CELL).lat, geo.decode(R_CELL).lon + 2 * geo.cell_size(8)[1], 8)
    r2 = rest("r2", far)
    mid = geo.encode(geo.decode(R_CELL).lat, geo.decode(R_CELL).lon + geo.cell_size(8)[1], 8)
    assert mid in nb
    pings = lunch("u", R_CELL, (0,)) + lunch("u", mid, (2, 4)) + lunch("u", R_CELL, (8,))
    vs = detect_visits(pings, [r1, r2], MORNING, HOME, CFG)
    assert [(v.restaurant_id, v.dwell_minutes) for v in vs] == [("r1", 8.0)]


def test_equal_dwell_tie_goes_to_smaller_id():
    mid = geo.encode(geo.decode(R_CELL).lat, geo.decode(R_CELL).lon + geo.cell_size(8)[1], 8)
    far = geo.encode(geo.decode(R_CELL).lat, geo.decode(R_CELL).lon + 2 * geo.cell_size(8)[1], 8)
    rs = [rest("zz", far), rest("aa", R_CELL)]
    vs = detect_visits(lunch("u", mid, (0, 4)), rs, MORNING, HOME, CFG)
    assert [v.restaurant_id for v in vs] == ["aa"]


def test_non_lunch_pings_ignored():
    p = cell_point(R_CELL)
    pings = [Ping("u", at(START, 15, m), p.lat, p.lon) for m in range(0, 20, 2)]
    assert detect_visits(pings, [rest("r1")], MORNING, HOME, CFG) == []


def test_visit_per_day():
    pings = lunch("u", R_CELL, (0, 4)) + lunch("u", R_CELL, (0, 4), START + dt.timedelta(days=8))
    vs = detect_visits(pings, [rest("r1")], MORNING, HOME, CFG)
    assert [v.week_index for v in vs] == [0, 1]


# ---------------------------------------------------------------- dedupe / choice sets

def test_dedupe_alphabetical_case_insensitive():
    rs = [rest("2", name="beta Deli"), rest("1", name="Alpha Cafe"), rest("3", name="alpha cafe2")]
    out = dedupe_restaurants(rs)
    assert [r.name for r in out] == ["Alpha Cafe"]
    lone = rest("9", geo.encode(37.0, -122.0, 8))
    assert dedupe_restaurants([lone]) == [lone]


def _at_miles(miles):
    # due north of the narrow cell center
    c = MORNING.point
    return c.lat + miles / 3958.8 * 180 / 3.141592653589793, c.lon


@pytest.mark.parametrize("miles, kept", [(19.999, True), (20.1, False)])
def test_twenty_mile_cull_boundary(miles, kept):
    lat, lon = _at_miles(miles)
    rs = [RestaurantRecord("far", "far", lat, lon), rest("near", HOME + "0")]
    cs = build_choice_set(MORNING, rs, CFG)
    assert ("far" in cs.restaurant_ids) is kept
    assert all(0 < d <= 20 for d in cs.distances)


def test_distance_floor_and_full_roster():
    c = MORNING.point
    rs = [RestaurantRecord("a", "a", c.lat, c.lon), rest("b", HOME + "0")]
    cs = build_choice_set(MORNING, rs, CFG)
    assert cs.restaurant_ids == ("a", "b")
    assert cs.distances[0] == 0.01
    assert len(cs) == 2


def test_no_alternatives():
    lat, lon = _at_miles(30)
    with pytest.raises(DataError, match="no-alternatives"):
        build_choice_set(MORNING, [RestaurantRecord("x", "x", lat, lon)], CFG)
    with pytest.raises(DataError):
        build_choice_set(MORNING, [], CFG)


# ---------------------------------------------------------------- estimation sample

def V(u, r, k=0):
    day = START + dt.timedelta(days=k)
    return Visit(u, r, day, week_index(day, START), 5.0, 2)


SMALL = PipelineConfig(sample_start=START, sample_end=START + dt.timedelta(days=6),
                       min_weekly_restaurant_visits=100)


@pytest.mark.parametrize("n, kept", [(3, True), (2, False)])
def test_three_visit_floor(n, kept):
    vs = [V("u", "r", k) for k in range(n)] + [V("v", "r", k) for k in range(5)]
    _, users, _ = filter_estimation_sample(vs, SMALL)
    assert ("u" in users) is kept


def test_restaurant_kept_on_overall_visits_from_outside_base():
    vs = [V("out", "r", k) for k in range(5)] + [V("u", "q", k) for k in range(5)]
    _, users, rests = filter_estimation_sample(vs, SMALL, user_base=["u"])
    assert rests == ["q", "r"] and users == ["u"]
    vs = vs[1:]
    assert filter_estimation_sample(vs, SMALL, user_base=["u"])[2] == ["q"]


def test_weekly_average_rule():
    cfg = PipelineConfig(sample_start=START, sample_end=START + dt.timedelta(days=13),
                         min_total_restaurant_visits=100, min_user_visits=1)
    # two weeks: two base visits average exactly one per week, one visit does not
    vs = [V("u", "r", 0), V("u", "r", 8), V("u", "q", 1)]
    _, _, rests = filter_estimation_sample(vs, cfg)
    assert rests == ["r"]


def test_drop_cascade_reaches_fixed_point():
    # dropping user a (2 visits) pushes r below 5 overall, which drops b to 2 visits
    vs = ([V("a", "r", 0), V("a", "r", 1)] + [V("b", "r", k) for k in range(3)]
          + [V("b", "q", 3)] + [V("c", "q", k) for k in range(5)])
    out, users, rests = filter_estimation_sample(vs, SMALL)
    assert users == ["c"] and rests == ["q"]
    assert filter_estimation_sample(out, SMALL) == (out, users, rests)


def test_week_index_offsets_from_first_monday():
    assert week_index(START, START) == 0
    assert week_index(START + dt.timedelta(days=6), START) == 0
    assert week_index(START + dt.timedelta(days=7), START) == 1
    assert week_index(dt.date(2017, 1, 4), dt.date(2017, 1, 4)) == 0
    assert CFG.n_weeks == week_index(CFG.sample_end, START) + 1


def test_rejection_type():
    assert isinstance(infer_morning_location([], AREA, CFG), Rejection)
