"""Geohash cells and great-circle distances."""

import math
from typing import NamedTuple

import numpy as np

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
CHARMAP = {c: i for i, c in enumerate(BASE32)}
MAX_PRECISION = 8
EARTH_RADIUS_MILES = 3958.8


class GeoPoint(NamedTuple):
    lat: float
    lon: float


class BBox(NamedTuple):
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, point):
        lat, lon = point
        return (self.lat_min <= lat <= self.lat_max
                and self.lon_min <= lon <= self.lon_max)

    @property
    def center(self):
        return GeoPoint((self.lat_min + self.lat_max) / 2,
                        (self.lon_min + self.lon_max) / 2)


def _check_point(lat, lon):
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise ValueError(f"coordinates out of range: ({lat}, {lon})")


def _check_code(code):
    if not 1 <= len(code) <= MAX_PRECISION:
        raise ValueError(f"geohash precision must be in [1, {MAX_PRECISION}]: {code!r}")
    for c in code:
        if c not in CHARMAP:
            raise ValueError(f"invalid geohash character {c!r} in {code!r}")


def encode(lat, lon, precision):
    """Standard base-32 geohash of a point.

    Bits alternate longitude/latitude starting with longitude; points on a
    cell's upper edge fall into the upper cell, except at +90/+180 which
    belong to the last cell.
    """
    if not 1 <= precision <= MAX_PRECISION:
        raise ValueError(f"precision must be in [1, {MAX_PRECISION}], got {precision}")
    _check_point(lat, lon)
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bit = 0
    value = 0
    even = True
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if lon >= mid:
                value = (value << 1) | 1
                lon_lo = mid
            else:
                value <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if lat >= mid:
                value = (value << 1) | 1
                lat_lo = mid
            else:
                value <<= 1
                lat_hi = mid
        even = not even
        bit += 1
        if bit == 5:
            chars.append(BASE32[value])
            bit = 0
            value = 0
    return "".join(chars)


def bbox(code):
    """Bounding box of a geohash cell."""
    _check_code(code)
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for c in code:
        d = CHARMAP[c]
        for mask in (16, 8, 4, 2, 1):
            if even:
                mid = (lon_lo + lon_hi) / 2
                if d & mask:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2
                if d & mask:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return BBox(lat_lo, lat_hi, lon_lo, lon_hi)


def decode(code):
    """Center point of a geohash cell."""
    return bbox(code).center


def cell_size(precision):
    """(lat_height, lon_width) in degrees of any cell at this precision."""
    n_bits = 5 * precision
    lon_bits = (n_bits + 1) // 2
    lat_bits = n_bits // 2
    return 180.0 / 2 ** lat_bits, 360.0 / 2 ** lon_bits


def adjacent(code):
    """The (up to 8) cells touching ``code`` at the same precision.

    Latitude does not wrap, so cells on the polar rows have 5 neighbours;
    longitude wraps around the antimeridian.
    """
    _check_code(code)
    if len(code) < 2:
        raise ValueError("adjacent cells require precision >= 2")
    box = bbox(code)
    dlat, dlon = cell_size(len(code))
    clat, clon = box.center
    out = set()
    for di in (-1, 0, 1):
        lat = clat + di * dlat
        if lat <= -90.0 or lat >= 90.0:
            continue
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            lon = clon + dj * dlon
            if lon >= 180.0:
                lon -= 360.0
            elif lon < -180.0:
                lon += 360.0
            out.add(encode(lat, lon, len(code)))
    out.discard(code)
    return out


def haversine_miles(a, b, radius=EARTH_RADIUS_MILES):
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * radius * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix(lat1, lon1, lat2, lon2, radius=EARTH_RADIUS_MILES):
    """Pairwise distances in miles between two point arrays (vectorised)."""
    p1 = np.radians(np.asarray(lat1, float))[:, None]
    l1 = np.radians(np.asarray(lon1, float))[:, None]
    p2 = np.radians(np.asarray(lat2, float))[None, :]
    l2 = np.radians(np.asarray(lon2, float))[None, :]
    h = np.sin((p2 - p1) / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2) ** 2
    return 2 * radius * np.arcsin(np.minimum(1.0, np.sqrt(h)))
