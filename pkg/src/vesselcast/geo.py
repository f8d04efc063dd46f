"""Spherical-earth geometry and angle helpers.

Degrees at the API boundary, radians inside. Scalar functions take
``GeoPoint`` values; the ``*_arr`` variants broadcast over numpy arrays and
are what the pipeline, metrics and risk code use in bulk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_008.8  # IUGG mean radius


class InvalidInputError(ValueError):
    pass


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180)."""
    out = (lon + 180.0) % 360.0 - 180.0
    # float modulo can land exactly on +180 for tiny negative inputs
    return -180.0 if out >= 180.0 else out


def wrap_360(angle):
    """Wrap degrees into [0, 360); works on scalars and arrays."""
    out = np.mod(angle, 360.0)
    out = np.where(out >= 360.0, 0.0, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise InvalidInputError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidInputError(f"latitude {self.lat} outside [-90, 90]")
        object.__setattr__(self, "lon", normalize_lon(float(self.lon)))
        object.__setattr__(self, "lat", float(self.lat))


@dataclass(frozen=True, slots=True)
class EarthModel:
    radius_m: float = EARTH_RADIUS_M

    def __post_init__(self):
        if not (self.radius_m > 0 and math.isfinite(self.radius_m)):
            raise InvalidInputError(f"earth radius must be positive, got {self.radius_m}")


EARTH = EarthModel()


class Bearing(NamedTuple):
    degrees: float
    degenerate: bool


def haversine_distance(a: GeoPoint, b: GeoPoint, earth: EarthModel = EARTH) -> float:
    """Great-circle distance in meters."""
    return float(haversine_arr(a.lon, a.lat, b.lon, b.lat, earth.radius_m))


def haversine_arr(lon1, lat1, lon2, lat2, radius_m: float = EARTH_RADIUS_M):
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=np.float64)) for v in (lon1, lat1, lon2, lat2))
    if not (np.all(np.isfinite(lon1)) and np.all(np.isfinite(lat1))
            and np.all(np.isfinite(lon2)) and np.all(np.isfinite(lat2))):
        raise InvalidInputError("non-finite coordinate")
    h = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * radius_m * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def bearing_arr(lon1, lat1, lon2, lat2):
    """Forward azimuth in degrees [0, 360) from point 1 to point 2 (0 where coincident)."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=np.float64)) for v in (lon1, lat1, lon2, lat2))
    dlon = lon2 - lon1
    east = np.sin(dlon) * np.cos(lat2)
    north = np.cos(lat1) * np.sin(lat2) - np.sin(lat1) * np.cos(lat2) * np.cos(dlon)
    return wrap_360(np.degrees(np.arctan2(east, north)))


def initial_bearing(frm: GeoPoint, to: GeoPoint) -> Bearing:
    """Forward azimuth, clockwise from north.

    Coincident points give ``Bearing(0.0, degenerate=True)`` instead of raising.
    """
    if frm.lon == to.lon and frm.lat == to.lat:
        return Bearing(0.0, True)
    return Bearing(float(bearing_arr(frm.lon, frm.lat, to.lon, to.lat)), False)


def angular_difference(a, b):
    """Signed smallest rotation from ``a`` to ``b`` in degrees, in (-180, 180]."""
    d = np.mod(np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64), 360.0)
    d = np.where(d > 180.0, d - 360.0, d)
    if np.ndim(d) == 0:
        return float(d)
    return d


def path_length(points: Sequence[GeoPoint], earth: EarthModel = EARTH) -> float:
    if len(points) == 0:
        raise InvalidInputError("path_length needs at least one point")
    total = 0.0
    for p, q in zip(points[:-1], points[1:]):
        total += haversine_distance(p, q, earth)
    return total


def path_length_arr(lon, lat, radius_m: float = EARTH_RADIUS_M) -> float:
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    if lon.size == 0:
        raise InvalidInputError("path_length needs at least one point")
    total = 0.0
    for d in haversine_arr(lon[:-1], lat[:-1], lon[1:], lat[1:], radius_m):
        total += float(d)
    return total


def destination_arr(lon, lat, bearing_deg, distance_m, radius_m: float = EARTH_RADIUS_M):
    """Point reached by travelling ``distance_m`` along a great circle with the given initial bearing."""
    lon1 = np.radians(np.asarray(lon, dtype=np.float64))
    lat1 = np.radians(np.asarray(lat, dtype=np.float64))
    brg = np.radians(np.asarray(bearing_deg, dtype=np.float64))
    delta = np.asarray(distance_m, dtype=np.float64) / radius_m
    lat2 = np.arcsin(np.clip(np.sin(lat1) * np.cos(delta) + np.cos(lat1) * np.sin(delta) * np.cos(brg), -1, 1))
    lon2 = lon1 + np.arctan2(np.sin(brg) * np.sin(delta) * np.cos(lat1),
                             np.cos(delta) - np.sin(lat1) * np.sin(lat2))
    lon2 = (np.degrees(lon2) + 180.0) % 360.0 - 180.0
    return lon2, np.degrees(lat2)


def to_local_plane(lon, lat, lon0: float, lat0: float, radius_m: float = EARTH_RADIUS_M):
    """Azimuthal-equidistant (east, north) meters about ``(lon0, lat0)``.

    Distances from the origin are exact; transverse scale error is about
    rho^2 / (6 R^2), i.e. ~1e-6 at 15 km.
    """
    rho = haversine_arr(lon0, lat0, lon, lat, radius_m)
    theta = np.radians(bearing_arr(lon0, lat0, lon, lat))
    return rho * np.sin(theta), rho * np.cos(theta)


def from_local_plane(east, north, lon0: float, lat0: float, radius_m: float = EARTH_RADIUS_M):
    east = np.asarray(east, dtype=np.float64)
    north = np.asarray(north, dtype=np.float64)
    rho = np.hypot(east, north)
    theta = np.degrees(np.arctan2(east, north))
    return destination_arr(np.broadcast_to(lon0, rho.shape), np.broadcast_to(lat0, rho.shape), theta, rho, radius_m)
