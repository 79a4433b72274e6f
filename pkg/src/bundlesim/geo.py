"""Travel distances and times between city locations.

Provides interchangeable travel providers: straight-line (great circle),
detour-factor (great circle scaled by a constant road-winding factor), and a
client for an external routing HTTP service with per-pair memoization.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0088  # IUGG mean radius

# Coordinates are rounded to 5 decimals (~1.1 m) for cache keys; finer
# precision is irrelevant at city scale and would bloat the memo.
_CACHE_DECIMALS = 5


class RoutingServiceError(RuntimeError):
    """Raised when the routing service is unreachable or returns garbage."""

    def __init__(self, endpoint, pair, reason):
        self.endpoint = endpoint
        self.pair = pair
        super().__init__(f"routing service {endpoint!r} failed for {pair}: {reason}")


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 latitude/longitude pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in km."""
    lat1, lon1 = math.radians(a.lat), math.radians(a.lon)
    lat2, lon2 = math.radians(b.lat), math.radians(b.lon)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_km_arrays(lat1, lon1, lat2, lon2):
    """Vectorized great-circle distance; inputs in degrees, broadcastable."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def straight_line_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km (alias kept for the public API)."""
    return haversine_km(a, b)


def interpolate(a: GeoPoint, b: GeoPoint, fraction: float) -> GeoPoint:
    """Point at `fraction` of the great-circle arc from a to b (slerp)."""
    if fraction <= 0.0:
        return a
    if fraction >= 1.0:
        return b
    lat1, lon1 = math.radians(a.lat), math.radians(a.lon)
    lat2, lon2 = math.radians(b.lat), math.radians(b.lon)
    d = haversine_km(a, b) / EARTH_RADIUS_KM
    if d < 1e-12:
        return a
    sa = math.sin((1.0 - fraction) * d) / math.sin(d)
    sb = math.sin(fraction * d) / math.sin(d)
    x = sa * math.cos(lat1) * math.cos(lon1) + sb * math.cos(lat2) * math.cos(lon2)
    y = sa * math.cos(lat1) * math.sin(lon1) + sb * math.cos(lat2) * math.sin(lon2)
    z = sa * math.sin(lat1) + sb * math.sin(lat2)
    lat = math.atan2(z, math.sqrt(x * x + y * y))
    lon = math.atan2(y, x)
    return GeoPoint(math.degrees(lat), math.degrees(lon))


def _cache_key(a: GeoPoint, b: GeoPoint):
    return (
        round(a.lat, _CACHE_DECIMALS),
        round(a.lon, _CACHE_DECIMALS),
        round(b.lat, _CACHE_DECIMALS),
        round(b.lon, _CACHE_DECIMALS),
    )


class TravelProvider:
    """Distance/time oracle shared (read-mostly) across simulation runs.

    kind is one of "straight-line", "detour-factor", "routing-service".
    speed_profile maps hour-of-day (0-23) to km/h and injects hourly traffic
    into travel times: duration = distance / speed[hour].

    The memo cache tolerates concurrent readers; writes are serialized with a
    lock. Cached values never change a result (lookups are pure).
    """

    def __init__(self, kind="detour-factor", speed_profile=None, detour_factor=1.3,
                 service_endpoint=None, session=None):
        if kind not in ("straight-line", "detour-factor", "routing-service"):
            raise ValueError(f"unknown travel provider kind {kind!r}")
        if speed_profile is None:
            speed_profile = [30.0] * 24
        speed_profile = [float(s) for s in speed_profile]
        if len(speed_profile) != 24:
            raise ValueError("speed_profile needs exactly 24 hourly entries")
        if any(s <= 0.0 for s in speed_profile):
            raise ValueError("all speeds must be strictly positive")
        if kind == "detour-factor" and detour_factor < 1.0:
            raise ValueError("detour_factor must be >= 1")
        if kind == "routing-service" and not service_endpoint:
            raise ValueError("routing-service provider needs service_endpoint")
        self.kind = kind
        self.speed_profile = speed_profile
        self.detour_factor = float(detour_factor)
        self.service_endpoint = service_endpoint
        self._session = session
        self._cache = {}
        self._lock = threading.Lock()
        self.service_requests = 0  # instrumentation: outbound HTTP calls

    # -- distance -----------------------------------------------------------

    def distance_km(self, a: GeoPoint, b: GeoPoint) -> float:
        # analytic kinds are cheaper to recompute than to memoize; the cache
        # exists to avoid repeated round-trips to the routing service
        if self.kind == "straight-line":
            return haversine_km(a, b)
        if self.kind == "detour-factor":
            return haversine_km(a, b) * self.detour_factor
        key = _cache_key(a, b)
        hit = self._cache.get(key)
        if hit is not None:
            return hit[0]
        dist, dur = self._query_service(a, b)
        with self._lock:
            self._cache[key] = (dist, dur)
        return dist

    def distance_km_many(self, lat1, lon1, lat2, lon2):
        """Vectorized distances for the analytic kinds; loops for the service."""
        if self.kind == "straight-line":
            return haversine_km_arrays(lat1, lon1, lat2, lon2)
        if self.kind == "detour-factor":
            return haversine_km_arrays(lat1, lon1, lat2, lon2) * self.detour_factor
        lat1, lon1, lat2, lon2 = np.broadcast_arrays(
            np.asarray(lat1, float), np.asarray(lon1, float),
            np.asarray(lat2, float), np.asarray(lon2, float))
        out = np.empty(lat1.shape)
        it = np.nditer(lat1, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            out[idx] = self.distance_km(GeoPoint(lat1[idx], lon1[idx]),
                                        GeoPoint(lat2[idx], lon2[idx]))
        return out

    # -- time ---------------------------------------------------------------

    def speed_kmh_at(self, depart_s: float) -> float:
        return self.speed_profile[int(depart_s // 3600) % 24]

    def duration_s(self, a: GeoPoint, b: GeoPoint, depart_s: float) -> float:
        """Travel time in seconds, distance divided by the hourly speed."""
        return self.distance_km(a, b) / self.speed_kmh_at(depart_s) * 3600.0

    # -- routing service ----------------------------------------------------

    def _query_service(self, a: GeoPoint, b: GeoPoint):
        import requests

        url = (f"{self.service_endpoint.rstrip('/')}/route/v1/driving/"
               f"{a.lon},{a.lat};{b.lon},{b.lat}?overview=false")
        pair = ((a.lat, a.lon), (b.lat, b.lon))
        self.service_requests += 1
        try:
            session = self._session if self._session is not None else requests
            resp = session.get(url, timeout=30)
            resp.raise_for_status()
            payload = resp.json()
            route = payload["routes"][0]
            return float(route["distance"]) / 1000.0, float(route["duration"])
        except RoutingServiceError:
            raise
        except Exception as exc:  # connection errors, bad JSON, missing fields
            raise RoutingServiceError(self.service_endpoint, pair, exc) from exc

    # -- on-disk cache ------------------------------------------------------

    def load_cache_file(self, path):
        """Preload the memo from a file of lat1,lon1,lat2,lon2,distance_m,duration_s rows."""
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                lat1, lon1, lat2, lon2, dist_m, dur_s = line.split(",")
                key = _cache_key(GeoPoint(float(lat1), float(lon1)),
                                 GeoPoint(float(lat2), float(lon2)))
                with self._lock:
                    self._cache[key] = (float(dist_m) / 1000.0, float(dur_s))

    def save_cache_file(self, path):
        with self._lock:
            items = sorted(self._cache.items())
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for (lat1, lon1, lat2, lon2), (dist, dur) in items:
                dur_out = dur if dur is not None else dist / self.speed_profile[0] * 3600.0
                fh.write(f"{lat1},{lon1},{lat2},{lon2},{dist * 1000.0!r},{dur_out!r}\n")

    def cache_size(self) -> int:
        return len(self._cache)


def travel_distance(provider: TravelProvider, a: GeoPoint, b: GeoPoint) -> float:
    return provider.distance_km(a, b)


def travel_time(provider: TravelProvider, a: GeoPoint, b: GeoPoint, depart_s: float) -> float:
    return provider.duration_s(a, b, depart_s)


def provider_from_config(cfg: dict) -> TravelProvider:
    """Build a provider from a scenario config block.

    Recognized keys: kind, detour_factor, speed_kmh (flat profile shortcut),
    speed_profile (24 entries), endpoint, cache_file.
    """
    kind = cfg.get("kind", "detour-factor")
    if "speed_profile" in cfg:
        profile = cfg["speed_profile"]
    else:
        profile = [float(cfg.get("speed_kmh", 30.0))] * 24
    provider = TravelProvider(
        kind=kind,
        speed_profile=profile,
        detour_factor=float(cfg.get("detour_factor", 1.3)),
        service_endpoint=cfg.get("endpoint"),
    )
    if cfg.get("cache_file"):
        provider.load_cache_file(cfg["cache_file"])
    return provider
