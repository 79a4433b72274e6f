"""Synthetic order streams: Poisson arrivals per vendor, popularities drawn
from the bimodal law, uniform-disk customer placement with optional
preferential clustering, plus the clustering-coefficient diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geo import EARTH_RADIUS_KM, GeoPoint, haversine_km_arrays
from .model import Order, Vendor
from .theory import TheoryParams, mean_popularity


@dataclass(frozen=True)
class SpatialModel:
    """City geometry for the generator.

    Vendors land uniformly in the bbox; each customer lands uniformly in the
    U-disk around its vendor, except that with probability cluster_mix it is
    placed in the V-disk around one of the vendor's earlier customers, which
    reproduces the clustering seen in real customer locations.
    """

    lat_min: float = 25.0
    lat_max: float = 25.25
    lon_min: float = 55.0
    lon_max: float = 55.25
    n_vendors: int = 20
    U: float = 2.0  # km
    V: float = 2.0  # km
    cluster_mix: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.cluster_mix <= 1.0:
            raise ValueError("cluster_mix must be in [0, 1]")
        if self.U <= 0 or self.V <= 0:
            raise ValueError("U and V must be > 0")
        if self.n_vendors < 1:
            raise ValueError("need at least one vendor")


def inverse_popularity_cdf(u, p: TheoryParams):
    """Inverse transform of the bimodal popularity CDF (rates in orders/min)."""
    u = np.asarray(u, dtype=float)
    body = (np.power(1.0 - u, -1.0 / p.b) - 1.0) / p.a
    tail = -np.log((1.0 - u) / p.d) / p.c
    return np.where(u <= 1.0 - p.gamma_b, body, tail)


def sample_popularities(n_vendors: int, p: TheoryParams, seed: int):
    """IID vendor popularities (orders/min) via inverse-transform sampling."""
    rng = np.random.default_rng(seed)
    return inverse_popularity_cdf(rng.random(n_vendors), p)


def scale_to_daily_volume(popularities, orders_per_day: float):
    """Rescale a popularity draw so the expected total hits a target volume.

    Returns (scaled_popularities, scale). The scale also maps the theory
    constants onto the generated scenario via TheoryParams.scaled.
    """
    popularities = np.asarray(popularities, dtype=float)
    total = popularities.sum() * 1440.0
    if total <= 0:
        raise ValueError("popularity draw sums to zero")
    s = orders_per_day / total
    return popularities * s, s


def _disk_offset(center: GeoPoint, radius_km: float, rng) -> GeoPoint:
    # local tangent plane: fine at city scale, exact distances are still
    # measured with the haversine everywhere else
    r = radius_km * math.sqrt(rng.random())
    phi = 2.0 * math.pi * rng.random()
    dlat = math.degrees((r * math.cos(phi)) / EARTH_RADIUS_KM)
    dlon = math.degrees((r * math.sin(phi)) / (EARTH_RADIUS_KM * math.cos(math.radians(center.lat))))
    return GeoPoint(center.lat + dlat, center.lon + dlon)


def generate_vendors(spatial: SpatialModel, popularities, seed: int):
    rng = np.random.default_rng(seed)
    vendors = []
    for i, lam in enumerate(popularities):
        loc = GeoPoint(rng.uniform(spatial.lat_min, spatial.lat_max),
                       rng.uniform(spatial.lon_min, spatial.lon_max))
        vendors.append(Vendor(id=f"v{i:03d}", loc=loc, popularity=float(lam)))
    return vendors


def generate_orders(spatial: SpatialModel, popularities, horizon_s: int, seed: int,
                    t_p: int = 300):
    """A time-sorted order stream over `horizon_s` seconds.

    Arrivals per vendor are homogeneous Poisson at that vendor's rate. Each
    vendor owns a derived rng (seed XOR vendor index) so streams are
    reproducible vendor-by-vendor. Returns (orders, vendors).
    """
    if horizon_s <= 0:
        raise ValueError("horizon must be > 0")
    if len(popularities) != spatial.n_vendors:
        raise ValueError("one popularity per vendor required")
    vendors = generate_vendors(spatial, popularities, seed)
    orders = []
    for idx, vendor in enumerate(vendors):
        rng = np.random.default_rng(seed ^ (idx + 1))
        rate_per_s = vendor.popularity / 60.0
        n = rng.poisson(rate_per_s * horizon_s)
        times = np.sort(rng.integers(1, horizon_s + 1, size=n))
        customers = []
        for j, t_o in enumerate(times):
            if customers and rng.random() < spatial.cluster_mix:
                anchor = customers[rng.integers(0, len(customers))]
                loc = _disk_offset(anchor, spatial.V, rng)
            else:
                loc = _disk_offset(vendor.loc, spatial.U, rng)
            customers.append(loc)
            orders.append(Order(id=f"{vendor.id}-{j:05d}", vendor_id=vendor.id,
                                vendor_loc=vendor.loc, customer_loc=loc,
                                t_o=int(t_o), t_r=int(t_o) + t_p))
    orders.sort(key=lambda o: (o.t_o, o.id))
    return orders, vendors


def clustering_coefficient(points, radius_km: float) -> float:
    """Global clustering (transitivity) of the proximity graph at the given
    connection radius: closed ordered triplets over all ordered triplets
    centered on each node; 0 when no node has two neighbors."""
    pts = list(points)
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    lat = np.array([p.lat for p in pts])
    lon = np.array([p.lon for p in pts])
    dist = haversine_km_arrays(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    adj = (dist <= radius_km).astype(float)
    np.fill_diagonal(adj, 0.0)
    closed = float(np.trace(adj @ adj @ adj))
    deg = adj.sum(axis=1)
    triplets = float((deg * (deg - 1.0)).sum())
    if triplets == 0.0:
        return 0.0
    gamma = closed / triplets
    return min(max(gamma, 0.0), 1.0)


def default_generator_config() -> dict:
    """Generator block of the default synthetic scenario."""
    return {
        "n_vendors": 20,
        "orders_per_day": 5000,
        "U_km": 2.0,
        "V_km": 2.0,
        "cluster_mix": 0.5,
        "bbox": [25.0, 25.25, 55.0, 55.25],
    }


def law_from_config(gen_cfg: dict | None) -> TheoryParams:
    """Popularity law declared in a gen block (falls back to the published fit)."""
    overrides = (gen_cfg or {}).get("popularity") or {}
    allowed = {"a", "b", "c", "d", "z1"}
    unknown = sorted(set(overrides) - allowed)
    if unknown:
        raise ValueError(f"unknown popularity fields: {', '.join(unknown)}")
    return TheoryParams(**{k: float(v) for k, v in overrides.items()})


def generate_from_config(gen_cfg: dict, horizon_s: int, seed: int, t_p: int):
    """Build the order stream described by a scenario's `gen` block.

    Vendor rates are drawn from the (possibly overridden) popularity law,
    then rescaled so the expected volume hits orders_per_day. Returns
    (orders, vendors, scale); scale maps the law onto the generated demand
    level via TheoryParams.scaled.
    """
    cfg = dict(default_generator_config())
    cfg.update(gen_cfg or {})
    bbox = cfg["bbox"]
    spatial = SpatialModel(lat_min=bbox[0], lat_max=bbox[1], lon_min=bbox[2], lon_max=bbox[3],
                           n_vendors=int(cfg["n_vendors"]), U=float(cfg["U_km"]),
                           V=float(cfg["V_km"]), cluster_mix=float(cfg["cluster_mix"]))
    params = law_from_config(cfg)
    draws = sample_popularities(spatial.n_vendors, params, seed)
    lams, scale = scale_to_daily_volume(draws, float(cfg["orders_per_day"]))
    orders, vendors = generate_orders(spatial, lams, horizon_s, seed, t_p=t_p)
    return orders, vendors, scale


def estimate_scale(orders, n_vendors: int, horizon_s: int, p: TheoryParams) -> float:
    """Demand scale of an order stream relative to the published popularity
    law: observed mean per-vendor rate over the law's mean rate."""
    if not orders:
        raise ValueError("cannot estimate scale from an empty stream")
    rate_per_min = len(orders) / (horizon_s / 60.0) / n_vendors
    return rate_per_min / mean_popularity(p)
