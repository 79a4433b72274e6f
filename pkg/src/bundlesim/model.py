"""Delivery domain objects, scenario configuration, and order file I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .geo import GeoPoint, TravelProvider, provider_from_config

ORDER_CSV_HEADER = "id,vendor_id,vendor_lat,vendor_lon,cust_lat,cust_lon,order_epoch_s"


class IngestError(ValueError):
    """Malformed order file; message carries the offending line or id."""


class ConfigError(ValueError):
    """Invalid or incomplete scenario configuration."""


@dataclass
class Order:
    """A point-to-point delivery request.

    t_o is the order instant, t_r = t_o + T_p the ready-for-pickup instant
    (both integer seconds since scenario start). t_p/t_d are filled in by the
    simulation once the order is served.
    """

    id: str
    vendor_id: str
    vendor_loc: GeoPoint
    customer_loc: GeoPoint
    t_o: int
    t_r: int
    t_p: float | None = None
    t_d: float | None = None

    @property
    def pud_s(self) -> float | None:
        if self.t_p is None:
            return None
        return self.t_p - self.t_r


@dataclass
class Vendor:
    id: str
    loc: GeoPoint
    popularity: float = 0.0  # mean orders per minute, >= 0

    def __post_init__(self):
        if self.popularity < 0:
            raise ValueError("vendor popularity must be >= 0")


@dataclass
class Vehicle:
    """A fleet vehicle tracked by its last known coordinates.

    loc/free_time say where and when the vehicle finishes its latest assigned
    work. A pending repositioning trip, if any, is stored so the dispatcher
    can divert the vehicle mid-leg.
    """

    id: int
    loc: GeoPoint
    free_time: float
    mileage_km: float = 0.0
    generated_at: float = 0.0
    repositioned_last: bool = False
    served_count: int = 0
    gap_km_since_service: float = 0.0
    pending_reposition: tuple | None = None  # (origin, depart_s, target, arrive_s, leg_km)


@dataclass
class ScenarioConfig:
    """All knobs of one simulation scenario.

    Durations are seconds. The generator block (`gen`) is optional and feeds
    the synthetic order generator; `travel` mirrors the provider config.
    """

    T_B: int = 300
    delta_pud: int = 600
    k: int = 2
    d_v: float = 2.0
    d_c: float = 2.0
    T_p: int = 300
    T_R: int = 600
    T_W: int = 1200
    travel: dict = field(default_factory=lambda: {"kind": "detour-factor", "detour_factor": 1.3, "speed_kmh": 30.0})
    rng_seed: int = 0
    horizon: int = 86400
    same_vendor_only: bool = False
    rrl_count: int = 10
    rrl: list | None = None  # explicit return points [(lat, lon), ...]; derived from vendors when None
    fleet_kind: str = "motorcycle"
    gen: dict | None = None
    theory: dict | None = None  # overrides for the closed-form model (e.g. V_km, C_b)
    sweep: dict | None = None  # grid spec consumed by the sweep runner
    debug_graph_dir: str | None = None

    def __post_init__(self):
        for name in ("T_B", "delta_pud", "T_p", "T_R", "T_W", "horizon"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.T_B <= 0:
            raise ConfigError("T_B must be > 0")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.d_v <= 0 or self.d_c <= 0:
            raise ConfigError("d_v and d_c must be > 0")
        if self.rrl is not None and len(self.rrl) == 0:
            raise ConfigError("explicit rrl list must be non-empty")

    def make_provider(self) -> TravelProvider:
        return provider_from_config(self.travel)


def scenario_from_dict(data: dict) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown scenario fields: {', '.join(unknown)}")
    try:
        return ScenarioConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: scenario file must hold a JSON object")
    return scenario_from_dict(data)


@dataclass
class RunMetrics:
    """Aggregate outputs of one simulation run."""

    n_orders: int = 0
    fleet_size: int = 0
    total_mileage_km: float = 0.0
    delivery_mileage_km: float = 0.0
    service_mileage_km: float = 0.0
    avg_pud_s: float = 0.0
    avg_delivery_delay_s: float = 0.0
    bundled_fraction: float = 0.0
    bundle_size_histogram: dict = field(default_factory=dict)
    n_bundles: int = 0
    avg_bundle_saving: float = 0.0  # mean (1 - d_b/d_o) over multi-order bundles
    starting_mileage_km: float = 0.0  # penalty charged per generated vehicle
    avg_gap_km: float = 0.0  # mean mileage between a delivery and the next pickup
    batch_compute_times_s: list = field(default_factory=list)
    batch_order_counts: list = field(default_factory=list)

    def to_dict(self, include_timings=False) -> dict:
        out = {
            "n_orders": self.n_orders,
            "fleet_size": self.fleet_size,
            "total_mileage_km": self.total_mileage_km,
            "delivery_mileage_km": self.delivery_mileage_km,
            "service_mileage_km": self.service_mileage_km,
            "avg_pud_s": self.avg_pud_s,
            "avg_delivery_delay_s": self.avg_delivery_delay_s,
            "bundled_fraction": self.bundled_fraction,
            "bundle_size_histogram": {str(k): v for k, v in sorted(self.bundle_size_histogram.items())},
            "n_bundles": self.n_bundles,
            "avg_bundle_saving": self.avg_bundle_saving,
            "starting_mileage_km": self.starting_mileage_km,
            "avg_gap_km": self.avg_gap_km,
        }
        if include_timings:
            out["batch_compute_times_s"] = self.batch_compute_times_s
            out["batch_order_counts"] = self.batch_order_counts
        return out


# -- order file I/O ----------------------------------------------------------


def ingest_orders(path, t_p: int) -> list[Order]:
    """Read an order CSV and return orders sorted by (t_o, id).

    Each row is id,vendor_id,vendor_lat,vendor_lon,cust_lat,cust_lon,order_epoch_s.
    Ready times are populated as t_o + t_p. Malformed rows, out-of-range
    coordinates and duplicate ids raise IngestError naming the culprit.
    """
    orders = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != ORDER_CSV_HEADER:
            raise IngestError(f"{path}: line 1: expected header {ORDER_CSV_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise IngestError(f"{path}: line {lineno}: expected 7 fields, got {len(parts)}")
            oid, vendor_id = parts[0], parts[1]
            if oid in seen:
                raise IngestError(f"{path}: line {lineno}: duplicate order id {oid!r}")
            seen.add(oid)
            try:
                vlat, vlon, clat, clon = (float(x) for x in parts[2:6])
                t_o = int(parts[6])
            except ValueError as exc:
                raise IngestError(f"{path}: line {lineno}: {exc}") from exc
            try:
                vendor_loc = GeoPoint(vlat, vlon)
                customer_loc = GeoPoint(clat, clon)
            except ValueError as exc:
                raise IngestError(f"{path}: line {lineno}: {exc}") from exc
            orders.append(Order(id=oid, vendor_id=vendor_id, vendor_loc=vendor_loc,
                                customer_loc=customer_loc, t_o=t_o, t_r=t_o + t_p))
    orders.sort(key=lambda o: (o.t_o, o.id))
    return orders


def write_orders(path, orders) -> None:
    """Serialize orders to the canonical CSV (round-trips through ingest_orders)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ORDER_CSV_HEADER + "\n")
        for o in sorted(orders, key=lambda o: (o.t_o, o.id)):
            fh.write(f"{o.id},{o.vendor_id},{o.vendor_loc.lat!r},{o.vendor_loc.lon!r},"
                     f"{o.customer_loc.lat!r},{o.customer_loc.lon!r},{o.t_o}\n")


def baseline_unbundled_times(orders, travel: TravelProvider) -> dict:
    """Delivery instant of each order under immediate solo service.

    A dedicated vehicle picks the order up the moment it is ready, so the
    reference delivery time is t_r plus the direct vendor-to-customer travel
    time. Actual delivery delays are measured against these values.
    """
    return {o.id: o.t_r + travel.duration_s(o.vendor_loc, o.customer_loc, o.t_r)
            for o in orders}
