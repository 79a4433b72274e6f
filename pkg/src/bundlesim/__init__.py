"""Order bundling, fleet dispatch, and patience/mileage trade-off toolkit."""

from .geo import GeoPoint, TravelProvider, haversine_km, straight_line_distance
from .model import Order, RunMetrics, ScenarioConfig, Vehicle, Vendor, ingest_orders, write_orders
from .shareability import Bundle, ShareabilityGraph, build_graph, bundle_route, clique_cover, split_clique
from .dispatch import run_simulation, simulate_once
from .theory import TheoryParams

__all__ = [
    "GeoPoint", "TravelProvider", "haversine_km", "straight_line_distance",
    "Order", "RunMetrics", "ScenarioConfig", "Vehicle", "Vendor",
    "ingest_orders", "write_orders",
    "Bundle", "ShareabilityGraph", "build_graph", "bundle_route",
    "clique_cover", "split_clique",
    "run_simulation", "simulate_once",
    "TheoryParams",
]
