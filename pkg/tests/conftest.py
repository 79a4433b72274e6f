import numpy as np
import pytest

from bundlesim.geo import GeoPoint, TravelProvider
from bundlesim.model import Order, ScenarioConfig


@pytest.fixture
def travel():
    return TravelProvider(kind="straight-line")


@pytest.fixture
def detour():
    return TravelProvider(kind="detour-factor", detour_factor=1.3)


def km_east(origin: GeoPoint, km: float) -> GeoPoint:
    """Point `km` kilometers east of origin along its parallel."""
    dlon = km / (6371.0088 * np.cos(np.radians(origin.lat))) * 180.0 / np.pi
    return GeoPoint(origin.lat, origin.lon + dlon)


def km_north(origin: GeoPoint, km: float) -> GeoPoint:
    dlat = km / 6371.0088 * 180.0 / np.pi
    return GeoPoint(origin.lat + dlat, origin.lon)


def make_order(oid, vendor, vloc, cloc, t_o, t_p=300):
    return Order(id=oid, vendor_id=vendor, vendor_loc=vloc, customer_loc=cloc,
                 t_o=t_o, t_r=t_o + t_p)


def random_batch(rng, n, center=GeoPoint(25.1, 55.1), vendor_spread_km=3.0,
                 cust_spread_km=3.0, n_vendors=4, t_o=100):
    """A batch of orders around a handful of nearby vendors."""
    vendors = []
    for v in range(n_vendors):
        vendors.append((f"v{v}", km_east(km_north(center, rng.uniform(-vendor_spread_km, vendor_spread_km)),
                                          rng.uniform(-vendor_spread_km, vendor_spread_km))))
    orders = []
    for i in range(n):
        vid, vloc = vendors[rng.integers(0, n_vendors)]
        cloc = km_east(km_north(vloc, rng.uniform(-cust_spread_km, cust_spread_km)),
                       rng.uniform(-cust_spread_km, cust_spread_km))
        orders.append(make_order(f"o{i:03d}", vid, vloc, cloc, t_o + int(rng.integers(0, 60))))
    return orders


def exact_min_cover_size(nodes, adjacency) -> int:
    """Exact minimum clique-partition size by subset DP (n <= ~16)."""
    idx = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    adj = [0] * n
    for v in nodes:
        for w in adjacency[v]:
            adj[idx[v]] |= 1 << idx[w]

    def is_clique(mask):
        ms = mask
        while ms:
            i = (ms & -ms).bit_length() - 1
            ms &= ms - 1
            if mask & ~(adj[i] | (1 << i)):
                return False
        return True

    from functools import lru_cache

    @lru_cache(maxsize=None)
    def best(mask):
        if mask == 0:
            return 0
        low_bit = mask & -mask
        candidates = mask & (adj[low_bit.bit_length() - 1] | low_bit)
        result = None
        sub = candidates
        while sub:
            if sub & low_bit and is_clique(sub):
                score = 1 + best(mask & ~sub)
                if result is None or score < result:
                    result = score
            sub = (sub - 1) & candidates
        return result

    return best((1 << n) - 1)


def best_assignment_bruteforce(weights):
    """(cardinality, min cost) over all partial assignments, DP over columns."""
    import numpy as np

    n, m = weights.shape
    memo = {}

    def rec(i, mask):
        if i == n:
            return (0, 0.0)
        key = (i, mask)
        if key in memo:
            return memo[key]
        res = rec(i + 1, mask)
        for j in range(m):
            if not mask >> j & 1 and np.isfinite(weights[i, j]):
                cnt, cost = rec(i + 1, mask | (1 << j))
                cand = (cnt + 1, cost + weights[i, j])
                if cand[0] > res[0] or (cand[0] == res[0] and cand[1] < res[1] - 1e-12):
                    res = cand
        memo[key] = res
        return res

    return rec(0, 0)


@pytest.fixture
def tiny_scenario():
    return ScenarioConfig(T_B=300, delta_pud=600, k=2, d_v=2.0, d_c=2.0, T_p=300,
                          T_R=600, T_W=1200, rng_seed=3, horizon=21600,
                          gen={"n_vendors": 5, "orders_per_day": 600,
                               "bbox": [25.0, 25.15, 55.0, 55.15]})
