"""Order shareability graph, clique cover, and bundle construction.

A batch of orders becomes a graph whose edges link orders that can ride in
the same vehicle (vendors within d_v, customers within d_c, ready times
inside one batch window). The graph is partitioned into cliques, cliques are
split into bundles of at most k orders, and every multi-order bundle must
beat the summed solo mileage of its members.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .geo import GeoPoint, TravelProvider, haversine_km_arrays
from .model import Order


class BundleRejected(Exception):
    """A candidate bundle cannot guarantee its members' pickup-delay cap."""


@dataclass(frozen=True)
class Stop:
    order_id: str
    kind: str  # "pickup" | "dropoff"
    loc: GeoPoint


@dataclass(frozen=True)
class EquivalentOrder:
    """Single-order stand-in for a bundle, as seen by the dispatcher."""

    pickup_loc: GeoPoint
    drop_loc: GeoPoint
    ready_time: float
    effective_pud: float


@dataclass
class Bundle:
    """Up to k orders served by one vehicle along a pickups-first route."""

    orders: list
    route: tuple  # Stop sequence, all pickups before all dropoffs
    d_b: float  # route length, km
    d_o: float  # summed solo route lengths, km
    equivalent: EquivalentOrder | None = None

    @property
    def order_ids(self):
        return tuple(o.id for o in self.orders)

    @property
    def size(self) -> int:
        return len(self.orders)


class ShareabilityGraph:
    """Undirected graph over the order ids of one batch."""

    def __init__(self, nodes, adjacency):
        self.nodes = list(nodes)
        self.adjacency = adjacency  # id -> set of neighbor ids

    def has_edge(self, a, b) -> bool:
        return b in self.adjacency.get(a, ())

    def edges(self):
        seen = set()
        for a in self.nodes:
            for b in self.adjacency[a]:
                if (b, a) not in seen:
                    seen.add((a, b))
        return sorted(seen)

    def n_edges(self) -> int:
        return sum(len(v) for v in self.adjacency.values()) // 2


def build_graph(batch_orders, d_v: float, d_c: float, same_vendor_only=False) -> ShareabilityGraph:
    """Shareability graph of one batch.

    Callers hand in orders whose ready times already sit inside a single
    batch window, so only the spatial conditions are checked here: vendors
    within d_v (or identical vendor ids in same-vendor mode) and customers
    within d_c. Straight-line distances are used for both proximity tests.
    """
    orders = list(batch_orders)
    adjacency = {o.id: set() for o in orders}
    n = len(orders)
    if n >= 2:
        vlat = np.array([o.vendor_loc.lat for o in orders])
        vlon = np.array([o.vendor_loc.lon for o in orders])
        clat = np.array([o.customer_loc.lat for o in orders])
        clon = np.array([o.customer_loc.lon for o in orders])
        cust_ok = haversine_km_arrays(clat[:, None], clon[:, None], clat[None, :], clon[None, :]) <= d_c
        if same_vendor_only:
            vendor_ids = [o.vendor_id for o in orders]
            vend_ok = np.array([[vendor_ids[i] == vendor_ids[j] for j in range(n)] for i in range(n)])
        else:
            vend_ok = haversine_km_arrays(vlat[:, None], vlon[:, None], vlat[None, :], vlon[None, :]) <= d_v
        ok = cust_ok & vend_ok
        for i in range(n):
            for j in range(i + 1, n):
                if ok[i, j]:
                    adjacency[orders[i].id].add(orders[j].id)
                    adjacency[orders[j].id].add(orders[i].id)
    return ShareabilityGraph([o.id for o in orders], adjacency)


def clique_cover(g: ShareabilityGraph) -> list:
    """Partition the node set into cliques, aiming for few cliques.

    Greedy heuristic, O(n^2)-ish: repeatedly seed a clique with the uncovered
    node of highest uncovered-degree, then grow it with the candidate
    (adjacent to all current members) having the most uncovered neighbors.
    Ties break toward the smaller id, so the cover is deterministic for a
    fixed input ordering. Singleton cliques are allowed.
    """
    uncovered = set(g.nodes)
    udeg = {v: sum(1 for w in g.adjacency[v] if w in uncovered) for v in g.nodes}
    cliques = []
    while uncovered:
        seed = min(uncovered, key=lambda v: (-udeg[v], v))
        clique = [seed]
        candidates = {w for w in g.adjacency[seed] if w in uncovered}
        while candidates:
            best = min(candidates, key=lambda v: (-udeg[v], v))
            clique.append(best)
            candidates &= g.adjacency[best]
            candidates.discard(best)
        for v in clique:
            uncovered.discard(v)
        for v in clique:
            for w in g.adjacency[v]:
                if w in uncovered:
                    udeg[w] -= 1
        cliques.append(sorted(clique))
    return cliques


# -- routing inside a bundle --------------------------------------------------

_EXHAUSTIVE_MAX = 4  # 4! x 4! = 576 candidate routes at most


@functools.lru_cache(maxsize=8)
def _perm_tables(m: int):
    """Permutations of range(m) plus gather indices for chain legs."""
    perms = np.array(list(itertools.permutations(range(m))), dtype=np.intp)
    return perms, perms[:, :-1], perms[:, 1:]


class RoutePlanner:
    """Route evaluator over a fixed order pool with a precomputed leg matrix.

    Point 2*i is order i's vendor, point 2*i+1 its customer. Reusing one
    planner across the many candidate bundles of a clique avoids re-deriving
    the same pairwise distances.
    """

    def __init__(self, orders, travel: TravelProvider):
        self.orders = list(orders)
        self.travel = travel
        self.index = {o.id: i for i, o in enumerate(self.orders)}
        lat, lon = [], []
        for o in self.orders:
            lat.extend((o.vendor_loc.lat, o.customer_loc.lat))
            lon.extend((o.vendor_loc.lon, o.customer_loc.lon))
        lat, lon = np.array(lat), np.array(lon)
        self.dist = travel.distance_km_many(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
        self._pick = [Stop(o.id, "pickup", o.vendor_loc) for o in self.orders]
        self._drop = [Stop(o.id, "dropoff", o.customer_loc) for o in self.orders]

    def solo(self, subset) -> float:
        return float(sum(self.dist[2 * self.index[o.id], 2 * self.index[o.id] + 1] for o in subset))

    def route(self, subset):
        """Best pickups-first route over `subset`; returns (stops, length_km).

        Sizes up to 4 are solved exactly by enumerating pickup orderings
        times delivery orderings (for a pair this reduces to the four
        classic two-order paths, and to two when the vendors coincide).
        Larger sets use a nearest-neighbor construction under the same
        pickups-first shape.
        """
        idx = [self.index[o.id] for o in subset]
        m = len(idx)
        if m == 0:
            raise ValueError("route needs at least one order")
        D = self.dist
        if m == 1:
            i = idx[0]
            return (self._pick[i], self._drop[i]), float(D[2 * i, 2 * i + 1])
        if m <= _EXHAUSTIVE_MAX:
            # evaluate every pickup ordering x delivery ordering in one shot:
            # chain lengths per permutation, plus the pickup->delivery link
            perms, frm, to = _perm_tables(m)
            vend = 2 * np.asarray(idx, dtype=np.intp)
            cust = vend + 1
            pick_len = D[vend[frm], vend[to]].sum(axis=1)
            drop_len = D[cust[frm], cust[to]].sum(axis=1)
            link = D[np.ix_(vend[perms[:, -1]], cust[perms[:, 0]])]
            totals = pick_len[:, None] + link + drop_len[None, :]
            flat = int(np.argmin(totals))
            pi, di = divmod(flat, len(perms))
            picks = [idx[j] for j in perms[pi]]
            drops = [idx[j] for j in perms[di]]
            stops = tuple([self._pick[i] for i in picks] + [self._drop[i] for i in drops])
            return stops, float(totals[pi, di])
        # nearest-neighbor fallback: pickups from the smallest-id order on
        idx = sorted(idx, key=lambda i: self.orders[i].id)
        seq = [idx[0]]
        remaining = idx[1:]
        while remaining:
            here = 2 * seq[-1]
            nxt = min(remaining, key=lambda i: (D[here, 2 * i], self.orders[i].id))
            seq.append(nxt)
            remaining.remove(nxt)
        length = sum(D[2 * a, 2 * b] for a, b in zip(seq, seq[1:]))
        drops = []
        here = 2 * seq[-1]
        remaining = list(idx)
        while remaining:
            nxt = min(remaining, key=lambda i: (D[here, 2 * i + 1], self.orders[i].id))
            length += D[here, 2 * nxt + 1]
            here = 2 * nxt + 1
            drops.append(nxt)
            remaining.remove(nxt)
        stops = tuple([self._pick[i] for i in seq] + [self._drop[i] for i in drops])
        return stops, float(length)


def bundle_route(order_set, travel: TravelProvider):
    """Best pickups-first route over the orders; returns (stops, length_km)."""
    orders = list(order_set)
    if not orders:
        raise ValueError("bundle_route needs at least one order")
    return RoutePlanner(orders, travel).route(orders)


def solo_length(orders, travel: TravelProvider) -> float:
    return sum(travel.distance_km(o.vendor_loc, o.customer_loc) for o in orders)


def make_equivalent_order(bundle: Bundle, delta_pud: float, travel: TravelProvider,
                          min_effective_pud: float = 0.0) -> EquivalentOrder:
    """Reduce a bundle to the single order the dispatcher will see.

    Pickup is the first route location, drop-off the last, ready time the
    earliest member ready time. The effective pickup-delay budget shrinks by
    the largest pickup offset along the route so that no member can exceed
    delta_pud. Raises BundleRejected when the internal route makes the cap
    impossible, or when the remaining budget falls below min_effective_pud
    (slack the dispatcher needs when batches outlast the preparation time).
    """
    route = bundle.route
    ready = min(o.t_r for o in bundle.orders)
    ready_by_id = {o.id: o.t_r for o in bundle.orders}
    offsets = []  # (order_id, seconds from route start, no waiting)
    t = 0.0
    prev = route[0].loc
    for stop in route:
        t += travel.duration_s(prev, stop.loc, ready + t)
        prev = stop.loc
        if stop.kind == "pickup":
            offsets.append((stop.order_id, t))
        else:
            break  # pickups precede all drop-offs
    max_offset = max(t for _, t in offsets)
    effective = delta_pud - max_offset
    if effective < min_effective_pud:
        raise BundleRejected(
            f"bundle {bundle.order_ids}: internal pickup span {max_offset:.0f}s leaves "
            f"{effective:.0f}s of pickup-delay budget (< {min_effective_pud:.0f}s required)")
    # waiting at an earlier stop for a late-ready member must not push a
    # later member past its own cap, no matter how early the vehicle shows up
    for j, (jid, joff) in enumerate(offsets):
        for iid, ioff in offsets[j + 1:]:
            induced = (ready_by_id[jid] - ready_by_id[iid]) + (ioff - joff)
            if induced > delta_pud:
                raise BundleRejected(
                    f"bundle {bundle.order_ids}: waiting for {jid} can delay {iid} "
                    f"by {induced:.0f}s > {delta_pud:.0f}s")
    return EquivalentOrder(pickup_loc=route[0].loc, drop_loc=route[-1].loc,
                           ready_time=ready, effective_pud=effective)


def split_clique(clique_orders, k: int, travel: TravelProvider, bundle_check=None) -> list:
    """Split one clique into mileage-saving bundles of at most k orders.

    Greedy: seed with the smallest-id uncovered order, then repeatedly add
    the clique-mate that yields the shortest grown route, provided the grown
    bundle still beats its solo mileage (d_b < d_o) and passes bundle_check.
    Orders whose best grouping fails the tests come out as singletons.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pending = sorted(clique_orders, key=lambda o: o.id)
    planner = RoutePlanner(pending, travel)
    bundles = []
    while pending:
        seed = pending.pop(0)
        members = [seed]
        route, d_b = planner.route(members)
        d_o = d_b
        while len(members) < k and pending:
            best = None
            for cand in pending:
                trial = members + [cand]
                trial_route, trial_db = planner.route(trial)
                trial_do = planner.solo(trial)
                if trial_db >= trial_do:
                    continue
                cand_bundle = Bundle(orders=trial, route=trial_route, d_b=trial_db, d_o=trial_do)
                if bundle_check is not None and not bundle_check(cand_bundle):
                    continue
                if best is None or trial_db < best[1] - 1e-12:
                    best = (cand, trial_db, trial_do, trial_route)
            if best is None:
                break
            cand, d_b, d_o, route = best
            members.append(cand)
            pending.remove(cand)
        if len(members) == 1:
            d_o = d_b
        bundles.append(Bundle(orders=members, route=route, d_b=d_b, d_o=d_o))
    return bundles


def max_pairwise_km(points) -> float:
    pts = list(points)
    if len(pts) < 2:
        return 0.0
    lat = np.array([p.lat for p in pts])
    lon = np.array([p.lon for p in pts])
    return float(haversine_km_arrays(lat[:, None], lon[:, None], lat[None, :], lon[None, :]).max())


def write_graph_csv(path, g: ShareabilityGraph) -> None:
    """Debug dump: one `order_a,order_b` line per edge, sorted."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("order_a,order_b\n")
        for a, b in g.edges():
            fh.write(f"{a},{b}\n")
