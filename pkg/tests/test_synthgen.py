import math

import numpy as np
import pytest
from scipy import stats

from bundlesim.geo import GeoPoint, haversine_km
from bundlesim.synthgen import (SpatialModel, clustering_coefficient, estimate_scale,
                                generate_from_config, generate_orders, inverse_popularity_cdf,
                                law_from_config, sample_popularities, scale_to_daily_volume)
from bundlesim.theory import TheoryParams, mean_popularity, popularity_cdf

from conftest import km_east, km_north

PAPER = TheoryParams()
CENTER = GeoPoint(25.1, 55.1)


def test_sampling_is_deterministic():
    a = sample_popularities(100, PAPER, seed=5)
    b = sample_popularities(100, PAPER, seed=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_popularities(100, PAPER, seed=6))


def test_inverse_cdf_roundtrips():
    rng = np.random.default_rng(0)
    us = rng.random(1000)
    lams = inverse_popularity_cdf(us, PAPER)
    for u, lam in zip(us[:100], lams[:100]):
        assert popularity_cdf(float(lam), PAPER) == pytest.approx(u, abs=1e-9)


def test_large_sample_passes_ks_test():
    lams = sample_popularities(100_000, PAPER, seed=11)
    result = stats.kstest(lams, lambda x: np.array([popularity_cdf(v, PAPER) for v in x]))
    assert result.pvalue > 0.01


def test_big_vendor_fraction_matches_tail_mass():
    n = 100_000
    lams = sample_popularities(n, PAPER, seed=12)
    frac = float((lams > PAPER.z2).mean())
    g = PAPER.gamma_b
    sigma = math.sqrt(g * (1 - g) / n)
    assert abs(frac - g) <= 3.0 * sigma


def test_zero_rate_vendor_emits_nothing():
    spatial = SpatialModel(n_vendors=2)
    orders, vendors = generate_orders(spatial, [0.0, 0.5], 3600, seed=1)
    assert all(o.vendor_id != vendors[0].id for o in orders)


def test_poisson_count_concentration():
    spatial = SpatialModel(n_vendors=1)
    horizon = 10_000 * 60  # 1e4 minutes at 1 order/min
    orders, _ = generate_orders(spatial, [1.0], horizon, seed=2)
    assert abs(len(orders) - 10_000) <= 3.0 * math.sqrt(10_000)


def test_customers_inside_served_disk_without_clustering():
    spatial = SpatialModel(n_vendors=3, U=2.0, cluster_mix=0.0)
    orders, vendors = generate_orders(spatial, [0.3, 0.3, 0.3], 86400, seed=3)
    locs = {v.id: v.loc for v in vendors}
    assert orders
    for o in orders:
        assert haversine_km(o.customer_loc, locs[o.vendor_id]) <= 2.0 + 1e-6


def test_stream_sorted_and_interarrivals_exponential():
    # low rate keeps the 1-second timestamp grid negligible against the gaps
    spatial = SpatialModel(n_vendors=1)
    orders, _ = generate_orders(spatial, [0.05], 86400 * 5, seed=4)
    times = np.array([o.t_o for o in orders], dtype=float)
    assert np.all(np.diff(times) >= 0)
    gaps = np.diff(times)
    result = stats.kstest(gaps, "expon", args=(0, gaps.mean()))
    assert result.pvalue > 0.01


def test_derived_seeds_make_vendors_independent():
    spatial = SpatialModel(n_vendors=2)
    orders_a, _ = generate_orders(spatial, [0.5, 0.5], 7200, seed=9)
    orders_b, _ = generate_orders(spatial, [0.5, 0.0], 7200, seed=9)
    a_v0 = [o.t_o for o in orders_a if o.vendor_id == "v000"]
    b_v0 = [o.t_o for o in orders_b if o.vendor_id == "v000"]
    assert a_v0 == b_v0  # silencing vendor 1 leaves vendor 0's stream intact


# -- clustering coefficient ------------------------------------------------------------


def test_triangle_has_full_clustering():
    pts = [CENTER, km_east(CENTER, 0.1), km_north(CENTER, 0.1)]
    assert clustering_coefficient(pts, 1.0) == pytest.approx(1.0)


def test_path_has_zero_clustering():
    pts = [CENTER, km_east(CENTER, 1.0), km_east(CENTER, 2.0)]
    assert clustering_coefficient(pts, 1.2) == 0.0


def test_clustering_requires_three_points():
    with pytest.raises(ValueError):
        clustering_coefficient([CENTER, km_east(CENTER, 1.0)], 1.0)


def test_clustering_grows_with_radius():
    rng = np.random.default_rng(5)
    pts = [km_east(km_north(CENTER, float(rng.uniform(-2, 2))), float(rng.uniform(-2, 2)))
           for _ in range(120)]
    gammas = [clustering_coefficient(pts, r) for r in (0.5, 1.0, 2.0, 4.0)]
    assert all(0.0 <= g <= 1.0 for g in gammas)
    assert all(b >= a for a, b in zip(gammas, gammas[1:]))


def test_clustered_placement_beats_uniform():
    wins = 0
    for seed in range(20):
        clustered = SpatialModel(n_vendors=1, U=2.0, V=0.8, cluster_mix=0.8)
        uniform = SpatialModel(n_vendors=1, U=2.0, V=0.8, cluster_mix=0.0)
        orders_c, _ = generate_orders(clustered, [0.15], 86400, seed=seed)
        orders_u, _ = generate_orders(uniform, [0.15], 86400, seed=seed)
        g_c = clustering_coefficient([o.customer_loc for o in orders_c], 0.8)
        g_u = clustering_coefficient([o.customer_loc for o in orders_u], 0.8)
        wins += g_c > g_u
    assert wins >= 17  # clustering dominates across seeded repetitions


# -- config plumbing ---------------------------------------------------------------------


def test_scale_to_daily_volume():
    lams, scale = scale_to_daily_volume([0.5, 0.5], 1440.0)
    assert sum(lams) * 1440.0 == pytest.approx(1440.0)
    assert scale == pytest.approx(1.0)


def test_law_from_config_overrides():
    law = law_from_config({"popularity": {"c": 50.0, "d": 148.27573, "z1": 1e-6}})
    assert law.c == 50.0
    assert law.z2 == pytest.approx(0.1, abs=1e-6)
    with pytest.raises(ValueError):
        law_from_config({"popularity": {"bogus": 1.0}})


def test_generate_from_config_hits_target_volume():
    orders, vendors, scale = generate_from_config(
        {"n_vendors": 10, "orders_per_day": 2000}, 86400, seed=21, t_p=300)
    assert len(vendors) == 10
    assert abs(len(orders) - 2000) < 4.0 * math.sqrt(2000)
    assert all(o.t_r == o.t_o + 300 for o in orders)


def test_estimate_scale_recovers_generator_scale():
    orders, vendors, scale = generate_from_config(
        {"n_vendors": 10, "orders_per_day": 2000}, 86400, seed=22, t_p=300)
    est = estimate_scale(orders, 10, 86400, PAPER)
    # definition: realized mean per-vendor rate over the law's mean rate
    expected = len(orders) / (86400 / 60.0) / 10 / mean_popularity(PAPER)
    assert est == pytest.approx(expected, rel=1e-12)
    # of the same magnitude as the renormalization factor (draw luck aside)
    assert 0.5 * scale < est < 2.0 * scale
