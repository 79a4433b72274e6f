"""Life-cycle emissions, annual delivery cost, and global projection figures."""

from __future__ import annotations

import json
from dataclasses import dataclass

FLEET_KINDS = ("motorcycle", "car", "van")
SPECIES = ("CO2", "NOx", "VOC")

# (well-to-wheels g/km, vehicle-cycle g/day) per fleet kind and species
DEFAULT_EMISSION_FACTORS = {
    "motorcycle": {"CO2": (58.2, 159.0), "NOx": (0.0189, 0.192), "VOC": (0.0216, 0.200)},
    "car": {"CO2": (129.3, 907.0), "NOx": (0.0420, 1.03), "VOC": (0.0478, 0.772)},
    "van": {"CO2": (323.3, 1821.0), "NOx": (0.105, 2.02), "VOC": (0.119, 1.44)},
}
DEFAULT_LIFESPAN_YEARS = 10.0

TREE_KG_CO2_PER_YEAR = 22.0
SCC_USD_PER_TONNE = 185.0

# Published share of emission savings attributable to a five-minute delay.
# The narrative value and the one implied by the projection table disagree;
# both are exposed and callers pick explicitly.
S_BUNDLING_NARRATIVE = 0.256
S_BUNDLING_TABLE = 7.96 / (3740.0 * 0.05 * 0.181)


def lifecycle_emissions(fleet_kind: str, n_vehicles: float, km_per_day: float,
                        species: str = "CO2", factors: dict | None = None) -> float:
    """Life-cycle emissions in g/day: amortized vehicle-cycle plus
    well-to-wheels operation over the day's mileage."""
    if n_vehicles < 0 or km_per_day < 0:
        raise ValueError("fleet size and mileage must be >= 0")
    factors = factors if factors is not None else DEFAULT_EMISSION_FACTORS
    try:
        wtw_g_km, cycle_g_day = factors[fleet_kind][species]
    except KeyError as exc:
        raise KeyError(f"no emission factors for fleet={fleet_kind!r}, species={species!r}") from exc
    return n_vehicles * cycle_g_day + wtw_g_km * km_per_day


def vehicle_cycle_g_per_day(vehicle_cycle_kg: float, lifespan_years: float = DEFAULT_LIFESPAN_YEARS) -> float:
    """Amortize a per-vehicle embodied total (kg) to g/day over the lifespan.

    Consistency path for the per-day factors table: per_day = 1000 * kg / (365 * T).
    """
    if lifespan_years <= 0:
        raise ValueError("lifespan must be > 0")
    return 1000.0 * vehicle_cycle_kg / (365.0 * lifespan_years)


def load_emission_factors(path) -> dict:
    """Factor table from JSON: {fleet: {species: [wtw_g_per_km, vehicle_cycle_g_per_day]}}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    out = {}
    for fleet, per_species in raw.items():
        out[fleet] = {}
        for species, pair in per_species.items():
            wtw, cycle = float(pair[0]), float(pair[1])
            if wtw < 0 or cycle < 0:
                raise ValueError(f"negative factor for {fleet}/{species}")
            out[fleet][species] = (wtw, cycle)
    return out


@dataclass(frozen=True)
class CostParams:
    """Direct-cost inputs of running a delivery fleet for a year."""

    purchase_usd: float
    resale_usd: float
    annual_other_usd: float  # maintenance, insurance, ...
    fuel_l_per_100km: float
    wage_usd_per_year: float
    fuel_usd_per_l: float
    lifetime_years: float = 10.0

    def __post_init__(self):
        if self.resale_usd < 0 or self.purchase_usd < self.resale_usd:
            raise ValueError("need purchase >= resale >= 0")
        for name in ("annual_other_usd", "fuel_l_per_100km", "wage_usd_per_year",
                     "fuel_usd_per_l", "lifetime_years"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


MOTORCYCLE_COSTS = CostParams(purchase_usd=2200.0, resale_usd=250.0, annual_other_usd=190.0,
                              fuel_l_per_100km=2.5, wage_usd_per_year=17900.0,
                              fuel_usd_per_l=2.63, lifetime_years=10.0)
CAR_COSTS = CostParams(purchase_usd=16400.0, resale_usd=1800.0, annual_other_usd=370.0,
                       fuel_l_per_100km=6.3, wage_usd_per_year=17900.0,
                       fuel_usd_per_l=2.63, lifetime_years=10.0)


def annual_cost(params: CostParams, n_max: float, n_avg: float, km_per_year: float) -> float:
    """Direct annual delivery cost: depreciation + wages + fuel + other."""
    if not n_max >= n_avg >= 0:
        raise ValueError("need n_max >= n_avg >= 0")
    if km_per_year < 0:
        raise ValueError("mileage must be >= 0")
    depreciation = n_max * (params.purchase_usd - params.resale_usd) / params.lifetime_years
    wages = n_avg * params.wage_usd_per_year
    fuel = params.fuel_l_per_100km / 100.0 * km_per_year * params.fuel_usd_per_l
    other = n_max * params.annual_other_usd
    return depreciation + wages + fuel + other


@dataclass(frozen=True)
class GlobalProjection:
    savings_mt: float
    trees_equivalent: float
    scc_usd: float


def global_projection(m_co2_mt: float, r_grocery: float, r_online: float,
                      s_bundling: float) -> GlobalProjection:
    """Worldwide annual CO2 savings and their tree/social-cost equivalents.

    savings = global car+van emissions x grocery share of trips x online
    penetration x bundling savings share. Trees absorb 22 kg CO2 a year;
    the social cost of carbon is $185 per tonne.
    """
    for name, rate in (("r_grocery", r_grocery), ("r_online", r_online),
                       ("s_bundling", s_bundling)):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} must be in [0, 1]")
    savings_mt = m_co2_mt * r_grocery * r_online * s_bundling
    trees = savings_mt * 1e9 / TREE_KG_CO2_PER_YEAR
    scc = savings_mt * 1e6 * SCC_USD_PER_TONNE
    return GlobalProjection(savings_mt=savings_mt, trees_equivalent=trees, scc_usd=scc)
