"""Closed-form model of how batching windows convert into bundled orders and
saved mileage.

Rates are orders per minute and batch durations are minutes throughout this
module. The vendor popularity law is a truncated power law glued to an
exponential tail; posterior (order-weighted) averages over it are evaluated
with adaptive quadrature split at the two cutoffs, where the density is
discontinuous.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate
from scipy.special import gammaln

_EPSABS = 1e-11
_EPSREL = 1e-10
_SMALL_RATE = 1e-8  # below this, lam*delta is treated as the zero limit


class ParameterError(ValueError):
    """Mutually inconsistent model parameters."""


class DomainError(ValueError):
    """Input outside the model's meaningful domain."""


def continuity_cutoff(a: float, b: float, c: float, d: float, z1: float) -> float:
    """Upper cutoff z2 that makes the popularity CDF continuous."""
    return (math.log(d) + b * math.log(1.0 + a * z1)) / c


@dataclass(frozen=True)
class TheoryParams:
    """Fitted constants of the popularity law and the savings chain.

    Defaults carry the published fit: power-law body up to z1 (0.1389
    orders/min, i.e. 200 orders/day), exponential tail beyond z2, with z2
    derived from the continuity of the CDF. delta_c / U / V are the maximum
    customer bundling distance, the vendor served-area radius, and the
    customer-cluster radius in km.
    """

    a: float = 1002.039
    b: float = 0.925
    c: float = 4.283
    d: float = 0.061
    z1: float = 0.1389
    z2: float | None = None
    delta_c: float = 2.0
    U: float = 2.0
    V: float = 2.0
    C_b: float = 1.0
    w_gm: float = 1.325
    mu_slope: float = 0.0028
    mu_intercept: float = 0.2544
    theta_slope: float = 0.302
    theta_intercept: float = 0.677

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")
        if self.z1 <= 0:
            raise ParameterError("z1 must be > 0")
        if min(self.delta_c, self.U, self.V) <= 0:
            raise ParameterError("radii must be > 0")
        z2_cont = continuity_cutoff(self.a, self.b, self.c, self.d, self.z1)
        if self.z2 is None:
            object.__setattr__(self, "z2", z2_cont)
        elif abs(self.z2 - z2_cont) > 1e-6:
            raise ParameterError(
                f"z2={self.z2} breaks CDF continuity (needs {z2_cont:.9f})")
        if self.z2 < self.z1:
            raise ParameterError("z2 must be >= z1")

    @property
    def gamma_b(self) -> float:
        """Mass of the exponential tail (fraction of big vendors)."""
        return (self.a * self.z1 + 1.0) ** (-self.b)

    def scaled(self, s: float) -> "TheoryParams":
        """Same distribution shape with every rate multiplied by s."""
        if s <= 0:
            raise ParameterError("scale must be > 0")
        return replace(self, a=self.a / s, c=self.c / s, z1=self.z1 * s, z2=None)


# -- shareability geometry -----------------------------------------------------


def p_of_r(r: float, delta_c: float, V: float) -> float:
    """Probability that an order at trip length r pairs with a same-vendor
    order whose customer falls uniformly in the V-disk around this customer."""
    if r < 0:
        raise DomainError("r must be >= 0")
    if r > delta_c:
        p = delta_c ** 2 / V ** 2
    else:
        p = (r ** 2 + delta_c ** 2) / (2.0 * V ** 2)
    if p > 1.0 + 1e-12:
        raise ParameterError(
            f"pairing probability {p:.4f} > 1: V={V} too small for delta_c={delta_c}")
    return min(p, 1.0)


def shareability_prob(lam: float, delta: float, delta_c: float, U: float, V: float) -> float:
    """Probability that an order from a rate-`lam` vendor can pair with at
    least one same-vendor order inside a batch of duration `delta`.

    With U = V = delta_c this reduces to
    1 - (2/x) e^{-x/2} (1 - e^{-x/2}) with x = lam*delta. The x -> 0 limit
    is 0 and is returned analytically for x < 1e-8.
    """
    if lam < 0 or delta < 0:
        raise DomainError("lam and delta must be >= 0")
    x = lam * delta
    if x < _SMALL_RATE:
        return 0.0
    rho = (delta_c / V) ** 2
    y = x * rho
    term_far = (1.0 - delta_c ** 2 / U ** 2) * math.exp(-y)
    term_near = (2.0 / x) * (V / U) ** 2 * math.exp(-y / 2.0) * (-math.expm1(-y / 2.0))
    return 1.0 - term_far - term_near


# -- popularity law -------------------------------------------------------------


def popularity_cdf(lam: float, p: TheoryParams) -> float:
    if lam <= 0:
        return 0.0
    if lam <= p.z1:
        return 1.0 - (p.a * lam + 1.0) ** (-p.b)
    if lam <= p.z2:
        return 1.0 - p.gamma_b
    return 1.0 - p.d * math.exp(-p.c * lam)


def popularity_pdf(lam: float, p: TheoryParams) -> float:
    """Prior density f; zero outside (0, z1] and (z2, inf)."""
    if lam <= 0:
        return 0.0
    if lam <= p.z1:
        return p.a * p.b * (p.a * lam + 1.0) ** (-p.b - 1.0)
    if lam <= p.z2:
        return 0.0
    return p.c * p.d * math.exp(-p.c * lam)


def _segments(fn, p: TheoryParams, epsabs=_EPSABS):
    lo, _ = integrate.quad(fn, 0.0, p.z1, epsabs=epsabs, epsrel=_EPSREL, limit=200)
    hi, _ = integrate.quad(fn, p.z2, np.inf, epsabs=epsabs, epsrel=_EPSREL, limit=200)
    return lo + hi


@functools.lru_cache(maxsize=128)
def mean_popularity(p: TheoryParams, epsabs: float = _EPSABS) -> float:
    """E[lam] by quadrature of lam*f over both support segments."""
    value = _segments(lambda l: l * popularity_pdf(l, p), p, epsabs=epsabs)
    if value <= 0:
        raise ParameterError("mean popularity came out non-positive")
    return value


def mean_popularity_closed_form(p: TheoryParams) -> float:
    """Analytic E[lam]; reported alongside the quadrature for comparison."""
    g = p.gamma_b
    return (1.0 / (p.a * (p.b - 1.0))
            + g / p.a * (1.0 - p.b * (p.a * p.z1 + 1.0) / (p.b - 1.0))
            + g / p.c * (1.0 - math.log(g / p.d)))


def popularity_pdf_posterior(lam: float, p: TheoryParams) -> float:
    """Density of the popularity of a randomly chosen order's vendor."""
    return lam * popularity_pdf(lam, p) / mean_popularity(p)


def posterior_average(fn, p: TheoryParams, epsabs: float = _EPSABS) -> float:
    """Average of fn(lam) under the posterior (order-weighted) law."""
    raw = _segments(lambda l: fn(l) * l * popularity_pdf(l, p), p, epsabs=epsabs)
    return raw / mean_popularity(p)


# -- shareable / bundled fractions ----------------------------------------------


def fraction_shareable(delta: float, p: TheoryParams, epsabs: float = _EPSABS) -> float:
    """F_S: posterior-averaged shareability at batch duration `delta` minutes."""
    if delta < 0:
        raise DomainError("delta must be >= 0")
    if delta == 0:
        return 0.0
    return posterior_average(
        lambda lam: shareability_prob(lam, delta, p.delta_c, p.U, p.V), p, epsabs=epsabs)


def shareable_rate_factor(p: TheoryParams) -> float:
    """lam* / lam: thinning of the vendor rate to orders pairable with a
    given one, after averaging the pairing geometry over trip lengths."""
    q = (p.delta_c / p.V) ** 2
    return q * (1.0 - q / 4.0)


def _poisson_odd_inverse_sum(x: float) -> float:
    """sum over odd n >= 3 of e^-x x^n / (n! n)."""
    if x <= 0:
        return 0.0
    n_max = int(x + 12.0 * math.sqrt(x) + 40.0)
    ns = np.arange(3, n_max + 1, 2, dtype=float)
    logs = ns * math.log(x) - x - gammaln(ns + 1.0) - np.log(ns)
    return float(np.exp(logs).sum())


def _psi_kernel(x: float, normalization: str) -> float:
    """Per-rate unbundled probability at C_b = 1, as a function of x = lam* delta."""
    if x <= 0:
        return 0.0
    s = _poisson_odd_inverse_sum(x)
    if normalization == "printed":
        denom = -math.expm1(-x)
    elif normalization == "exact":
        denom = -math.expm1(-x) - x * math.exp(-x)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    if denom <= 0:
        return 0.0
    return s / denom


def unbundled_given_shareable(lam: float, delta: float, p: TheoryParams,
                              normalization: str = "printed") -> float:
    """psi: probability a shareable order stays unbundled at bundle size 2.

    Splitting an odd-size group of mutually shareable orders into pairs
    strands one order, so odd group sizes n contribute 1/n each. The group
    size is Poisson(lam* delta) conditioned on sharing; `normalization`
    picks the conditioning denominator: "printed" uses 1 - e^-x (at least
    one event), "exact" uses the exact n >= 2 tail mass.
    """
    psi = p.C_b * _psi_kernel(lam * shareable_rate_factor(p) * delta, normalization)
    if psi > 1.0:
        raise ParameterError(f"C_b={p.C_b} drives psi above 1 at lam={lam}")
    return psi


def _support_grid(p: TheoryParams, n: int = 2000):
    """Rate grid covering the law's numerically relevant support."""
    body = np.linspace(p.z1 * 1e-6, p.z1, n // 2)
    tail = np.linspace(p.z2, p.z2 + 745.0 / p.c, n // 2)
    return np.concatenate([body, tail])


def check_stranding_validity(p: TheoryParams, delta: float,
                             normalization: str = "printed") -> None:
    """Raise when C_b pushes psi past 1 on a non-negligible slice of the law.

    psi exceeding 1 only where the popularity density carries vanishing mass
    (deep exponential tail) is numerically irrelevant; there psi is clamped.
    """
    lams = _support_grid(p)
    psis = np.array([p.C_b * _psi_kernel(l * shareable_rate_factor(p) * delta, normalization)
                     for l in lams])
    bad = psis > 1.0
    if not bad.any():
        return
    dens = np.array([popularity_pdf(float(l), p) for l in lams])
    mass = float(integrate.trapezoid(np.where(bad, dens, 0.0), lams))
    if mass > 1e-6:
        raise ParameterError(
            f"C_b={p.C_b} drives psi above 1 on a popularity slice of mass {mass:.2e}")


def admissible_c_b(p: TheoryParams, deltas, normalization: str = "printed") -> float:
    """Largest C_b keeping psi a probability across the law's support and
    the given batch durations (up to a 1e-7 tail-mass allowance)."""
    lams = _support_grid(p)
    dens = np.array([popularity_pdf(float(l), p) for l in lams])
    total = float(integrate.trapezoid(dens, lams))
    tail_mass = total - np.concatenate([[0.0], np.cumsum(
        0.5 * (dens[1:] + dens[:-1]) * np.diff(lams))])
    keep = tail_mass > 1e-7 * total
    worst = 0.0
    srf = shareable_rate_factor(p)
    for delta in deltas:
        for l in lams[keep]:
            worst = max(worst, _psi_kernel(float(l) * srf * float(delta), normalization))
    return 0.999 / worst if worst > 0 else math.inf


def fraction_bundled(delta: float, p: TheoryParams, normalization: str = "printed",
                     epsabs: float = _EPSABS) -> float:
    """F_B: posterior-averaged fraction of orders actually bundled."""
    if delta < 0:
        raise DomainError("delta must be >= 0")
    if delta == 0:
        return 0.0
    check_stranding_validity(p, delta, normalization)
    srf = shareable_rate_factor(p)

    def fn(lam):
        share = shareability_prob(lam, delta, p.delta_c, p.U, p.V)
        psi = min(p.C_b * _psi_kernel(lam * srf * delta, normalization), 1.0)
        return (1.0 - psi) * share

    return posterior_average(fn, p, epsabs=epsabs)


# -- savings chain ---------------------------------------------------------------

_DELTA_FIT_RANGE = (1.0, 20.0)
_THETA_FIT_RANGE = (1.0, 7.0)


@dataclass(frozen=True)
class ChainPoint:
    delta_min: float
    theta_min: float
    F_S: float
    F_B: float
    mu: float
    F_dm: float
    F_gm: float


def mu_of_delta(delta: float, p: TheoryParams) -> float:
    """Average relative mileage saving of a bundle at batch duration delta."""
    return p.mu_slope * delta + p.mu_intercept


def theta_of_delta(delta: float, p: TheoryParams) -> float:
    return p.theta_slope * delta + p.theta_intercept


def delta_of_theta(theta: float, p: TheoryParams) -> float:
    delta = (theta - p.theta_intercept) / p.theta_slope
    if delta <= 0:
        raise DomainError(f"theta={theta} min maps to non-positive batch duration")
    return delta


def saved_mileage_chain(p: TheoryParams, delta: float | None = None,
                        theta: float | None = None,
                        normalization: str = "printed") -> ChainPoint:
    """F_dm, F_gm (and friends) at a batch duration or a patience level.

    Exactly one of delta/theta must be given; the other is derived through
    the linear patience regression. Inputs outside the fitted ranges get a
    warning attached but are still evaluated.
    """
    if (delta is None) == (theta is None):
        raise ValueError("give exactly one of delta or theta")
    if delta is None:
        delta = delta_of_theta(theta, p)
    else:
        theta = theta_of_delta(delta, p)
    if not _DELTA_FIT_RANGE[0] <= delta <= _DELTA_FIT_RANGE[1]:
        warnings.warn(f"batch duration {delta:.2f} min outside the fitted range "
                      f"{_DELTA_FIT_RANGE}", stacklevel=2)
    f_s = fraction_shareable(delta, p)
    f_b = fraction_bundled(delta, p, normalization=normalization)
    mu = mu_of_delta(delta, p)
    f_dm = mu * f_b
    return ChainPoint(delta_min=delta, theta_min=theta, F_S=f_s, F_B=f_b,
                      mu=mu, F_dm=f_dm, F_gm=p.w_gm * f_dm)


def omega(theta: float, p: TheoryParams, normalization: str = "printed") -> float:
    """Saved global-mileage fraction as a function of patience (minutes)."""
    return saved_mileage_chain(p, theta=theta, normalization=normalization).F_gm


# -- locality approximation error ------------------------------------------------


def approx_error(eta: float) -> float:
    """Relative area error of the two-semicircle pairing-region shortcut,
    as a function of eta = trip length / bundling distance. Zero outside
    (0, 1): the shortcut region is exact once the trip is longer than the
    bundling distance."""
    if eta <= 0.0 or eta > 1.0:
        return 0.0
    s = math.sqrt(1.0 - eta * eta / 4.0)
    lobe = eta * s + 2.0 * math.atan2(eta / 2.0, s) - 2.0 * eta * eta * (math.sqrt(3.0) / 4.0 + math.pi / 6.0)
    return 1.0 - math.pi * (eta * eta + 1.0) / (lobe + math.pi * (eta * eta + 1.0))


def mean_approx_error(ratio: float) -> float:
    """Average of approx_error over trip lengths, for U/delta_c = ratio."""
    if ratio <= 0:
        raise DomainError("U/delta_c ratio must be > 0")
    upper = min(ratio, 1.0)
    val, _ = integrate.quad(lambda x: x * approx_error(x), 0.0, upper,
                            epsabs=_EPSABS, epsrel=_EPSREL, limit=200)
    return 2.0 * val / ratio ** 2


# -- calibration -----------------------------------------------------------------


@dataclass
class CalibrationResult:
    params: TheoryParams
    r2: dict


def _linear_fit(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 2 or np.ptp(xs) == 0.0:
        raise ParameterError("degenerate design: need at least two distinct x values")
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(intercept), _r_squared(ys, slope * xs + intercept)


def _r_squared(y, y_hat):
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(((y - y_hat) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0 if ss_res < 1e-18 else 0.0
    return 1.0 - ss_res / ss_tot


def calibrate(observations, p: TheoryParams,
              free=("C_b", "mu", "theta", "w_gm"),
              normalization: str = "printed") -> CalibrationResult:
    """Least-squares refit of the data-driven constants from simulation rows.

    `observations` is a list of dicts with keys delta_min, theta_min,
    bundled_fraction, mu_obs, f_dm_obs, f_gm_obs (only the keys needed by
    the requested `free` set have to be present). Needs >= 5 rows.
    """
    if len(observations) < 5:
        raise ParameterError("calibration needs at least 5 observations")
    r2 = {}
    params = p
    deltas = [row["delta_min"] for row in observations]
    if "theta" in free:
        slope, intercept, score = _linear_fit(deltas, [row["theta_min"] for row in observations])
        params = replace(params, theta_slope=slope, theta_intercept=intercept)
        r2["theta"] = score
    if "mu" in free:
        # mu's role in the chain is F_dm = mu(Delta) * F_B; fit it as that
        # map when the saved-delivery-mileage observable is present, else
        # fall back to the per-bundle average saving
        if all("f_dm_obs" in row and row.get("bundled_fraction") for row in observations):
            ratio = [row["f_dm_obs"] / row["bundled_fraction"] for row in observations]
            slope, intercept, score = _linear_fit(deltas, ratio)
        else:
            slope, intercept, score = _linear_fit(deltas, [row["mu_obs"] for row in observations])
        params = replace(params, mu_slope=slope, mu_intercept=intercept)
        r2["mu"] = score
    if "C_b" in free:
        f_s = np.array([fraction_shareable(dl, params) for dl in deltas])
        base = replace(params, C_b=1.0)
        penalty = np.array([
            f_s[i] - fraction_bundled(deltas[i], base, normalization=normalization)
            for i in range(len(deltas))])  # integral of psi/C_b weighted by share
        observed = np.array([row["bundled_fraction"] for row in observations])
        denom = float((penalty ** 2).sum())
        c_b = float((penalty * (f_s - observed)).sum() / denom) if denom > 0 else 0.0
        # psi must stay a probability everywhere the law carries mass
        c_b = min(max(c_b, 0.0), admissible_c_b(params, deltas, normalization))
        params = replace(params, C_b=c_b)
        fitted = f_s - c_b * penalty
        r2["C_b"] = _r_squared(observed, fitted)
    if "w_gm" in free:
        f_dm = np.array([row["f_dm_obs"] for row in observations])
        f_gm = np.array([row["f_gm_obs"] for row in observations])
        denom = float((f_dm ** 2).sum())
        w = float((f_dm * f_gm).sum() / denom) if denom > 0 else 0.0
        params = replace(params, w_gm=w)
        r2["w_gm"] = _r_squared(f_gm, w * f_dm)
    return CalibrationResult(params=params, r2=r2)


def chain_table(p: TheoryParams, deltas, normalization: str = "printed"):
    """Rows of the savings chain across batch durations (for CSV export)."""
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for delta in deltas:
            rows.append(saved_mileage_chain(p, delta=float(delta), normalization=normalization))
    return rows
