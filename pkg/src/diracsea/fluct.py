"""Vacuum and macroscopic fermion-number statistics in a ball.

Everything here is plain quadrature and closed-form algebra; no Fock space
is built. Lengths are in meters and momenta/masses in 1/m.

The variance of the fermion number in a ball of radius ``b`` (Gaussian
window) is, per species,

    Var = (2 b^6 / 9 pi^2) int_0^Lambda dp int dq exp(-b^2 q^2) I(p, q)

which after ``u = b p``, ``w = b q``, ``mu = b m`` becomes

    Var = (2 / 9 pi^2) int_0^{b Lambda} du int_0^{w_max} dw exp(-w^2) I_sym(u, w; mu)

with ``I_sym(p, q) = I(p, q) + I(p, -q)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .modes import InvalidParameterError, SpeciesTable, standard_species_table
from .quadrature import QuadratureError, integrate

# Cut-off of order the inverse Planck length, and the fermion density of
# graphite, both in SI-based natural units.
PLANCK_CUTOFF = 1e35
GRAPHITE_DENSITY = 4.2e30

W_MAX = 10.0
# Total standard deviation coefficient for 24 species: (4/3)^(1/3) pi^(-11/12).
DELTA0_COEFFICIENT = (4 / 3) ** (1 / 3) * math.pi ** (-11 / 12)
# bm thresholds separating the three mass regimes.
CASE1_MIN_BM = 1e3
CASE2_MAX_BM = 1.0
CASES = ("auto", "case1", "case2", "case3")

_SERIES_SWITCH = 0.05


@dataclass(frozen=True)
class FluctuationSpec:
    """Cut-off, ball radius, species masses and quadrature tolerance.

    ``radius`` is the ball radius ``b``; alternatively pass ``volume`` and the
    radius of the ball with that volume is used.
    """

    cutoff: float
    radius: float | None = None
    species: SpeciesTable = field(default_factory=standard_species_table)
    rtol: float = 1e-6
    case: str = "auto"
    volume: float | None = None

    def __post_init__(self):
        if self.radius is None and self.volume is None:
            raise InvalidParameterError("give either radius or volume")
        if self.radius is not None and self.volume is not None:
            raise InvalidParameterError("give radius or volume, not both")
        if self.radius is None:
            if not self.volume >= 0:
                raise InvalidParameterError(f"volume must be >= 0, got {self.volume}")
            object.__setattr__(self, "radius", (3 * self.volume / (4 * math.pi)) ** (1 / 3))
            object.__setattr__(self, "volume", None)
        if not (self.cutoff >= 0 and math.isfinite(self.cutoff)):
            raise InvalidParameterError(f"cutoff must be >= 0, got {self.cutoff}")
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise InvalidParameterError(f"radius must be >= 0, got {self.radius}")
        if not 0 < self.rtol <= 0.1:
            raise InvalidParameterError(f"rtol must lie in (0, 0.1], got {self.rtol}")
        if self.case not in CASES:
            raise InvalidParameterError(f"case must be one of {CASES}, got {self.case!r}")

    @property
    def ball_volume(self):
        return 4 * math.pi * self.radius**3 / 3


@dataclass(frozen=True)
class FluctuationResult:
    n0: float
    variance: np.ndarray = field(repr=False)
    variance_total: float = 0.0
    stddev: float = 0.0
    asymptotic_variance: np.ndarray = field(default=None, repr=False)
    asymptotic_total: float = 0.0
    cases: tuple = ()
    errors: np.ndarray = field(default=None, repr=False)
    method: str = "quadrature"

    def to_dict(self, spec):
        return {
            "method": self.method,
            "cutoff": spec.cutoff,
            "radius": spec.radius,
            "volume": spec.ball_volume,
            "n0": self.n0,
            "variance_total": self.variance_total,
            "stddev": self.stddev,
            "asymptotic_total": self.asymptotic_total,
            "asymptotic_stddev": math.sqrt(self.asymptotic_total),
            "case_thresholds": {"case1_min_bm": CASE1_MIN_BM, "case2_max_bm": CASE2_MAX_BM},
            "species": [
                {
                    "id": s.id,
                    "mass": s.mass,
                    "case": c,
                    "variance": float(v),
                    "asymptotic_variance": float(a),
                    "error": float(e),
                }
                for s, c, v, a, e in zip(
                    spec.species, self.cases, self.variance, self.asymptotic_variance, self.errors
                )
            ],
        }


def vacuum_density(cutoff, species_count):
    """Sea fermions per unit volume, ``Lambda^3 S / 3 pi^2``."""
    return cutoff**3 * species_count / (3 * math.pi**2)


def n0(spec):
    """Expected vacuum fermion number in the (sharp) ball."""
    return vacuum_density(spec.cutoff, spec.species.count) * spec.ball_volume


def _energy(k, m):
    return np.sqrt(k * k + m * m)


def variance_integrand(p, q, m):
    """``I(p, q) = pq (pq - (2/3) E(p+q) E(p) + E(p+q) (q^2 - pq) / (3 E(p)))``.

    Vectorised over ``p`` and ``q``. At ``p = 0`` the value is 0.
    """
    p, q = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(q, dtype=float))
    e = _energy(p, m)
    ep = _energy(p + q, m)
    safe = np.where(e > 0, e, 1.0)
    out = p * q * (p * q - (2 / 3) * ep * e + ep * (q * q - p * q) / (3 * safe))
    return np.where(p == 0, 0.0, out)


def symmetric_integrand(p, q, m):
    """``I(p, q) + I(p, -q)`` evaluated without catastrophic cancellation.

    For ``|q| < 0.05 E(p)`` an even series through ``q^10`` is used; elsewhere
    the closed form with ``E(p+q) - E(p-q) = 4pq / (E(p+q) + E(p-q))``.
    """
    p, q = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(q, dtype=float))
    m = float(m)
    e = _energy(p, m)
    out = np.zeros(p.shape)
    small = (np.abs(q) < _SERIES_SWITCH * e) & (e > 0)
    if np.any(small):
        es, ps, qs = e[small], p[small], q[small]
        s2 = (ps / es) ** 2
        t2 = (m / es) ** 2
        r2 = (qs / es) ** 2
        t4 = t2 * t2
        poly = (
            s2 * (3 * t2 + 2 * s2) / 3
            - 0.75 * s2 * t4 * r2
            - 0.625 * s2 * t4 * (2 * s2 - t2) * r2 * r2
            - (7 / 192) * s2 * t4 * (48 * s2 * s2 - 80 * s2 * t2 + 15 * t4) * r2**3
        )
        out[small] = qs**4 * poly
    big = ~small & (p > 0)
    if np.any(big):
        eb, pb, qb = e[big], p[big], q[big]
        e_sum = _energy(pb + qb, m) + _energy(pb - qb, m)
        e_diff = 4 * pb * qb / e_sum
        out[big] = (
            2 * pb**2 * qb**2
            - (2 / 3) * pb * qb * eb * e_diff
            + (pb * qb**3 * e_diff - pb**2 * qb**2 * e_sum) / (3 * eb)
        )
    return out


def _inner(u, mu, rtol):
    """``int_0^W exp(-w^2) I_sym(u, w; mu) dw``."""
    if u == 0:
        return 0.0, 0.0
    pts = [0.0, W_MAX] if u >= W_MAX else [0.0, u, W_MAX]
    res = integrate(
        lambda w: np.exp(-w * w) * symmetric_integrand(u, w, mu), pts, rtol=rtol, atol=1e-300
    )
    return res.value, res.error


def _outer_breakpoints(upper, mu):
    pts = {0.0, upper}
    k = 1.0
    while k < upper:
        pts.add(k)
        pts.add(min(3 * k, upper))
        k *= 10
    for f in (0.5, 1.0, 2.0):
        if 0 < f * mu < upper:
            pts.add(f * mu)
    return np.array(sorted(pts))


def species_variance(cutoff, radius, mass, rtol=1e-6, max_panels=2000):
    """Adaptive two-level quadrature of one species' variance.

    Returns ``(variance, error_estimate)``. Raises :class:`QuadratureError`
    (carrying the best estimate) when the tolerance is not met.
    """
    upper = radius * cutoff
    if upper == 0:
        return 0.0, 0.0
    mu = radius * mass
    inner_rtol = rtol * 1e-2
    inner_err = []

    def outer(us):
        vals = np.empty(len(us))
        for i, u in enumerate(us):
            vals[i], err = _inner(float(u), mu, inner_rtol)
            inner_err.append(err)
        return vals

    pref = 2 / (9 * math.pi**2)
    try:
        res = integrate(outer, _outer_breakpoints(upper, mu), rtol=rtol, max_panels=max_panels)
    except QuadratureError as exc:
        raise QuadratureError(str(exc), pref * exc.value, pref * exc.error) from None
    err = res.error + inner_rtol * abs(res.value)
    return pref * res.value, pref * err


def reference_variance(cutoff, radius, mass, panels_per_decade=64, inner_panels=64):
    """Slow non-adaptive reference: fixed K15 panels, log-spaced in ``u``."""
    from .quadrature import fixed_panels

    upper = radius * cutoff
    if upper == 0:
        return 0.0
    mu = radius * mass

    def inner(u):
        lo = [0.0, W_MAX] if u >= W_MAX else [0.0, u, W_MAX]
        edges = np.unique(np.concatenate([np.linspace(a, b, inner_panels + 1) for a, b in zip(lo[:-1], lo[1:])]))
        return fixed_panels(lambda w: np.exp(-w * w) * symmetric_integrand(u, w, mu), edges)

    first = min(1.0, upper)
    edges = list(np.linspace(0.0, first, panels_per_decade + 1))
    if upper > first:
        decades = math.log10(upper / first)
        n = max(1, int(math.ceil(decades * panels_per_decade)))
        edges += list(first * np.logspace(0, decades, n + 1)[1:])
    edges = np.array(sorted(set(edges) | ({mu} if 0 < mu < upper else set())))
    val = fixed_panels(lambda us: np.array([inner(float(u)) for u in us]), edges)
    return 2 / (9 * math.pi**2) * val


def case_label(radius, mass):
    bm = radius * mass
    if bm > CASE1_MIN_BM:
        return "case1"
    if bm <= CASE2_MAX_BM:
        return "case2"
    return "case3"


def asymptotic_species_variance(cutoff, radius):
    """Large-``b Lambda`` per-species variance ``Lambda b / (18 pi^(3/2))``."""
    return cutoff * radius / (18 * math.pi**1.5)


def variance_asymptotic(spec):
    """Per-species asymptotic variances, their total, and case labels."""
    per = np.full(spec.species.count, asymptotic_species_variance(spec.cutoff, spec.radius))
    if spec.case == "auto":
        cases = tuple(case_label(spec.radius, m) for m in spec.species.masses)
    else:
        cases = (spec.case,) * spec.species.count
    return per, float(per.sum()), cases


def variance_quadrature(spec):
    """Per-species quadrature variances and error estimates.

    Species sharing a mass share one quadrature.
    """
    cache = {}
    var = np.empty(spec.species.count)
    err = np.empty(spec.species.count)
    for i, m in enumerate(spec.species.masses):
        if m not in cache:
            cache[m] = species_variance(spec.cutoff, spec.radius, m, spec.rtol)
        var[i], err[i] = cache[m]
    return var, err


def fluctuation_statistics(spec, method="quadrature"):
    """Collect ``n0``, variances and standard deviation into one result."""
    asym, asym_total, cases = variance_asymptotic(spec)
    if method == "quadrature":
        var, err = variance_quadrature(spec)
    elif method == "asymptotic":
        var, err = asym, np.zeros_like(asym)
    else:
        raise InvalidParameterError(f"unknown method {method!r}")
    total = math.fsum(var.tolist())
    return FluctuationResult(
        n0=n0(spec),
        variance=var,
        variance_total=total,
        stddev=math.sqrt(max(total, 0.0)),
        asymptotic_variance=asym,
        asymptotic_total=asym_total,
        cases=cases,
        errors=err,
        method=method,
    )


def stddev_coefficient(total_variance, cutoff, volume):
    """``Delta_0 / (sqrt(Lambda) V^(1/6))``."""
    return math.sqrt(total_variance) / (math.sqrt(cutoff) * volume ** (1 / 6))


def macro_statistics(spec, particles, inside=True, stddev=None):
    """Expectation and standard deviation of the fermion number for a
    macroscopic state with ``particles`` extra fermions in the ball.

    Outside the ball only the vacuum part remains. The standard deviation is
    the vacuum one (asymptotic unless ``stddev`` is given).
    """
    if particles < 0:
        raise InvalidParameterError(f"particle number must be >= 0, got {particles}")
    if stddev is None:
        stddev = math.sqrt(variance_asymptotic(spec)[1])
    base = n0(spec)
    return (particles + base if inside else base), stddev


def distinguishability_volume(fermion_density, cutoff, coefficient=DELTA0_COEFFICIENT):
    """Volume at which the mean fermion number equals the vacuum spread.

    Solves ``rho V = c sqrt(Lambda) V^(1/6)``, i.e. ``V = (c sqrt(Lambda) / rho)^(6/5)``.
    """
    if not fermion_density > 0 or not cutoff > 0:
        raise InvalidParameterError("fermion density and cutoff must be positive")
    return (coefficient * math.sqrt(cutoff) / fermion_density) ** 1.2


def distinguishability_radius(fermion_density, cutoff, coefficient=DELTA0_COEFFICIENT):
    """Ball radius above which two macroscopic states are told apart by fermion number."""
    vol = distinguishability_volume(fermion_density, cutoff, coefficient)
    return (3 * vol / (4 * math.pi)) ** (1 / 3)


def distinguishability_ratio(expectation_a, expectation_b, stddev):
    """``|<F>_a - <F>_b| / Delta``; values far above 1 mean distinguishable."""
    if stddev <= 0:
        raise InvalidParameterError("standard deviation must be positive")
    return abs(expectation_a - expectation_b) / stddev
