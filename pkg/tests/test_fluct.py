import math

import numpy as np
import pytest
from scipy import integrate as sciint
from scipy.optimize import brentq

from diracsea import fluct
from diracsea.modes import InvalidParameterError, single_species, standard_species_table
from diracsea.quadrature import QuadratureError

mpmath = pytest.importorskip("mpmath")


def mp_integrand(p, q, m):
    mpmath.mp.dps = 60
    p, q, m = mpmath.mpf(p), mpmath.mpf(q), mpmath.mpf(m)

    def single(qq):
        e = mpmath.sqrt(p * p + m * m)
        ep = mpmath.sqrt((p + qq) ** 2 + m * m)
        return p * qq * (p * qq - mpmath.mpf(2) / 3 * ep * e + ep * (qq * qq - p * qq) / (3 * e))

    return single(q) + single(-q)


@pytest.mark.parametrize(
    "p, q, m",
    [
        (1.0, 1e-4, 1.0),
        (1.0, 0.049, 1.0),
        (1.0, 0.051 * math.sqrt(2), 1.0),
        (3.0, 2.0, 0.0),
        (1e6, 3.0, 0.0),
        (1e6, 7.0, 1e3),
        (0.3, 5.0, 10.0),
        (50.0, 1e-6, 2.0),
        (1e3, 9.9, 1e5),
    ],
)
def test_symmetric_integrand_high_precision(p, q, m):
    exact = float(mp_integrand(p, q, m))
    got = float(fluct.symmetric_integrand(p, q, m))
    assert got == pytest.approx(exact, rel=1e-12, abs=1e-300)


def test_symmetric_integrand_agrees_with_naive_form_where_stable():
    p, q, m = np.array([1.0, 2.0, 0.5]), np.array([0.8, 3.0, 1.1]), 0.7
    naive = fluct.variance_integrand(p, q, m) + fluct.variance_integrand(p, -q, m)
    assert np.allclose(fluct.symmetric_integrand(p, q, m), naive, rtol=1e-12)


def test_series_branch_matches_symbolic_expansion():
    sympy = pytest.importorskip("sympy")
    p, q, m = sympy.symbols("p q m", positive=True)
    E = sympy.sqrt(p**2 + m**2)

    def single(qq):
        ep = sympy.sqrt((p + qq) ** 2 + m**2)
        return p * qq * (p * qq - sympy.Rational(2, 3) * ep * E + ep * (qq**2 - p * qq) / (3 * E))

    series = sympy.series(single(q) + single(-q), q, 0, 11).removeO()
    for pv, mv in [(1.0, 1.0), (2.0, 0.3), (0.4, 3.0)]:
        e = math.hypot(pv, mv)
        qv = 0.04 * e
        ref = float(series.subs({p: pv, m: mv, q: qv}).evalf(40))
        assert float(fluct.symmetric_integrand(pv, qv, mv)) == pytest.approx(ref, rel=1e-12)


def test_integrand_continuous_across_branch_switch():
    p, m = 2.0, 1.5
    e = math.hypot(p, m)
    lo = fluct.symmetric_integrand(p, 0.05 * e * (1 - 1e-12), m)
    hi = fluct.symmetric_integrand(p, 0.05 * e * (1 + 1e-12), m)
    assert lo == pytest.approx(hi, rel=1e-10)


def test_integrand_zero_at_p_zero():
    assert fluct.variance_integrand(0.0, 1.0, 0.0) == 0
    assert fluct.symmetric_integrand(0.0, 1.0, 0.0) == 0


def direct_variance(cutoff, radius, mass):
    """Unfolded double integral over p in [0, cutoff] and |q| <= 10 / b."""
    b = radius
    qmax = fluct.W_MAX / b
    f = lambda q, p: math.exp(-(b * q) ** 2) * float(fluct.variance_integrand(p, q, mass))
    val, _ = sciint.dblquad(f, 0.0, cutoff, -qmax, qmax, epsabs=1e-13, epsrel=1e-11)
    return 2 * b**6 / (9 * math.pi**2) * val


@pytest.mark.parametrize("cutoff, radius, mass", [(3.0, 1.0, 0.5), (2.0, 1.5, 0.0), (5.0, 0.7, 4.0)])
def test_species_variance_matches_direct_double_integral(cutoff, radius, mass):
    var, err = fluct.species_variance(cutoff, radius, mass, rtol=1e-10)
    assert var == pytest.approx(direct_variance(cutoff, radius, mass), rel=1e-8)
    assert err < 1e-9 * var


def test_species_variance_matches_fixed_panel_reference():
    var, _ = fluct.species_variance(100.0, 1.0, 1.0, rtol=1e-10)
    assert var == pytest.approx(fluct.reference_variance(100.0, 1.0, 1.0), rel=1e-9)


def test_species_variance_scaling_in_b_and_lambda():
    # the variance depends on b and Lambda only through b Lambda and b m
    a, _ = fluct.species_variance(200.0, 0.5, 2.0, rtol=1e-10)
    b, _ = fluct.species_variance(100.0, 1.0, 1.0, rtol=1e-10)
    assert a == pytest.approx(b, rel=1e-9)


def test_species_variance_budget_error():
    with pytest.raises(QuadratureError) as info:
        fluct.species_variance(1e4, 1.0, 0.0, rtol=1e-12, max_panels=2)
    assert info.value.value > 0


def test_heavy_species_are_suppressed():
    light, _ = fluct.species_variance(1e3, 1.0, 0.0)
    heavy, _ = fluct.species_variance(1e3, 1.0, 300.0)
    assert heavy < light


def test_n0_exact():
    spec = fluct.FluctuationSpec(1e3, radius=2e-3)
    assert fluct.n0(spec) == pytest.approx(8 / math.pi**2 * 1e9 * spec.ball_volume, rel=1e-14)
    assert fluct.vacuum_density(2.0, 1) == pytest.approx(8 / (3 * math.pi**2))


def test_case_labels():
    assert fluct.case_label(1.0, 2e3) == "case1"
    assert fluct.case_label(1.0, 1e3) == "case3"
    assert fluct.case_label(1.0, 1.0) == "case2"
    assert fluct.case_label(10.0, 1.0) == "case3"
    spec = fluct.FluctuationSpec(1e3, radius=10.0, species=single_species(1.0))
    assert fluct.variance_asymptotic(spec)[2] == ("case3",)
    forced = fluct.FluctuationSpec(1e3, radius=10.0, species=single_species(1.0), case="case1")
    assert fluct.variance_asymptotic(forced)[2] == ("case1",)


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        fluct.FluctuationSpec(1.0)
    with pytest.raises(InvalidParameterError):
        fluct.FluctuationSpec(1.0, radius=1.0, volume=1.0)
    with pytest.raises(InvalidParameterError):
        fluct.FluctuationSpec(-1.0, radius=1.0)
    with pytest.raises(InvalidParameterError):
        fluct.FluctuationSpec(1.0, radius=1.0, rtol=0.5)
    with pytest.raises(InvalidParameterError):
        fluct.FluctuationSpec(1.0, radius=1.0, case="case4")
    spec = fluct.FluctuationSpec(1.0, volume=4 * math.pi / 3 * 8)
    assert spec.radius == pytest.approx(2.0)
    assert fluct.species_variance(0.0, 1.0, 0.0) == (0.0, 0.0)


def test_statistics_methods():
    spec = fluct.FluctuationSpec(1e3, radius=1.0, species=single_species(0.0))
    q = fluct.fluctuation_statistics(spec)
    a = fluct.fluctuation_statistics(spec, "asymptotic")
    assert a.variance_total == pytest.approx(1e3 / (18 * math.pi**1.5))
    assert q.variance_total == pytest.approx(a.variance_total, rel=2e-3)
    assert q.stddev == pytest.approx(math.sqrt(q.variance_total))
    d = q.to_dict(spec)
    assert d["species"][0]["case"] == "case2" and d["method"] == "quadrature"
    with pytest.raises(InvalidParameterError):
        fluct.fluctuation_statistics(spec, "guess")


def test_stddev_coefficient_asymptote():
    # 24 massless-limit species: sqrt(24 Lambda b / 18 pi^1.5) / (sqrt(Lambda) V^(1/6))
    b = 1.0
    total = 24 * fluct.asymptotic_species_variance(1.0, b)
    coeff = fluct.stddev_coefficient(total, 1.0, 4 * math.pi * b**3 / 3)
    assert coeff == pytest.approx(fluct.DELTA0_COEFFICIENT, rel=1e-14)
    assert fluct.DELTA0_COEFFICIENT == pytest.approx(0.385412, abs=1e-6)


def test_distinguishability_volume_solves_balance():
    rho, cutoff = 4.2e30, 1e35
    c = fluct.DELTA0_COEFFICIENT
    g = lambda logv: rho * math.exp(logv) - c * math.sqrt(cutoff) * math.exp(logv / 6)
    v = math.exp(brentq(g, math.log(1e-30), math.log(1e-10), xtol=1e-14))
    assert fluct.distinguishability_volume(rho, cutoff) == pytest.approx(v, rel=1e-10)
    r = fluct.distinguishability_radius(rho, cutoff)
    assert 4 * math.pi * r**3 / 3 == pytest.approx(v, rel=1e-10)
    with pytest.raises(InvalidParameterError):
        fluct.distinguishability_volume(0.0, cutoff)


def test_macro_statistics_and_ratio():
    spec = fluct.FluctuationSpec(1e3, radius=1.0, species=standard_species_table())
    inside, sd = fluct.macro_statistics(spec, 500)
    outside, sd2 = fluct.macro_statistics(spec, 500, inside=False)
    assert inside - outside == pytest.approx(500)
    assert sd == sd2 == pytest.approx(math.sqrt(24 * 1e3 / (18 * math.pi**1.5)))
    assert fluct.distinguishability_ratio(inside, outside, sd) == pytest.approx(500 / sd)
    with pytest.raises(InvalidParameterError):
        fluct.macro_statistics(spec, -1)
    with pytest.raises(InvalidParameterError):
        fluct.distinguishability_ratio(1, 2, 0)
