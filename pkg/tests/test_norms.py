import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from parawolff.measure import GridDensity
from parawolff.norms import (
    GridFunction,
    Rearrangement,
    double_star,
    lebesgue_gamma,
    lorentz_norm,
    mixed_norm,
    rearrange,
    rearrange_weighted,
    remark_bound_lebesgue,
    remark_bound_lorentz,
    remark_sum_lebesgue,
)
from parawolff.potential import PotentialParams, dp, parabolic_potential


def step_fn(values, cell=1.0):
    """Space-time step function with one unit time cell, so cell measure is ``cell``."""
    values = np.asarray(values, dtype=float)[:, None]
    return GridFunction((0.0, 0.0), (cell, 1.0), values)


def fss_oracle(values, vol):
    """f** from a plain sort and running sums."""
    v = np.sort(np.abs(np.ravel(values)))[::-1]

    def f(s):
        k = int(min(s // vol, v.size))
        head = float(np.sum(v[:k])) * vol
        part = v[k] * (s - k * vol) if k < v.size else 0.0
        return (head + part) / s

    return f, v


values_strategy = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=20)


# ---------------------------------------------------------------------------
# rearrangements

def test_indicator_rearrangement():
    f = step_fn([3.0, 3.0, 0.0, 0.0])
    r = rearrange(f)
    assert r.f_star(0.5) == 3.0 and r.f_star(1.99) == 3.0 and r.f_star(2.0) == 0.0
    assert double_star(r, 1.0) == 3.0
    assert double_star(r, 4.0) == pytest.approx(1.5)


def test_constant_rearrangement():
    f = step_fn([2.0] * 5, cell=0.5)
    r = rearrange(f)
    assert r.f_star(2.4) == 2.0 and r.support == pytest.approx(2.5)
    assert double_star(r, 1.7) == pytest.approx(2.0)


def test_three_step_rearrangement():
    r = rearrange(step_fn([1.0, 3.0, 2.0]))
    np.testing.assert_array_equal(r.f_star([0.5, 1.5, 2.5]), [3.0, 2.0, 1.0])
    assert double_star(r, 3.0) == pytest.approx(2.0)


@given(values_strategy, st.floats(0.1, 2.0))
def test_equimeasurable(values, vol):
    r = rearrange_weighted(values, vol)
    a = np.abs(np.asarray(values))
    for t in np.unique(np.concatenate([a, [0.0]])):
        level = vol * np.count_nonzero(a > t)
        # {f* > t} is an interval [0, L); read L off the steps
        L = float(np.sum(np.diff(r.edges)[r.values > t]))
        assert L == pytest.approx(level, abs=1e-12)
    assert r.total_mass == pytest.approx(vol * float(np.sum(a)), rel=1e-12, abs=1e-15)


@given(values_strategy, st.floats(0.1, 2.0), st.lists(st.floats(1e-3, 50.0), min_size=1, max_size=10))
def test_double_star_matches_oracle_and_dominates(values, vol, points):
    r = rearrange_weighted(values, vol)
    oracle, _ = fss_oracle(values, vol)
    pts = np.sort(points)
    fss = [double_star(r, s) for s in pts]
    for s, got in zip(pts, fss):
        assert got == pytest.approx(oracle(s), rel=1e-12, abs=1e-14)
        assert float(r.f_star(s)) <= got * (1 + 1e-12) + 1e-15
    assert all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(fss, fss[1:]))


def test_double_star_rejects_zero():
    with pytest.raises(ValueError):
        double_star(rearrange(step_fn([1.0])), 0.0)


# ---------------------------------------------------------------------------
# Lorentz norms

def test_indicator_lorentz_examples():
    f = step_fn([1.0])
    assert lorentz_norm(f, 1.0, 1.0) == math.inf
    assert lorentz_norm(f, 2.0, math.inf) == pytest.approx(1.0)
    assert lorentz_norm(step_fn([0.0, 0.0]), 2.0, 2.0) == 0.0


def lorentz_quad(values, vol, q, alpha):
    fss, v = fss_oracle(values, vol)
    support = vol * np.count_nonzero(v)
    pts = list(vol * np.arange(1, v.size + 1))
    g = lambda s: (s ** (1 / q) * fss(s)) ** alpha / s
    a, _ = integrate.quad(g, 0, support, points=pts[:-1] or None, limit=400, epsrel=1e-11, epsabs=0)
    b, _ = integrate.quad(g, support, math.inf, limit=400, epsrel=1e-11, epsabs=0)
    return (a + b) ** (1 / alpha)


@pytest.mark.parametrize("q,alpha", [(2.0, 2.0), (3.0, 1.5), (1.5, 4.0), (4.0, 1.0)])
@given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=8), st.floats(0.2, 2.0))
def test_lorentz_against_quadrature(q, alpha, values, vol):
    if max(values) == 0:
        return
    got = lorentz_norm(rearrange_weighted(values, vol), q, alpha)
    assert got == pytest.approx(lorentz_quad(values, vol, q, alpha), rel=1e-7)


def test_lorentz_weak_type_sup():
    # f* = {3, 1} on unit cells, q = 2: sup s^{1/2} f**(s) is attained at s = 2 where f** = 2
    r = rearrange(step_fn([1.0, 3.0]))
    assert lorentz_norm(r, 2.0, math.inf) == pytest.approx(max(3.0, 2.0 * math.sqrt(2.0)))


@given(values_strategy, st.floats(1e-3, 10.0), st.booleans())
def test_lorentz_homogeneous(values, c, flip):
    c = -c if flip else c
    f = step_fn(values)
    g = step_fn(c * np.asarray(values))
    for q, alpha in ((2.0, 2.0), (3.0, math.inf)):
        base = lorentz_norm(f, q, alpha)
        assert lorentz_norm(g, q, alpha) == pytest.approx(abs(c) * base, rel=1e-10)


def test_lorentz_validation():
    with pytest.raises(ValueError):
        lorentz_norm(step_fn([1.0]), 0.0, 1.0)


# ---------------------------------------------------------------------------
# mixed norms

@pytest.mark.parametrize("q,r", [(1.0, 1.0), (2.0, 3.0), (math.inf, 2.0), (4.0, math.inf)])
@pytest.mark.parametrize("order", ["xt", "tx"])
def test_mixed_norm_of_constant(q, r, order):
    c = 2.5
    f = GridFunction((0.0, 0.0), (0.1, 0.25), np.full((10, 4), c))
    if order == "xt":
        got = mixed_norm(f, inner=(q, "x"), outer=(r, "t"))
    else:
        got = mixed_norm(f, inner=(r, "t"), outer=(q, "x"))
    assert got == pytest.approx(c)


def test_mixed_norm_separable():
    rng = np.random.default_rng(2)
    g, h = rng.uniform(0, 2, 6), rng.uniform(0, 2, 5)
    f = GridFunction((0.0, 0.0), (0.5, 0.2), np.outer(g, h))
    q, r = 3.0, 1.5
    gq = (np.sum(g ** q) * 0.5) ** (1 / q)
    hr = (np.sum(h ** r) * 0.2) ** (1 / r)
    assert mixed_norm(f, (q, "x"), (r, "t")) == pytest.approx(gq * hr)


def test_mixed_norm_half_interval():
    f = GridFunction((0.0, 0.0), (1.0, 0.5), np.array([[2.0, 0.0]]))
    assert mixed_norm(f, (math.inf, "x"), (2.0, "t")) == pytest.approx(math.sqrt(2.0))


def test_mixed_norm_validation():
    f = step_fn([1.0])
    with pytest.raises(ValueError):
        mixed_norm(f, (2.0, "x"), (2.0, "x"))
    with pytest.raises(ValueError):
        mixed_norm(f, (0.5, "x"), (2.0, "t"))


# ---------------------------------------------------------------------------
# per-scale bounds for absolutely continuous measures

def unit_cylinder(c=1.0, cells=16):
    return GridFunction((-1.0, -1.0), (2.0 / cells, 2.0 / cells), np.full((cells, cells), c))


def test_lebesgue_bound_dominates_unit_density():
    f = unit_cylinder()
    params = PotentialParams(3.0, 1)
    norm = mixed_norm(f, (2.0, "x"), (2.0, "t"))
    d = dp(params, GridDensity.from_grid_function(f), [0.0], 0.0, 0.5).value
    assert d <= remark_bound_lebesgue(params, norm, 0.5, 2.0, 2.0)


def test_lorentz_bound_dominates_unit_density():
    f = unit_cylinder()
    params = PotentialParams(3.0, 1)
    mu = GridDensity.from_grid_function(f)
    for rho in (0.25, 0.5):
        assert dp(params, mu, [0.0], 0.0, rho).value <= remark_bound_lorentz(params, f, rho, 2.0).per_radius


def test_lorentz_bound_exponents_at_p2():
    bound = remark_bound_lorentz(PotentialParams(2.0, 1), unit_cylinder(), 0.5, 4.0)
    assert bound.alpha == pytest.approx(1.0)
    assert bound.q == pytest.approx(1.0 / (2.0 - 2.0 / 4.0))


def test_lorentz_bound_of_zero():
    assert remark_bound_lorentz(PotentialParams(3.0, 1), unit_cylinder(0.0), 0.5, 2.0).per_radius == 0.0


def test_lebesgue_exponent_large_r():
    # exponent 1/(p - 1 - (p-2)/r) tends to 1/(p - 1); D_p then scales like norm^{1/2} for p = 3
    params = PotentialParams(3.0, 1)
    a = remark_bound_lebesgue(params, 1.0, 0.5, 4.0, 1e12)
    b = remark_bound_lebesgue(params, 4.0, 0.5, 4.0, 1e12)
    assert b / a == pytest.approx(2.0, rel=1e-9)


def test_lebesgue_gamma_matches_bound():
    params = PotentialParams(3.0, 2)
    q, r, rho, norm = 4.0, 3.0, 0.3, 2.0
    kappa = 1.0 / (params.p - 1.0 - (params.p - 2.0) / r)
    e = params.p - params.p / r - params.N / q
    assert remark_bound_lebesgue(params, norm, rho, q, r) == pytest.approx(
        lebesgue_gamma(3.0, 2, q, r) * (rho ** e * norm) ** kappa)


def test_lebesgue_sum_finite_iff_condition():
    params = PotentialParams(3.0, 1)
    assert math.isfinite(remark_sum_lebesgue(params, 1.0, 0.5, 2.0, 2.0))  # 1/2 + 1/6 < 1
    assert remark_sum_lebesgue(params, 1.0, 0.5, 0.4, 1.5) == math.inf    # 2/3 + 5/6 > 1


def test_bounds_dominate_dp_sum():
    f = unit_cylinder()
    params = PotentialParams(3.0, 1)
    P = parabolic_potential(params, GridDensity.from_grid_function(f), [0.0], 0.0, 0.5).value
    norm = mixed_norm(f, (2.0, "x"), (2.0, "t"))
    assert P <= remark_sum_lebesgue(params, norm, 0.5, 2.0, 2.0)
    assert P <= remark_bound_lorentz(params, f, 0.5, 2.0).integrated


@pytest.mark.parametrize("seed", range(20))
def test_remark_bounds_on_random_densities(seed):
    rng = np.random.default_rng(seed)
    N = 1 + seed % 2
    p = (2.0, 2.5, 3.0, 4.0)[seed % 4]
    cells = 8
    shape = (cells,) * (N + 1)
    vals = rng.uniform(0, 3, shape) * (rng.uniform(size=shape) < 0.7)
    f = GridFunction(tuple([-1.0] * (N + 1)), tuple([2.0 / cells] * (N + 1)), vals)
    mu = GridDensity.from_grid_function(f)
    params = PotentialParams(p, N)
    q, r = 4.0, 3.0
    norm = mixed_norm(f, (q, "x"), (r, "t"))
    for rho in (0.5, 0.2):
        x0 = rng.uniform(-0.8, 0.8, N)
        d = dp(params, mu, x0, float(rng.uniform(-0.8, 0.8)), rho).value
        assert d <= remark_bound_lebesgue(params, norm, rho, q, r)
        assert d <= remark_bound_lorentz(params, f, rho, r).per_radius


def test_remark_preconditions():
    params = PotentialParams(3.0, 2)
    with pytest.raises(ValueError):
        remark_bound_lebesgue(params, 1.0, 0.5, 4.0, 1.0)
    with pytest.raises(ValueError):
        remark_bound_lebesgue(params, 1.0, 0.5, 0.5, 2.0)
    with pytest.raises(ValueError):
        remark_bound_lorentz(PotentialParams(3.0, 1), unit_cylinder(), 0.5, 0.4)


def test_rearrangement_of_empty_support():
    r = rearrange_weighted([0.0, 0.0], 1.0)
    assert isinstance(r, Rearrangement) and r.total_mass == 0.0
    assert lorentz_norm(r, 2.0, 2.0) == 0.0
