import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from parawolff.measure import (
    AtomList,
    GridDensity,
    SignedMeasure,
    SpatialAtoms,
    SpatialLebesgue,
    TimeProduct,
    zero_measure,
)
from parawolff.potential import (
    PotentialParams,
    autonomous_minimizer,
    dp,
    eps_p,
    i_p,
    parabolic_potential,
    riesz_integral,
    sample_box,
    sup_potential,
    tau_heuristic,
    upper_bound_gamma,
    upper_bound_sum,
    wolff_potential,
)
from parawolff.suites import radial_density, random_space_time_measure


def objective_oracle(p, N, rho, mass_at):
    """tau -> i_p(tau) + rho^{-N} mu(Q_{rho, tau rho^p}) / (2 (p-1)^{p-1}), written out directly."""
    def f(tau):
        ip = (p - 2) * tau ** (-1 / (p - 2)) if p > 2 else (0.0 if tau >= 1 else math.inf)
        return ip + rho ** (-N) * mass_at(tau * rho ** p) / (2 * (p - 1) ** (p - 1))
    return f


# ---------------------------------------------------------------------------
# i_p and eps_p

@pytest.mark.parametrize("p,tau,want", [(3, 4, 0.25), (2, 0.5, math.inf), (2, 1, 0.0), (4, 0.25, 4.0)])
def test_i_p_values(p, tau, want):
    assert i_p(p, tau) == pytest.approx(want)


@pytest.mark.parametrize("p,want", [(4, 4.0), (2, 1.0), (3, 1.0), (2.5, 0.5 ** 0.5)])
def test_eps_p_values(p, want):
    assert eps_p(p) == pytest.approx(want)


def test_eps_p_continuous_at_two():
    assert eps_p(2 + 1e-9) == pytest.approx(1.0, abs=1e-6)


def test_i_p_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        i_p(3, 0.0)


# ---------------------------------------------------------------------------
# D_p

def test_dp_p2_atoms_against_counting():
    rng = np.random.default_rng(4)
    pos, t, w = rng.uniform(-1, 1, (12, 2)), rng.uniform(-1, 1, 12), rng.uniform(0.1, 2, 12)
    mu = AtomList(pos, t, w)
    params = PotentialParams(2.0, 2)
    for rho in (0.3, 0.7, 1.0):
        inside = (np.linalg.norm(pos, axis=1) <= rho) & (np.abs(t) < rho * rho)
        res = dp(params, mu, [0.0, 0.0], 0.0, rho)
        assert res.value == 0.5 * rho ** -2 * float(np.sum(w[inside])) or res.value == pytest.approx(
            0.5 * rho ** -2 * float(np.sum(w[inside])), rel=1e-15)
        assert res.tau_star == 1.0


def test_dp_zero_measure():
    res = dp(PotentialParams(3.0, 1), zero_measure(1), [0.0], 0.0, 1.0)
    assert res.value == 0.0 and res.tau_star == math.inf


def test_dp_lebesgue_against_brute_force_scan():
    mu = TimeProduct(SpatialLebesgue(1, 1.0))
    res = dp(PotentialParams(3.0, 1), mu, [0.0], 0.0, 1.0)
    assert res.value == pytest.approx(math.sqrt(2.0), rel=1e-9)
    f = objective_oracle(3.0, 1, 1.0, lambda s: 2.0 * 2.0 * s)
    scan = min(f(tau) for tau in np.logspace(-4, 4, 10_000))
    assert res.value <= scan
    assert res.value == pytest.approx(scan, rel=1e-6)
    assert f(res.tau_star) == pytest.approx(res.value, rel=1e-12)


@pytest.mark.parametrize("p", [2.5, 3.0, 4.0])
@given(m=st.floats(0.01, 100.0), rho=st.floats(0.01, 10.0), N=st.integers(1, 3))
def test_dp_autonomous_closed_form(p, m, rho, N):
    nu = SpatialAtoms(np.zeros((1, N)), [m])
    res = dp(PotentialParams(p, N), TimeProduct(nu), np.zeros(N), 0.0, rho)
    # stationarity of i_p(tau) + A tau
    A = rho ** (p - N) * m / (p - 1) ** (p - 1)
    assert res.tau_star == pytest.approx(A ** (-(p - 2) / (p - 1)), rel=1e-6)
    assert res.value == pytest.approx((rho ** (p - N) * m) ** (1 / (p - 1)), rel=1e-6)


def test_autonomous_minimizer_helper():
    tau, val = autonomous_minimizer(3.0, 1, 1.0, 2.0)
    assert tau == pytest.approx(2.0 ** 0.5) and val == pytest.approx(2.0 ** 0.5)
    assert autonomous_minimizer(3.0, 1, 1.0, 0.0) == (math.inf, 0.0)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("p", [2.5, 3.0, 4.0])
def test_dp_general_measures_against_scan(seed, p):
    rng = np.random.default_rng(seed)
    N = 1 + seed % 2
    mu = random_space_time_measure(rng, N, seed % 2)
    x0 = rng.uniform(-0.3, 0.3, N)
    rho = float(rng.uniform(0.2, 1.0))
    res = dp(PotentialParams(p, N), mu, x0, 0.0, rho)
    f = objective_oracle(p, N, rho, lambda s: mu.cylinder_mass(x0, 0.0, rho, s))
    scan = min(f(tau) for tau in np.logspace(-6, 8, 3000))
    limit = rho ** (-N) * mu.column_mass(x0, rho) / (2 * (p - 1) ** (p - 1))
    assert res.value <= min(scan, limit) * (1 + 1e-12)
    if math.isfinite(res.tau_star):
        assert f(res.tau_star) == pytest.approx(res.value, rel=1e-10, abs=1e-14)
    else:
        assert res.value == pytest.approx(limit)


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 4.0])
@given(base=st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 2)), min_size=1, max_size=5),
       extra=st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 2)), min_size=1, max_size=5),
       rho=st.floats(0.1, 1.0))
def test_monotone_in_measure(p, base, extra, rho):
    mk = lambda rows: AtomList([[r[0]] for r in rows], [r[1] for r in rows], [r[2] for r in rows])
    small = mk(base)
    big = small.union(mk(extra))
    params = PotentialParams(p, 1, dyadic_max_terms=12)
    assert dp(params, small, [0.0], 0.0, rho).value <= dp(params, big, [0.0], 0.0, rho).value * (1 + 1e-9) + 1e-15
    assert (parabolic_potential(params, small, [0.0], 0.0, rho).value
            <= parabolic_potential(params, big, [0.0], 0.0, rho).value * (1 + 1e-9) + 1e-15)


@pytest.mark.parametrize("p", [2.5, 3.0, 4.0])
@pytest.mark.parametrize("c", [0.1, 10.0])
def test_scaling_of_time_independent_measures(p, c):
    nu = SpatialAtoms([[0.0, 0.0], [0.3, 0.1]], [1.0, 0.5])
    params = PotentialParams(p, 2)
    base = dp(params, TimeProduct(nu), [0.0, 0.0], 0.0, 0.5).value
    scaled = dp(params, TimeProduct(nu.scaled(c)), [0.0, 0.0], 0.0, 0.5).value
    assert scaled == pytest.approx(c ** (1 / (p - 1)) * base, rel=1e-7)


# ---------------------------------------------------------------------------
# dyadic sums

def test_potential_of_zero_measure():
    res = parabolic_potential(PotentialParams(3.0, 1), zero_measure(1), [0.0], 0.0, 1.0)
    assert res.value == 0.0
    assert all(term.value == 0.0 for _, term in res.per_scale)


def test_point_mass_potential_geometric_series():
    nu = SpatialAtoms([[0.0, 0.0]], [1.0])
    want = 1.0 / (1.0 - 2 ** -0.5)
    res = parabolic_potential(PotentialParams(3.0, 2), TimeProduct(nu), [0.0, 0.0], 0.0, 1.0)
    for j, (rho_j, term) in enumerate(res.per_scale):
        assert rho_j == 2.0 ** -j
        assert term.value == pytest.approx(2.0 ** (-j / 2), rel=1e-7)
    assert res.value + res.tail_estimate >= want * (1 - 1e-6)
    assert res.value == pytest.approx(want, rel=1e-6)
    assert wolff_potential(nu, [0.0, 0.0], 1.0, 1.0, 3.0) == pytest.approx(want, rel=1e-6)


def test_p2_lebesgue_potential_is_eight_thirds():
    res = parabolic_potential(PotentialParams(2.0, 1), TimeProduct(SpatialLebesgue(1)), [0.0], 0.0, 1.0)
    assert res.value == pytest.approx(8.0 / 3.0, rel=1e-9)
    for j, (_, term) in enumerate(res.per_scale[:5]):
        assert term.value == pytest.approx(2.0 * 4.0 ** -j)


def test_wolff_lebesgue_geometric_series():
    # term_j = (2 rho_j^3)^{1/2}, so the sum is sqrt(2) / (1 - 2^{-3/2})
    got = wolff_potential(SpatialLebesgue(1), [0.0], 1.0, 1.0, 3.0)
    assert got == pytest.approx(math.sqrt(2.0) / (1.0 - 2.0 ** -1.5), rel=1e-9)
    assert got == pytest.approx(2.18767, abs=1e-5)


def test_wolff_zero():
    assert wolff_potential(SpatialAtoms(np.zeros((0, 2)), []), [0.0, 0.0], 1.0, 1.0, 3.0) == 0.0


# ---------------------------------------------------------------------------
# Riesz integral

def test_riesz_constant_density():
    assert riesz_integral(TimeProduct(SpatialLebesgue(1)), [0.0], 0.0, 1.0) == pytest.approx(2.0, rel=1e-4)


def test_riesz_zero_and_atom():
    assert riesz_integral(zero_measure(2), [0.0, 0.0], 0.0, 1.0) == 0.0
    atom = AtomList([[0.0]], [0.0], [1.0])
    assert riesz_integral(atom, [0.0], 0.0, 1.0) == math.inf


@pytest.mark.parametrize("seed", range(4))
def test_riesz_comparability_on_radial_densities(seed):
    rng = np.random.default_rng(100 + seed)
    N = 1 + seed % 2
    mu = radial_density(rng, N, cells=16)
    P = parabolic_potential(PotentialParams(2.0, N), mu, np.zeros(N), 0.0, 1.0).value
    R = riesz_integral(mu, np.zeros(N), 0.0, 1.0)
    assert P / 2 ** (N + 2) <= R <= P * 2 ** (N + 2)


# ---------------------------------------------------------------------------
# tau heuristic, upper bound sum, sup over a box

def test_tau_heuristic_examples():
    params = PotentialParams(3.0, 1)
    # mass rho^N in Q_{rho, rho^p}: B_1 x (-1, 1) carries 1 for density 1/4
    quarter = TimeProduct(SpatialLebesgue(1, 0.25))
    assert tau_heuristic(params, quarter, [0.0], 0.0, 1.0) == pytest.approx(1.0)
    assert tau_heuristic(params, zero_measure(1), [0.0], 0.0, 1.0) == math.inf
    four = AtomList([[0.0]], [0.0], [4.0])
    assert tau_heuristic(params, four, [0.0], 0.0, 1.0) == pytest.approx(0.5)


def test_upper_bound_sum_zero_and_p2():
    params = PotentialParams(2.0, 1)
    assert upper_bound_sum(params, zero_measure(1), [0.0], 0.0, 1.0) == 0.0
    mu = TimeProduct(SpatialLebesgue(1))
    P = parabolic_potential(params, mu, [0.0], 0.0, 1.0).value
    assert upper_bound_sum(params, mu, [0.0], 0.0, 1.0) == pytest.approx(4.0 * P, rel=1e-12)


def _ratio_max(seed, p):
    rng = np.random.default_rng(seed)
    best = 0.0
    for i in range(18):
        N = 1 + i % 2
        mu = random_space_time_measure(rng, N, i % 3)
        params = PotentialParams(p, N, dyadic_max_terms=20)
        P = parabolic_potential(params, mu, np.zeros(N), 0.0, 0.8).value
        U = upper_bound_sum(params, mu, np.zeros(N), 0.0, 0.8)
        assert P <= upper_bound_gamma(p) * U * (1 + 1e-12)
        if U > 0:
            best = max(best, P / U)
    return best


@pytest.mark.parametrize("p", [2.5, 3.0, 4.0])
def test_upper_bound_constant_is_stable(p):
    a, b = _ratio_max(0, p), _ratio_max(1, p)
    assert abs(a - b) <= 0.1 * max(a, b)


def test_sup_potential():
    params = PotentialParams(3.0, 1, dyadic_max_terms=16)
    box = sample_box([-0.5, 0.0], [0.5, 1.0], 3)
    assert sup_potential(params, SignedMeasure.zero(1), 0.5, box) == 0.0
    atom = SignedMeasure.nonnegative(AtomList([[3.0]], [5.0], [1.0]))
    assert math.isfinite(sup_potential(params, atom, 0.5, box))
    leb = TimeProduct(SpatialLebesgue(1, 2.0))
    one = parabolic_potential(params, leb, [0.0], 0.0, 0.5).value
    assert sup_potential(params, leb, 0.5, box) == pytest.approx(one, rel=1e-10)


def test_sample_box_shape():
    assert sample_box([0, 0, 0], [1, 1, 1], [2, 3, 4]).shape == (24, 3)


# ---------------------------------------------------------------------------
# parameter validation

@pytest.mark.parametrize("kw", [
    {"p": 1.5, "N": 1},
    {"p": 3.0, "N": 0},
    {"p": 3.0, "N": 1, "lam": 0.9},
    {"p": 3.0, "N": 1, "kappa": 1.5},
    {"p": 3.0, "N": 1, "m": 5.0},
    {"p": 3.0, "N": 1, "tau_scan": (1.0, 0.5, 10)},
])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        PotentialParams(**kw)


def test_params_defaults():
    params = PotentialParams(3.0, 2)
    assert params.lam == pytest.approx(0.25)
    assert params.m == 6.0


def test_grid_density_potential_is_finite():
    g = GridDensity([-1.0, -1.0], [0.25, 0.25], np.ones((8, 8)))
    res = parabolic_potential(PotentialParams(3.0, 1), g, [0.0], 0.0, 0.5)
    assert 0 < res.value < math.inf
