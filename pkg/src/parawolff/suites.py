"""Numerical verification suites behind ``parawolff verify``.

Each suite builds its fixtures from a seed, runs one family of checks and
returns a :class:`SuiteResult` with the measured quantities. The suites are
deterministic for a fixed seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .kmiter import delta_rho_theta, proposition_constants, run, theorem_check
from .measure import (
    AtomList,
    GridDensity,
    SignedMeasure,
    SpatialAtoms,
    SpatialGridDensity,
    SpatialLebesgue,
    TimeProduct,
    zero_measure,
)
from .norms import (
    GridFunction,
    double_star,
    mixed_norm,
    rearrange,
    remark_bound_lebesgue,
    remark_bound_lorentz,
)
from .pde import Domain, ExactSolution, GridSolution, TestBump, solve, truncation_estimate, weak_residual
from .potential import (
    PotentialParams,
    autonomous_minimizer,
    dp,
    parabolic_potential,
    riesz_integral,
    wolff_potential,
)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "measured": self.measured,
                "detail": self.detail, "seconds": round(self.seconds, 3)}


def _rel(a, b):
    return abs(a - b) / abs(b) if b != 0 else abs(a)


# ---------------------------------------------------------------------------
# fixtures

def random_spatial_measure(rng: np.random.Generator, N: int, kind: int):
    """Atoms (one at the origin), a constant density, or a positive grid density."""
    if kind == 0:
        pos = np.vstack([np.zeros(N), rng.uniform(-1.0, 1.0, (4, N))])
        return SpatialAtoms(pos, rng.uniform(0.1, 2.0, 5))
    if kind == 1:
        return SpatialLebesgue(N, float(rng.uniform(0.1, 3.0)))
    n = 6 if N < 3 else 4
    return SpatialGridDensity(-np.ones(N), np.full(N, 2.0 / n), rng.uniform(0.2, 2.0, (n,) * N))


def random_space_time_measure(rng: np.random.Generator, N: int, kind: int):
    if kind == 0:
        m = 6
        return AtomList(rng.uniform(-1.0, 1.0, (m, N)), rng.uniform(-1.0, 1.0, m), rng.uniform(0.1, 2.0, m))
    if kind == 1:
        n = 6 if N < 3 else 3
        return GridDensity(-np.ones(N + 1), np.full(N + 1, 2.0 / n), rng.uniform(0.0, 2.0, (n,) * (N + 1)))
    return TimeProduct(random_spatial_measure(rng, N, int(rng.integers(0, 3))))


def radial_density(rng: np.random.Generator, N: int, cells: int = 24, half_width: float = 1.5) -> GridDensity:
    """Cell averages of a(1 + b cos(c t)) exp(-|x|^2 / w^2) on [-L, L]^{N+1} (midpoint values)."""
    a = rng.uniform(0.5, 2.0)
    b = rng.uniform(0.0, 0.8)
    c = rng.uniform(0.5, 3.0)
    w = rng.uniform(0.3, 1.5)
    d = 2.0 * half_width / cells
    centres = -half_width + d * (np.arange(cells) + 0.5)
    grids = np.meshgrid(*([centres] * (N + 1)), indexing="ij")
    r2 = sum(g * g for g in grids[:N])
    vals = a * (1.0 + b * np.cos(c * grids[N])) * np.exp(-r2 / (w * w))
    return GridDensity(np.full(N + 1, -half_width), np.full(N + 1, d), vals)


def nonpositive_fixture(p: float = 3.0) -> GridSolution:
    dom = Domain(-1.0, 1.0, 0.0, 1.0)
    x = np.linspace(-1.0, 1.0, 41)
    t = np.linspace(0.0, 1.0, 41)
    return GridSolution(x, t, -np.ones((41, 41)), 0.05, 0.025, p, dom)


def exact_fixtures():
    """(label, exact solution, time s, rho, theta) for the KM suites."""
    return [
        ("heat p=2", ExactSolution("heat"), 0.5, 0.25, 0.125),
        ("barenblatt p=3", ExactSolution("barenblatt", p=3.0), 1.0, 0.25, 2 * 0.25 ** 3),
        ("barenblatt p=4", ExactSolution("barenblatt", p=4.0), 1.0, 0.25, 2 * 0.25 ** 4),
    ]


def sample_around(ex: ExactSolution, y: float, s: float, rho: float, theta: float,
                  nx: int = 64, nt: int = 64) -> GridSolution:
    """Nodal samples on a grid just covering Q_{rho,theta}(y, s)."""
    h = rho / nx
    half = rho + 2 * h
    k = 2 * theta / nt
    dom = Domain(y - half, y + half, s - theta, s + theta)
    return ex.sample(dom, h, k)


# ---------------------------------------------------------------------------
# suites

def suite_autonomous(seed: int = 0, measures: int = 20, ps=(2.5, 3.0, 4.0), dims=(1, 2, 3),
                     rho: float = 0.7, tol: float = 1e-6, scales: int = 8) -> SuiteResult:
    """P_p = W_p for time-independent measures; scanned tau* and D_p against the closed form."""
    rng = np.random.default_rng(seed)
    worst_pw = 0.0
    worst_tau = 0.0
    worst_dp = 0.0
    count = 0
    for case in range(measures):
        for N in dims:
            nu = random_spatial_measure(rng, N, case % 3)
            mu = TimeProduct(nu)
            x0 = np.zeros(N)
            for p in ps:
                params = PotentialParams(p, N)
                res = parabolic_potential(params, mu, x0, 0.0, rho)
                W = wolff_potential(nu, x0, rho, 1.0, p)
                worst_pw = max(worst_pw, _rel(res.value, W))
                for rho_j, r in res.per_scale[:scales]:
                    tau, val = autonomous_minimizer(p, N, rho_j, nu.ball_mass(x0, rho_j))
                    worst_tau = max(worst_tau, _rel(r.tau_star, tau))
                    worst_dp = max(worst_dp, _rel(r.value, val))
                count += 1
    ok = worst_pw <= tol and worst_tau <= tol and worst_dp <= tol
    return SuiteResult("autonomous", ok,
                       {"cases": count, "max_rel_P_vs_W": worst_pw, "max_rel_tau": worst_tau,
                        "max_rel_Dp": worst_dp},
                       f"{count} cases, |P-W|/W <= {worst_pw:.2e}, tau* {worst_tau:.2e}, D_p {worst_dp:.2e} (tol {tol:g})")


def suite_p2_closed_form(seed: int = 0, fixtures: int = 12, radii=(1.0, 0.5, 0.1, 0.02),
                         tol: float = 1e-14) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(fixtures):
        N = 1 + i % 3
        mu = random_space_time_measure(rng, N, i % 3)
        x0 = rng.uniform(-0.5, 0.5, N)
        t0 = float(rng.uniform(-0.5, 0.5))
        params = PotentialParams(2.0, N)
        for rho in radii:
            got = dp(params, mu, x0, t0, rho).value
            want = 0.5 * rho ** (-N) * mu.cylinder_mass(x0, t0, rho, rho * rho)
            worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
    return SuiteResult("p2_closed_form", worst <= tol, {"max_rel_err": worst},
                       f"D_2 vs rho^-N mu(Q)/2, max rel err {worst:.1e}")


def suite_riesz(seed: int = 0, fixtures: int = 10, r: float = 1.0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    ratios = []
    ok = True
    for i in range(fixtures):
        N = 1 + i % 2
        mu = radial_density(rng, N)
        x0 = np.zeros(N)
        P = parabolic_potential(PotentialParams(2.0, N), mu, x0, 0.0, r).value
        R = riesz_integral(mu, x0, 0.0, r)
        g = max(P / R, R / P)
        ratios.append(g)
        ok &= g <= 2.0 ** (N + 2)
    const = TimeProduct(SpatialLebesgue(1, 1.0))
    P1 = parabolic_potential(PotentialParams(2.0, 1), const, [0.0], 0.0, 1.0).value
    R1 = riesz_integral(const, [0.0], 0.0, 1.0)
    hand = _rel(P1, 8.0 / 3.0) <= 1e-4 and _rel(R1, 2.0) <= 1e-4
    return SuiteResult("riesz", bool(ok and hand),
                       {"max_gamma": max(ratios), "gammas": ratios, "constant_dyadic": P1, "constant_integral": R1},
                       f"max measured gamma {max(ratios):.3f} (bound 2^(N+2)); constant density {P1:.6f} vs {R1:.6f}")


def suite_km_nonpositive(p: float = 3.0, rho: float = 0.5, theta: float = 0.4, tol: float = 1e-10) -> SuiteResult:
    sol = nonpositive_fixture(p)
    res = run(sol, zero_measure(1), 0.0, 0.5, rho, theta, PotentialParams(p, 1))
    target = 2.0 * delta_rho_theta(p, rho, theta)
    err = abs(res.l_inf - target)
    ok = err <= tol and all(res.invariants.values())
    return SuiteResult("km_nonpositive", ok, {"l_inf": res.l_inf, "two_delta": target, "abs_err": err},
                       f"l_inf {res.l_inf:.12g} vs 2 delta {target:.12g}")


def suite_km_exact(points: int = 10, kappas=(0.02, 0.1, 0.3)) -> SuiteResult:
    """l_inf >= u_+(y, s) and the trace invariants on the exact-solution fixtures."""
    failures = []
    margins = {}
    constants = {"delta_j": 0.0, "delta_0": 0.0}
    runs = 0
    for label, ex, s, rho, theta in exact_fixtures():
        ys = np.linspace(-1.0, 1.0, points)
        worst = math.inf
        for y in ys:
            sol = sample_around(ex, float(y), s, rho, theta)
            u = max(ex.radial(abs(float(y)), s), 0.0)
            for kappa in kappas:
                params = PotentialParams(ex.p, 1, kappa=kappa)
                res = run(sol, zero_measure(1), float(y), s, rho, theta, params)
                runs += 1
                worst = min(worst, res.l_inf - u)
                c_j, c_0 = proposition_constants(res)
                constants["delta_j"] = max(constants["delta_j"], c_j)
                constants["delta_0"] = max(constants["delta_0"], c_0)
                if res.l_inf < u:
                    failures.append(f"{label} y={y:.3f} kappa={kappa}: l_inf {res.l_inf:.4g} < u {u:.4g}")
                bad = [k for k, v in res.invariants.items() if not v]
                if bad:
                    failures.append(f"{label} y={y:.3f} kappa={kappa}: invariants {bad}")
        margins[label] = worst
    detail = (f"{runs} traces, min l_inf - u_+ per fixture " + ", ".join(f"{k}: {v:.3g}" for k, v in margins.items())
              + f"; step constants {constants['delta_j']:.3g} (j >= 1), {constants['delta_0']:.3g} (j = 0)")
    if failures:
        detail += "; " + "; ".join(failures[:3])
    return SuiteResult("km_exact", not failures, {"runs": runs, "min_margin": margins, "step_constants": constants,
                                                     "failures": failures}, detail)


def ratio_fixtures():
    """(label, exact solution, y, s, theta(rho), rho_0)."""
    return [
        ("heat p=2", ExactSolution("heat"), 0.3, 0.5, lambda r: 2 * r * r, 0.4),
        ("barenblatt p=3", ExactSolution("barenblatt", p=3.0), 0.3, 1.0, lambda r: r ** 3, 0.4),
        ("barenblatt p=4", ExactSolution("barenblatt", p=4.0), 0.3, 1.0, lambda r: r ** 4, 0.4),
    ]


def suite_ratio(scales: int = 6, max_spread: float = 4.0, max_ratio: float = 10.0) -> SuiteResult:
    table = {}
    ok = True
    for label, ex, y, s, theta_of, rho0 in ratio_fixtures():
        params = PotentialParams(ex.p, 1)
        ratios = []
        for k in range(scales):
            rho = rho0 * 2.0 ** (-k)
            theta = theta_of(rho)
            sol = sample_around(ex, y, s, rho, theta, nx=64, nt=32)
            rep = theorem_check(sol, SignedMeasure.zero(1), y, s, rho, theta, params, lhs=ex.radial(abs(y), s))
            ratios.append(rep.ratio)
        spread = max(ratios) / min(ratios)
        table[label] = {"ratios": ratios, "spread": spread, "max": max(ratios)}
        ok &= spread <= max_spread and max(ratios) <= max_ratio
    detail = ", ".join(f"{k}: max {v['max']:.4f} spread {v['spread']:.3f}" for k, v in table.items())
    return SuiteResult("ratio", bool(ok), table, detail)


def density_fixture(rng: np.random.Generator, N: int, cells: int = 8) -> GridFunction:
    shape = (cells,) * N + (cells,)
    vals = rng.uniform(0.0, 3.0, shape) * (rng.uniform(size=shape) < 0.7)
    return GridFunction(np.full(N + 1, -1.0), np.full(N + 1, 2.0 / cells), vals)


def suite_remark(seed: int = 0, fixtures: int = 20) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst_leb = 0.0
    worst_lor = 0.0
    ok = True
    for i in range(fixtures):
        N = 1 + i % 2
        p = (2.0, 2.5, 3.0, 4.0)[i % 4]
        f = density_fixture(rng, N)
        mu = GridDensity.from_grid_function(f)
        params = PotentialParams(p, N)
        q, r = 4.0, 3.0
        norm = mixed_norm(f, inner=(q, "x"), outer=(r, "t"))
        for _ in range(3):
            x0 = rng.uniform(-0.8, 0.8, N)
            t0 = float(rng.uniform(-0.8, 0.8))
            for rho in (0.5, 0.25, 0.1):
                d = dp(params, mu, x0, t0, rho).value
                leb = remark_bound_lebesgue(params, norm, rho, q, r)
                lor = remark_bound_lorentz(params, f, rho, r).per_radius
                if d > 0:
                    worst_leb = max(worst_leb, d / leb)
                    worst_lor = max(worst_lor, d / lor)
                ok &= d <= leb * (1 + 1e-12) and d <= lor * (1 + 1e-12)
    # rearrangement identities on step data
    re_ok = True
    for i in range(fixtures):
        f = density_fixture(rng, 1 + i % 2)
        re = rearrange(f)
        vals = np.sort(np.abs(f.values).ravel())[::-1]
        vol = f.cell_volume
        s = vol * (np.arange(vals.size) + 0.5)
        re_ok &= bool(np.array_equal(re.f_star(s), vals))
        re_ok &= math.isclose(re.total_mass, float(np.sum(np.abs(f.values)) * vol), rel_tol=1e-12)
        grid = np.linspace(1e-3, vals.size * vol * 1.2, 97)
        re_ok &= all(re.f_star(x) <= double_star(re, x) * (1 + 1e-14) for x in grid)
    return SuiteResult("remark", bool(ok and re_ok),
                       {"max_dp_over_lebesgue": worst_leb, "max_dp_over_lorentz": worst_lor,
                        "rearrangement": bool(re_ok)},
                       f"max D_p/bound: Lebesgue {worst_leb:.3f}, Lorentz {worst_lor:.3f}; rearrangement "
                       + ("exact" if re_ok else "FAILED"))


def convergence_study(kind: str, levels: int = 3):
    """Max-norm errors at the final time and relative mass drift per refinement level."""
    if kind == "heat":
        ex = ExactSolution("heat")
        dom = Domain(-6.0, 6.0, 0.25, 1.0, boundary="dirichlet")
        h0, k0, kf = 0.12, 0.0075, 4
    else:
        ex = ExactSolution("barenblatt", p=3.0)
        dom = Domain(-4.0, 4.0, 0.25, 1.0)
        h0, k0, kf = 0.08, 0.025, 8
    rows = []
    for lev in range(levels):
        h = h0 / 2 ** lev
        k = k0 / kf ** lev
        sol = solve(ex.p, dom, lambda x: ex(x, dom.t_start), h=h, k=k,
                    boundary_value=(lambda x, t: ex(x, t)) if dom.boundary == "dirichlet" else None)
        err = float(np.max(np.abs(sol.u[-1] - ex(sol.x, dom.t_end))))
        m0, m1 = sol.mass(0), sol.mass(sol.t.size - 1)
        rows.append({"level": lev, "h": h, "k": k, "nodes": int(sol.x.size), "steps": int(sol.t.size - 1),
                     "error": err, "mass_drift": abs(m1 - m0) / abs(m0)})
    return rows


def suite_convergence(levels: int = 3, drift_tol: float = 1e-3) -> SuiteResult:
    t0 = time.perf_counter()
    heat = convergence_study("heat", levels)
    bar = convergence_study("barenblatt", levels)
    mono = lambda rows: all(b["error"] < a["error"] for a, b in zip(rows, rows[1:]))
    drift = max(r["mass_drift"] for r in bar)
    ok = mono(heat) and mono(bar) and drift <= drift_tol
    detail = ("heat errors " + ", ".join(f"{r['error']:.2e}" for r in heat)
              + "; barenblatt errors " + ", ".join(f"{r['error']:.2e}" for r in bar)
              + f"; max mass drift {drift:.1e}")
    return SuiteResult("convergence", ok, {"heat": heat, "barenblatt": bar, "seconds": time.perf_counter() - t0},
                       detail)


def residual_study(p: float, seed: int = 1, bumps: int = 5, levels: int = 3):
    rng = np.random.default_rng(seed)
    tests = [TestBump(rng.uniform(-1.5, 1.5), rng.uniform(0.5, 0.75), rng.uniform(0.5, 1.5), rng.uniform(0.1, 0.2))
             for _ in range(bumps)]
    g = GridDensity([-1.0, 0.3], [0.25, 0.05], np.ones((8, 10)))
    mu = SignedMeasure.nonnegative(g)
    dom = Domain(-6.0, 6.0, 0.25, 1.0)
    if p == 2:
        ex = ExactSolution("heat")
        h0, k0, kf = 0.12, 0.0075, 4
    else:
        ex = ExactSolution("barenblatt", p=p)
        h0, k0, kf = 0.08, 0.025, 8
    table = []
    for lev in range(levels):
        sol = solve(p, dom, lambda x: ex(x, dom.t_start), mu=mu, h=h0 / 2 ** lev, k=k0 / kf ** lev)
        table.append([(abs(weak_residual(sol, mu, b)), truncation_estimate(sol, b)) for b in tests])
    return table


def suite_weak_residual(seed: int = 1, factor: float = 10.0) -> SuiteResult:
    measured = {}
    ok = True
    worst = 0.0
    for p in (2.0, 3.0):
        table = residual_study(p, seed)
        bounded = all(res <= factor * est for row in table for res, est in row)
        decreasing = all(table[l + 1][b][0] < table[l][b][0] for l in range(len(table) - 1) for b in range(len(table[0])))
        worst = max(worst, max(res / est for row in table for res, est in row if est > 0))
        measured[f"p={p:g}"] = {"residual": [[r for r, _ in row] for row in table],
                                "estimate": [[e for _, e in row] for row in table],
                                "bounded": bounded, "decreasing": decreasing}
        ok &= bounded and decreasing
    return SuiteResult("weak_residual", bool(ok), measured,
                       f"max residual/estimate {worst:.3f} (limit {factor:g}); decreasing: "
                       + ", ".join(f"{k} {v['decreasing']}" for k, v in measured.items()))


SUITES = {
    "autonomous": suite_autonomous,
    "p2_closed_form": suite_p2_closed_form,
    "riesz": suite_riesz,
    "convergence": suite_convergence,
    "weak_residual": suite_weak_residual,
    "km_nonpositive": suite_km_nonpositive,
    "km_exact": suite_km_exact,
    "ratio": suite_ratio,
    "remark": suite_remark,
}

SEEDED = {"autonomous", "p2_closed_form", "riesz", "remark"}


def run_suite(name: str, seed: int = 0, **options) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    if name in SEEDED:
        options.setdefault("seed", seed)
    t0 = time.perf_counter()
    res = SUITES[name](**options)
    res.seconds = time.perf_counter() - t0
    return res
