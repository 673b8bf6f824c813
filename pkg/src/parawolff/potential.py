"""Parabolic Wolff potential and its elliptic and p = 2 relatives.

For a nonnegative space-time measure ``mu`` the per-scale quantity is

    D_p(rho) = inf_{tau > 0} [ i_p(tau) + rho^{-N} mu(Q_{rho, tau rho^p}) / (2 (p-1)^{p-1}) ]

and the potential is the dyadic sum ``P_p = sum_j D_p(2^{-j} rho)``.

The infimum is located by a logarithmic scan over tau followed by
golden-section refinement. The scan bracket is widened (never clamped) when
the minimum sits on its edge. For atom measures the objective is a
decreasing function plus a step function, so the jump points are added to
the candidate set; on each step the infimum is attained at the right end.

For time-independent ``mu = nu x dt`` the stationarity condition of
``i_p(tau) + A tau`` gives ``tau* = A^{-(p-2)/(p-1)}`` with
``A = rho^{p-N} nu(B_rho) / (p-1)^{p-1}`` and the value
``[rho^{p-N} nu(B_rho)]^{1/(p-1)}`` (see :func:`autonomous_minimizer`).
The often-quoted displayed minimiser has exponent ``+(p-2)/(p-1)``; the
value agrees, the minimiser does not, and this module follows the
stationarity computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measure import SignedMeasure, SpaceTimeMeasure, SpatialMeasure

__all__ = [
    "DpResult",
    "PotentialParams",
    "PotentialResult",
    "ScanError",
    "autonomous_dp",
    "autonomous_minimizer",
    "dp",
    "eps_p",
    "i_p",
    "parabolic_potential",
    "riesz_integral",
    "sup_potential",
    "tau_heuristic",
    "upper_bound_sum",
    "upper_bound_gamma",
    "wolff_potential",
]


class ScanError(RuntimeError):
    """The tau scan could not bracket the minimum of the D_p objective."""


@dataclass(frozen=True)
class PotentialParams:
    """Exponents, KM constants and numerical tolerances shared by all evaluators.

    ``lam`` defaults to half its admissible maximum ``min(1/(p-1), 1/N)``
    and ``m`` to ``2p``.
    """

    p: float
    N: int
    lam: float | None = None
    kappa: float = 0.1
    m: float | None = None
    tau_scan: tuple = (1e-9, 1e9, 64)
    dyadic_max_terms: int = 48
    term_tolerance: float = 1e-10

    def __post_init__(self):
        if not (self.p >= 2) or not math.isfinite(self.p):
            raise ValueError(f"p must be >= 2, got {self.p}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        lam_max = min(1.0 / (self.p - 1.0), 1.0 / self.N)
        if self.lam is None:
            object.__setattr__(self, "lam", 0.5 * lam_max)
        if not (0.0 < self.lam <= lam_max * (1 + 1e-12)):
            raise ValueError(f"lam must lie in (0, {lam_max}], got {self.lam}")
        if not (0.0 < self.kappa < 1.0):
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.m is None:
            object.__setattr__(self, "m", 2.0 * self.p)
        if self.m < 2.0 * self.p:
            raise ValueError(f"m must be >= 2p = {2 * self.p}, got {self.m}")
        lo, hi, per_decade = self.tau_scan
        if not (0 < lo < hi) or per_decade < 1:
            raise ValueError("tau_scan must be (tau_min, tau_max, points_per_decade) with 0 < tau_min < tau_max")
        object.__setattr__(self, "tau_scan", (float(lo), float(hi), int(per_decade)))
        if self.dyadic_max_terms < 1:
            raise ValueError("dyadic_max_terms must be positive")
        if not (self.term_tolerance >= 0):
            raise ValueError("term_tolerance must be nonnegative")


@dataclass(frozen=True)
class DpResult:
    value: float
    tau_star: float
    objective_at_tau: tuple  # (i_p part, mass part)


@dataclass(frozen=True)
class PotentialResult:
    value: float
    per_scale: list = field(default_factory=list)  # [(rho_j, DpResult | float)]
    truncated_at: int = 0
    tail_estimate: float = 0.0


def i_p(p: float, tau):
    """(p-2) tau^{-1/(p-2)} for p > 2; for p = 2, +inf below 1 and 0 from 1 on."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr <= 0):
        raise ValueError("i_p needs tau > 0")
    if p < 2:
        raise ValueError("i_p needs p >= 2")
    if p == 2:
        out = np.where(tau_arr < 1.0, np.inf, 0.0)
    else:
        with np.errstate(over="ignore", divide="ignore"):
            out = (p - 2.0) * tau_arr ** (-1.0 / (p - 2.0))
        out = np.where(np.isinf(tau_arr), 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def eps_p(p: float) -> float:
    """(p-2)^{p-2}, continuously extended by 1 at p = 2."""
    if p < 2:
        raise ValueError("eps_p needs p >= 2")
    if p == 2:
        return 1.0
    return (p - 2.0) ** (p - 2.0)


def _mass_coefficient(p, N, rho):
    return rho ** (-N) / (2.0 * (p - 1.0) ** (p - 1.0))


def _golden(fun, a, b, tol=1e-13, max_iter=200):
    """Minimise fun on [a, b]; ties move right so the larger minimiser wins."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * (1.0 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


def dp(params: PotentialParams, mu: SpaceTimeMeasure, x0, t0: float, rho: float) -> DpResult:
    """D_p(rho) at (x0, t0) together with the largest minimising tau."""
    if not rho > 0 or not math.isfinite(rho):
        raise ValueError(f"rho must be positive, got {rho}")
    p, N = params.p, mu.dimension
    coef = _mass_coefficient(p, N, rho)
    rp = rho ** p
    profile = mu.mass_profile(x0, t0, rho)

    if p == 2:
        mass_term = coef * float(profile(np.array([rp]))[0])
        return DpResult(mass_term, 1.0, (0.0, mass_term))

    tol = params.term_tolerance

    def objective(tau):
        tau = np.asarray(tau, dtype=float)
        with np.errstate(over="ignore"):
            return i_p(p, tau) + coef * profile(tau * rp)

    f_inf = coef * mu.column_mass(x0, rho)
    lo, hi, per_decade = params.tau_scan
    log_lo, log_hi = math.log10(lo), math.log10(hi)

    def scan(a, b):
        n = max(2, int(round((b - a) * per_decade)) + 1)
        taus = np.logspace(a, b, n)
        return taus, objective(taus)

    taus, vals = scan(log_lo, log_hi)
    while True:
        k = int(np.argmin(vals))
        if k == len(taus) - 1:
            saturated = math.isfinite(f_inf) and coef * float(profile(np.array([taus[-1] * rp]))[0]) >= f_inf * (1 - 1e-15)
            if saturated:
                break
            if log_hi >= 300:
                raise ScanError(f"tau scan exhausted at tau = 1e{log_hi:g} without bracketing the minimum (rho={rho})")
            new_hi = min(log_hi + 9.0, 300.0)
            t2, v2 = scan(log_hi, new_hi)
            taus, vals = np.concatenate([taus, t2[1:]]), np.concatenate([vals, v2[1:]])
            log_hi = new_hi
        elif k == 0:
            if log_lo <= -300:
                raise ScanError(f"tau scan exhausted at tau = 1e{log_lo:g} without bracketing the minimum (rho={rho})")
            new_lo = max(log_lo - 9.0, -300.0)
            t2, v2 = scan(new_lo, log_lo)
            taus, vals = np.concatenate([t2[:-1], taus]), np.concatenate([v2[:-1], vals])
            log_lo = new_lo
        else:
            break

    cand_t = [taus]
    cand_v = [vals]
    k = int(np.argmin(vals))
    if 0 < k < len(taus) - 1:
        u_star, _ = _golden(lambda u: float(objective(10.0 ** u)),
                            math.log10(taus[k - 1]), math.log10(taus[k + 1]))
        t_ref = np.array([10.0 ** u_star])
        cand_t.append(t_ref)
        cand_v.append(objective(t_ref))
    bp = mu.time_breakpoints(x0, t0, rho)
    if len(bp):
        t_bp = bp / rp
        t_bp = t_bp[np.isfinite(t_bp) & (t_bp > 0)]
        if len(t_bp):
            cand_t.append(t_bp)
            cand_v.append(objective(t_bp))
    cand_t = np.concatenate(cand_t)
    cand_v = np.concatenate(cand_v)
    fmin = min(float(np.min(cand_v)), f_inf)
    if f_inf <= fmin + tol * abs(fmin):
        return DpResult(float(f_inf), math.inf, (0.0, float(f_inf)))
    # ties only at rounding level: near a smooth minimum the objective is flat
    # to second order, so a looser threshold would pull in distant scan points
    tie = fmin + 8.0 * np.finfo(float).eps * abs(fmin)
    best = float(np.max(cand_t[cand_v <= tie]))
    ip = i_p(p, best)
    mass = coef * float(profile(np.array([best * rp]))[0])
    return DpResult(fmin, best, (ip, mass))


def _dyadic_sum(term, rho, max_terms, tol):
    per_scale = []
    total = 0.0
    last = 0.0
    j = 0
    for j in range(max_terms):
        rho_j = rho * 2.0 ** (-j)
        res = term(rho_j)
        last = res.value if isinstance(res, DpResult) else float(res)
        per_scale.append((rho_j, res))
        total += last
        if last <= tol * total:
            break
    return PotentialResult(total, per_scale, j, last * max_terms)


def parabolic_potential(params: PotentialParams, mu: SpaceTimeMeasure, x0, t0: float, rho: float) -> PotentialResult:
    """Partial dyadic sum of D_p(2^-j rho); the tail is estimated, not added."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    return _dyadic_sum(lambda r: dp(params, mu, x0, t0, r), rho,
                       params.dyadic_max_terms, params.term_tolerance)


def wolff_potential(nu: SpatialMeasure, x0, rho: float, beta: float, p: float,
                    max_terms: int = 48, term_tolerance: float = 1e-10) -> float:
    """Truncated nonlinear Wolff potential sum_j (nu(B_j) / rho_j^{N - beta p})^{1/(p-1)}."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if p <= 1:
        raise ValueError("p must exceed 1")
    N = nu.dimension
    term = lambda r: (nu.ball_mass(x0, r) / r ** (N - beta * p)) ** (1.0 / (p - 1.0))
    return _dyadic_sum(term, rho, max_terms, term_tolerance).value


def autonomous_minimizer(p: float, N: int, rho: float, ball_mass: float):
    """(tau*, D_p) for the time-independent measure nu x dt from the stationarity condition."""
    if p == 2:
        return 1.0, rho ** (2 - N) * ball_mass
    if ball_mass == 0:
        return math.inf, 0.0
    A = rho ** (p - N) * ball_mass / (p - 1.0) ** (p - 1.0)
    return A ** (-(p - 2.0) / (p - 1.0)), (rho ** (p - N) * ball_mass) ** (1.0 / (p - 1.0))


def autonomous_dp(p: float, N: int, rho: float, ball_mass: float) -> float:
    return autonomous_minimizer(p, N, rho, ball_mass)[1]


def riesz_integral(mu: SpaceTimeMeasure, x0, t0: float, r: float, steps: int = 32,
                   max_bands: int = 48, term_tolerance: float = 1e-10) -> float:
    """int_0^r rho^{-N} mu(Q_{rho, rho^2}) drho / rho, cut off at r 2^{-max_bands}.

    Each dyadic band is integrated by ``steps``-point Gauss-Legendre in log rho.
    If the smallest band still carries more than ``term_tolerance`` of the
    total the integral is reported as divergent (+inf).
    """
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    N = mu.dimension
    gx, gw = np.polynomial.legendre.leggauss(steps)
    half = 0.5 * math.log(2.0)
    total = 0.0
    band = 0.0
    for j in range(max_bands):
        top = math.log(r) - j * math.log(2.0)
        u = top - half + half * gx
        rhos = np.exp(u)
        vals = np.array([mu.cylinder_mass(x0, t0, q, q * q) for q in rhos]) * rhos ** (-N)
        band = half * float(np.dot(gw, vals))
        total += band
        if total > 0 and band <= 1e-3 * term_tolerance * total:
            return total
    if total > 0 and band > term_tolerance * total:
        return math.inf
    return total


def tau_heuristic(params: PotentialParams, mu: SpaceTimeMeasure, x0, t0: float, rho: float) -> float:
    """(rho^{-N} mu(Q_{rho,rho^p}))^{-(p-2)/(p-1)}; +inf when that mass vanishes."""
    p, N = params.p, mu.dimension
    mass = mu.cylinder_mass(x0, t0, rho, rho ** p)
    if mass == 0:
        return math.inf
    if p == 2:
        return 1.0
    return (rho ** (-N) * mass) ** (-(p - 2.0) / (p - 1.0))


def upper_bound_gamma(p: float) -> float:
    """Constant with D_p(rho) <= gamma (first + second summand of upper_bound_sum).

    Evaluating the D_p objective at tau(rho) gives i_p(tau(rho)) = (p-2) x first
    summand and a mass term <= second / 2, hence gamma = max(p - 2, 1/2).
    """
    return max(p - 2.0, 0.5)


def upper_bound_sum(params: PotentialParams, mu: SpaceTimeMeasure, x0, t0: float, rho: float) -> float:
    """Dyadic sum of (rho_j^{-N} mu(Q_{rho_j, rho_j^p}))^{1/(p-1)} + rho_j^{-N} mu(Q_{rho_j, tau(rho_j) rho_j^p})."""
    p, N = params.p, mu.dimension

    def term(r):
        first = (r ** (-N) * mu.cylinder_mass(x0, t0, r, r ** p)) ** (1.0 / (p - 1.0))
        tau = tau_heuristic(params, mu, x0, t0, r)
        if math.isinf(tau):
            second = r ** (-N) * mu.column_mass(x0, r)
        else:
            second = r ** (-N) * mu.cylinder_mass(x0, t0, r, tau * r ** p)
        return first + second

    return _dyadic_sum(term, rho, params.dyadic_max_terms, params.term_tolerance).value


def sample_box(lo, hi, n) -> np.ndarray:
    """Tensor grid of sample points in the space-time box [lo, hi], n per axis."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = np.broadcast_to(np.asarray(n, dtype=int), lo.shape)
    axes = [np.linspace(a, b, int(k)) for a, b, k in zip(lo, hi, n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def sup_potential(params: PotentialParams, mu, rho: float, points) -> float:
    """max over sample points (x..., t) of P_p of |mu| = mu_+ + mu_-."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0:
        raise ValueError("empty sample grid")
    if isinstance(mu, SignedMeasure):
        mu = mu.total_variation()
    best = 0.0
    for pt in points:
        best = max(best, parabolic_potential(params, mu, pt[:-1], pt[-1], rho).value)
    return best
