"""Kilpelainen-Maly level iteration for the parabolic p-Laplacian.

Starting from ``l_0 = 0`` and ``delta_{-1} = 2 delta_{rho,theta}`` the
iteration picks, at every dyadic radius ``rho_j = 2^-j rho``, a step
``delta_j >= max(delta_{j-1}/2, i_p(tau_j))`` that keeps the level-set
functional ``A_j(delta)`` at or below ``kappa``; the levels
``l_{j+1} = l_j + delta_j`` increase to ``l_inf``, which dominates
``u_+(y, s)`` at Lebesgue points.

Cylinders are intrinsic: ``Q_j^delta = B_{rho_j}(y) x (s - H, s + H)`` with
``H = eps_p delta^{2-p} rho_j^p``. All integrals use the nodal quadrature of
:class:`parawolff.pde.GridSolution` (exact control-volume/ball overlaps in
space, hat functions in time); the supremum in time is a maximum over the
stored levels inside the open interval, plus the level through ``s`` itself
when the interval is thinner than one step.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .measure import SignedMeasure, SpaceTimeMeasure
from .pde import GridSolution, lebesgue_point_value, quintic_step, cylinder_average_power
from .potential import PotentialParams, dp, eps_p, i_p, parabolic_potential

__all__ = [
    "A_j",
    "G",
    "IterationResult",
    "IterationState",
    "KMContext",
    "Phi",
    "RootFindingError",
    "ScaledCylinder",
    "TheoremReport",
    "cutoff_xi",
    "delta_rho_theta",
    "eps_rho_theta",
    "next_level",
    "phi",
    "proposition_constants",
    "psi",
    "psi_prime",
    "run",
    "theorem_check",
    "unit_bump",
]

DELTA_BRACKET_LIMIT = 1e12
ROOT_RTOL = 1e-7  # |A_j(delta_j) - kappa| <= ROOT_RTOL * kappa on the root branch


class RootFindingError(RuntimeError):
    """A_j(delta) stayed above kappa up to the bracketing limit."""


# ---------------------------------------------------------------------------
# scalar functions

def G(s):
    """min(s_+^2, s_+)."""
    sp = np.maximum(np.asarray(s, dtype=float), 0.0)
    out = np.minimum(sp * sp, sp)
    return float(out) if out.ndim == 0 else out


def psi(s, p: float, lam: float):
    """(1 + s_+)^{1 - (1+lam)/p} - 1."""
    sp = np.maximum(np.asarray(s, dtype=float), 0.0)
    out = (1.0 + sp) ** (1.0 - (1.0 + lam) / p) - 1.0
    return float(out) if out.ndim == 0 else out


def psi_prime(s, p: float, lam: float):
    """psi'(s) = (1 - (1+lam)/p) (1 + s)^{-(1+lam)/p} for s > 0."""
    s = np.asarray(s, dtype=float)
    out = (1.0 - (1.0 + lam) / p) * (1.0 + s) ** (-(1.0 + lam) / p)
    return float(out) if out.ndim == 0 else out


def phi(s, lam: float):
    """int_0^{s_+} (1 + r)^{-1-lam} dr = (1 - (1 + s_+)^{-lam}) / lam."""
    sp = np.maximum(np.asarray(s, dtype=float), 0.0)
    out = (1.0 - (1.0 + sp) ** (-lam)) / lam
    return float(out) if out.ndim == 0 else out


def Phi(s, lam: float):
    """int_0^s phi, in closed form (zero for s <= 0)."""
    sp = np.maximum(np.asarray(s, dtype=float), 0.0)
    if lam == 1.0:
        out = sp - np.log1p(sp)
    else:
        out = (sp - ((1.0 + sp) ** (1.0 - lam) - 1.0) / (1.0 - lam)) / lam
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# cut-off functions and cylinders

def _profile(z):
    """1 on |z| <= 1/2, 1 - S(2|z| - 1) on [1/2, 1], 0 beyond; S the quintic smoothstep."""
    a = np.abs(np.asarray(z, dtype=float))
    # S can overshoot 1 by an ulp near w = 1; clip so fractional powers stay real
    return np.where(a <= 0.5, 1.0, np.clip(1.0 - quintic_step(2.0 * a - 1.0), 0.0, 1.0))


def _profile_slope(z):
    a = np.abs(np.asarray(z, dtype=float))
    w = np.clip(2.0 * a - 1.0, 0.0, 1.0)
    return np.where((a > 0.5) & (a < 1.0), -60.0 * w * w * (1.0 - w) ** 2, 0.0) * np.sign(z)


# max |profile'| = 2 * 30/16; the unit bump meets |grad xi| < 4 and |xi_t| < 4
UNIT_SLOPE = 3.75


def unit_bump(x_norm, t):
    """xi(x, t) = b(|x|) b(t) on the unit cylinder B_1 x (-1, 1)."""
    return _profile(x_norm) * _profile(t)


def unit_bump_grad(x_norm, t):
    """(|grad_x xi|, |d_t xi|) of the unit bump."""
    return np.abs(_profile_slope(x_norm)) * _profile(t), _profile(x_norm) * np.abs(_profile_slope(t))


def delta_rho_theta(p: float, rho: float, theta: float) -> float:
    if p == 2:
        return 0.0
    return (eps_p(p) * rho ** p / theta) ** (1.0 / (p - 2.0))


def eps_rho_theta(p: float, rho: float, theta: float) -> float:
    if p == 2:
        return 0.0
    return rho ** (p / (p - 2.0)) * theta ** (-1.0 / (p - 2.0))


@dataclass(frozen=True)
class ScaledCylinder:
    """Q_j^delta = B_{rho_j}(y) x (s - eps_p delta^{2-p} rho_j^p, s + ...)."""

    j: int
    rho_j: float
    delta: float
    y: tuple
    s: float
    p: float

    @property
    def halfheight(self) -> float:
        if self.p == 2:
            return self.rho_j ** 2
        if self.delta == 0:
            return math.inf
        return eps_p(self.p) * self.delta ** (2.0 - self.p) * self.rho_j ** self.p

    def inside_half_of(self, other: "ScaledCylinder", rtol: float = 1e-12) -> bool:
        """Same centre, radius and half-height at most half of the other's (quarter in time)."""
        return (self.rho_j <= 0.5 * other.rho_j * (1 + rtol)
                and self.halfheight <= 0.25 * other.halfheight * (1 + rtol))


def cutoff_xi(j: int, delta: float, params: PotentialParams, y, s: float, x, t, rho: float):
    """xi_{j,delta}(x, t) = xi((x - y)/rho_j, (t - s)/(delta^{2-p} rho_j^p eps_p))."""
    rho_j = rho * 2.0 ** (-j)
    cyl = ScaledCylinder(j, rho_j, delta, tuple(np.atleast_1d(y)), s, params.p)
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.asarray(x, dtype=float)
    if yv.size == 1:
        dist = np.abs(x - yv[0])
    else:
        dist = np.linalg.norm(x - yv, axis=-1)
    out = unit_bump(dist / rho_j, (np.asarray(t, dtype=float) - s) / cyl.halfheight)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# the level-set functional

@dataclass(frozen=True)
class KMContext:
    """What A_j needs besides delta: the solution, the centre, the scale and the level."""

    sol: GridSolution
    y: object
    s: float
    rho_j: float
    l_j: float
    params: PotentialParams
    j: int = 0


def _distance(sol: GridSolution, y, x):
    if sol.geometry == "radial":
        return np.abs(x)
    return np.abs(x - float(np.atleast_1d(y)[0]))


def A_j(ctx: KMContext, delta: float) -> float:
    """Level-set functional at step size delta (integral term + sup-in-time term)."""
    sol, prm = ctx.sol, ctx.params
    p, lam, m = prm.p, prm.lam, prm.m
    N = sol.N
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    hh = ScaledCylinder(ctx.j, ctx.rho_j, delta, (), ctx.s, p).halfheight
    ix, wx = sol.ball_weights(ctx.y, ctx.rho_j)
    if delta == 0:
        # limit delta -> 0+: zero on an empty level set, +inf otherwise
        it, _ = sol.time_weights(ctx.s, min(hh, 0.5 * (sol.t[-1] - sol.t[0])))
        U = sol.u[np.ix_(it, ix)]
        return 0.0 if not np.any(U > ctx.l_j) else math.inf
    power = (1.0 + lam) * (p - 1.0)
    xs = _distance(sol, ctx.y, sol.x[ix]) / ctx.rho_j
    bx = _profile(xs)

    it, wt = sol.time_weights(ctx.s, hh)
    U = sol.u[np.ix_(it, ix)]
    xi = bx[None, :] * _profile((sol.t[it] - ctx.s) / hh)[:, None]
    exc = np.maximum(U - ctx.l_j, 0.0) / delta
    term1 = float(wt @ (exc ** power * xi ** (m - p)) @ wx)
    term1 *= delta ** (p - 2.0) / (eps_p(p) * ctx.rho_j ** (N + p))

    slices = sol.time_slices(ctx.s, hh)
    if slices.size:
        Us = sol.u[np.ix_(slices, ix)]
        xis = bx[None, :] * _profile((sol.t[slices] - ctx.s) / hh)[:, None]
        sup = float(np.max((G((Us - ctx.l_j) / delta) * xis ** m) @ wx))
    else:
        us = sol.interp(sol.x[ix], np.full(ix.size, ctx.s))
        sup = float((G((us - ctx.l_j) / delta) * bx ** m) @ wx)
    return term1 + sup / ctx.rho_j ** N


# ---------------------------------------------------------------------------
# the iteration

@dataclass(frozen=True)
class IterationState:
    j: int
    rho_j: float
    l_j: float
    delta_hat: float
    delta_j: float
    tau_j: float
    ihat: float
    A_value: float
    branch: str  # "hat" (A_j(delta_hat) <= kappa) or "root"
    dp_value: float
    cylinder: ScaledCylinder
    A_at_hat: float = 0.0

    @property
    def l_next(self) -> float:
        return self.l_j + self.delta_j


@dataclass
class IterationResult:
    states: list
    l_partial: float
    tail: float
    l_inf: float
    converged: bool
    delta_rho_theta: float
    corollary_components: tuple  # (2 delta_{rho,theta}, average term, sum_j D_p(rho_j))
    tail_flag: str = "none"
    kappa: float = 0.1
    invariants: dict = field(default_factory=dict)


def _smallest_root(ctx: KMContext, start: float, kappa: float, scale: float) -> tuple[float, float]:
    """Smallest delta > start with A_j(delta) = kappa, A_j nonincreasing in delta."""
    lo = start
    hi = 2.0 * start if start > 0 else 1e-15 * (1.0 + scale)
    limit = DELTA_BRACKET_LIMIT * max(start, 1.0 + scale)
    a_hi = A_j(ctx, hi)
    while a_hi > kappa:
        lo = hi
        hi *= 2.0
        if hi > limit:
            raise RootFindingError(f"A_j stays above kappa up to delta = {hi:.3g} (j = {ctx.j})")
        a_hi = A_j(ctx, hi)
    # invariant: A(lo) > kappa >= A(hi)
    for _ in range(400):
        if abs(a_hi - kappa) <= ROOT_RTOL * kappa or hi - lo <= 4 * np.finfo(float).eps * hi:
            break
        mid = 0.5 * (lo + hi)
        a_mid = A_j(ctx, mid)
        if a_mid > kappa:
            lo = mid
        else:
            hi, a_hi = mid, a_mid
    return hi, a_hi


def next_level(sol: GridSolution, mu_plus: SpaceTimeMeasure, prev_delta: float, l_j: float, j: int,
               y, s: float, rho: float, params: PotentialParams) -> IterationState:
    """One step: tau_j from D_p(rho_j), delta_hat_j, then the hat or root branch."""
    p = params.p
    rho_j = rho * 2.0 ** (-j)
    x0 = _measure_centre(sol, mu_plus, y)
    res = dp(params, mu_plus, x0, s, rho_j)
    tau_j = res.tau_star
    ihat = i_p(p, tau_j) if math.isfinite(tau_j) else 0.0
    delta_hat = max(0.5 * prev_delta, ihat)
    ctx = KMContext(sol, y, s, rho_j, l_j, params, j)
    a_hat = A_j(ctx, delta_hat)
    if a_hat <= params.kappa:
        delta, a_val, branch = delta_hat, a_hat, "hat"
    else:
        delta, a_val = _smallest_root(ctx, delta_hat, params.kappa, sol.max_abs())
        branch = "root"
    cyl = ScaledCylinder(j, rho_j, delta, tuple(np.atleast_1d(y)), s, p)
    return IterationState(j, rho_j, l_j, delta_hat, delta, tau_j, ihat, a_val, branch, res.value, cyl, a_hat)


def _measure_centre(sol: GridSolution, mu: SpaceTimeMeasure, y):
    if sol.geometry == "radial":
        return np.zeros(mu.dimension)
    return np.atleast_1d(np.asarray(y, dtype=float))


def _check_cylinder(sol: GridSolution, y, s, rho, theta, p):
    if not (rho > 0 and theta > 0):
        raise ValueError("rho and theta must be positive")
    if p == 2 and rho * rho > theta:
        raise ValueError("for p = 2 the cylinder needs rho^2 <= theta")
    sol.ball_weights(y, rho)
    tol = 1e-12 * (1 + abs(s) + theta)
    if s - theta < sol.t[0] - tol or s + theta > sol.t[-1] + tol:
        raise ValueError("Q_{rho,theta} leaves the time window of the solution")


def run(sol: GridSolution, mu_plus: SpaceTimeMeasure, y, s: float, rho: float, theta: float,
        params: PotentialParams, j_max: int = 60, stop_rtol: float = 1e-8) -> IterationResult:
    """Iterate ``next_level`` from (l_0 = 0, delta_{-1} = 2 delta_{rho,theta}).

    Stops once ``delta_j < stop_rtol (l_j + delta_{rho,theta} + 1)`` or after
    ``j_max`` steps. Because ``delta_{j+1} >= delta_j / 2`` the unseen tail is at
    least ``delta_last``; ``l_inf`` adds exactly that, which is exact when the
    iteration has settled into pure halving.
    """
    p = params.p
    _check_cylinder(sol, y, s, rho, theta, p)
    d_rt = delta_rho_theta(p, rho, theta)
    prev = 2.0 * d_rt
    l = 0.0
    states = []
    converged = False
    for j in range(j_max):
        st = next_level(sol, mu_plus, prev, l, j, y, s, rho, params)
        states.append(st)
        prev = st.delta_j
        l = st.l_next
        if st.delta_j < stop_rtol * (st.l_j + d_rt + 1.0):
            converged = True
            break
    l_partial = float(sum(st.delta_j for st in states))
    tail = states[-1].delta_j if states else 0.0
    avg = cylinder_average_power(sol, y, s, rho, theta, params.lam, p, "+")
    dsum = float(sum(st.dp_value for st in states))
    flag = "halving-tail" if converged else ("j_max" if states else "empty")
    result = IterationResult(states, l_partial, tail, l_partial + tail, converged, d_rt,
                             (2.0 * d_rt, avg, dsum), flag, params.kappa)
    result.invariants = check_invariants(result, sol, y, s, rho, theta, params)
    return result


def check_invariants(result: IterationResult, sol: GridSolution, y, s, rho, theta,
                     params: PotentialParams, rtol: float = 1e-12) -> dict:
    """Exact geometric checks of the embeddings along a trace.

    ``imb1``: delta_j^{2-p} rho_j^p <= delta_{j-1}^{2-p} rho_{j-1}^p / 4 and Q_0 inside Q_{rho,theta};
    ``imb2``: eps_p delta_j^{2-p} <= tau_j; ``halving``: delta_j >= delta_{j-1}/2;
    ``root``: |A_j(delta_j) - kappa| <= 1e-6 kappa on root steps.
    """
    p, kappa = params.p, params.kappa
    ok = {"imb1": True, "inside": True, "imb2": True, "halving": True, "root": True, "monotone": True}
    prev_delta = 2.0 * result.delta_rho_theta
    prev_cyl = None
    for st in result.states:
        d = st.delta_j
        hh = st.cylinder.halfheight
        if d < 0.5 * prev_delta * (1 - rtol):
            ok["halving"] = False
        if prev_cyl is not None and not st.cylinder.inside_half_of(prev_cyl, rtol):
            ok["imb1"] = False
        if not (st.rho_j <= rho * (1 + rtol) and hh <= theta * (1 + rtol)):
            ok["inside"] = False
        if math.isfinite(st.tau_j) and not hh <= st.tau_j * st.rho_j ** p * (1 + rtol):
            ok["imb2"] = False
        if st.branch == "root" and abs(st.A_value - kappa) > 1e-6 * kappa:
            ok["root"] = False
        if d > 0 and not st.l_next > st.l_j:
            ok["monotone"] = False
        prev_delta = d
        prev_cyl = st.cylinder
    return ok


def proposition_constants(result: IterationResult) -> tuple[float, float]:
    """Measured constants of the step estimates along one trace.

    Returns ``(c_j, c_0)`` with ``c_j = max_{j>=1} (delta_j - delta_{j-1}/2)_+ / D_p(rho_j)``
    and ``c_0 = (delta_0 - delta_{rho,theta})_+ / (average term + D_p(rho))``;
    a positive excess over a vanishing denominator gives ``inf``.
    """
    def ratio(excess, denom):
        if excess <= 0:
            return 0.0
        return excess / denom if denom > 0 else math.inf

    c_j = 0.0
    for prev, st in zip(result.states, result.states[1:]):
        c_j = max(c_j, ratio(st.delta_j - 0.5 * prev.delta_j, st.dp_value))
    c_0 = 0.0
    if result.states:
        first = result.states[0]
        c_0 = ratio(first.delta_j - result.delta_rho_theta, result.corollary_components[1] + first.dp_value)
    return c_j, c_0


def trace_csv(result: IterationResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["j", "rho_j", "tau_j", "ihat", "delta_hat", "delta_j", "l_j", "A_j", "branch"])
    for st in result.states:
        w.writerow([st.j, repr(st.rho_j), repr(st.tau_j), repr(st.ihat), repr(st.delta_hat),
                    repr(st.delta_j), repr(st.l_j), repr(st.A_value), st.branch])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# the pointwise estimate

@dataclass(frozen=True)
class TheoremReport:
    lhs: float
    eps_term: float
    average_term: float
    potential_term: float
    ratio: float
    sign: str

    @property
    def rhs_sum(self) -> float:
        return self.eps_term + self.average_term + self.potential_term


def theorem_check(sol, mu: SignedMeasure, y, s: float, rho: float, theta: float,
                  params: PotentialParams, sign: str = "+", lhs: float | None = None,
                  radii=None) -> TheoremReport:
    """u_+-(y, s) against eps_{rho,theta} + average term + P_p^{mu_+-}(y, s; rho).

    ``sol`` is a GridSolution or an exact solution object offering
    ``cylinder_integral``; ``lhs`` overrides the Lebesgue-point estimate of
    u_+-(y, s) (use it when the exact value is known). The ratio is 0 when
    the left side vanishes.
    """
    p = params.p
    if p == 2 and rho * rho > theta:
        raise ValueError("for p = 2 the cylinder needs rho^2 <= theta")
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    if lhs is None:
        if radii is None:
            h = getattr(sol, "h", rho / 16)
            radii = [8 * h, 4 * h, 2 * h]
        val = lebesgue_point_value(sol, y, s, radii).value
        lhs = max(val, 0.0) if sign == "+" else max(-val, 0.0)
    e = eps_rho_theta(p, rho, theta)
    avg = cylinder_average_power(sol, y, s, rho, theta, params.lam, p, sign)
    part = mu.part(sign)
    x0 = np.atleast_1d(np.asarray(y, dtype=float))
    if x0.size != part.dimension:
        x0 = np.zeros(part.dimension)
    P = parabolic_potential(params, part, x0, s, rho).value
    total = e + avg + P
    if lhs == 0:
        ratio = 0.0
    elif total == 0:
        ratio = math.inf
    else:
        ratio = lhs / total
    return TheoremReport(float(lhs), e, avg, P, ratio, sign)
