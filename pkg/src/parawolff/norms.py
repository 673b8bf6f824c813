"""Decreasing rearrangements, Lorentz and mixed Lebesgue norms, and explicit
per-scale upper bounds for D_p of absolutely continuous measures.

Everything here works on piecewise-constant data, so f* is a step function
and f** is piecewise of the form ``v + a/s``. Integrals of powers of f** are
exact on the first segment and on the tail; in between they are smooth and
are integrated with Gauss-Legendre in log s (the generic antiderivative is a
hypergeometric function with poles at integer parameter values).

Constants of the bounds
-----------------------
Let ``c = 1/(2 (p-1)^{p-1})`` and ``b = 1 - 1/r``. If the mass bound
``rho^{-N} mu(Q_{rho, tau rho^p}) <= M tau^b`` holds for all tau, then

    D_p(rho) <= inf_tau [(p-2) tau^{-1/(p-2)} + c M tau^b]
             = (p - 2 + 1/b) (c b M)^kappa,   kappa = 1/(p - 1 - (p-2)/r),

attained at ``tau = (c b M)^{-1/(b + 1/(p-2))}``. For p = 2 the choice
tau = 1 gives ``c M``, which is the same formula. Hoelder's inequality gives

    M = omega_N^{1-1/q} 2^b rho^{p - p/r - N/q} ||mu||          (Lebesgue, either order)
    M = omega_N 2^b rho^{p - p/r} g**(omega_N rho^N)             (Lorentz)

with ``g(x) = ||mu(x, .)||_{r,inf}``; the second uses
``int_E f <= |E| f**(|E|) <= |E|^{1-1/r} ||f||_{r,inf}`` in time and
``int_B g <= |B| g**(|B|)`` in space. For r = 1 the Lorentz bound is the
kappa = 1 limit ``c M``. The integrated Lorentz form dominates the dyadic sum
because ``s^{p-p/r} g**(omega_N s^N)`` loses at most a factor
``2^{p-p/r}`` across a dyadic band, so the dyadic sum is bounded by
``2^{(p-p/r) alpha} / ln 2`` times the integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._geometry import unit_ball_volume
from .potential import PotentialParams

__all__ = [
    "GridFunction",
    "LorentzBound",
    "Rearrangement",
    "double_star",
    "lebesgue_gamma",
    "lorentz_norm",
    "mixed_norm",
    "rearrange",
    "rearrange_weighted",
    "remark_bound_lebesgue",
    "remark_bound_lorentz",
    "remark_sum_lebesgue",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


@dataclass(frozen=True)
class GridFunction:
    """Cellwise-constant function on a uniform grid (spatial axes, then time)."""

    origin: tuple
    spacing: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        spacing = tuple(float(h) for h in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != values.ndim or len(origin) != values.ndim:
            raise ValueError("origin and spacing need one entry per axis")
        if any(not h > 0 for h in spacing):
            raise ValueError("cell sizes must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dimension(self) -> int:
        return self.values.ndim - 1

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def box(self):
        lo = np.array(self.origin)
        return lo, lo + np.array(self.spacing) * np.array(self.values.shape)

    @classmethod
    def from_function(cls, f, lo, hi, shape) -> "GridFunction":
        """Sample ``f(*coords)`` at cell centres of the box [lo, hi]."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        h = (hi - lo) / np.asarray(shape)
        axes = [lo[k] + h[k] * (np.arange(n) + 0.5) for k, n in enumerate(shape)]
        grids = np.meshgrid(*axes, indexing="ij")
        return cls(tuple(lo), tuple(h), np.broadcast_to(f(*grids), tuple(shape)).astype(float))


@dataclass(frozen=True)
class Rearrangement:
    """Step function f* = values[k] on [edges[k], edges[k+1]), zero after edges[-1]."""

    edges: np.ndarray
    values: np.ndarray
    total_mass: float

    def f_star(self, s):
        s = np.asarray(s, dtype=float)
        k = np.searchsorted(self.edges, s, side="right") - 1
        vals = np.append(self.values, 0.0)
        return vals[np.clip(k, 0, len(self.values))]

    @property
    def support(self) -> float:
        return float(self.edges[-1])

    def cumulative(self) -> np.ndarray:
        """int_0^{edges[k]} f* for every edge."""
        return np.concatenate([[0.0], np.cumsum(self.values * np.diff(self.edges))])


def rearrange_weighted(values, weights) -> Rearrangement:
    """Decreasing rearrangement of |values| where each value occupies measure ``weights``."""
    v = np.abs(np.asarray(values, dtype=float).reshape(-1))
    w = np.broadcast_to(np.asarray(weights, dtype=float), v.shape).reshape(-1)
    keep = (v > 0) & (w > 0)
    v, w = v[keep], w[keep]
    order = np.argsort(-v, kind="stable")
    v, w = v[order], w[order]
    if v.size:
        # merge runs of equal values so steps are strictly decreasing
        starts = np.flatnonzero(np.r_[True, v[1:] != v[:-1]])
        w = np.add.reduceat(w, starts)
        v = v[starts]
    edges = np.concatenate([[0.0], np.cumsum(w)])
    return Rearrangement(edges, v, float(np.dot(v, w)))


def rearrange(f: GridFunction) -> Rearrangement:
    return rearrange_weighted(f.values, f.cell_volume)


def double_star(r: Rearrangement, s) -> float:
    """f**(s) = (1/s) int_0^s f*, exact for the step function."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise ValueError("f** needs s > 0")
    cum = r.cumulative()
    k = np.clip(np.searchsorted(r.edges, s_arr, side="right") - 1, 0, len(r.values))
    vals = np.append(r.values, 0.0)
    out = (cum[k] + vals[k] * (s_arr - r.edges[k])) / s_arr
    return float(out) if out.ndim == 0 else out


def _segments(r: Rearrangement):
    """(s_lo, s_hi, v, a) with f**(s) = v + a/s on [s_lo, s_hi)."""
    cum = r.cumulative()
    for k, v in enumerate(r.values):
        yield r.edges[k], r.edges[k + 1], v, cum[k] - v * r.edges[k]
    yield r.edges[-1], math.inf, 0.0, cum[-1]


def _sup_segment(lo, hi, v, a, beta):
    # sup of s^beta (v + a/s) over [lo, hi]; beta >= 0, and a = 0 whenever lo = 0
    def h(s):
        if s == 0:
            return v if beta == 0 else 0.0
        return s ** beta * (v + a / s)

    if hi == math.inf:
        # only the tail segment is unbounded, and there v = 0
        if beta > 1:
            return math.inf
        return a if beta == 1 else h(lo)
    # v s^beta + a s^(beta-1) has no interior maximum: it is monotone for beta >= 1
    # and its only critical point is a minimum for beta < 1
    return max(h(lo), h(hi))


def _int_segment(lo, hi, v, a, beta, alpha):
    # int_lo^hi (s^beta (v + a/s))^alpha ds/s
    if hi <= lo or (v == 0 and a == 0):
        return 0.0
    if a == 0:
        e = beta * alpha
        if e <= 0:
            return math.inf
        if hi == math.inf:
            return math.inf
        return v ** alpha * (hi ** e - lo ** e) / e
    if v == 0:
        e = (beta - 1.0) * alpha
        if hi == math.inf:
            return math.inf if e >= 0 else a ** alpha * lo ** e / (-e)
        if e == 0:
            return a ** alpha * math.log(hi / lo)
        return a ** alpha * (hi ** e - lo ** e) / e
    if lo == 0 or hi == math.inf:
        raise ValueError("mixed segment must be bounded away from 0 and infinity")
    # smooth integrand in u = log s; split into pieces of log-width <= 1
    u0, u1 = math.log(lo), math.log(hi)
    n = max(1, int(math.ceil(u1 - u0)))
    cuts = np.linspace(u0, u1, n + 1)
    total = 0.0
    for c0, c1 in zip(cuts[:-1], cuts[1:]):
        u = 0.5 * (c0 + c1) + 0.5 * (c1 - c0) * _GL_X
        s = np.exp(u)
        total += 0.5 * (c1 - c0) * float(np.dot(_GL_W, (s ** beta * (v + a / s)) ** alpha))
    return total


def _lorentz_integral(r: Rearrangement, q: float, alpha: float, upper: float = math.inf) -> float:
    """int_0^upper (s^{1/q} f**(s))^alpha ds/s (alpha < inf) or the sup over (0, upper]."""
    beta = 0.0 if q == math.inf else 1.0 / q
    if r.total_mass == 0:
        return 0.0
    acc = 0.0
    for lo, hi, v, a in _segments(r):
        if lo >= upper:
            break
        hi = min(hi, upper)
        if alpha == math.inf:
            acc = max(acc, _sup_segment(lo, hi, v, a, beta))
        else:
            acc += _int_segment(lo, hi, v, a, beta, alpha)
        if acc == math.inf:
            return math.inf
    return acc


def lorentz_norm(f, q: float, alpha: float) -> float:
    """||f||_{q,alpha} built on f**; +inf when the defining integral diverges.

    ``f`` may be a GridFunction or an existing Rearrangement.
    """
    if not (q > 0 and alpha > 0):
        raise ValueError("Lorentz exponents must be positive")
    r = f if isinstance(f, Rearrangement) else rearrange(f)
    val = _lorentz_integral(r, q, alpha)
    if alpha == math.inf or val in (0.0, math.inf):
        return val
    return val ** (1.0 / alpha)


def _lp(values, weights, q, axis):
    if q == math.inf:
        return np.max(np.abs(values), axis=axis)
    return (np.sum(np.abs(values) ** q, axis=axis) * weights) ** (1.0 / q)


def mixed_norm(f: GridFunction, inner=(2.0, "x"), outer=(2.0, "t")) -> float:
    """Iterated norm: the inner exponent over one axis group, then the outer over the other.

    ``inner=(q, "x"), outer=(r, "t")`` is L^r_t(L^q_x); swapping the axis
    labels gives L^q_x(L^r_t).
    """
    (q_in, ax_in), (q_out, ax_out) = inner, outer
    if {ax_in, ax_out} != {"x", "t"}:
        raise ValueError("axis groups must be 'x' and 't'")
    for q in (q_in, q_out):
        if not (q >= 1):
            raise ValueError("exponents must be >= 1 or inf")
    n = f.dimension
    dx = float(np.prod(f.spacing[:n]))
    dt = f.spacing[n]
    space_axes = tuple(range(n))
    if ax_in == "x":
        slices = _lp(f.values, dx, q_in, space_axes)
        return float(_lp(slices, dt, q_out, 0))
    slices = _lp(f.values, dt, q_in, n)
    return float(_lp(slices.reshape(-1), dx, q_out, 0))


def _optimised(p, r, M):
    """inf over tau of i_p(tau) + c M tau^b, the closed form from the module docstring."""
    c = 1.0 / (2.0 * (p - 1.0) ** (p - 1.0))
    if M == 0:
        return 0.0
    if M == math.inf:
        return math.inf
    b = 1.0 - 1.0 / r
    if p == 2 or b == 0:
        return c * M
    kappa = 1.0 / (p - 1.0 - (p - 2.0) / r)
    return (p - 2.0 + 1.0 / b) * (c * b * M) ** kappa


def lebesgue_gamma(p: float, N: int, q: float, r: float) -> float:
    """gamma with D_p(rho) <= gamma [rho^{p-p/r-N/q} ||mu||]^kappa (Lebesgue case)."""
    return _optimised(p, r, unit_ball_volume(N) ** (1.0 - 1.0 / q) * 2.0 ** (1.0 - 1.0 / r))


def _check_lebesgue(params, q, r):
    if not r > 1:
        raise ValueError(f"need r > 1, got {r}")
    if not q > params.N / params.p:
        raise ValueError(f"need q > N/p = {params.N / params.p}, got {q}")


def remark_bound_lebesgue(params: PotentialParams, norm: float, rho: float, q: float, r: float) -> float:
    """Upper bound for D_p(rho) from a mixed Lebesgue norm ||mu||_{q,r} (either order)."""
    _check_lebesgue(params, q, r)
    if not rho > 0:
        raise ValueError("rho must be positive")
    p, N = params.p, params.N
    e = p - p / r - (0.0 if q == math.inf else N / q)
    M = unit_ball_volume(N) ** (1.0 - (0.0 if q == math.inf else 1.0 / q)) * 2.0 ** (1.0 - 1.0 / r) * rho ** e * norm
    return _optimised(p, r, M)


def remark_sum_lebesgue(params: PotentialParams, norm: float, rho: float, q: float, r: float) -> float:
    """Sum of the Lebesgue bound over rho_j = 2^-j rho; finite iff 1/r + N/(pq) < 1."""
    first = remark_bound_lebesgue(params, norm, rho, q, r)
    if first == 0:
        return 0.0
    p, N = params.p, params.N
    e = p - p / r - (0.0 if q == math.inf else N / q)
    kappa = 1.0 / (p - 1.0 - (p - 2.0) / r)
    if e <= 0:
        return math.inf
    return first / (1.0 - 2.0 ** (-e * kappa))


@dataclass(frozen=True)
class LorentzBound:
    per_radius: float
    integrated: float
    gamma: float
    q: float
    alpha: float


def time_lorentz_profile(f: GridFunction, r: float) -> np.ndarray:
    """g(x) = ||f(x, .)||_{r,inf} for every spatial cell (flattened)."""
    n = f.dimension
    dt = f.spacing[n]
    rows = np.abs(f.values).reshape(-1, f.values.shape[-1])
    out = np.empty(rows.shape[0])
    for k, row in enumerate(rows):
        out[k] = _lorentz_integral(rearrange_weighted(row, dt), r, math.inf)
    return out


def remark_bound_lorentz(params: PotentialParams, f: GridFunction, rho: float, r: float) -> LorentzBound:
    """Per-radius and integrated Lorentz-type upper bounds for D_p(rho) and sum_j D_p(rho_j).

    The integrated value bounds the whole dyadic sum starting at ``rho``.
    """
    p, N = params.p, f.dimension
    if not r > (p - 2.0) / (p - 1.0):
        raise ValueError(f"need r > (p-2)/(p-1) = {(p - 2) / (p - 1)}, got {r}")
    if not rho > 0:
        raise ValueError("rho must be positive")
    e = p - p / r
    q = N / e if e > 0 else math.inf
    alpha = 1.0 / (p - 1.0 - (p - 2.0) / r)
    wN = unit_ball_volume(N)
    g = time_lorentz_profile(f, r)
    if np.any(np.isinf(g)):
        return LorentzBound(math.inf, math.inf, math.inf, q, alpha)
    g_re = rearrange_weighted(g, float(np.prod(f.spacing[:N])))
    if g_re.total_mass == 0:
        return LorentzBound(0.0, 0.0, 0.0, q, alpha)
    b = 1.0 - 1.0 / r
    unit = wN * 2.0 ** b
    gamma = _optimised(p, r, unit)
    per_radius = _optimised(p, r, unit * rho ** e * double_star(g_re, wN * rho ** N))
    if e <= 0:
        return LorentzBound(per_radius, math.inf, gamma, q, alpha)
    # int_0^rho [s^e g**(omega_N s^N)]^alpha ds/s
    #   = (1/N) omega_N^{-alpha e/N} int_0^{omega_N rho^N} [sigma^{e/N} g**(sigma)]^alpha dsigma/sigma
    raw = _lorentz_integral(g_re, N / e, alpha, upper=wN * rho ** N) * wN ** (-alpha * e / N) / N
    integrated = gamma * 2.0 ** (e * alpha) / math.log(2.0) * raw
    return LorentzBound(per_radius, integrated, gamma, q, alpha)
