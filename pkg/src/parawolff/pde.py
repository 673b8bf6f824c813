"""Desk-scale solver for u_t - Delta_p u = mu on a line or with radial symmetry.

Discretisation
--------------
Vertex-centred finite volumes. Node ``i`` owns the control volume between
the neighbouring midpoints (clipped to the domain); in radial geometry
volumes and face areas carry the ``|S^{N-1}| r^{N-1}`` weight, so sums of
``weights * u`` are integrals over R^N. Time stepping is backward Euler
with the diffusion coefficient ``(u_x^2 + eps^2)^{(p-2)/2}`` lagged by one
fixed-point sweep; every sweep is a tridiagonal solve. Zero-flux
(Neumann) boundaries conserve mass to solver tolerance; Dirichlet
boundaries take values from a callable.

Measures enter as cell/step masses: atoms go to the node whose control
volume contains them, in the step whose interval (t_n, t_{n+1}] contains
their time; atoms sitting exactly at the initial time are added to the
initial data instead (fundamental-solution mode). Gridded densities are
intersected exactly with control volumes and steps.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import gamma as _gamma

from ._geometry import unit_ball_volume
from .measure import (
    AtomList,
    GridDensity,
    MeasureSum,
    SignedMeasure,
    SpaceTimeMeasure,
    SpatialAtoms,
    SpatialGridDensity,
    SpatialLebesgue,
    TimeProduct,
)

__all__ = [
    "Domain",
    "ExactSolution",
    "GridSolution",
    "LebesguePoint",
    "StabilityError",
    "TestBump",
    "barenblatt",
    "barenblatt_mass",
    "cylinder_average_power",
    "heat_kernel",
    "lebesgue_point_value",
    "quintic_step",
    "solve",
    "truncation_estimate",
    "weak_residual",
]


class StabilityError(RuntimeError):
    """The time stepper produced non-finite values or a diverging fixed point."""


def _sphere_area(N: int) -> float:
    return N * unit_ball_volume(N)


@dataclass(frozen=True)
class Domain:
    """Spatial interval and time window.

    For ``geometry="line"`` the interval is ``[x_min, x_max]`` and ``N`` must
    be 1. For ``geometry="radial"`` it is ``[0, x_max]`` in the radius and
    ``N`` is the ambient dimension; the centre is the origin.
    """

    x_min: float
    x_max: float
    t_start: float
    t_end: float
    geometry: str = "line"
    N: int = 1
    boundary: str = "neumann"

    def __post_init__(self):
        if self.geometry not in ("line", "radial"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.boundary not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown boundary condition {self.boundary!r}")
        if self.geometry == "line" and self.N != 1:
            raise ValueError("line geometry is one-dimensional")
        if self.geometry == "radial" and self.x_min != 0:
            raise ValueError("radial domains start at r = 0")
        if not self.x_max > self.x_min:
            raise ValueError("empty spatial interval")
        if not self.t_end > self.t_start:
            raise ValueError("empty time window")


def _control_volumes(x, geometry, N):
    """(weights, face_areas) for nodes x; faces sit at the midpoints."""
    mid = 0.5 * (x[1:] + x[:-1])
    lo = np.concatenate([[x[0]], mid])
    hi = np.concatenate([mid, [x[-1]]])
    if geometry == "line":
        return hi - lo, np.ones_like(mid), lo, hi
    area = _sphere_area(N)
    return area * (hi ** N - lo ** N) / N, area * mid ** (N - 1), lo, hi


@dataclass
class GridSolution:
    """Nodal values ``u[n, i]`` at times ``t[n]`` and nodes ``x[i]``."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    h: float
    k: float
    p: float
    domain: Domain
    eps: float = 0.0
    sweeps: list = field(default_factory=list)
    updates: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != (self.t.size, self.x.size):
            raise ValueError("u must have shape (len(t), len(x))")
        if not (self.h > 0 and self.k > 0):
            raise ValueError("h and k must be positive")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("solution contains non-finite values")
        w, _, lo, hi = _control_volumes(self.x, self.domain.geometry, self.domain.N)
        self.weights = w
        self.cv_lo = lo
        self.cv_hi = hi

    @property
    def N(self) -> int:
        return self.domain.N

    @property
    def geometry(self) -> str:
        return self.domain.geometry

    def mass(self, n: int | None = None):
        """Integral of u over the spatial domain at level n (all levels if None)."""
        if n is None:
            return self.u @ self.weights
        return float(self.u[n] @ self.weights)

    def interp(self, x, t):
        """Bilinear interpolation in (x, t); x is the line coordinate or the radius."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        x, t = np.broadcast_arrays(x, t)
        if np.any((t < self.t[0] - 1e-12) | (t > self.t[-1] + 1e-12)):
            raise ValueError("time outside the solution window")
        n = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, self.t.size - 2)
        wt = np.clip((t - self.t[n]) / (self.t[n + 1] - self.t[n]), 0.0, 1.0)
        i = np.clip(np.searchsorted(self.x, x, side="right") - 1, 0, self.x.size - 2)
        wx = np.clip((x - self.x[i]) / (self.x[i + 1] - self.x[i]), 0.0, 1.0)
        a = self.u[n, i] * (1 - wx) + self.u[n, i + 1] * wx
        b = self.u[n + 1, i] * (1 - wx) + self.u[n + 1, i + 1] * wx
        out = a * (1 - wt) + b * wt
        return float(out) if out.ndim == 0 else out

    # quadrature shared by the averaging operators and the level-set functional

    def _check_center(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.geometry == "radial":
            if np.any(y != 0):
                raise ValueError("radial solutions support cylinders centred at the origin only")
            return 0.0
        if y.size != 1:
            raise ValueError("line solutions take a scalar centre")
        return float(y[0])

    def ball_weights(self, y, rho: float) -> tuple[np.ndarray, np.ndarray]:
        """(node indices, overlap of each control volume with the closed ball)."""
        yc = self._check_center(y)
        if self.geometry == "line":
            lo, hi = yc - rho, yc + rho
            if lo < self.x[0] - 1e-12 * (1 + abs(lo)) or hi > self.x[-1] + 1e-12 * (1 + abs(hi)):
                raise ValueError("cylinder leaves the spatial grid")
            ov = np.clip(np.minimum(self.cv_hi, hi) - np.maximum(self.cv_lo, lo), 0.0, None)
        else:
            if rho > self.x[-1] * (1 + 1e-12):
                raise ValueError("cylinder leaves the spatial grid")
            N = self.N
            top = np.minimum(self.cv_hi, rho)
            ov = _sphere_area(N) * np.clip(top ** N - self.cv_lo ** N, 0.0, None) / N
        idx = np.flatnonzero(ov > 0)
        return idx, ov[idx]

    def time_weights(self, s: float, halfheight: float, closed: bool = False):
        """(level indices, hat-function weights) integrating over (s - hh, s + hh)."""
        a, b = s - halfheight, s + halfheight
        tol = 1e-12 * (1 + abs(a) + abs(b))
        if a < self.t[0] - tol or b > self.t[-1] + tol:
            raise ValueError("cylinder leaves the time window")
        a, b = max(a, self.t[0]), min(b, self.t[-1])
        t = self.t
        w = np.zeros(t.size)
        # integrate each linear piece [t_n, t_{n+1}] clipped to [a, b]
        lo = np.maximum(t[:-1], a)
        hi = np.minimum(t[1:], b)
        ok = hi > lo
        dt = t[1:] - t[:-1]
        # hat weights: int (t_{n+1} - tau)/dt and int (tau - t_n)/dt over [lo, hi]
        left = np.where(ok, ((t[1:] - lo) ** 2 - (t[1:] - hi) ** 2) / (2 * dt), 0.0)
        right = np.where(ok, ((hi - t[:-1]) ** 2 - (lo - t[:-1]) ** 2) / (2 * dt), 0.0)
        w[:-1] += left
        w[1:] += right
        idx = np.flatnonzero(w > 0)
        return idx, w[idx]

    def time_slices(self, s: float, halfheight: float) -> np.ndarray:
        """Levels with t_n in the open interval (s - hh, s + hh)."""
        a, b = s - halfheight, s + halfheight
        tol = 1e-12 * (1 + abs(a) + abs(b))
        if a < self.t[0] - tol or b > self.t[-1] + tol:
            raise ValueError("cylinder leaves the time window")
        return np.flatnonzero((self.t > a) & (self.t < b))

    def cylinder_integral(self, fn, y, s: float, rho: float, halfheight: float) -> float:
        """int over B_rho(y) x (s - hh, s + hh) of fn(u, x, t), nodal quadrature."""
        ix, wx = self.ball_weights(y, rho)
        it, wt = self.time_weights(s, halfheight)
        if ix.size == 0 or it.size == 0:
            return 0.0
        U = self.u[np.ix_(it, ix)]
        vals = fn(U, self.x[ix][None, :], self.t[it][:, None])
        return float(wt @ np.asarray(vals, dtype=float) @ wx)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.u)))


def _tridiag_solve(lower, diag, upper, rhs):
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs)


def _spatial_node_masses(nu, x, lo, hi, geometry, N):
    if isinstance(nu, SpatialAtoms):
        pos = nu.positions
        coord = pos[:, 0] if geometry == "line" else np.linalg.norm(pos, axis=1)
        out = np.zeros(x.size)
        _deposit(out, coord, nu.weights, lo, hi)
        return out
    if isinstance(nu, SpatialLebesgue):
        w, _, _, _ = _control_volumes(x, geometry, N)
        return nu.density * w
    if isinstance(nu, SpatialGridDensity) and geometry == "line":
        edges = nu.grid.axis_edges(0)
        ov = np.clip(np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1]), 0, None)
        return ov @ nu.values
    raise NotImplementedError(f"{type(nu).__name__} sources are not supported in {geometry} geometry")


def _deposit(out, coord, weights, lo, hi):
    # node whose control volume [lo, hi) contains the coordinate; the last one is closed
    inside = (coord >= lo[0]) & (coord <= hi[-1])
    k = np.clip(np.searchsorted(lo, coord[inside], side="right") - 1, 0, out.size - 1)
    np.add.at(out, k, weights[inside])


def _source_masses(mu: SpaceTimeMeasure, x, t, geometry, N):
    """(initial deposit per node, masses per step and node) for a nonnegative measure."""
    _, _, lo, hi = _control_volumes(x, geometry, N)
    init = np.zeros(x.size)
    steps = np.zeros((t.size - 1, x.size))
    if isinstance(mu, MeasureSum):
        for part in mu.parts:
            a, b = _source_masses(part, x, t, geometry, N)
            init += a
            steps += b
        return init, steps
    if isinstance(mu, AtomList):
        if len(mu) == 0:
            return init, steps
        coord = mu.positions[:, 0] if geometry == "line" else np.linalg.norm(mu.positions, axis=1)
        at_start = np.isclose(mu.times, t[0], rtol=0, atol=1e-12 * (1 + abs(t[0])))
        _deposit(init, coord[at_start], mu.weights[at_start], lo, hi)
        rest = (~at_start) & (mu.times > t[0]) & (mu.times <= t[-1])
        n = np.clip(np.searchsorted(t, mu.times[rest], side="left") - 1, 0, t.size - 2)
        for nn, c, w in zip(n, coord[rest], mu.weights[rest]):
            row = np.zeros(x.size)
            _deposit(row, np.array([c]), np.array([w]), lo, hi)
            steps[nn] += row
        return init, steps
    if isinstance(mu, TimeProduct):
        per_node = _spatial_node_masses(mu.spatial, x, lo, hi, geometry, N)
        return init, np.outer(np.diff(t), per_node)
    if isinstance(mu, GridDensity) and geometry == "line" and mu.dimension == 1:
        xe = mu.grid.axis_edges(0)
        te = mu.grid.axis_edges(1)
        ox = np.clip(np.minimum(hi[:, None], xe[None, 1:]) - np.maximum(lo[:, None], xe[None, :-1]), 0, None)
        ot = np.clip(np.minimum(t[1:, None], te[None, 1:]) - np.maximum(t[:-1, None], te[None, :-1]), 0, None)
        return init, ot @ mu.values.T @ ox.T
    raise NotImplementedError(f"{type(mu).__name__} sources are not supported in {geometry} geometry")


def solve(p: float, domain: Domain, initial, mu: SignedMeasure | None = None, h: float = 0.05,
          k: float = 1e-3, eps: float | None = None, boundary_value=None, source=None,
          tol: float = 1e-10, max_sweeps: int = 50, store_every: int = 1) -> GridSolution:
    """Backward Euler with lagged, regularised p-Laplacian coefficient.

    ``initial`` is a callable of the node coordinate or an array of node
    values. ``boundary_value(x, t)`` supplies Dirichlet data (default 0).
    ``source(x, t)`` is an optional smooth density evaluated at nodes and
    step ends, on top of the measure ``mu``.
    """
    if not p >= 2:
        raise ValueError("p must be >= 2")
    if not (h > 0 and k > 0):
        raise ValueError("h and k must be positive")
    n_x = int(round((domain.x_max - domain.x_min) / h))
    if n_x < 2 or abs(n_x * h - (domain.x_max - domain.x_min)) > 1e-9 * (domain.x_max - domain.x_min):
        raise ValueError("h must divide the spatial interval")
    n_t = int(round((domain.t_end - domain.t_start) / k))
    if n_t < 1 or abs(n_t * k - (domain.t_end - domain.t_start)) > 1e-9 * (domain.t_end - domain.t_start):
        raise ValueError("k must divide the time window")
    eps = h if eps is None else float(eps)
    if p > 2 and not eps >= 0:
        raise ValueError("eps must be nonnegative")
    x = np.linspace(domain.x_min, domain.x_max, n_x + 1)
    t = np.linspace(domain.t_start, domain.t_end, n_t + 1)
    geometry, N = domain.geometry, domain.N
    w, area, _, _ = _control_volumes(x, geometry, N)

    u = np.asarray(initial(x) if callable(initial) else initial, dtype=float).copy()
    if u.shape != x.shape:
        raise ValueError("initial data must match the node count")
    steps_src = np.zeros((n_t, x.size))
    if mu is not None:
        for sign, part in ((1.0, mu.plus), (-1.0, mu.minus)):
            init, st = _source_masses(part, x, t, geometry, N)
            u += sign * init / w
            steps_src += sign * st
    if not np.all(np.isfinite(u)):
        raise StabilityError("initial data are not finite")

    bv = boundary_value if boundary_value is not None else (lambda xx, tt: 0.0 * xx)
    dirichlet_left = domain.boundary == "dirichlet" and geometry == "line"
    dirichlet_right = domain.boundary == "dirichlet"

    stored_t = [t[0]]
    stored_u = [u.copy()]
    sweeps, updates = [], []
    for n in range(n_t):
        t_new = t[n + 1]
        rhs = w * u + steps_src[n]
        if source is not None:
            rhs = rhs + k * w * np.asarray(source(x, t_new), dtype=float)
        v = u.copy()
        if dirichlet_left or dirichlet_right:
            b_vals = np.asarray(bv(x[[0, -1]], t_new), dtype=float) * np.ones(2)
        update = math.inf
        for sweep in range(1, max_sweeps + 1):
            grad = np.diff(v) / h
            if p == 2:
                coef = np.ones_like(grad)
            else:
                with np.errstate(over="ignore", invalid="ignore"):
                    coef = (grad * grad + eps * eps) ** ((p - 2.0) / 2.0)
            c = k * area * coef / h
            if not np.all(np.isfinite(c)):
                raise StabilityError(f"diffusion coefficient overflows at step {n + 1} (t = {t_new:.6g})")
            diag = w.copy()
            diag[:-1] += c
            diag[1:] += c
            lower = -c.copy()
            upper = -c.copy()
            r = rhs.copy()
            if dirichlet_left:
                diag[0], upper[0], r[0] = 1.0, 0.0, b_vals[0]
            if dirichlet_right:
                diag[-1], lower[-1], r[-1] = 1.0, 0.0, b_vals[1]
            v_new = _tridiag_solve(lower, diag, upper, r)
            if not np.all(np.isfinite(v_new)):
                raise StabilityError(f"non-finite values at step {n + 1} (t = {t_new:.6g}), sweep {sweep}")
            update = float(np.max(np.abs(v_new - v))) / max(1.0, float(np.max(np.abs(v_new))))
            v = v_new
            if p == 2 or update <= tol:
                break
        if update > 1e3:
            raise StabilityError(f"fixed-point sweeps diverge at step {n + 1} (update {update:.3g})")
        sweeps.append(sweep)
        updates.append(0.0 if p == 2 else update)
        u = v
        if (n + 1) % store_every == 0 or n + 1 == n_t:
            stored_t.append(t_new)
            stored_u.append(u.copy())
    return GridSolution(x, np.array(stored_t), np.array(stored_u), h, k * store_every if store_every > 1 else k,
                        p, domain, eps, sweeps, updates)


# ---------------------------------------------------------------------------
# exact solutions

def _radius(N, x):
    x = np.asarray(x, dtype=float)
    if N == 1:
        return np.abs(x)
    if x.shape[-1] != N:
        raise ValueError(f"points need a trailing axis of length {N}")
    return np.linalg.norm(x, axis=-1)


def heat_kernel(N: int, x, t):
    """(4 pi t)^{-N/2} exp(-|x|^2 / (4 t)); ``x`` has a trailing axis of length N unless N = 1."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("heat kernel needs t > 0")
    r = _radius(N, x)
    out = (4.0 * np.pi * t) ** (-N / 2.0) * np.exp(-r * r / (4.0 * t))
    return float(out) if np.ndim(out) == 0 else out


def _barenblatt_constants(p, N):
    lam = N * (p - 2.0) + p
    kp = (p - 2.0) / p * lam ** (-1.0 / (p - 1.0))
    return lam, kp


def barenblatt(p: float, N: int, C: float, x, t):
    """Self-similar source solution of u_t = Delta_p u for p > 2, with shape constant C."""
    if not p > 2:
        raise ValueError("the Barenblatt profile needs p > 2")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("Barenblatt profile needs t > 0")
    if not C > 0:
        raise ValueError("C must be positive")
    lam, kp = _barenblatt_constants(p, N)
    r = _radius(N, x)
    z = r * t ** (-1.0 / lam)
    core = np.maximum(C - kp * z ** (p / (p - 1.0)), 0.0)
    out = t ** (-N / lam) * core ** ((p - 1.0) / (p - 2.0))
    return float(out) if np.ndim(out) == 0 else out


def barenblatt_mass(p: float, N: int, C: float) -> float:
    """Total mass of the Barenblatt profile (time-independent), in closed form.

    With a = p/(p-1), e = (p-1)/(p-2) and R = (C/k)^{1/a} the support radius,
    mass = |S^{N-1}| C^e R^N B(N/a, e + 1) / a.
    """
    lam, kp = _barenblatt_constants(p, N)
    a = p / (p - 1.0)
    e = (p - 1.0) / (p - 2.0)
    R = (C / kp) ** (1.0 / a)
    beta = _gamma(N / a) * _gamma(e + 1.0) / _gamma(N / a + e + 1.0)
    return float(_sphere_area(N) * C ** e * R ** N * beta / a)


@dataclass(frozen=True)
class ExactSolution:
    """Heat kernel (p = 2) or Barenblatt profile (p > 2) centred at the origin, time origin t = 0."""

    kind: str
    N: int = 1
    p: float = 2.0
    C: float = 1.0
    mass: float = 1.0  # heat kernel multiple

    def __post_init__(self):
        if self.kind == "heat" and self.p != 2:
            raise ValueError("the heat kernel is a p = 2 solution")
        if self.kind == "barenblatt" and not self.p > 2:
            raise ValueError("the Barenblatt profile needs p > 2")
        if self.kind not in ("heat", "barenblatt"):
            raise ValueError(f"unknown exact solution {self.kind!r}")

    def radial(self, r, t):
        """Value as a function of the radius |x|."""
        r = np.asarray(r, dtype=float)
        if self.kind == "heat":
            t = np.asarray(t, dtype=float)
            if np.any(t <= 0):
                raise ValueError("heat kernel needs t > 0")
            out = self.mass * (4.0 * np.pi * t) ** (-self.N / 2.0) * np.exp(-r * r / (4.0 * t))
            return float(out) if np.ndim(out) == 0 else out
        return _barenblatt_radial(self.p, self.N, self.C, r, t)

    def __call__(self, x, t):
        return self.radial(_radius(self.N, x), t)

    def total_mass(self) -> float:
        return self.mass if self.kind == "heat" else barenblatt_mass(self.p, self.N, self.C)

    def sample(self, domain: Domain, h: float, k: float) -> GridSolution:
        """Nodal samples on the grid that ``solve`` would use for the same domain."""
        n_x = int(round((domain.x_max - domain.x_min) / h))
        n_t = int(round((domain.t_end - domain.t_start) / k))
        x = np.linspace(domain.x_min, domain.x_max, n_x + 1)
        t = np.linspace(domain.t_start, domain.t_end, n_t + 1)
        coord = np.abs(x) if domain.geometry == "line" else x
        u = self.radial(coord[None, :], t[:, None])
        return GridSolution(x, t, u, h, k, self.p, domain)


def _barenblatt_radial(p, N, C, r, t):
    lam, kp = _barenblatt_constants(p, N)
    z = np.asarray(r, dtype=float) * np.asarray(t, dtype=float) ** (-1.0 / lam)
    core = np.maximum(C - kp * z ** (p / (p - 1.0)), 0.0)
    out = np.asarray(t, dtype=float) ** (-N / lam) * core ** ((p - 1.0) / (p - 2.0))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# test functions and the weak form

def quintic_step(w):
    """S(w) = 10 w^3 - 15 w^4 + 6 w^5 on [0, 1], clamped outside."""
    w = np.clip(w, 0.0, 1.0)
    return w ** 3 * (10.0 - 15.0 * w + 6.0 * w * w)


def _bump_profile(z):
    """1 for |z| <= 1/2, 1 - S(2|z| - 1) on [1/2, 1], 0 beyond; returns (b, b', b'')."""
    a = np.abs(z)
    sg = np.sign(z)
    w = np.clip(2.0 * a - 1.0, 0.0, 1.0)
    live = (a > 0.5) & (a < 1.0)
    b = np.where(a <= 0.5, 1.0, np.where(a >= 1.0, 0.0, 1.0 - quintic_step(w)))
    d1 = np.where(live, -2.0 * 30.0 * w * w * (1 - w) ** 2, 0.0) * sg
    d2 = np.where(live, -4.0 * 60.0 * w * (1 - w) * (1 - 2 * w), 0.0)
    return b, d1, d2


@dataclass(frozen=True)
class TestBump:
    """theta(x, t) = b((x - cx)/rx) b((t - ct)/rt), b the quintic-smoothstep plateau bump.

    In radial geometry x is the radius; a bump that reaches r = 0 must be
    centred there (cx <= rx/2 keeps it flat at the origin).
    """

    __test__ = False

    cx: float
    ct: float
    rx: float
    rt: float

    def __post_init__(self):
        if not (self.rx > 0 and self.rt > 0):
            raise ValueError("bump radii must be positive")

    def parts(self, x, t):
        bx, dx, dxx = _bump_profile((np.asarray(x, dtype=float) - self.cx) / self.rx)
        bt, dt, _ = _bump_profile((np.asarray(t, dtype=float) - self.ct) / self.rt)
        return bx, dx / self.rx, dxx / self.rx ** 2, bt, dt / self.rt

    def __call__(self, x, t):
        bx, _, _, bt, _ = self.parts(x, t)
        return bx * bt

    def check_inside(self, domain: Domain):
        lo, hi = self.cx - self.rx, self.cx + self.rx
        if domain.geometry == "radial":
            if lo < 0 and not self.cx <= 0.5 * self.rx:
                raise ValueError("radial bump reaching r = 0 must be flat there (cx <= rx/2)")
            lo = max(lo, 0.0)
            if hi >= domain.x_max:
                raise ValueError("bump support exceeds the domain")
        elif lo <= domain.x_min or hi >= domain.x_max:
            raise ValueError("bump support exceeds the domain")
        if self.ct - self.rt <= domain.t_start or self.ct + self.rt >= domain.t_end:
            raise ValueError("bump support exceeds the time window")


_GQ_X, _GQ_W = np.polynomial.legendre.leggauss(4)
_GQ_X = 0.5 * (_GQ_X + 1.0)
_GQ_W = 0.5 * _GQ_W
_GT_X, _GT_W = np.polynomial.legendre.leggauss(3)
_GT_X = 0.5 * (_GT_X + 1.0)
_GT_W = 0.5 * _GT_W


def _space_quadrature(sol: GridSolution, i0, i1):
    # Gauss points inside cells i0..i1-1 with geometric weights
    xa = sol.x[i0:i1]
    xb = sol.x[i0 + 1:i1 + 1]
    pts = xa[:, None] + (xb - xa)[:, None] * _GQ_X[None, :]
    wts = (xb - xa)[:, None] * _GQ_W[None, :]
    if sol.geometry == "radial":
        wts = wts * _sphere_area(sol.N) * pts ** (sol.N - 1)
    frac = _GQ_X[None, :]
    return pts, wts, frac


def _cell_range(sol, lo, hi):
    i0 = max(int(np.searchsorted(sol.x, lo, side="right")) - 1, 0)
    i1 = min(int(np.searchsorted(sol.x, hi, side="left")), sol.x.size - 1)
    return i0, i1


def weak_residual(sol: GridSolution, mu: SignedMeasure | None, theta: TestBump, source=None) -> float:
    """LHS - RHS of the weak formulation for a test function supported inside the window.

    With theta vanishing at both ends of the time window the identity reads
    ``int int |u_x|^{p-2} u_x theta_x - u theta_t = int int theta dmu``.
    The discrete solution is read as piecewise linear in x and in t; space
    integrals use 4-point Gauss per cell and time integrals 3-point Gauss per
    step, so the quadrature error of the smooth test function stays far
    below the discretisation error being measured.
    """
    theta.check_inside(sol.domain)
    p = sol.p
    lo = max(theta.cx - theta.rx, sol.x[0])
    hi = min(theta.cx + theta.rx, sol.x[-1])
    i0, i1 = _cell_range(sol, lo, hi)
    pts, wts, frac = _space_quadrature(sol, i0, i1)
    t = sol.t
    n0 = max(int(np.searchsorted(t, theta.ct - theta.rt, side="right")) - 1, 0)
    n1 = min(int(np.searchsorted(t, theta.ct + theta.rt, side="left")), t.size - 1)
    bx, dx, _, _, _ = theta.parts(pts, 0.0)
    dxs = np.diff(sol.x[i0:i1 + 1])
    lhs = 0.0
    for n in range(n0, n1):
        dt_n = t[n + 1] - t[n]
        for g, gw in zip(_GT_X, _GT_W):
            tq = t[n] + g * dt_n
            _, _, _, bt, dt = theta.parts(0.0, tq)
            if bt == 0 and dt == 0:
                continue
            ucell = (1 - g) * sol.u[n, i0:i1 + 1] + g * sol.u[n + 1, i0:i1 + 1]
            grad = np.diff(ucell) / dxs
            flux = np.abs(grad) ** (p - 2.0) * grad if p != 2 else grad
            uq = ucell[:-1, None] * (1 - frac) + ucell[1:, None] * frac
            lhs += gw * dt_n * float(np.sum(wts * (flux[:, None] * dx * bt - uq * bx * dt)))
    rhs = 0.0
    if mu is not None:
        rhs += _measure_pairing(mu.plus, theta, sol) - _measure_pairing(mu.minus, theta, sol)
    if source is not None:
        for n in range(n0, n1):
            dt_n = t[n + 1] - t[n]
            for g, gw in zip(_GT_X, _GT_W):
                tq = t[n] + g * dt_n
                rhs += gw * dt_n * float(np.sum(wts * theta(pts, tq) * source(pts, tq)))
    return lhs - rhs


def _measure_pairing(mu: SpaceTimeMeasure, theta: TestBump, sol: GridSolution) -> float:
    if sol.geometry == "line":
        lo = [theta.cx - theta.rx, theta.ct - theta.rt]
        hi = [theta.cx + theta.rx, theta.ct + theta.rt]
        return mu.integrate(lambda x, t: theta(x[..., 0], t), lo, hi)
    if isinstance(mu, AtomList):
        if len(mu) == 0:
            return 0.0
        r = np.linalg.norm(mu.positions, axis=1)
        return float(np.sum(mu.weights * theta(r, mu.times)))
    raise NotImplementedError("radial pairing is implemented for atom measures")


def truncation_estimate(sol: GridSolution, theta: TestBump) -> float:
    """Size of the scheme's consistency error tested against theta.

    ``int int |theta| ((k/2)|u_tt| + (h^2/12)|(a u_x)_xx|_x)`` with derivatives
    from finite differences of the stored solution: the first term is the
    backward-Euler defect, the second the flux-difference defect.
    """
    t, x, u = sol.t, sol.x, sol.u
    k = float(np.min(np.diff(t)))
    h = sol.h
    p = sol.p
    if t.size < 3:
        raise ValueError("need at least three time levels")
    utt = np.zeros_like(u)
    utt[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / k ** 2
    utt[0], utt[-1] = utt[1], utt[-2]
    grad = np.diff(u, axis=1) / h
    flux = np.abs(grad) ** (p - 2.0) * grad
    if sol.geometry == "radial":
        mid = 0.5 * (x[1:] + x[:-1])
        flux = flux * mid ** (sol.N - 1)
    f3 = np.zeros_like(u)
    d3 = np.diff(flux, n=3, axis=1) / h ** 3 if flux.shape[1] > 3 else np.zeros((u.shape[0], 0))
    f3[:, 2:2 + d3.shape[1]] = np.abs(d3)
    if sol.geometry == "radial":
        f3[:, 1:] = f3[:, 1:] / np.maximum(x[1:], h) ** (sol.N - 1)
    density = 0.5 * k * np.abs(utt) + h * h / 12.0 * f3
    th = np.abs(theta(x[None, :], t[:, None]))
    w = sol.weights
    inner = (th * density) @ w
    return float(np.trapezoid(inner, t))


# ---------------------------------------------------------------------------
# Lebesgue points and cylinder averages

@dataclass(frozen=True)
class LebesguePoint:
    value: float
    averages: tuple
    oscillations: tuple
    radii: tuple
    is_lebesgue: bool


def lebesgue_point_value(sol: GridSolution, y, s: float, radii, time_scale: float = 1.0,
                         osc_tol: float = 0.05) -> LebesguePoint:
    """Limit of cylinder averages over B_rho(y) x (s - c rho^p, s + c rho^p).

    The value is the least-squares intercept in rho^2 through the last three
    averages. The point is flagged Lebesgue when the mean oscillation
    ``avg |u - value|`` at the smallest radius is below ``osc_tol (1 + |value|)``.
    """
    radii = np.asarray(sorted(radii, reverse=True), dtype=float)
    if radii.size < 1 or np.any(radii <= 0):
        raise ValueError("need positive radii")
    p = sol.p
    avgs = []
    vols = []
    for rho in radii:
        hh = time_scale * rho ** p
        vol = sol.cylinder_integral(lambda U, X, T: np.ones_like(U), y, s, rho, hh)
        avgs.append(sol.cylinder_integral(lambda U, X, T: U, y, s, rho, hh) / vol)
        vols.append(vol)
    avgs = np.array(avgs)
    if radii.size >= 3:
        A = np.stack([np.ones(3), radii[-3:] ** 2], axis=1)
        value = float(np.linalg.lstsq(A, avgs[-3:], rcond=None)[0][0])
    else:
        value = float(avgs[-1])
    oscs = []
    for rho, vol in zip(radii, vols):
        hh = time_scale * rho ** p
        oscs.append(sol.cylinder_integral(lambda U, X, T: np.abs(U - value), y, s, rho, hh) / vol)
    is_leb = oscs[-1] <= osc_tol * (1.0 + abs(value))
    return LebesguePoint(value, tuple(avgs), tuple(oscs), tuple(radii), bool(is_leb))


def cylinder_average_power(sol: GridSolution, y, s: float, rho: float, theta: float, lam: float,
                           p: float, sign: str = "+") -> float:
    """(rho^{-(N+p)} int int_{Q_{rho,theta}} u_+-^{(1+lam)(p-1)})^{1/(1+lam(p-1))}."""
    if p == 2 and rho * rho > theta:
        raise ValueError("for p = 2 the cylinder needs rho^2 <= theta")
    if sign in ("+", "plus"):
        part = lambda U: np.maximum(U, 0.0)
    elif sign in ("-", "minus", "−"):
        part = lambda U: np.maximum(-U, 0.0)
    else:
        raise ValueError(f"unknown sign {sign!r}")
    power = (1.0 + lam) * (p - 1.0)
    integral = sol.cylinder_integral(lambda U, X, T: part(U) ** power, y, s, rho, theta)
    N = sol.N
    return (rho ** (-(N + p)) * integral) ** (1.0 / (1.0 + lam * (p - 1.0)))


# ---------------------------------------------------------------------------
# output

def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def snapshot_csv(sol: GridSolution, levels=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x1" if sol.geometry == "line" else "r", "u"])
    levels = range(sol.t.size) if levels is None else levels
    for n in levels:
        for xi, ui in zip(sol.x, sol.u[n]):
            w.writerow([repr(float(sol.t[n])), repr(float(xi)), repr(float(ui))])
    return buf.getvalue()


def manifest(sol: GridSolution, **extra) -> dict:
    d = sol.domain
    out = {
        "p": sol.p,
        "h": sol.h,
        "k": sol.k,
        "eps": sol.eps,
        "geometry": d.geometry,
        "N": d.N,
        "domain": [d.x_min, d.x_max],
        "time_window": [d.t_start, d.t_end],
        "boundary": d.boundary,
        "steps": len(sol.sweeps),
        "sweeps_total": int(sum(sol.sweeps)),
        "sweeps_max": int(max(sol.sweeps)) if sol.sweeps else 0,
        "fixed_point_residual_max": float(max(sol.updates)) if sol.updates else 0.0,
        "mass_initial": sol.mass(0),
        "mass_final": sol.mass(sol.t.size - 1),
    }
    out.update(extra)
    return out


def write_solution(sol: GridSolution, out_dir, stem: str = "solution", levels=None, **extra) -> None:
    out_dir = Path(out_dir)
    _atomic_write(out_dir / f"{stem}.csv", snapshot_csv(sol, levels))
    _atomic_write(out_dir / f"{stem}.json", json.dumps(manifest(sol, **extra), indent=2, sort_keys=True) + "\n")


def read_solution(path, p: float, geometry: str = "line", N: int = 1, boundary: str = "neumann") -> GridSolution:
    """Rebuild a GridSolution from a snapshot CSV (all levels on one uniform grid)."""
    path = Path(path)
    rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    if not rows or [c.strip() for c in rows[0]][0] != "t" or len(rows[0]) != 3:
        raise ValueError(f"{path}: expected header t,x1,u (or t,r,u)")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    t = np.unique(data[:, 0])
    x = np.unique(data[:, 1])
    if data.shape[0] != t.size * x.size:
        raise ValueError(f"{path}: snapshot is not a full tensor grid")
    order = np.lexsort((data[:, 1], data[:, 0]))
    u = data[order, 2].reshape(t.size, x.size)
    if x.size < 2 or t.size < 2:
        raise ValueError(f"{path}: need at least two nodes and two time levels (write all snapshots)")
    h = float(x[1] - x[0])
    k = float(t[1] - t[0])
    dom = Domain(float(x[0]), float(x[-1]), float(t[0]), float(t[-1]), geometry, N, boundary)
    return GridSolution(x, t, u, h, k, p, dom)
