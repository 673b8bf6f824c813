"""Space-time Radon measures and cylinder-mass queries.

Cylinders are ``Q_{rho,s}(x0, t0) = {|x - x0| <= rho} x (t0 - s, t0 + s)``:
a closed spatial ball and an open time interval. Atoms sitting on the
spatial sphere are counted; atoms at a time endpoint are not. Boundary
tests use a relative slack of ``BOUNDARY_RTOL`` so that rounding in
``t0 + s`` does not flip the convention.

Nonnegative measures come in three variants (:class:`AtomList`,
:class:`GridDensity`, :class:`TimeProduct`); signed measures are explicit
Jordan pairs (:class:`SignedMeasure`).
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._geometry import ball_box_volumes, unit_ball_volume

BOUNDARY_RTOL = 1e-12

__all__ = [
    "AtomList",
    "Cylinder",
    "GridDensity",
    "MeasureFormatError",
    "MeasureSum",
    "SignedMeasure",
    "SpaceTimeMeasure",
    "SpatialAtoms",
    "SpatialGridDensity",
    "SpatialLebesgue",
    "SpatialMeasure",
    "TimeProduct",
    "ball_mass",
    "cylinder_mass",
    "load_measure",
    "zero_measure",
]


class MeasureFormatError(ValueError):
    """A measure file could not be parsed or violates an invariant."""


def _as_point(x, n: int | None = None) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise ValueError("a point must be a 1-D coordinate vector")
    if n is not None and x.shape[0] != n:
        raise ValueError(f"dimension mismatch: point has {x.shape[0]} coordinates, measure lives in R^{n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite point coordinates")
    return x


def _check_scalar(name: str, v: float, positive: bool = False) -> float:
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"{name} must be finite")
    if positive and v <= 0.0:
        raise ValueError(f"{name} must be positive, got {v}")
    return v


@dataclass(frozen=True)
class Cylinder:
    """Closed ball of radius ``radius`` about ``center_x`` times ``(t - s, t + s)``."""

    center_x: tuple
    center_t: float
    radius: float
    halfheight: float

    def __post_init__(self):
        object.__setattr__(self, "center_x", tuple(float(c) for c in np.atleast_1d(self.center_x)))
        _check_scalar("center_t", self.center_t)
        if not (self.radius > 0.0) or not math.isfinite(self.radius):
            raise ValueError("cylinder radius must be positive and finite")
        if not (self.halfheight > 0.0):
            raise ValueError("cylinder half-height must be positive")

    @property
    def dimension(self) -> int:
        return len(self.center_x)

    def volume(self) -> float:
        return unit_ball_volume(self.dimension) * self.radius ** self.dimension * 2.0 * self.halfheight


# ---------------------------------------------------------------------------
# spatial measures


class SpatialMeasure:
    """A nonnegative Radon measure on R^N with finite mass on every ball."""

    dimension: int

    def ball_mass(self, x0, rho: float) -> float:
        raise NotImplementedError

    def total_mass(self) -> float:
        raise NotImplementedError

    def scaled(self, c: float) -> "SpatialMeasure":
        raise NotImplementedError


class SpatialAtoms(SpatialMeasure):
    def __init__(self, positions, weights):
        positions = np.asarray(positions, dtype=float)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if positions.ndim == 1:
            positions = positions.reshape(len(weights), -1) if len(weights) else positions.reshape(0, 1)
        if positions.shape[0] != weights.shape[0]:
            raise ValueError("positions and weights disagree in length")
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(weights))):
            raise ValueError("non-finite atom data")
        if np.any(weights <= 0.0):
            raise ValueError("atom weights must be positive")
        self.positions = positions
        self.weights = weights
        self.dimension = positions.shape[1]

    def ball_mass(self, x0, rho):
        x0 = _as_point(x0, self.dimension)
        if not rho > 0:
            raise ValueError("radius must be positive")
        if len(self.weights) == 0:
            return 0.0
        dist = np.linalg.norm(self.positions - x0, axis=1)
        return float(np.sum(self.weights[dist <= rho * (1.0 + BOUNDARY_RTOL)]))

    def total_mass(self):
        return float(np.sum(self.weights))

    def scaled(self, c):
        if c < 0:
            raise ValueError("scale factor must be nonnegative")
        if c == 0:
            return SpatialAtoms(np.zeros((0, self.dimension)), np.zeros(0))
        return SpatialAtoms(self.positions, c * self.weights)


class SpatialLebesgue(SpatialMeasure):
    """Constant density ``density`` times Lebesgue measure on R^N."""

    def __init__(self, dimension: int, density: float = 1.0):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        if density < 0 or not math.isfinite(density):
            raise ValueError("density must be finite and nonnegative")
        self.dimension = int(dimension)
        self.density = float(density)

    def ball_mass(self, x0, rho):
        _as_point(x0, self.dimension)
        if not rho > 0:
            raise ValueError("radius must be positive")
        return self.density * unit_ball_volume(self.dimension) * rho ** self.dimension

    def total_mass(self):
        return math.inf if self.density > 0 else 0.0

    def scaled(self, c):
        if c < 0:
            raise ValueError("scale factor must be nonnegative")
        return SpatialLebesgue(self.dimension, c * self.density)


class _Grid:
    """Uniform rectangular grid of cells, origin = lower corner of cell 0."""

    def __init__(self, origin, spacing, shape):
        self.origin = np.asarray(origin, dtype=float).reshape(-1)
        self.spacing = np.asarray(spacing, dtype=float).reshape(-1)
        self.shape = tuple(int(s) for s in shape)
        if not (len(self.origin) == len(self.spacing) == len(self.shape)):
            raise ValueError("origin, spacing and shape must have equal length")
        if np.any(self.spacing <= 0) or not np.all(np.isfinite(self.spacing)):
            raise ValueError("grid spacing must be positive")
        if not np.all(np.isfinite(self.origin)):
            raise ValueError("non-finite grid origin")

    def axis_edges(self, k):
        return self.origin[k] + self.spacing[k] * np.arange(self.shape[k] + 1)

    def ball_cells(self, x0, rho):
        """(flat indices, overlap volumes) of cells meeting the closed ball."""
        n = len(x0)
        ranges = []
        for k in range(n):
            lo = int(math.floor((x0[k] - rho - self.origin[k]) / self.spacing[k]))
            hi = int(math.floor((x0[k] + rho - self.origin[k]) / self.spacing[k]))
            lo, hi = max(lo, 0), min(hi, self.shape[k] - 1)
            if hi < lo:
                return np.zeros(0, dtype=int), np.zeros(0)
            ranges.append(np.arange(lo, hi + 1))
        mesh = np.meshgrid(*ranges, indexing="ij")
        idx = np.stack([m.reshape(-1) for m in mesh], axis=1)
        lo = self.origin + idx * self.spacing
        vols = ball_box_volumes(x0, rho, lo, lo + self.spacing)
        flat = np.ravel_multi_index(idx.T, self.shape)
        keep = vols > 0
        return flat[keep], vols[keep]


class SpatialGridDensity(SpatialMeasure):
    """Piecewise-constant density on a uniform grid in R^N, zero outside."""

    def __init__(self, origin, spacing, values):
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite density values")
        if np.any(values < 0):
            raise ValueError("grid density values must be nonnegative")
        self.grid = _Grid(origin, spacing, values.shape)
        self.values = values
        self.dimension = values.ndim

    def ball_mass(self, x0, rho):
        x0 = _as_point(x0, self.dimension)
        if not rho > 0:
            raise ValueError("radius must be positive")
        flat, vols = self.grid.ball_cells(x0, rho)
        return float(np.dot(self.values.reshape(-1)[flat], vols))

    def total_mass(self):
        return float(self.values.sum() * np.prod(self.grid.spacing))

    def scaled(self, c):
        if c < 0:
            raise ValueError("scale factor must be nonnegative")
        return SpatialGridDensity(self.grid.origin, self.grid.spacing, c * self.values)


def ball_mass(nu: SpatialMeasure, x0, rho: float) -> float:
    """nu(B_rho(x0)) with B the closed ball."""
    return nu.ball_mass(x0, rho)


# ---------------------------------------------------------------------------
# space-time measures


class SpaceTimeMeasure:
    """Nonnegative measure on R^N x R.

    Subclasses implement :meth:`cylinder_masses`, vectorised in the
    half-height, which is what the tau scan in ``potential.dp`` needs.
    """

    dimension: int

    def mass_profile(self, x0, t0: float, rho: float):
        """Return ``s -> mu(Q_{rho,s}(x0, t0))`` for a fixed centre and radius.

        The callable is vectorised in ``s``; ball/cell overlaps are computed once.
        """
        raise NotImplementedError

    def cylinder_masses(self, x0, t0: float, rho: float, s) -> np.ndarray:
        return self.mass_profile(x0, t0, rho)(np.asarray(s, dtype=float))

    def cylinder_mass(self, x0, t0: float, rho: float, s: float) -> float:
        return float(self.cylinder_masses(x0, t0, rho, np.array([s]))[0])

    def column_mass(self, x0, rho: float) -> float:
        """Mass of the infinite cylinder B_rho(x0) x R."""
        raise NotImplementedError

    def time_breakpoints(self, x0, t0: float, rho: float) -> np.ndarray:
        """Half-heights at which the cylinder mass jumps (empty if continuous)."""
        return np.zeros(0)

    def scaled(self, c: float) -> "SpaceTimeMeasure":
        raise NotImplementedError

    def integrate(self, f, lo, hi) -> float:
        """Integral of f(x, t) against the measure over the box [lo, hi] (space..., time)."""
        raise NotImplementedError

    def __add__(self, other):
        if not isinstance(other, SpaceTimeMeasure):
            return NotImplemented
        if other.dimension != self.dimension:
            raise ValueError("cannot add measures of different dimension")
        return MeasureSum([self, other])

    def _check_query(self, x0, t0, rho):
        x0 = _as_point(x0, self.dimension)
        _check_scalar("t0", t0)
        _check_scalar("rho", rho, positive=True)
        return x0


class AtomList(SpaceTimeMeasure):
    """Finite sum of positive point masses at (position, time)."""

    def __init__(self, positions, times, weights, dimension: int | None = None):
        weights = np.asarray(weights, dtype=float).reshape(-1)
        times = np.asarray(times, dtype=float).reshape(-1)
        positions = np.asarray(positions, dtype=float)
        if positions.size == 0:
            positions = positions.reshape(0, dimension or 1)
        elif positions.ndim == 1:
            positions = positions.reshape(len(weights), -1)
        if dimension is not None and positions.shape[1] != dimension:
            raise ValueError("atom positions do not match the declared dimension")
        if not (positions.shape[0] == times.shape[0] == weights.shape[0]):
            raise ValueError("positions, times and weights disagree in length")
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(times)) and np.all(np.isfinite(weights))):
            raise ValueError("non-finite atom data")
        if np.any(weights <= 0.0):
            raise ValueError("atom weights must be positive")
        self.positions = positions
        self.times = times
        self.weights = weights
        self.dimension = positions.shape[1]

    def __len__(self):
        return len(self.weights)

    def _in_ball(self, x0, rho):
        if len(self) == 0:
            return np.zeros(0, dtype=bool)
        dist = np.linalg.norm(self.positions - x0, axis=1)
        return dist <= rho * (1.0 + BOUNDARY_RTOL)

    def mass_profile(self, x0, t0, rho):
        x0 = self._check_query(x0, t0, rho)
        sel = self._in_ball(x0, rho)
        if not np.any(sel):
            return lambda s: np.zeros_like(np.asarray(s, dtype=float))
        d = np.abs(self.times[sel] - t0)
        order = np.argsort(d)
        d = d[order]
        cum = np.concatenate([[0.0], np.cumsum(self.weights[sel][order])])

        def profile(s):
            s = np.asarray(s, dtype=float)
            # open interval: an atom counts iff d < s (relative slack at the endpoint)
            k = np.searchsorted(d, s * (1.0 - BOUNDARY_RTOL), side="left")
            return np.where(np.isinf(s), cum[-1], cum[k])

        return profile

    def column_mass(self, x0, rho):
        x0 = _as_point(x0, self.dimension)
        return float(np.sum(self.weights[self._in_ball(x0, rho)]))

    def time_breakpoints(self, x0, t0, rho):
        x0 = _as_point(x0, self.dimension)
        d = np.abs(self.times[self._in_ball(x0, rho)] - t0)
        return np.unique(d[d > 0])

    def scaled(self, c):
        if c < 0:
            raise ValueError("scale factor must be nonnegative")
        if c == 0:
            return zero_measure(self.dimension)
        return AtomList(self.positions, self.times, c * self.weights)

    def union(self, other: "AtomList") -> "AtomList":
        if other.dimension != self.dimension:
            raise ValueError("cannot join atom lists of different dimension")
        return AtomList(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.times, other.times]),
            np.concatenate([self.weights, other.weights]),
            dimension=self.dimension,
        )

    def __add__(self, other):
        if isinstance(other, AtomList):
            return self.union(other)
        return super().__add__(other)

    def integrate(self, f, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if len(self) == 0:
            return 0.0
        pts = np.column_stack([self.positions, self.times])
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        if not np.any(inside):
            return 0.0
        vals = f(self.positions[inside], self.times[inside])
        return float(np.dot(self.weights[inside], vals))


def zero_measure(dimension: int) -> AtomList:
    return AtomList(np.zeros((0, dimension)), np.zeros(0), np.zeros(0), dimension=dimension)


def _time_overlaps(edges, t0, s):
    """Lengths of (t0 - s, t0 + s) intersected with each cell [edges_k, edges_k+1]."""
    s = np.asarray(s, dtype=float)[..., None]
    lo = np.maximum(edges[:-1], t0 - s)
    hi = np.minimum(edges[1:], t0 + s)
    return np.clip(hi - lo, 0.0, None)


class GridDensity(SpaceTimeMeasure):
    """Piecewise-constant density on a uniform space-time grid, zero outside.

    ``values`` has shape ``(n_1, ..., n_N, n_t)``; ``origin`` and ``spacing``
    list the spatial axes first and time last.
    """

    def __init__(self, origin, spacing, values):
        values = np.asarray(values, dtype=float)
        if values.ndim < 2:
            raise ValueError("grid density needs at least one spatial and one time axis")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite density values")
        if np.any(values < 0):
            raise ValueError("grid density values must be nonnegative")
        self.values = values
        self.dimension = values.ndim - 1
        self.grid = _Grid(origin, spacing, values.shape)
        self._space = _Grid(self.grid.origin[:-1], self.grid.spacing[:-1], values.shape[:-1])
        self._t_edges = self.grid.axis_edges(self.dimension)

    @classmethod
    def from_grid_function(cls, f) -> "GridDensity":
        return cls(f.origin, f.spacing, np.abs(f.values))

    def _time_profile(self, x0, rho):
        flat, vols = self._space.ball_cells(x0, rho)
        vals = self.values.reshape(-1, self.values.shape[-1])[flat]
        return vols @ vals

    def mass_profile(self, x0, t0, rho):
        x0 = self._check_query(x0, t0, rho)
        prof = self._time_profile(x0, rho)
        edges = self._t_edges

        def profile(s):
            s = np.minimum(np.asarray(s, dtype=float), 1e300)
            return _time_overlaps(edges, t0, s) @ prof

        return profile

    def column_mass(self, x0, rho):
        x0 = _as_point(x0, self.dimension)
        return float(np.sum(self._time_profile(x0, rho)))

    def scaled(self, c):
        if c < 0:
            raise ValueError("scale factor must be nonnegative")
        return GridDensity(self.grid.origin, self.grid.spacing, c * self.values)

    def cell_centers(self):
        axes = [self.grid.origin[k] + self.grid.spacing[k] * (np.arange(n) + 0.5)
                for k, n in enumerate(self.values.shape)]
        return axes

    def integrate(self, f, lo, hi, subdivisions: int = 6):
        # tensor Gauss-Legendre with ``subdivisions`` nodes per axis on each
        # cell clipped to the box
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        gx, gw = np.polynomial.legendre.leggauss(subdivisions)
        frac, gw = 0.5 * (gx + 1.0), 0.5 * gw
        axes_pts, axes_w = [], []
        for k, n in enumerate(self.values.shape):
            edges = self.grid.axis_edges(k)
            a = np.clip(edges[:-1], lo[k], hi[k])
            b = np.clip(edges[1:], lo[k], hi[k])
            pts = a[:, None] + (b - a)[:, None] * frac
            w = (b - a)[:, None] * gw[None, :]
            axes_pts.append(pts)
            axes_w.append(w)
        total = 0.0
        nt = self.values.shape[-1]
        space_shape = self.values.shape[:-1]
        for idx in itertools.product(*[range(n) for n in space_shape]):
            if not np.any(self.values[idx]):
                continue
            sub = [axes_pts[k][i] for k, i in enumerate(idx)]
            subw = [axes_w[k][i] for k, i in enumerate(idx)]
            mesh = np.meshgrid(*sub, indexing="ij")
            wmesh = np.prod(np.meshgrid(*subw, indexing="ij"), axis=0).reshape(-1)
            if not np.any(wmesh):
                continue
            x = np.stack([m.reshape(-1) for m in mesh], axis=1)
            tp = axes_pts[-1].reshape(-1)
            tw = axes_w[-1].reshape(-1)
            dens = np.repeat(self.values[idx], subdivisions)
            xx = np.repeat(x, len(tp), axis=0)
            tt = np.tile(tp, len(x))
            ww = np.repeat(wmesh, len(tp)) * np.tile(tw * dens, len(x))
            keep = ww > 0
            if np.any(keep):
                total += float(np.dot(ww[keep], f(xx[keep], tt[keep])))
        return total


class TimeProduct(SpaceTimeMeasure):
    """Time-independent measure ``nu(dx) dt`` on R^N x R."""

    def __init__(self, spatial: SpatialMeasure):
        self.spatial = spatial
        self.dimension = spatial.dimension

    def mass_profile(self, x0, t0, rho):
        x0 = self._check_query(x0, t0, rho)
        m = self.spatial.ball_mass(x0, rho)
        if m == 0.0:
            return lambda s: np.zeros_like(np.asarray(s, dtype=float))
        return lambda s: m * 2.0 * np.asarray(s, dtype=float)

    def column_mass(self, x0, rho):
        m = self.spatial.ball_mass(x0, rho)
        return math.inf if m > 0 else 0.0

    def scaled(self, c):
        return TimeProduct(self.spatial.scaled(c))

    def integrate(self, f, lo, hi, nodes: int = 24):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        gx, gw = np.polynomial.legendre.leggauss(nodes)
        tq = 0.5 * (hi[-1] - lo[-1]) * (gx + 1) + lo[-1]
        tw = 0.5 * (hi[-1] - lo[-1]) * gw
        nu = self.spatial
        if isinstance(nu, SpatialAtoms):
            sel = np.all((nu.positions >= lo[:-1]) & (nu.positions <= hi[:-1]), axis=1)
            if not np.any(sel):
                return 0.0
            x = np.repeat(nu.positions[sel], nodes, axis=0)
            t = np.tile(tq, int(sel.sum()))
            w = np.repeat(nu.weights[sel], nodes) * np.tile(tw, int(sel.sum()))
            return float(np.dot(w, f(x, t)))
        if isinstance(nu, SpatialLebesgue):
            axes = [0.5 * (hi[k] - lo[k]) * (gx + 1) + lo[k] for k in range(self.dimension)]
            wts = [0.5 * (hi[k] - lo[k]) * gw for k in range(self.dimension)]
            mesh = np.meshgrid(*axes, indexing="ij")
            wm = np.prod(np.meshgrid(*wts, indexing="ij"), axis=0).reshape(-1)
            x = np.stack([m.reshape(-1) for m in mesh], axis=1)
            xx = np.repeat(x, nodes, axis=0)
            tt = np.tile(tq, len(x))
            ww = np.repeat(wm, nodes) * np.tile(tw, len(x)) * nu.density
            return float(np.dot(ww, f(xx, tt)))
        if isinstance(nu, SpatialGridDensity):
            g = GridDensity(
                np.concatenate([nu.grid.origin, [lo[-1]]]),
                np.concatenate([nu.grid.spacing, [(hi[-1] - lo[-1]) / nodes]]),
                np.repeat(nu.values[..., None], nodes, axis=-1),
            )
            return g.integrate(f, lo, hi)
        raise NotImplementedError(f"integration against {type(nu).__name__}")


class MeasureSum(SpaceTimeMeasure):
    """Sum of nonnegative measures; used for |mu| = mu_+ + mu_-."""

    def __init__(self, parts: Sequence[SpaceTimeMeasure]):
        parts = list(parts)
        if not parts:
            raise ValueError("empty measure sum")
        dims = {p.dimension for p in parts}
        if len(dims) != 1:
            raise ValueError("all parts must share the same dimension")
        self.parts = parts
        self.dimension = dims.pop()

    def mass_profile(self, x0, t0, rho):
        profiles = [p.mass_profile(x0, t0, rho) for p in self.parts]
        return lambda s: sum(f(s) for f in profiles)

    def column_mass(self, x0, rho):
        return float(sum(p.column_mass(x0, rho) for p in self.parts))

    def time_breakpoints(self, x0, t0, rho):
        return np.unique(np.concatenate([p.time_breakpoints(x0, t0, rho) for p in self.parts]))

    def scaled(self, c):
        return MeasureSum([p.scaled(c) for p in self.parts])

    def integrate(self, f, lo, hi):
        return float(sum(p.integrate(f, lo, hi) for p in self.parts))


def cylinder_mass(mu: SpaceTimeMeasure, Q: Cylinder) -> float:
    """mu(Q) for the closed-ball / open-time-interval cylinder Q."""
    if Q.dimension != mu.dimension:
        raise ValueError(f"dimension mismatch: cylinder in R^{Q.dimension}, measure in R^{mu.dimension}")
    return mu.cylinder_mass(Q.center_x, Q.center_t, Q.radius, Q.halfheight)


@dataclass(frozen=True)
class SignedMeasure:
    """A signed measure stored as its Jordan pair ``plus - minus``."""

    plus: SpaceTimeMeasure
    minus: SpaceTimeMeasure

    def __post_init__(self):
        if self.plus.dimension != self.minus.dimension:
            raise ValueError("Jordan parts must share the spatial dimension")

    @property
    def dimension(self) -> int:
        return self.plus.dimension

    @classmethod
    def nonnegative(cls, mu: SpaceTimeMeasure) -> "SignedMeasure":
        return cls(mu, zero_measure(mu.dimension))

    @classmethod
    def zero(cls, dimension: int) -> "SignedMeasure":
        return cls(zero_measure(dimension), zero_measure(dimension))

    def part(self, sign: str) -> SpaceTimeMeasure:
        if sign in ("+", "plus"):
            return self.plus
        if sign in ("-", "minus", "−"):
            return self.minus
        raise ValueError(f"unknown sign {sign!r}")

    def total_variation(self) -> SpaceTimeMeasure:
        if isinstance(self.plus, AtomList) and isinstance(self.minus, AtomList):
            return self.plus.union(self.minus)
        return MeasureSum([self.plus, self.minus])

    def negated(self) -> "SignedMeasure":
        return SignedMeasure(self.minus, self.plus)


# ---------------------------------------------------------------------------
# file formats

_PLUS = {"+"}
_MINUS = {"-", "−"}


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _load_atoms(text: str, dimension: int | None = None) -> SignedMeasure:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        return SignedMeasure.zero(dimension or 1)
    header = [c.strip() for c in rows[0]]
    if _is_number(header[0]):
        # header-less file: infer N from the field count
        n = len(header) - 3
        if n < 1:
            raise MeasureFormatError("line 1: need at least x1,t,weight,sign")
        body = list(enumerate(rows, start=1))
    else:
        if len(header) < 4 or header[-3:] != ["t", "weight", "sign"]:
            raise MeasureFormatError("atoms header must read x1,...,xN,t,weight,sign")
        n = len(header) - 3
        if header[:n] != [f"x{k + 1}" for k in range(n)]:
            raise MeasureFormatError("atoms header must read x1,...,xN,t,weight,sign")
        body = list(enumerate(rows[1:], start=2))
    if dimension is not None and dimension != n:
        raise MeasureFormatError(f"file has N = {n}, expected {dimension}")
    parts = {"+": ([], [], []), "-": ([], [], [])}
    for lineno, row in body:
        if len(row) != n + 3:
            raise MeasureFormatError(f"line {lineno}: expected {n + 3} fields, got {len(row)}")
        try:
            coords = [float(c) for c in row[: n + 2]]
        except ValueError as exc:
            raise MeasureFormatError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(c) for c in coords):
            raise MeasureFormatError(f"line {lineno}: non-finite value")
        sign = row[-1].strip()
        if sign in _PLUS:
            key = "+"
        elif sign in _MINUS:
            key = "-"
        else:
            raise MeasureFormatError(f"line {lineno}: sign must be + or -, got {sign!r}")
        w = coords[n + 1]
        if w <= 0:
            raise MeasureFormatError(f"line {lineno}: weight must be positive in the {key} part, got {w}")
        parts[key][0].append(coords[:n])
        parts[key][1].append(coords[n])
        parts[key][2].append(w)

    def build(key):
        pos, t, w = parts[key]
        if not w:
            return zero_measure(n)
        return AtomList(np.array(pos), np.array(t), np.array(w), dimension=n)

    return SignedMeasure(build("+"), build("-"))


def _load_grid(text: str) -> SignedMeasure:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    header = {}
    body_at = None
    for k, ln in enumerate(lines):
        if ln == "values":
            body_at = k + 1
            break
        key, _, rest = ln.partition(" ")
        header[key] = rest.split()
    if body_at is None:
        raise MeasureFormatError("grid file has no 'values' line")
    try:
        n = int(header["N"][0])
        origin = [float(v) for v in header["origin"]]
        spacing = [float(v) for v in header["spacing"]]
        shape = [int(v) for v in header["shape"]]
        values = np.array([float(v) for ln in lines[body_at:] for v in ln.split()])
    except KeyError as exc:
        raise MeasureFormatError(f"grid header is missing {exc.args[0]!r}") from None
    except (ValueError, IndexError) as exc:
        raise MeasureFormatError(f"malformed grid file: {exc}") from None
    sign = header.get("sign", ["+"])[0]
    if not (len(origin) == len(spacing) == len(shape) == n + 1):
        raise MeasureFormatError("origin, spacing and shape need N + 1 entries (space then time)")
    if values.size != int(np.prod(shape)):
        raise MeasureFormatError(f"expected {int(np.prod(shape))} values, found {values.size}")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise MeasureFormatError("grid density values must be finite and nonnegative")
    try:
        g = GridDensity(origin, spacing, values.reshape(shape))
    except ValueError as exc:
        raise MeasureFormatError(str(exc)) from None
    if sign in _PLUS:
        return SignedMeasure(g, zero_measure(n))
    if sign in _MINUS:
        return SignedMeasure(zero_measure(n), g)
    raise MeasureFormatError(f"sign must be + or -, got {sign!r}")


def load_measure(path, format: str | None = None, dimension: int | None = None) -> SignedMeasure:
    """Read a signed measure from an atoms CSV or a gridded-density file.

    ``format`` is ``"atoms"`` or ``"grid"``; when omitted it is inferred
    from the suffix (``.csv`` means atoms). An empty atoms file is the zero
    measure of the given ``dimension`` (1 if not given).
    """
    path = Path(path)
    if format is None:
        format = "atoms" if path.suffix.lower() == ".csv" else "grid"
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise MeasureFormatError(f"{path}: not UTF-8 ({exc})") from None
    if format == "atoms":
        return _load_atoms(text, dimension)
    if format == "grid":
        return _load_grid(text)
    raise ValueError(f"unknown measure format {format!r}")


def write_atoms(path, mu: SignedMeasure) -> None:
    n = mu.dimension
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k + 1}" for k in range(n)] + ["t", "weight", "sign"])
    for part, sign in ((mu.plus, "+"), (mu.minus, "-")):
        if not isinstance(part, AtomList):
            raise TypeError("write_atoms needs atom-list parts")
        for x, t, wt in zip(part.positions, part.times, part.weights):
            w.writerow([repr(float(c)) for c in x] + [repr(float(t)), repr(float(wt)), sign])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_grid(path, g: GridDensity, sign: str = "+") -> None:
    lines = [
        "# gridded-density v1",
        f"N {g.dimension}",
        "origin " + " ".join(repr(float(v)) for v in g.grid.origin),
        "spacing " + " ".join(repr(float(v)) for v in g.grid.spacing),
        "shape " + " ".join(str(v) for v in g.values.shape),
        f"sign {sign}",
        "values",
    ]
    flat = g.values.reshape(-1, g.values.shape[-1])
    lines += [" ".join(repr(float(v)) for v in row) for row in flat]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
