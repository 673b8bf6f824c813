"""Exact volumes of ball/box intersections in dimensions 1, 2 and 3."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gamma as _gamma

# Gauss-Legendre nodes on [0, 1]; used between kinks where the integrand is analytic.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def unit_ball_volume(n: int) -> float:
    """omega_n, the Lebesgue measure of the unit ball in R^n."""
    return math.pi ** (n / 2.0) / float(_gamma(n / 2.0 + 1.0))


def _half_chord_integral(x, r):
    # antiderivative of sqrt(r^2 - x^2), valid for |x| <= r; r may be an array
    x = np.clip(x, -r, r)
    ratio = np.divide(x, r, out=np.zeros(np.broadcast(x, r).shape), where=r > 0)
    return 0.5 * (x * np.sqrt(np.maximum(r * r - x * x, 0.0)) + r * r * np.arcsin(ratio))


def _disk_corner(x, y, r):
    """Area of {|z| <= r} intersected with {z1 <= x, z2 <= y} (disk centred at 0)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.asarray(r, dtype=float)
    xc = np.clip(x, -r, r)
    yc = np.clip(y, -r, r)
    w = np.sqrt(np.maximum(r * r - yc * yc, 0.0))
    hi_in = np.clip(xc, -w, w)
    F = lambda z: _half_chord_integral(z, r)
    inner = yc * (hi_in + w) + F(hi_in) - F(-w)
    outer = 2.0 * (F(np.minimum(xc, -w)) - F(-r)) + 2.0 * (F(np.maximum(xc, w)) - F(w))
    outer = np.where(yc >= 0.0, outer, 0.0)
    return inner + outer


def disk_rect_area(r, a1, b1, a2, b2):
    """Area of the disk of radius r at the origin intersected with [a1,b1]x[a2,b2].

    Vectorised over the radius and the rectangle bounds. Exact up to rounding.
    """
    r = np.maximum(np.asarray(r, dtype=float), 0.0)
    area = (_disk_corner(b1, b2, r) - _disk_corner(a1, b2, r)
            - _disk_corner(b1, a2, r) + _disk_corner(a1, a2, r))
    return np.maximum(area, 0.0)


def _ball_box_volume_3d(r, lo, hi):
    # integrate the exact 2-D cross-section over x1 = r sin(phi); the integrand
    # is analytic in phi between the radii at which the cross-section disk
    # meets an edge line or corner of the rectangle
    phi_a = math.asin(max(-1.0, min(1.0, lo[0] / r)))
    phi_b = math.asin(max(-1.0, min(1.0, hi[0] / r)))
    if phi_b <= phi_a:
        return 0.0
    d = [abs(lo[1]), abs(hi[1]), abs(lo[2]), abs(hi[2])]
    d += [math.hypot(u, v) for u in (lo[1], hi[1]) for v in (lo[2], hi[2])]
    knots = {phi_a, phi_b, 0.0}
    for dk in d:
        if dk < r:
            c = math.acos(dk / r)
            knots.update((c, -c))
    knots = np.array(sorted(k for k in knots if phi_a <= k <= phi_b))
    width = np.diff(knots)
    phi = knots[:-1, None] + width[:, None] * _GL_X[None, :]
    rad = r * np.cos(phi)
    area = disk_rect_area(rad, lo[1], hi[1], lo[2], hi[2])
    return float(np.sum(width[:, None] * _GL_W[None, :] * area * rad))


def ball_box_volumes(center, r, lo, hi):
    """Volumes of B_r(center) intersected with each box [lo_k, hi_k].

    Parameters
    ----------
    center : (N,) array
    r : float
    lo, hi : (M, N) arrays of box corners

    Boxes fully inside the ball get their full volume, boxes that miss the
    ball get zero, and the remaining cut boxes are handled exactly (N <= 2)
    or by kink-split Gauss-Legendre quadrature of the exact 2-D slice (N = 3).
    """
    center = np.asarray(center, dtype=float)
    lo = np.atleast_2d(np.asarray(lo, dtype=float)) - center
    hi = np.atleast_2d(np.asarray(hi, dtype=float)) - center
    n = center.shape[0]
    if lo.shape[1] != n:
        raise ValueError("box dimension does not match ball dimension")
    full = np.prod(hi - lo, axis=1)
    near = np.sqrt(np.sum(np.clip(0.0, lo, hi) ** 2, axis=1))
    far = np.sqrt(np.sum(np.maximum(np.abs(lo), np.abs(hi)) ** 2, axis=1))
    out = np.zeros(lo.shape[0])
    inside = far <= r
    out[inside] = full[inside]
    cut = (~inside) & (near < r)
    if not np.any(cut):
        return out
    if n == 1:
        out[cut] = np.clip(np.minimum(hi[cut, 0], r) - np.maximum(lo[cut, 0], -r), 0.0, None)
    elif n == 2:
        out[cut] = disk_rect_area(r, lo[cut, 0], hi[cut, 0], lo[cut, 1], hi[cut, 1])
    elif n == 3:
        out[cut] = [_ball_box_volume_3d(r, lo[k], hi[k]) for k in np.flatnonzero(cut)]
    else:
        raise NotImplementedError("ball/box intersection is implemented for N <= 3")
    return out
