"""Minkowski norms on a single fiber: duality, Legendre transform, parity splits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import DirectionGrid, build_sphere_grid

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class NormError(ValueError):
    pass


@dataclass(eq=False)
class MinkowskiNorm:
    """A positively 1-homogeneous, positive evaluator v -> F(v) on R^dim."""

    dim: int
    evaluator: Callable[[np.ndarray], float]
    family: str = "custom"
    gradient: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, v) -> float:
        return float(self.evaluator(np.asarray(v, dtype=float)))


def euclidean_norm(dim: int) -> MinkowskiNorm:
    return MinkowskiNorm(dim, lambda v: float(np.linalg.norm(v)),
                         family="euclidean",
                         gradient=lambda v: v / np.linalg.norm(v))


def randers_norm(b) -> MinkowskiNorm:
    """F(v) = |v| + b.v; a Minkowski norm for |b| < 1."""
    b = np.asarray(b, dtype=float)
    if np.linalg.norm(b) >= 1.0:
        raise NormError("randers drift must satisfy |b| < 1")
    return MinkowskiNorm(
        len(b), lambda v: float(np.linalg.norm(v) + np.dot(b, v)),
        family="randers",
        gradient=lambda v: v / np.linalg.norm(v) + b)


def support_norm(body) -> MinkowskiNorm:
    """The support function of a convex body, as a norm (gauge of the polar)."""
    from .convexbody import support
    return MinkowskiNorm(body.dim, lambda v: support(body, v),
                         family="support-of-body")


def _golden_max(f: Callable[[float], float], lo: float, hi: float,
                tol: float = 1e-8) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    t = 0.5 * (a + b)
    return t, f(t)


def dual_norm(norm: MinkowskiNorm, xi, level: int = 3,
              angle_tol: float = 1e-8) -> float:
    """F*(xi) = max{xi.v : F(v) = 1} by grid scan plus golden-section refinement.

    F* is the support function of the F-unit ball; the unit co-disc is the
    unit ball of F*.
    """
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return 0.0
    grid = build_sphere_grid(norm.dim, level)

    def ratio_of(v: np.ndarray) -> float:
        return float(np.dot(xi, v)) / norm(v)

    ratios = np.array([ratio_of(u) for u in grid.nodes])
    best = int(np.argmax(ratios))
    u = grid.nodes[best]
    spacing = 2.0 * math.sqrt(math.pi / grid.size)
    if norm.dim == 2:
        phi = math.atan2(u[1], u[0])
        _, val = _golden_max(
            lambda t: ratio_of(np.array([math.cos(t), math.sin(t)])),
            phi - spacing, phi + spacing, tol=angle_tol)
        return val
    axis = np.zeros(3)
    axis[np.argmin(np.abs(u))] = 1.0
    e1 = axis - np.dot(axis, u) * u
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)

    def point(s: float, t: float) -> np.ndarray:
        w = u + s * e1 + t * e2
        return w / np.linalg.norm(w)

    s = t = 0.0
    span = spacing
    val = ratios[best]
    for _ in range(4):
        s, _ = _golden_max(lambda a: ratio_of(point(a, t)), s - span, s + span,
                           tol=angle_tol)
        t, val = _golden_max(lambda a: ratio_of(point(s, a)), t - span, t + span,
                             tol=angle_tol)
        span *= 0.2
    return val


def legendre(norm: MinkowskiNorm, v, h: float | None = None) -> np.ndarray:
    """Fiber derivative xi_j = dF/dv_j; satisfies xi.v = F(v) (Euler)."""
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise NormError("legendre transform undefined at the zero vector")
    if norm.gradient is not None:
        return np.asarray(norm.gradient(v), dtype=float)
    if h is None:
        h = 1e-6 * max(1.0, float(np.linalg.norm(v)))
    xi = np.empty(norm.dim)
    for j in range(norm.dim):
        e = np.zeros(norm.dim)
        e[j] = h
        xi[j] = (norm(v + e) - norm(v - e)) / (2.0 * h)
    return xi


def odd_even_split(norm: MinkowskiNorm):
    """F = F_odd + F_even with F_odd(v) = (F(v) - F(-v))/2; F_even is a norm."""
    f = norm.evaluator

    def odd(v):
        v = np.asarray(v, dtype=float)
        return 0.5 * (float(f(v)) - float(f(-v)))

    even = MinkowskiNorm(norm.dim,
                         lambda v: 0.5 * (float(f(v)) + float(f(-v))),
                         family=norm.family + "+sym")
    return odd, even


def linear_fit_residual(f, grid: DirectionGrid):
    """Weighted least-squares linear form closest to f on the grid.

    Returns (beta, residual) where residual is the weighted RMS error of
    f(u) - beta.u over the nodes.
    """
    if callable(f):
        vals = np.array([float(f(u)) for u in grid.nodes])
    else:
        vals = np.asarray(f, dtype=float)
    if grid.size < grid.n:
        raise NormError("underdetermined linear fit")
    w = grid.weights
    mat = (grid.nodes * w[:, None]).T @ grid.nodes
    rhs = (grid.nodes * w[:, None]).T @ vals
    beta = np.linalg.solve(mat, rhs)
    err = vals - grid.nodes @ beta
    residual = math.sqrt(math.fsum(w * err * err) / math.fsum(w))
    return beta, residual


def strong_convexity_margin(norm: MinkowskiNorm, samples: int = 200,
                            h: float = 1e-4) -> float:
    """Smallest Hessian eigenvalue of F^2 over quasi-random unit vectors."""
    g = lambda v: norm(v) ** 2
    worst = math.inf
    for v in _quasi_uniform(norm.dim, samples):
        hess = np.empty((norm.dim, norm.dim))
        for i in range(norm.dim):
            for j in range(i, norm.dim):
                ei = np.zeros(norm.dim)
                ej = np.zeros(norm.dim)
                ei[i] = h
                ej[j] = h
                val = (g(v + ei + ej) - g(v + ei - ej)
                       - g(v - ei + ej) + g(v - ei - ej)) / (4.0 * h * h)
                hess[i, j] = hess[j, i] = val
        worst = min(worst, float(np.linalg.eigvalsh(hess)[0]))
    return worst


def _quasi_uniform(dim: int, count: int) -> np.ndarray:
    i = np.arange(count)
    if dim == 2:
        theta = 2.0 * math.pi * (i * _GOLDEN % 1.0)
        return np.column_stack([np.cos(theta), np.sin(theta)])
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(1.0 - z * z)
    theta = 2.0 * math.pi * (i * _GOLDEN % 1.0)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
