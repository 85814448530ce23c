"""Quadrature grids on S^1 and S^2, circle rules, and finite differences.

All reductions run in a fixed node order with compensated summation, so
integrals are bit-reproducible for identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.spatial import SphericalVoronoi

SPHERE_AREA = {2: 2.0 * math.pi, 3: 4.0 * math.pi}

# Golden-ratio icosahedron, circumradius normalized later.
_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        [0, 1, _PHI], [0, 1, -_PHI], [0, -1, _PHI], [0, -1, -_PHI],
        [1, _PHI, 0], [1, -_PHI, 0], [-1, _PHI, 0], [-1, -_PHI, 0],
        [_PHI, 0, 1], [-_PHI, 0, 1], [_PHI, 0, -1], [-_PHI, 0, -1],
    ],
    dtype=float,
)
_ICO_FACES = [
    (0, 2, 8), (0, 8, 4), (0, 4, 6), (0, 6, 9), (0, 9, 2),
    (3, 1, 10), (3, 10, 5), (3, 5, 7), (3, 7, 11), (3, 11, 1),
    (2, 5, 8), (8, 5, 10), (8, 10, 4), (4, 10, 1), (4, 1, 6),
    (6, 1, 11), (6, 11, 9), (9, 11, 7), (9, 7, 2), (2, 7, 5),
]


class NumericsError(ValueError):
    """Raised on invalid quadrature inputs (dimension, node counts, NaNs)."""


@dataclass(frozen=True)
class DirectionGrid:
    """Quasi-uniform direction samples on S^(n-1) with quadrature weights.

    nodes come in exact antipodal pairs (nodes[antipode[i]] == -nodes[i]),
    weights are positive and sum to the total sphere measure.
    """

    n: int
    level: int
    nodes: np.ndarray
    weights: np.ndarray
    antipode: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def validate(self) -> None:
        norms = np.linalg.norm(self.nodes, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise NumericsError("grid nodes are not unit vectors")
        if np.any(self.weights <= 0.0):
            raise NumericsError("grid weights must be positive")
        area = SPHERE_AREA[self.n]
        if abs(math.fsum(self.weights) - area) > 1e-10 * area:
            raise NumericsError("grid weights do not sum to the sphere measure")
        if np.max(np.abs(self.nodes[self.antipode] + self.nodes)) != 0.0:
            raise NumericsError("grid is not exactly antipodally symmetric")


def _subdivide(verts: np.ndarray, faces: list[tuple[int, int, int]]):
    """One 4-to-1 triangle split with midpoints projected to the sphere."""
    verts = [v for v in verts]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        if key not in cache:
            m = verts[key[0]] + verts[key[1]]
            m = m / np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(m)
        return cache[key]

    new_faces = []
    for (a, b, c) in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.array(verts), new_faces


def _pair_antipodes(nodes: np.ndarray) -> np.ndarray:
    """Index map i -> j with nodes[j] == -nodes[i]; enforces exact pairing."""
    lookup = {tuple(np.round(u, 9)): i for i, u in enumerate(nodes)}
    antipode = np.full(nodes.shape[0], -1, dtype=int)
    for i, u in enumerate(nodes):
        j = lookup.get(tuple(np.round(-u, 9)))
        if j is None:
            raise NumericsError("node set is not antipodally symmetric")
        antipode[i] = j
    for i in range(nodes.shape[0]):
        if i < antipode[i]:
            nodes[antipode[i]] = -nodes[i]
    return antipode


@lru_cache(maxsize=None)
def build_sphere_grid(n: int, level: int) -> DirectionGrid:
    """Build the level-`level` direction grid on S^(n-1), n in {2, 3}.

    n = 2: 2**(level+6) equally spaced angles, uniform weights.
    n = 3: icosahedron subdivided `level` times and projected to the sphere;
    weights are spherical-Voronoi cell areas, antipodally symmetrized and
    rescaled so they sum to 4*pi exactly.
    """
    if n not in (2, 3) or level < 0:
        raise NumericsError(f"unsupported grid request n={n}, level={level}")
    if n == 2:
        m = 2 ** (level + 6)
        half = np.arange(m // 2)
        angles = 2.0 * math.pi * half / m
        top = np.column_stack([np.cos(angles), np.sin(angles)])
        nodes = np.vstack([top, -top])
        weights = np.full(m, 2.0 * math.pi / m)
        antipode = np.concatenate([half + m // 2, half])
    else:
        verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS[0])
        faces = list(_ICO_FACES)
        for _ in range(level):
            verts, faces = _subdivide(verts, faces)
        order = np.lexsort(np.round(verts, 9).T)
        nodes = np.ascontiguousarray(verts[order])
        antipode = _pair_antipodes(nodes)
        sv = SphericalVoronoi(nodes, radius=1.0)
        weights = sv.calculate_areas()
        weights = 0.5 * (weights + weights[antipode])
        weights *= 4.0 * math.pi / math.fsum(weights)
    grid = DirectionGrid(n=n, level=level, nodes=nodes, weights=weights,
                         antipode=antipode)
    grid.validate()
    return grid


def _samples(f, nodes: np.ndarray) -> np.ndarray:
    if callable(f):
        vals = np.array([float(f(u)) for u in nodes])
    else:
        vals = np.asarray(f, dtype=float)
        if vals.shape != (nodes.shape[0],):
            raise NumericsError("sample array does not match grid size")
    if not np.all(np.isfinite(vals)):
        raise NumericsError("non-finite sample in sphere integrand")
    return vals


def integrate_sphere(grid: DirectionGrid, f) -> float:
    """Weighted sum over grid nodes; `f` is a callable or a sample array."""
    vals = _samples(f, grid.nodes)
    return math.fsum(grid.weights * vals)


def tangent_frame(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal frame of the plane orthogonal to unit x.

    Seeds Gram-Schmidt with the smallest-index coordinate axis that is not
    parallel to x, so the frame is reproducible and piecewise smooth.
    """
    x = np.asarray(x, dtype=float)
    for k in range(3):
        axis = np.zeros(3)
        axis[k] = 1.0
        if abs(np.dot(axis, x)) < 1.0 - 1e-8:
            break
    e1 = axis - np.dot(axis, x) * x
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(x, e1)
    return e1, e2


def circle_nodes(x: np.ndarray, k: int) -> np.ndarray:
    """k equally spaced points on the great circle {p : p . x = 0}."""
    e1, e2 = tangent_frame(x)
    theta = 2.0 * math.pi * np.arange(k) / k
    return np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2)


def integrate_circle_on_sphere(x: np.ndarray, f, k: int) -> float:
    """Trapezoid rule for f over the great circle of poles orthogonal to x.

    Exact (to round-off) for trigonometric polynomials of degree < k/2.
    """
    if k < 8:
        raise NumericsError("circle rule needs at least 8 nodes")
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > 1e-10:
        raise NumericsError("circle integration requires a unit vector")
    pts = circle_nodes(x, k)
    vals = _samples(f, pts)
    return (2.0 * math.pi / k) * math.fsum(vals)


def directional_derivative(g: Callable[[np.ndarray], float], v, w,
                           h: float | None = None) -> float:
    """Central difference (g(v+hw) - g(v-hw)) / 2h, default h = 1e-5 max(1,|v|)."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if h is None:
        h = 1e-5 * max(1.0, float(np.linalg.norm(v)))
    hi, lo = float(g(v + h * w)), float(g(v - h * w))
    if not (math.isfinite(hi) and math.isfinite(lo)):
        raise NumericsError("non-finite evaluation in directional derivative")
    return (hi - lo) / (2.0 * h)
