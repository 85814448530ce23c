"""Convex bodies in R^2 and R^3: supports, polars, volumes, shadows, Blaschke body.

Two representations are carried side by side. Support samples over a
DirectionGrid (plus an optional exact evaluator for analytic families) feed
the quadrature paths; a vertex polytope feeds the exact paths. Conversions:
samples -> polytope intersects the sampled supporting halfspaces, polytope ->
samples evaluates the vertex maximum. Volume and brightness are exact on
polytopes, which keeps the Brunn-Minkowski and translation identities exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection

from .numerics import DirectionGrid, build_sphere_grid

_COPLANAR_DECIMALS = 7


class BodyError(ValueError):
    pass


class OriginNotInterior(BodyError):
    pass


class DegenerateBody(BodyError):
    pass


class MinkowskiSolveError(RuntimeError):
    """Raised when the discrete Minkowski solver fails to converge."""

    def __init__(self, message: str, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


@dataclass(eq=False)
class ConvexBody:
    """A convex body; at least one of (grid, support_samples) / vertices is set."""

    dim: int
    grid: DirectionGrid | None = None
    support_samples: np.ndarray | None = None
    support_fn: Callable[[np.ndarray], float] | None = None
    vertices: np.ndarray | None = None
    tag: str = "sampled"

    def __post_init__(self):
        if self.vertices is not None:
            self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
            if self.vertices.shape[1] != self.dim:
                raise BodyError("vertex dimension mismatch")
        if self.support_samples is not None:
            self.support_samples = np.asarray(self.support_samples, dtype=float)
            if self.grid is None or self.support_samples.shape != (self.grid.size,):
                raise BodyError("support samples do not match the grid")
        if self.vertices is None and self.support_samples is None:
            raise BodyError("empty body: no representation given")

    @property
    def has_polytope(self) -> bool:
        return self.vertices is not None

    @cached_property
    def facets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(unit outward normals, facet areas, plane offsets) of the polytope rep."""
        if not self.has_polytope:
            raise BodyError("facets require a polytope representation")
        return _polytope_facets(self.vertices, self.dim)


# ---------------------------------------------------------------------------
# constructors

def from_vertices(vertices, tag: str = "polytope") -> ConvexBody:
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    hull = _hull(vertices)
    return ConvexBody(dim=vertices.shape[1], vertices=vertices[hull.vertices],
                      tag=tag)


def from_support_samples(grid: DirectionGrid, samples, support_fn=None,
                         tag: str = "sampled") -> ConvexBody:
    return ConvexBody(dim=grid.n, grid=grid,
                      support_samples=np.asarray(samples, dtype=float),
                      support_fn=support_fn, tag=tag)


def from_support_fn(grid: DirectionGrid, fn, tag: str = "sampled") -> ConvexBody:
    samples = np.array([float(fn(u)) for u in grid.nodes])
    return from_support_samples(grid, samples, support_fn=fn, tag=tag)


def ball_body(dim: int, radius: float = 1.0, level: int = 3) -> ConvexBody:
    grid = build_sphere_grid(dim, level)
    return from_support_fn(grid, lambda u: radius * np.linalg.norm(u), tag="ball")


def cube_body(dim: int, half: float = 1.0) -> ConvexBody:
    corners = np.array(np.meshgrid(*([[-half, half]] * dim))).reshape(dim, -1).T
    return from_vertices(corners, tag="cube")


# ---------------------------------------------------------------------------
# internal geometry helpers

def _hull(points: np.ndarray) -> ConvexHull:
    try:
        return ConvexHull(points)
    except Exception as exc:  # qhull raises QhullError on flat input
        raise DegenerateBody(f"convex hull failed: {exc}") from exc


def _polytope_facets(vertices: np.ndarray, dim: int):
    hull = _hull(vertices)
    groups: dict[tuple, list[int]] = {}
    for i, eq in enumerate(hull.equations):
        groups.setdefault(tuple(np.round(eq, _COPLANAR_DECIMALS)), []).append(i)
    normals, areas, offsets = [], [], []
    pts = hull.points
    for rows in groups.values():
        eq = hull.equations[rows[0]]
        n = eq[:dim] / np.linalg.norm(eq[:dim])
        area = 0.0
        for r in rows:
            simplex = pts[hull.simplices[r]]
            if dim == 2:
                area += float(np.linalg.norm(simplex[1] - simplex[0]))
            else:
                a, b, c = simplex
                area += 0.5 * float(np.linalg.norm(np.cross(b - a, c - a)))
        normals.append(n)
        areas.append(area)
        offsets.append(float(np.max(pts[hull.vertices] @ n)))
    return np.array(normals), np.array(areas), np.array(offsets)


def _sorted_circle(grid: DirectionGrid):
    angles = np.arctan2(grid.nodes[:, 1], grid.nodes[:, 0])
    order = np.argsort(angles)
    return order, angles[order]


def polygon_from_support(nodes: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Vertices of the circumscribed polygon cap{x . u_i <= h_i} (2-D).

    Directions must be given in counterclockwise angular order; consecutive
    tangent lines are intersected, which is exact for convex support data.
    """
    c, s = nodes[:, 0], nodes[:, 1]
    c2, s2 = np.roll(c, -1), np.roll(s, -1)
    h2 = np.roll(h, -1)
    det = c * s2 - s * c2
    vx = (h * s2 - h2 * s) / det
    vy = (h2 * c - h * c2) / det
    return np.column_stack([vx, vy])


def _polygon_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def to_polytope(body: ConvexBody) -> ConvexBody:
    """Polytope representation; samples give the circumscribed polytope."""
    if body.has_polytope:
        return body
    h = body.support_samples
    if np.min(h) <= 0.0:
        raise OriginNotInterior("sample-to-polytope conversion needs 0 interior")
    if body.dim == 2:
        order, _ = _sorted_circle(body.grid)
        verts = polygon_from_support(body.grid.nodes[order], h[order])
    else:
        halfspaces = np.column_stack([body.grid.nodes, -h])
        hs = HalfspaceIntersection(halfspaces, np.zeros(3))
        verts = hs.intersections[_hull(hs.intersections).vertices]
    return ConvexBody(dim=body.dim, grid=body.grid, support_samples=h,
                      support_fn=body.support_fn, vertices=verts, tag=body.tag)


def _interp_support(body: ConvexBody, u: np.ndarray) -> float:
    """First-order (piecewise-linear) 1-homogeneous interpolation of samples."""
    grid, h = body.grid, body.support_samples
    if body.dim == 2:
        order, angles = _sorted_circle(grid)
        phi = math.atan2(u[1], u[0])
        j = int(np.searchsorted(angles, phi))
        i0, i1 = order[(j - 1) % grid.size], order[j % grid.size]
        a, b = grid.nodes[i0], grid.nodes[i1]
        coeff = np.linalg.solve(np.column_stack([a, b]), u)
        return float(coeff[0] * h[i0] + coeff[1] * h[i1])
    verts = to_polytope(body).vertices
    return float(np.max(verts @ u))


# ---------------------------------------------------------------------------
# operations

def support(body: ConvexBody, u) -> float:
    """Support function h(u) = max_{x in K} <u, x>; positively 1-homogeneous."""
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise BodyError("support direction must be nonzero")
    if body.support_fn is not None:
        return float(body.support_fn(u))
    if body.has_polytope:
        return float(np.max(body.vertices @ u))
    return _interp_support(body, u)


def support_on_grid(body: ConvexBody, grid: DirectionGrid) -> np.ndarray:
    if body.grid is grid and body.support_samples is not None:
        return body.support_samples.copy()
    if body.support_fn is not None:
        return np.array([float(body.support_fn(u)) for u in grid.nodes])
    if body.has_polytope:
        return np.max(grid.nodes @ body.vertices.T, axis=1)
    raise BodyError("cannot evaluate support on a foreign grid")


def polar(body: ConvexBody) -> ConvexBody:
    """Polar body {u : <u, x> <= 1 for all x in K}; needs 0 strictly interior."""
    if body.has_polytope:
        _, _, offsets = body.facets
        if np.min(offsets) <= 1e-12:
            raise OriginNotInterior("polar requires the origin strictly inside")
        halfspaces = np.column_stack([body.vertices, -np.ones(len(body.vertices))])
        hs = HalfspaceIntersection(halfspaces, np.zeros(body.dim))
        return from_vertices(hs.intersections, tag="polar")
    h = body.support_samples
    if np.min(h) <= 0.0:
        raise OriginNotInterior("polar requires the origin strictly inside")
    return from_vertices(body.grid.nodes / h[:, None], tag="polar")


def minkowski_sum(a: ConvexBody, b: ConvexBody) -> ConvexBody:
    """Minkowski sum; the support function of the result is h_a + h_b."""
    if a.dim != b.dim:
        raise BodyError("dimension mismatch in Minkowski sum")
    if a.has_polytope and b.has_polytope:
        sums = (a.vertices[:, None, :] + b.vertices[None, :, :]).reshape(-1, a.dim)
        return from_vertices(sums, tag="sum")
    grid = a.grid if a.grid is not None else b.grid
    ha, hb = support_on_grid(a, grid), support_on_grid(b, grid)
    fn = None
    if a.support_fn is not None and b.support_fn is not None:
        fa, fb = a.support_fn, b.support_fn
        fn = lambda u: fa(u) + fb(u)
    return from_support_samples(grid, ha + hb, support_fn=fn, tag="sum")


def central_symmetral(body: ConvexBody) -> ConvexBody:
    """The symmetral (K - K)/2, supported by (h(u) + h(-u))/2."""
    if body.has_polytope:
        v = body.vertices
        diffs = 0.5 * (v[:, None, :] - v[None, :, :]).reshape(-1, body.dim)
        return from_vertices(diffs, tag="symmetral")
    h = body.support_samples
    sym = 0.5 * (h + h[body.grid.antipode])
    fn = None
    if body.support_fn is not None:
        f = body.support_fn
        fn = lambda u: 0.5 * (f(u) + f(-u))
    return from_support_samples(body.grid, sym, support_fn=fn, tag="symmetral")


def volume(body: ConvexBody) -> float:
    """Exact facet-decomposition volume on polytopes, radial quadrature on samples."""
    if body.has_polytope:
        normals, areas, offsets = body.facets
        return math.fsum(areas * offsets) / body.dim
    h = body.support_samples
    if np.min(h) <= 0.0:
        raise OriginNotInterior("radial volume formula needs 0 interior")
    rho = radial_on_grid(body)
    return math.fsum(body.grid.weights * rho ** body.dim) / body.dim


def radial_on_grid(body: ConvexBody) -> np.ndarray:
    """Radial function at the grid nodes of the sampled representation."""
    nodes, h = body.grid.nodes, body.support_samples
    gram = nodes @ nodes.T
    with np.errstate(divide="ignore"):
        ratios = np.where(gram > 1e-12, h[None, :] / gram, np.inf)
    return np.min(ratios, axis=1)


def brightness(body: ConvexBody, u) -> float:
    """Shadow measure of the projection onto the hyperplane orthogonal to u.

    Computed by the Cauchy projection formula (1/2) sum_i |u . n_i| A_i on the
    polytope representation. In the plane this is the width of the projection
    segment, i.e. the width of K in the direction orthogonal to u.
    """
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise BodyError("brightness direction must be a unit vector")
    normals, areas, _ = to_polytope(body).facets
    return 0.5 * math.fsum(np.abs(normals @ u) * areas)


def projection_area_k(body: ConvexBody, frame) -> float:
    """Euclidean volume of the orthogonal projection onto span(frame rows)."""
    frame = np.atleast_2d(np.asarray(frame, dtype=float))
    k = frame.shape[0]
    if not (1 <= k <= body.dim) or frame.shape[1] != body.dim:
        raise BodyError("projection frame has wrong shape")
    if np.max(np.abs(frame @ frame.T - np.eye(k))) > 1e-10:
        raise BodyError("projection frame is not orthonormal")
    verts = to_polytope(body).vertices @ frame.T
    if k == 1:
        return float(np.max(verts) - np.min(verts))
    return float(_hull(verts).volume)


def surface_area_measure(body: ConvexBody) -> list[tuple[np.ndarray, float]]:
    """Facet data (unit normal, area); checks the Minkowski closedness relation."""
    normals, areas, _ = to_polytope(body).facets
    total = math.fsum(areas)
    resultant = np.linalg.norm(areas @ normals)
    if resultant > 1e-8 * total:
        raise DegenerateBody("facet measure violates Minkowski closedness")
    return [(normals[i], float(areas[i])) for i in range(len(areas))]


# ---------------------------------------------------------------------------
# discrete Minkowski problem and the Blaschke body

def _facet_areas_for(U: np.ndarray, h: np.ndarray):
    """Areas of the facets of P(h) = cap{x . u_j <= h_j}, aligned with U rows."""
    dim = U.shape[1]
    if np.min(h) <= 0.0:
        raise OriginNotInterior("support vector left the feasible cone")
    hs = HalfspaceIntersection(np.column_stack([U, -h]), np.zeros(dim))
    X = hs.intersections
    vol = float(_hull(X).volume)
    scale = 1.0 + float(np.max(np.abs(h)))
    areas = np.zeros(len(U))
    D = U @ X.T - h[:, None]
    for j in range(len(U)):
        pts = X[np.abs(D[j]) < 1e-9 * scale]
        if len(pts) < dim:
            continue
        if dim == 2:
            t = pts @ np.array([-U[j, 1], U[j, 0]])
            areas[j] = float(np.max(t) - np.min(t))
        else:
            e1, e2 = _plane_basis(U[j])
            xy = np.column_stack([pts @ e1, pts @ e2])
            order = np.argsort(np.arctan2(xy[:, 1] - xy[:, 1].mean(),
                                          xy[:, 0] - xy[:, 0].mean()))
            areas[j] = abs(_polygon_area(xy[order]))
    return areas, vol


def _plane_basis(n: np.ndarray):
    k = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[k] = 1.0
    e1 = e - np.dot(e, n) * n
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def solve_minkowski(normals: np.ndarray, target_areas: np.ndarray,
                    symmetric: bool = False, tol: float = 1e-4,
                    max_iter: int = 5000):
    """Support numbers h with facet areas of P(h) matching the target measure.

    Minimizes the scale-invariant functional sum_j a_j h_j / vol(P(h))^(1/n)
    by gradient descent with backtracking (the gradient of the volume with
    respect to h_j is the facet area A_j), then rescales so the total facet
    area matches the target. Uniqueness up to translation; the symmetric flag
    pins the solution by keeping h even under the antipodal pairing.
    """
    U = np.asarray(normals, dtype=float)
    a = np.asarray(target_areas, dtype=float)
    dim = U.shape[1]
    if np.any(a < 0) or math.fsum(a) <= 0:
        raise BodyError("target areas must be nonnegative with positive total")
    rank = np.linalg.matrix_rank(U[a > 0], tol=1e-9)
    if rank < dim:
        raise DegenerateBody("target normals are contained in a hyperplane")
    pairing = _antipodal_pairing(U) if symmetric else None

    def symmetrize(h):
        return 0.5 * (h + h[pairing]) if pairing is not None else h

    a_hat = a / math.fsum(a)
    h = symmetrize(np.ones(len(U)))
    history = []
    nudged = False
    for _ in range(max_iter):
        A, vol = _facet_areas_for(U, h)
        total = math.fsum(A)
        err = float(np.max(np.abs(A / total - a_hat) / a_hat))
        history.append(err)
        if err < tol:
            lam = (math.fsum(a) / total) ** (1.0 / (dim - 1))
            h = symmetrize(h * lam)
            return h, history
        empty = A == 0.0
        if np.any(empty):
            if nudged and history[-1] >= 0.999:
                break
            h = symmetrize(h - 1e-9 * empty)
            nudged = True
        grad = symmetrize(a - (np.dot(a, h) / (dim * vol)) * A)
        obj = np.dot(a, h) / vol ** (1.0 / dim)
        step = 0.5 * float(np.min(h) / (np.max(np.abs(grad)) + 1e-300))
        for _ in range(60):
            h_new = symmetrize(h - step * grad)
            if np.min(h_new) > 0:
                _, vol_new = _facet_areas_for(U, h_new)
                if np.dot(a, h_new) / vol_new ** (1.0 / dim) < obj:
                    break
            step *= 0.5
        else:
            break
        h = h_new / vol_new ** (1.0 / dim)
    raise MinkowskiSolveError(
        f"Minkowski solver stalled at residual {history[-1]:.3e}", history)


def _antipodal_pairing(U: np.ndarray) -> np.ndarray:
    lookup = {tuple(np.round(u, 6)): i for i, u in enumerate(U)}
    pairing = np.empty(len(U), dtype=int)
    for i, u in enumerate(U):
        j = lookup.get(tuple(np.round(-u, 6)))
        if j is None:
            raise BodyError("normal set is not antipodally closed")
        pairing[i] = j
    return pairing


def symmetrized_measure(body: ConvexBody):
    """Antipodally binned facet measure {(+-u_j, (A+ + A-)/2)} of the body."""
    normals, areas, _ = to_polytope(body).facets
    buckets: dict[tuple, list] = {}
    for n, area in zip(normals, areas):
        key_dir = n if tuple(n) >= tuple(-n) else -n
        key = tuple(np.round(key_dir, 6))
        if key not in buckets:
            buckets[key] = [key_dir, 0.0, 0.0]
        if np.dot(n, buckets[key][0]) > 0:
            buckets[key][1] += area
        else:
            buckets[key][2] += area
    out_n, out_a = [], []
    for rep, plus, minus in buckets.values():
        half = 0.5 * (plus + minus)
        out_n += [rep, -rep]
        out_a += [half, half]
    return np.array(out_n), np.array(out_a)


def blaschke_body(body: ConvexBody, tol: float = 1e-4,
                  max_iter: int = 5000) -> ConvexBody:
    """The origin-symmetric body with the same brightness function.

    Solves the discrete even Minkowski problem for the antipodally symmetrized
    facet measure of the input. In the plane, edge measures add under
    Minkowski sums, so the construction coincides with the central symmetral.
    """
    if body.dim == 2:
        return central_symmetral(to_polytope(body))
    U, a = symmetrized_measure(body)
    h, _ = solve_minkowski(U, a, symmetric=True, tol=tol, max_iter=max_iter)
    hs = HalfspaceIntersection(np.column_stack([U, -h]), np.zeros(3))
    verts = hs.intersections[_hull(hs.intersections).vertices]
    verts = 0.5 * (verts[:, None, :] - verts[None, :, :]).reshape(-1, 3)
    return from_vertices(verts, tag="blaschke")


# ---------------------------------------------------------------------------
# JSON exchange

def body_to_json(body: ConvexBody) -> dict:
    if body.has_polytope:
        return {"dim": body.dim, "vertices": body.vertices.tolist()}
    return {"dim": body.dim, "grid_level": body.grid.level,
            "support": body.support_samples.tolist()}


def body_from_json(data: dict) -> ConvexBody:
    dim = int(data["dim"])
    if "vertices" in data:
        return from_vertices(np.array(data["vertices"], dtype=float))
    grid = build_sphere_grid(dim, int(data["grid_level"]))
    return from_support_samples(grid, np.array(data["support"], dtype=float))
