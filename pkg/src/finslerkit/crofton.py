"""Busemann's integral-geometric construction on S^2 and Crofton lengths.

Great circles are bookkept by oriented poles p on the full sphere, so each
unoriented circle appears twice; the calibration m = 1/4 reproduces the round
metric (the |cos| integral over a period is 4). Curve lengths are recovered by
counting intersections with the circles of a pole grid, which is the oracle
that pins down the normalization of the pointwise fiber formula.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .metricfield import BusemannSphereField, MetricField
from .numerics import DirectionGrid, build_sphere_grid, integrate_sphere

ROUND_DENSITY_VALUE = 0.25


class CroftonError(ValueError):
    pass


class TangencyWarning(UserWarning):
    """A curve-circle crossing looked tangential; its count may be off."""


@dataclass(eq=False)
class CroftonDensity:
    """Even positive density m(p) over oriented poles of great circles."""

    fn: Callable[[np.ndarray], float]
    label: str = "custom"

    def __call__(self, p) -> float:
        return float(self.fn(np.asarray(p, dtype=float)))

    def many(self, pts: np.ndarray) -> np.ndarray:
        return np.array([float(self.fn(p)) for p in pts])

    def validate(self, level: int = 2) -> None:
        grid = build_sphere_grid(3, level)
        vals = self.many(grid.nodes)
        if np.min(vals) <= 0.0:
            raise CroftonError("crofton density must be positive")
        if np.max(np.abs(vals - vals[grid.antipode])) > 1e-12:
            raise CroftonError("crofton density must be even")


class _VectorizedDensity(CroftonDensity):
    def __init__(self, fn_many, label):
        super().__init__(fn=lambda p: float(fn_many(p[None, :])[0]), label=label)
        self._fn_many = fn_many

    def many(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(self._fn_many(np.atleast_2d(pts)), dtype=float)


def round_density() -> CroftonDensity:
    return _VectorizedDensity(
        lambda P: np.full(len(P), ROUND_DENSITY_VALUE), "round")


def axis_poly_density(coeffs, axis=(0.0, 0.0, 1.0)) -> CroftonDensity:
    """m(p) = (1/4) sum_k coeffs[k] (p.axis)^(2k); even by construction."""
    coeffs = np.asarray(coeffs, dtype=float)
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)

    def many(P):
        t2 = (P @ axis) ** 2
        out = np.zeros(len(P))
        for c in coeffs[::-1]:
            out = out * t2 + c
        return ROUND_DENSITY_VALUE * out

    label = "poly[" + ",".join(f"{c:g}" for c in coeffs) + "]"
    return _VectorizedDensity(many, label)


def perturbed_round_density(center, amplitude: float,
                            width: float) -> CroftonDensity:
    """Round density with an even Gaussian bump around the poles +-center.

    m(p) = (1/4)(1 + a exp(-(1 - (p.q)^2)/s^2)); the metric it induces agrees
    with the round one wherever the circle of poles orthogonal to the base
    point misses the bump.
    """
    if amplitude <= -1.0:
        raise CroftonError("bump amplitude must keep the density positive")
    if width <= 0.0:
        raise CroftonError("bump width must be positive")
    q = np.asarray(center, dtype=float)
    q = q / np.linalg.norm(q)

    def many(P):
        t2 = (P @ q) ** 2
        return ROUND_DENSITY_VALUE * (
            1.0 + amplitude * np.exp(-(1.0 - t2) / width ** 2))

    label = f"bump[a={amplitude:g},s={width:g}]"
    return _VectorizedDensity(many, label)


def sum_density(m1: CroftonDensity, m2: CroftonDensity) -> CroftonDensity:
    return _VectorizedDensity(lambda P: m1.many(P) + m2.many(P),
                              f"{m1.label}+{m2.label}")


def density_from_json(cfg: dict) -> CroftonDensity:
    kind = cfg.get("type", "round")
    if kind == "round":
        return round_density()
    if kind == "poly":
        return axis_poly_density(cfg["coeffs"], cfg.get("axis", (0, 0, 1)))
    if kind == "bump":
        return perturbed_round_density(cfg.get("center", (0, 0, 1)),
                                       cfg["amplitude"], cfg["width"])
    raise CroftonError(f"unknown density type {kind!r}")


def busemann_metric(m: CroftonDensity, n_circle: int = 64) -> MetricField:
    """The sphere metric whose Crofton measure is m; reversible by evenness."""
    m.validate()
    return BusemannSphereField(m, n_circle=n_circle)


def total_measure(m: CroftonDensity, level: int = 3) -> float:
    grid = build_sphere_grid(3, level)
    return integrate_sphere(grid, m.many(grid.nodes))


def count_circle_intersections(curve, poles: np.ndarray,
                               samples: int = 4096,
                               tangency_tol: float = 1e-10):
    """Number of crossings of the curve with each pole's great circle.

    Sign changes of gamma(t).p over a dense closed sampling, polished by
    bisection; a crossing with |d/dt gamma.p| below tangency_tol raises a
    TangencyWarning since the multiplicity convention is undefined there.
    """
    ts = np.linspace(curve.t0, curve.t1, samples, endpoint=False)
    pts = np.array([curve.point(t) for t in ts])
    dots = pts @ poles.T
    rolled = np.roll(dots, -1, axis=0)
    flips = np.signbit(dots) != np.signbit(rolled)
    counts = flips.sum(axis=0)
    contained = np.max(np.abs(dots), axis=0) < 1e-9
    if np.any(contained):
        # the curve lies inside these circles; nearby circles cross it twice,
        # so assign the transversal limit rather than the unstable raw count
        counts[contained] = 2
        warnings.warn(f"curve contained in {int(contained.sum())} sample "
                      "circles; counted with the transversal limit 2",
                      TangencyWarning)
        flips[:, contained] = False
    # polish one representative crossing per pole to sniff tangencies
    dt = (curve.t1 - curve.t0) / samples
    suspicious = 0
    for j in np.nonzero(counts)[0]:
        i = int(np.argmax(flips[:, j]))
        a, b = ts[i], ts[i] + dt
        fa = float(np.dot(curve.point(a), poles[j]))
        for _ in range(40):
            mid = 0.5 * (a + b)
            fm = float(np.dot(curve.point(mid), poles[j]))
            if (fm < 0.0) == (fa < 0.0):
                a, fa = mid, fm
            else:
                b = mid
        root = 0.5 * (a + b)
        h = 1e-6 * (curve.t1 - curve.t0)
        slope = (np.dot(curve.point(root + h), poles[j])
                 - np.dot(curve.point(root - h), poles[j])) / (2.0 * h)
        if abs(slope) < tangency_tol:
            suspicious += 1
    if suspicious:
        warnings.warn(f"{suspicious} near-tangential crossings detected",
                      TangencyWarning)
    return counts


def crofton_length(m: CroftonDensity, curve, grid: DirectionGrid,
                   samples: int = 4096) -> float:
    """length(gamma) = sum_i w_i m(p_i) #(gamma meets circle of p_i)."""
    counts = count_circle_intersections(curve, grid.nodes, samples=samples)
    vals = m.many(grid.nodes)
    return math.fsum(grid.weights * vals * counts)
