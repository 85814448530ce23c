"""Finsler metric fields over charts of R^n or over S^2.

A field carries one fiber norm per base point. Sphere fields see only the
tangential part of input vectors and express their fibers in the deterministic
tangent frame from numerics.tangent_frame; all frame-dependent intermediates
are covariant and every reported quantity is frame-invariant.

Holmes-Thompson densities divide the co-disc volume by the Euclidean unit-ball
volume eps_n and are reported relative to the coordinate volume form on charts
and to the round area form on S^2. Co-disc volumes go through the exact
circumscribed-polytope path of convexbody, which makes the one-form translation
invariance and the Brunn-Minkowski comparisons exact rather than quadrature
limited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import convexbody as cb
from .convexbody import ConvexBody, from_support_samples
from .norms import MinkowskiNorm, dual_norm
from .numerics import DirectionGrid, build_sphere_grid, circle_nodes, tangent_frame

EPS_BALL = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}

_COS_PAIR_LIMIT = 512


class FieldError(ValueError):
    pass


class PositivityError(FieldError):
    """Adding a one-form destroyed positivity; carries the worst sample."""

    def __init__(self, message, x=None, v=None, value=None):
        super().__init__(message)
        self.x, self.v, self.value = x, v, value


# ---------------------------------------------------------------------------
# base descriptors

@dataclass(frozen=True)
class SphereBase:
    """The unit sphere S^2 in ambient R^3."""

    def contains(self, x) -> bool:
        return abs(np.linalg.norm(x) - 1.0) < 1e-8


@dataclass(frozen=True)
class ChartBase:
    """An open chart of R^dim with an inside test and a quadrature box."""

    dim: int
    lo: tuple
    hi: tuple
    inside: Callable[[np.ndarray], bool] | None = None

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if self.inside is not None:
            return bool(self.inside(x))
        return bool(np.all(x > self.lo) and np.all(x < self.hi))


def ball_chart(dim: int, radius: float = 1.0) -> ChartBase:
    return ChartBase(dim, (-radius,) * dim, (radius,) * dim,
                     inside=lambda x: np.linalg.norm(x) < radius)


def box_chart(dim: int, lo, hi) -> ChartBase:
    return ChartBase(dim, tuple(lo), tuple(hi))


# ---------------------------------------------------------------------------
# fiber norms (frame coordinates)

class QuadFormRandersFiber:
    """F(w) = sqrt(w^T M w) + b.w with analytic gradient and dual norm."""

    def __init__(self, M: np.ndarray, b: np.ndarray):
        self.M = np.asarray(M, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.dim = len(self.b)
        self.Minv = np.linalg.inv(self.M)
        if self.b @ self.Minv @ self.b >= 1.0:
            raise FieldError("randers drift too large for a positive norm")

    def value(self, w: np.ndarray) -> float:
        return float(math.sqrt(max(w @ self.M @ w, 0.0)) + self.b @ w)

    def grad(self, w: np.ndarray) -> np.ndarray:
        alpha = math.sqrt(max(w @ self.M @ w, 0.0))
        return self.M @ w / alpha + self.b

    def dual(self, xi: np.ndarray) -> float:
        # gauge of the translated ellipsoid b + {xi : xi^T M^-1 xi <= 1}
        qa = float(self.b @ self.Minv @ self.b) - 1.0
        qb = float(xi @ self.Minv @ self.b)
        qc = float(xi @ self.Minv @ xi)
        return (qb - math.sqrt(qb * qb - qa * qc)) / qa

    def dual_many(self, xis: np.ndarray) -> np.ndarray:
        xis = np.atleast_2d(xis)
        qa = float(self.b @ self.Minv @ self.b) - 1.0
        qb = xis @ (self.Minv @ self.b)
        qc = np.einsum("ij,jk,ik->i", xis, self.Minv, xis)
        return (qb - np.sqrt(qb * qb - qa * qc)) / qa

    def reversed_fiber(self):
        return QuadFormRandersFiber(self.M, -self.b)

    def symmetrized_fiber(self):
        return QuadFormRandersFiber(self.M, np.zeros(self.dim))

    def translated(self, bvec):
        return QuadFormRandersFiber(self.M, self.b + np.asarray(bvec))


_COS_PAIRING_CACHE: dict[int, np.ndarray] = {}
_PSI_GRID_CACHE: dict[int, tuple] = {}


def _psi_grid(n: int) -> tuple:
    if n not in _PSI_GRID_CACHE:
        psi = 2.0 * math.pi * np.arange(n) / n
        _PSI_GRID_CACHE[n] = (psi, np.cos(psi), np.sin(psi))
    return _PSI_GRID_CACHE[n]


def _cos_pairing(half: int) -> np.ndarray:
    """I_r = integral of cos(r u)|cos u| du over a period, r = 0..half."""
    if half not in _COS_PAIRING_CACHE:
        r = np.arange(half + 1)
        vals = np.zeros(half + 1)
        vals[0] = 4.0
        even = r[2::2]
        vals[2::2] = 4.0 * (-1.0) ** (even // 2 + 1) / (even * even - 1.0)
        _COS_PAIRING_CACHE[half] = vals
    return _COS_PAIRING_CACHE[half]


class FourierFiber:
    """A 2-D fiber norm F(w) = |w| G(angle w) with G a real Fourier series.

    This is the fiber of the Busemann construction: the pairing of the pole
    density against |cos| is applied analytically to the sampled density, so
    the cosine-transform integral is exact for trigonometric polynomials and
    spectrally accurate for smooth densities.
    """

    dim = 2

    def __init__(self, cos_coeffs: np.ndarray, sin_coeffs: np.ndarray,
                 truncate: bool = True):
        a = np.asarray(cos_coeffs, dtype=float)
        b = np.asarray(sin_coeffs, dtype=float)
        if truncate:
            # negligible high harmonics only slow every evaluation down
            mags = np.maximum(np.abs(a), np.abs(b))
            keep = np.nonzero(mags > 1e-15 * max(abs(a[0]), 1e-300))[0]
            last = max(2, int(keep[-1]) + 1) if len(keep) else 2
            if last <= len(a):
                a, b = a[:last].copy(), b[:last].copy()
            else:
                a = np.pad(a, (0, last - len(a)))
                b = np.pad(b, (0, last - len(b)))
        self.a, self.b = a, b
        self.r = np.arange(len(self.a))
        n_grid = 64
        while n_grid < 4 * len(self.a):
            n_grid *= 2
        self._psi, self._cos_psi, self._sin_psi = _psi_grid(n_grid)
        spec = 0.5 * n_grid * (self.a - 1j * self.b)
        spec[0] = n_grid * self.a[0]
        self._g_grid = np.fft.irfft(spec, n_grid)

    @classmethod
    def from_density_samples(cls, samples: np.ndarray) -> "FourierFiber":
        """Pair uniformly sampled pole-density values against |cos|."""
        k = len(samples)
        spec = np.fft.rfft(samples)
        a = 2.0 * spec.real / k
        a[0] *= 0.5
        b = -2.0 * spec.imag / k
        pair = _cos_pairing(len(a) - 1)
        return cls(pair * a, pair * b)

    def _series(self, psi, deriv: int = 0):
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        arg = np.outer(psi, self.r)
        c, s = np.cos(arg), np.sin(arg)
        if deriv == 0:
            out = c @ self.a + s @ self.b
        elif deriv == 1:
            out = -s @ (self.r * self.a) + c @ (self.r * self.b)
        else:
            out = -c @ (self.r ** 2 * self.a) - s @ (self.r ** 2 * self.b)
        return out if out.size > 1 else float(out[0])

    def g(self, psi, deriv: int = 0):
        return self._series(psi, deriv)

    def value(self, w: np.ndarray) -> float:
        rad = math.hypot(w[0], w[1])
        if rad == 0.0:
            return 0.0
        return rad * self._series(math.atan2(w[1], w[0]))

    def grad(self, w: np.ndarray) -> np.ndarray:
        phi = math.atan2(w[1], w[0])
        g, dg = self._series(phi), self._series(phi, 1)
        what = np.array([math.cos(phi), math.sin(phi)])
        perp = np.array([-what[1], what[0]])
        return g * what + dg * perp

    def support_samples(self, angles: np.ndarray) -> np.ndarray:
        return self._series(angles)

    def _g012(self, psi: float):
        arg = self.r * psi
        c, s = np.cos(arg), np.sin(arg)
        g = float(c @ self.a + s @ self.b)
        dg = float(-s @ (self.r * self.a) + c @ (self.r * self.b))
        ddg = float(-c @ (self.r ** 2 * self.a) - s @ (self.r ** 2 * self.b))
        return g, dg, ddg

    def dual(self, xi: np.ndarray) -> float:
        psi = self._dual_argangle(xi)
        s = math.hypot(xi[0], xi[1])
        phi = math.atan2(xi[1], xi[0])
        return s * math.cos(psi - phi) / self._series(psi)

    def dual_many(self, xis: np.ndarray) -> np.ndarray:
        """Dual norm of several covectors against one fiber, Newton-polished."""
        xis = np.atleast_2d(xis)
        phi = np.arctan2(xis[:, 1], xis[:, 0])
        s = np.hypot(xis[:, 0], xis[:, 1])
        ratios = (np.outer(np.cos(phi), self._cos_psi)
                  + np.outer(np.sin(phi), self._sin_psi)) / self._g_grid
        psi = self._psi[np.argmax(ratios, axis=1)]
        for _ in range(5):
            arg = np.outer(psi, self.r)
            c, sn = np.cos(arg), np.sin(arg)
            g = c @ self.a + sn @ self.b
            dg = -sn @ (self.r * self.a) + c @ (self.r * self.b)
            ddg = -c @ (self.r ** 2 * self.a) - sn @ (self.r ** 2 * self.b)
            delta = psi - phi
            den = np.cos(delta) * (g + ddg)
            step = np.where(den > 0.0,
                            (np.sin(delta) * g + np.cos(delta) * dg)
                            / np.where(den > 0.0, den, 1.0), 0.0)
            psi = psi - step
            if np.max(np.abs(step)) < 1e-13:
                break
        arg = np.outer(psi, self.r)
        g = np.cos(arg) @ self.a + np.sin(arg) @ self.b
        return s * np.cos(psi - phi) / g

    def dual_argmax(self, xi: np.ndarray) -> np.ndarray:
        psi = self._dual_argangle(xi)
        return np.array([math.cos(psi), math.sin(psi)])

    def _dual_argangle(self, xi: np.ndarray) -> float:
        phi = math.atan2(xi[1], xi[0])
        ratios = (math.cos(phi) * self._cos_psi
                  + math.sin(phi) * self._sin_psi) / self._g_grid
        psi = self._psi[int(np.argmax(ratios))]
        for _ in range(6):
            delta = psi - phi
            g, dg, ddg = self._g012(psi)
            num = math.sin(delta) * g + math.cos(delta) * dg
            den = math.cos(delta) * (g + ddg)
            if den <= 0.0:
                break
            step = num / den
            psi -= step
            if abs(step) < 1e-13:
                break
        return psi

    def reversed_fiber(self):
        sign = (-1.0) ** self.r
        return FourierFiber(sign * self.a, sign * self.b)

    def symmetrized_fiber(self):
        keep = self.r % 2 == 0
        return FourierFiber(np.where(keep, self.a, 0.0),
                            np.where(keep, self.b, 0.0))

    def translated(self, bvec):
        pad = max(0, 2 - len(self.a))
        a = np.concatenate([self.a, np.zeros(pad)])
        b = np.concatenate([self.b, np.zeros(pad)])
        a[1] += bvec[0]
        b[1] += bvec[1]
        return FourierFiber(a, b)


class CallableFiber:
    """Generic fiber around a plain evaluator; derivatives and dual are numeric."""

    def __init__(self, dim: int, fn: Callable[[np.ndarray], float],
                 grad_fn=None, dual_level: int = 3):
        self.dim = dim
        self.fn = fn
        self.grad_fn = grad_fn
        self.dual_level = dual_level

    def value(self, w: np.ndarray) -> float:
        return float(self.fn(w))

    def grad(self, w: np.ndarray) -> np.ndarray:
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(w), dtype=float)
        h = 1e-6 * max(1.0, float(np.linalg.norm(w)))
        out = np.empty(self.dim)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            out[j] = (self.fn(w + e) - self.fn(w - e)) / (2.0 * h)
        return out

    def dual(self, xi: np.ndarray) -> float:
        return dual_norm(MinkowskiNorm(self.dim, self.fn), xi,
                         level=self.dual_level)

    def reversed_fiber(self):
        f = self.fn
        return CallableFiber(self.dim, lambda w: f(-w),
                             None if self.grad_fn is None
                             else (lambda w, g=self.grad_fn: -np.asarray(g(-w))),
                             self.dual_level)

    def symmetrized_fiber(self):
        f = self.fn
        return CallableFiber(self.dim, lambda w: 0.5 * (f(w) + f(-w)),
                             dual_level=self.dual_level)

    def translated(self, bvec):
        f = self.fn
        bvec = np.asarray(bvec, dtype=float)
        return CallableFiber(self.dim, lambda w: f(w) + float(bvec @ w),
                             None if self.grad_fn is None
                             else (lambda w, g=self.grad_fn:
                                   np.asarray(g(w)) + bvec),
                             self.dual_level)


class ScaledFiber:
    def __init__(self, c: float, inner):
        self.c = float(c)
        self.inner = inner
        self.dim = inner.dim

    def value(self, w):
        return self.c * self.inner.value(w)

    def grad(self, w):
        return self.c * self.inner.grad(w)

    def dual(self, xi):
        return self.inner.dual(xi) / self.c

    def reversed_fiber(self):
        return ScaledFiber(self.c, self.inner.reversed_fiber())

    def symmetrized_fiber(self):
        return ScaledFiber(self.c, self.inner.symmetrized_fiber())

    def translated(self, bvec):
        return ScaledFiber(self.c,
                           self.inner.translated(np.asarray(bvec) / self.c))


# ---------------------------------------------------------------------------
# one-form fields

@dataclass(eq=False)
class OneFormField:
    """A 1-form beta(x, v), linear in v; covector(x) gives the ambient vector.

    For sphere bases the covector is tangential and only the tangential part
    of v is read. `potential` is set when the form is exactly df.
    """

    base: object
    covector: Callable[[np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], float] | None = None
    family: str = "custom"

    def value(self, x, v) -> float:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if isinstance(self.base, SphereBase):
            v = v - np.dot(v, x) * x
        return float(np.dot(self.covector(x), v))


def exact_one_form(base, f, grad_f=None, step: float = 1e-6) -> OneFormField:
    """df for a potential f given on ambient coordinates."""

    def covector(x):
        x = np.asarray(x, dtype=float)
        if grad_f is not None:
            g = np.asarray(grad_f(x), dtype=float)
        else:
            g = np.empty(len(x))
            for j in range(len(x)):
                e = np.zeros(len(x))
                e[j] = step
                g[j] = (f(x + e) - f(x - e)) / (2.0 * step)
        if isinstance(base, SphereBase):
            g = g - np.dot(g, x) * x
        return g

    return OneFormField(base, covector, potential=f, family="exact")


def rotation_one_form(scale: float, axis=(0.0, 0.0, 1.0)) -> OneFormField:
    """beta_x(v) = scale * (axis x x) . v on the sphere; not closed."""
    axis = np.asarray(axis, dtype=float)
    return OneFormField(SphereBase(),
                        lambda x: scale * np.cross(axis, x),
                        family="rotation")


# ---------------------------------------------------------------------------
# metric fields

class MetricField:
    """Base class; subclasses provide make_fiber(x) in frame coordinates."""

    family = "custom"
    smooth = True

    def __init__(self, base, fiber_dim: int):
        self.base = base
        self.fiber_dim = fiber_dim
        self._fiber_cache: dict[bytes, tuple] = {}

    # -- frames ---------------------------------------------------------
    def frame(self, x: np.ndarray) -> np.ndarray:
        """Rows are the frame vectors spanning the fiber at x."""
        if isinstance(self.base, SphereBase):
            e1, e2 = tangent_frame(x)
            return np.vstack([e1, e2])
        return np.eye(self.fiber_dim)

    def to_frame(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        if isinstance(self.base, SphereBase):
            return self.frame(x) @ v
        return np.asarray(v, dtype=float)

    def from_frame(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        if isinstance(self.base, SphereBase):
            return self.frame(x).T @ w
        return np.asarray(w, dtype=float)

    # -- fibers ----------------------------------------------------------
    def make_fiber(self, x: np.ndarray):
        raise NotImplementedError

    def make_fibers(self, xs: np.ndarray) -> list:
        """Fibers at several base points; subclasses may batch this."""
        return [self.make_fiber(np.asarray(x, dtype=float)) for x in xs]

    def fiber(self, x) -> object:
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        hit = self._fiber_cache.get(key)
        if hit is None:
            if len(self._fiber_cache) > 1024:
                self._fiber_cache.clear()
            hit = self.make_fiber(x)
            self._fiber_cache[key] = hit
        return hit

    # -- evaluation -------------------------------------------------------
    def value(self, x, v) -> float:
        x = np.asarray(x, dtype=float)
        return self.fiber(x).value(self.to_frame(x, np.asarray(v, dtype=float)))

    def dual_value(self, x, xi) -> float:
        x = np.asarray(x, dtype=float)
        return self.fiber(x).dual(self.to_frame(x, np.asarray(xi, dtype=float)))

    def fiber_gradient(self, x, v) -> np.ndarray:
        """dF/dv at (x, v), as an ambient covector."""
        x = np.asarray(x, dtype=float)
        w = self.to_frame(x, np.asarray(v, dtype=float))
        return self.from_frame(x, self.fiber(x).grad(w))

    def fiber_norm(self, x) -> MinkowskiNorm:
        fib = self.fiber(np.asarray(x, dtype=float))
        return MinkowskiNorm(self.fiber_dim, fib.value, family=self.family,
                             gradient=getattr(fib, "grad", None))

    def base_points(self, level: int = 2) -> np.ndarray:
        """Deterministic base samples used by invariant checks."""
        if isinstance(self.base, SphereBase):
            return build_sphere_grid(3, level).nodes
        lo = np.asarray(self.base.lo, dtype=float)
        hi = np.asarray(self.base.hi, dtype=float)
        ticks = [np.linspace(l + 0.2 * (h - l), h - 0.2 * (h - l), 3)
                 for l, h in zip(lo, hi)]
        mesh = np.meshgrid(*ticks, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        return np.array([p for p in pts if self.base.contains(p)])


class RoundSphereField(MetricField):
    """The round metric of radius r on the unit sphere: F = r |v_tan|."""

    family = "round"

    def __init__(self, radius: float = 1.0):
        super().__init__(SphereBase(), 2)
        self.radius = float(radius)

    def make_fiber(self, x):
        return QuadFormRandersFiber(self.radius ** 2 * np.eye(2), np.zeros(2))


class SphereRandersField(MetricField):
    """F = r |v_tan| + beta_x(v) on the sphere; analytic fibers and duals."""

    family = "randers"

    def __init__(self, beta: OneFormField, radius: float = 1.0):
        super().__init__(SphereBase(), 2)
        self.radius = float(radius)
        self.beta = beta

    def make_fiber(self, x):
        b = self.frame(x) @ self.beta.covector(x)
        return QuadFormRandersFiber(self.radius ** 2 * np.eye(2), b)


class BusemannSphereField(MetricField):
    """The Busemann metric of an even positive pole density m on S^2.

    F(x, v) integrates |p . v| m(p) over the great circle of poles orthogonal
    to x; with m = 1/4 this reproduces the round metric. The circle integral
    is carried out through the Fourier pairing in FourierFiber.
    """

    family = "busemann"

    def __init__(self, density, n_circle: int = 64):
        super().__init__(SphereBase(), 2)
        if n_circle < 8 or n_circle > _COS_PAIR_LIMIT:
            raise FieldError("pole circle sampling out of range")
        self.density = density
        self.n_circle = n_circle

    def make_fiber(self, x):
        pts = circle_nodes(x, self.n_circle)
        vals = _density_many(self.density, pts)
        return FourierFiber.from_density_samples(vals)

    def make_fibers(self, xs):
        """One stacked density evaluation and FFT for several base points.

        All returned fibers share a common harmonic count so callers can run
        vectorized duals across them (dual_across).
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        k = self.n_circle
        pts = np.concatenate([circle_nodes(x, k) for x in xs])
        vals = _density_many(self.density, pts).reshape(len(xs), k)
        spec = np.fft.rfft(vals, axis=1)
        a = 2.0 * spec.real / k
        a[:, 0] *= 0.5
        b = -2.0 * spec.imag / k
        pair = _cos_pairing(a.shape[1] - 1)
        a *= pair
        b *= pair
        mags = np.maximum(np.abs(a), np.abs(b)).max(axis=0)
        keep = np.nonzero(mags > 1e-15 * max(np.max(np.abs(a[:, 0])), 1e-300))[0]
        last = max(2, int(keep[-1]) + 1) if len(keep) else 2
        return [FourierFiber(a[i, :last], b[i, :last], truncate=False)
                for i in range(len(xs))]


def dual_across(fibers, xis: np.ndarray) -> np.ndarray:
    """Dual norm of xis[i] against fibers[i], vectorized for Fourier fibers
    of a common harmonic count (the make_fibers contract)."""
    if not all(isinstance(f, FourierFiber) and len(f.a) == len(fibers[0].a)
               for f in fibers):
        return np.array([f.dual(w) for f, w in zip(fibers, xis)])
    A = np.vstack([f.a for f in fibers])
    B = np.vstack([f.b for f in fibers])
    r = fibers[0].r
    grids = np.vstack([f._g_grid for f in fibers])
    psi_grid, cos_psi, sin_psi = fibers[0]._psi, fibers[0]._cos_psi, \
        fibers[0]._sin_psi
    xis = np.atleast_2d(xis)
    phi = np.arctan2(xis[:, 1], xis[:, 0])
    s = np.hypot(xis[:, 0], xis[:, 1])
    ratios = (np.outer(np.cos(phi), cos_psi)
              + np.outer(np.sin(phi), sin_psi)) / grids
    psi = psi_grid[np.argmax(ratios, axis=1)]
    for _ in range(5):
        arg = np.outer(psi, r)
        c, sn = np.cos(arg), np.sin(arg)
        g = (c * A).sum(axis=1) + (sn * B).sum(axis=1)
        dg = -(sn * (r * A)).sum(axis=1) + (c * (r * B)).sum(axis=1)
        ddg = -(c * (r ** 2 * A)).sum(axis=1) - (sn * (r ** 2 * B)).sum(axis=1)
        delta = psi - phi
        den = np.cos(delta) * (g + ddg)
        step = np.where(den > 0.0,
                        (np.sin(delta) * g + np.cos(delta) * dg)
                        / np.where(den > 0.0, den, 1.0), 0.0)
        psi = psi - step
        if np.max(np.abs(step)) < 1e-13:
            break
    arg = np.outer(psi, r)
    g = (np.cos(arg) * A).sum(axis=1) + (np.sin(arg) * B).sum(axis=1)
    return s * np.cos(psi - phi) / g


class ChartField(MetricField):
    """A chart field built from a fiber factory x -> fiber norm."""

    def __init__(self, base: ChartBase, fiber_factory, family: str = "chart"):
        super().__init__(base, base.dim)
        self._factory = fiber_factory
        self.family = family

    def make_fiber(self, x):
        return self._factory(np.asarray(x, dtype=float))


def euclidean_field(dim: int, lo=None, hi=None) -> ChartField:
    base = box_chart(dim, lo if lo is not None else (-1.0,) * dim,
                     hi if hi is not None else (1.0,) * dim)
    eye = np.eye(dim)
    zero = np.zeros(dim)
    return ChartField(base, lambda x: QuadFormRandersFiber(eye, zero),
                      family="euclidean")


def randers_chart_field(b, lo=None, hi=None) -> ChartField:
    b = np.asarray(b, dtype=float)
    dim = len(b)
    base = box_chart(dim, lo if lo is not None else (-1.0,) * dim,
                     hi if hi is not None else (1.0,) * dim)
    eye = np.eye(dim)
    return ChartField(base, lambda x: QuadFormRandersFiber(eye, b),
                      family="randers")


def funk_field(body=None, dim: int = 2) -> ChartField:
    """The Funk metric in the interior of a convex body (default: unit ball).

    For the unit ball the fiber is the closed form
    F(x, v) = (x.v + sqrt((x.v)^2 + (1 - |x|^2)|v|^2)) / (1 - |x|^2),
    obtained by solving |x + v/F| = 1; this is a Randers fiber with
    M = ((1-|x|^2) I + x x^T)/(1-|x|^2)^2 and drift x/(1-|x|^2).
    A general body uses a bisection ray cast to the boundary.
    """
    if body is None:
        base = ball_chart(dim)

        def factory(x):
            s = 1.0 - float(x @ x)
            if s <= 0.0:
                raise FieldError("funk fiber outside the unit ball")
            M = (s * np.eye(dim) + np.outer(x, x)) / (s * s)
            return QuadFormRandersFiber(M, x / s)

        return ChartField(base, factory, family="funk")

    dim = body.dim
    poly = cb.to_polytope(body)
    base = ChartBase(dim, tuple(np.min(poly.vertices, axis=0)),
                     tuple(np.max(poly.vertices, axis=0)),
                     inside=lambda x: _in_body(poly, x))

    def factory(x):
        return CallableFiber(dim, lambda v: _funk_ray(poly, x, v))

    return ChartField(base, factory, family="funk")


def _in_body(poly: ConvexBody, x) -> bool:
    normals, _, offsets = poly.facets
    return bool(np.all(normals @ np.asarray(x, dtype=float) < offsets))


def _funk_ray(poly: ConvexBody, x, v, tol: float = 1e-12) -> float:
    """F with x + v/F on the boundary, by bisection along the ray."""
    v = np.asarray(v, dtype=float)
    speed = np.linalg.norm(v)
    if speed == 0.0:
        return 0.0
    normals, _, offsets = poly.facets
    num = offsets - normals @ np.asarray(x, dtype=float)
    den = normals @ v
    if np.min(num) <= 0.0:
        raise FieldError("funk fiber outside the body")
    lo, hi = 0.0, 1e30
    for n, d in zip(num, den):
        if d > 0.0:
            hi = min(hi, n / d)
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if np.all(num - mid * den > 0.0):
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    return 1.0 / t


def hilbert_field(body=None, dim: int = 2) -> MetricField:
    """Hilbert metric = symmetrized Funk; for the ball this is the Klein model."""
    field = central_symmetrization_field(funk_field(body, dim))
    field.family = "hilbert"
    return field


def _density_many(density, pts: np.ndarray) -> np.ndarray:
    many = getattr(density, "many", None)
    if many is not None:
        return np.asarray(many(pts), dtype=float)
    return np.array([float(density(p)) for p in pts])


# ---------------------------------------------------------------------------
# derived fields

class _WrappedField(MetricField):
    def __init__(self, inner: MetricField, family: str):
        super().__init__(inner.base, inner.fiber_dim)
        self.inner = inner
        self.family = family


class ReversedField(_WrappedField):
    def __init__(self, inner):
        super().__init__(inner, f"reversed({inner.family})")

    def make_fiber(self, x):
        return self.inner.fiber(x).reversed_fiber()


class SymmetrizedField(_WrappedField):
    def __init__(self, inner):
        super().__init__(inner, f"symmetrized({inner.family})")

    def make_fiber(self, x):
        return self.inner.fiber(x).symmetrized_fiber()


class ScaledField(_WrappedField):
    def __init__(self, c: float, inner):
        if c <= 0.0:
            raise FieldError("scale factor must be positive")
        super().__init__(inner, f"scaled({inner.family})")
        self.c = float(c)

    def make_fiber(self, x):
        inner = self.inner.fiber(x)
        return ScaledFiber(self.c, inner)


class PlusOneFormField(_WrappedField):
    def __init__(self, inner, beta: OneFormField):
        super().__init__(inner, f"{inner.family}+form")
        self.beta = beta

    def make_fiber(self, x):
        bvec = self.to_frame(x, self.beta.covector(np.asarray(x, dtype=float)))
        return self.inner.fiber(x).translated(bvec)


def reverse_field(field: MetricField) -> MetricField:
    return ReversedField(field)


def central_symmetrization_field(field: MetricField) -> MetricField:
    return SymmetrizedField(field)


def scale_field(c: float, field: MetricField) -> MetricField:
    return ScaledField(c, field)


def add_one_form(field: MetricField, beta: OneFormField,
                 check_level: int = 1) -> MetricField:
    """F + beta, rejected if positivity fails on a base/direction sample."""
    out = PlusOneFormField(field, beta)
    dirs = build_sphere_grid(field.fiber_dim, 0).nodes
    worst = (None, None, math.inf)
    for x in field.base_points(check_level):
        fib = out.fiber(x)
        for w in dirs:
            val = fib.value(w)
            if val < worst[2]:
                worst = (x, w, val)
    if worst[2] <= 0.0:
        raise PositivityError("F + beta is not positive", *worst)
    return out


class ArealSymmetrizedField(_WrappedField):
    """Fiberwise support of the Blaschke body of the co-disc (reversible)."""

    def __init__(self, inner, level: int = 2):
        super().__init__(inner, f"areal({inner.family})")
        self.level = level

    def make_fiber(self, x):
        if self.fiber_dim == 2:
            return self.inner.fiber(x).symmetrized_fiber()
        body = codisc(self.inner, x, level=self.level)
        try:
            nabla = cb.blaschke_body(cb.to_polytope(body))
        except cb.MinkowskiSolveError as exc:
            raise FieldError(f"areal symmetrization failed at x={x}") from exc
        return CallableFiber(3, lambda w: cb.support(nabla, w))


def areal_symmetrization_field(field: MetricField, level: int = 2) -> MetricField:
    return ArealSymmetrizedField(field, level)


# ---------------------------------------------------------------------------
# co-discs and Holmes-Thompson volumes

def codisc(field: MetricField, x, level: int = 3) -> ConvexBody:
    """The dual unit ball of the fiber at x, in frame coordinates.

    The support function of the co-disc is the fiber norm itself.
    """
    x = np.asarray(x, dtype=float)
    if not field.base.contains(x):
        raise FieldError("base point outside the chart")
    fib = field.fiber(x)
    grid = build_sphere_grid(field.fiber_dim, level)
    sampler = getattr(fib, "support_samples", None)
    if sampler is not None and field.fiber_dim == 2:
        h = sampler(np.arctan2(grid.nodes[:, 1], grid.nodes[:, 0]))
    else:
        h = np.array([fib.value(u) for u in grid.nodes])
    return from_support_samples(grid, h, support_fn=fib.value, tag="codisc")


def ht_volume_density(field: MetricField, x, level: int = 3) -> float:
    """Co-disc volume / eps_n, relative to the declared reference volume form.

    Exact circumscribed-polytope volumes keep the one-form invariance and the
    symmetrization inequalities sharp.
    """
    body = codisc(field, x, level=level)
    if field.fiber_dim == 2:
        order, _ = cb._sorted_circle(body.grid)
        verts = cb.polygon_from_support(body.grid.nodes[order],
                                        body.support_samples[order])
        return cb._polygon_area(verts) / EPS_BALL[2]
    return cb.volume(cb.to_polytope(body)) / EPS_BALL[field.fiber_dim]


def ht_volume(field: MetricField, region=None, base_level: int = 3,
              fiber_level: int = 3, gauss_order: int = 24) -> float:
    """Integral of the volume density over the region (default: whole base)."""
    if isinstance(field.base, SphereBase):
        grid = build_sphere_grid(3, base_level)
        vals = [ht_volume_density(field, x, fiber_level) for x in grid.nodes]
        return math.fsum(np.asarray(vals) * grid.weights)
    lo = np.asarray(region[0] if region is not None else field.base.lo, float)
    hi = np.asarray(region[1] if region is not None else field.base.hi, float)
    if not (field.base.contains(lo + 1e-9) and field.base.contains(hi - 1e-9)):
        raise FieldError("integration region leaves the chart")
    pts, wts = np.polynomial.legendre.leggauss(gauss_order)
    axes = [(0.5 * (h - l) * pts + 0.5 * (h + l), 0.5 * (h - l) * wts)
            for l, h in zip(lo, hi)]
    total = []
    if field.fiber_dim == 2:
        for x0, w0 in zip(*axes[0]):
            for x1, w1 in zip(*axes[1]):
                total.append(w0 * w1 * ht_volume_density(
                    field, np.array([x0, x1]), fiber_level))
    else:
        for x0, w0 in zip(*axes[0]):
            for x1, w1 in zip(*axes[1]):
                for x2, w2 in zip(*axes[2]):
                    total.append(w0 * w1 * w2 * ht_volume_density(
                        field, np.array([x0, x1, x2]), fiber_level))
    return math.fsum(total)


def hypersurface_area(field: MetricField, curve, tol: float = 1e-8) -> float:
    """Finsler length of a curve: adaptive Simpson of F(gamma, gamma')."""

    def speed(t: float) -> float:
        val = field.value(curve.point(t), curve.velocity(t))
        if not math.isfinite(val):
            raise FieldError("non-finite speed along the curve")
        return val

    return _adaptive_simpson(speed, curve.t0, curve.t1, tol)


def surface_area_3d(field: MetricField, surface, order: int = 16) -> float:
    """HT area of a parametrized surface patch in a 3-D chart.

    Integrates the 2-area density of the tangent plane: the shadow of the
    co-disc on the plane, divided by eps_2, scaled by the Euclidean area
    element.
    """
    pts, wts = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (surface.s1 - surface.s0) * pts + 0.5 * (surface.s1 + surface.s0)
    ws = 0.5 * (surface.s1 - surface.s0) * wts
    t = 0.5 * (surface.t1 - surface.t0) * pts + 0.5 * (surface.t1 + surface.t0)
    wt = 0.5 * (surface.t1 - surface.t0) * wts
    total = []
    for si, wsi in zip(s, ws):
        for ti, wti in zip(t, wt):
            x = surface.point(si, ti)
            t1, t2 = surface.tangents(si, ti)
            scale = np.linalg.norm(np.cross(t1, t2))
            e1 = t1 / np.linalg.norm(t1)
            e2 = t2 - np.dot(t2, e1) * e1
            e2 /= np.linalg.norm(e2)
            body = codisc(field, x)
            shadow = cb.projection_area_k(body, np.vstack([e1, e2]))
            total.append(wsi * wti * scale * shadow / EPS_BALL[2])
    return math.fsum(total)


def _adaptive_simpson(f, a: float, b: float, tol: float) -> float:
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)

    def recurse(a, fa, b, fb, m, fm, whole, tol, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth <= 0 or abs(left + right - whole) < 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + recurse(m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1))

    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return recurse(a, fa, b, fb, m, fm, whole, tol, 48)


# ---------------------------------------------------------------------------
# curves

@dataclass(eq=False)
class ParamCurve:
    point_fn: Callable[[float], np.ndarray]
    velocity_fn: Callable[[float], np.ndarray] | None
    t0: float
    t1: float

    def point(self, t: float) -> np.ndarray:
        return np.asarray(self.point_fn(t), dtype=float)

    def velocity(self, t: float) -> np.ndarray:
        if self.velocity_fn is not None:
            return np.asarray(self.velocity_fn(t), dtype=float)
        h = 1e-6
        return (self.point(t + h) - self.point(t - h)) / (2.0 * h)


def sphere_circle(axis=(0.0, 0.0, 1.0), latitude_deg: float = 0.0) -> ParamCurve:
    """The circle at the given latitude about `axis` (equator by default)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    e1, e2 = tangent_frame(axis)
    lat = math.radians(latitude_deg)
    r, z = math.cos(lat), math.sin(lat)

    def point(t):
        return r * math.cos(t) * e1 + r * math.sin(t) * e2 + z * axis

    def velocity(t):
        return r * (-math.sin(t) * e1 + math.cos(t) * e2)

    return ParamCurve(point, velocity, 0.0, 2.0 * math.pi)


def great_circle_through(x: np.ndarray, v: np.ndarray) -> ParamCurve:
    """Unit-speed great circle with gamma(0) = x, gamma'(0) ~ v (tangential)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    v = v - np.dot(v, x) * x
    v = v / np.linalg.norm(v)
    return ParamCurve(lambda t: math.cos(t) * x + math.sin(t) * v,
                      lambda t: -math.sin(t) * x + math.cos(t) * v,
                      0.0, 2.0 * math.pi)


def chart_segment(a, b) -> ParamCurve:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return ParamCurve(lambda t: a + t * (b - a), lambda t: b - a, 0.0, 1.0)


def chart_circle(center, radius: float) -> ParamCurve:
    c = np.asarray(center, dtype=float)

    def point(t):
        return c + radius * np.array([math.cos(t), math.sin(t)])

    def velocity(t):
        return radius * np.array([-math.sin(t), math.cos(t)])

    return ParamCurve(point, velocity, 0.0, 2.0 * math.pi)
