"""Geodesic flow in the Hamiltonian picture, transversal 2-forms, and
integral-geometric cross checks.

The flow integrates Hamilton's equations for H(x, xi) = F*(x, xi)^2 / 2 with
an adaptive Dormand-Prince 4/5 pair; partial derivatives of H come from
central differences of the dual norm, so only first derivatives of F* are
ever needed. Sphere trajectories are reprojected to |x| = 1 after every
accepted step. On the unit energy level H = 1/2 the time parameter is metric
arclength and the recovered velocity has unit F-speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import crofton as cf
from . import metricfield as mf
from .metricfield import MetricField, SphereBase
from .numerics import build_sphere_grid
from .report import CheckReport, make_report

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = _DP_A[6]
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


class GeodesicError(RuntimeError):
    pass


@dataclass
class GeodesicTrajectory:
    """Sampled flow states; t is metric arclength on the H = 1/2 level."""

    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    v: np.ndarray
    energy: np.ndarray
    steps: int
    max_error: float
    flag: str = "completed"

    @property
    def energy_drift(self) -> float:
        h0 = self.energy[0]
        return float(np.max(np.abs(self.energy - h0)) / h0)

    def to_csv(self) -> str:
        cols = ["t"] + [f"x{i}" for i in range(self.x.shape[1])] \
            + [f"v{i}" for i in range(self.v.shape[1])] + ["H"]
        lines = [",".join(cols)]
        for k in range(len(self.t)):
            row = [repr(float(self.t[k]))]
            row += [repr(float(c)) for c in self.x[k]]
            row += [repr(float(c)) for c in self.v[k]]
            row.append(repr(float(self.energy[k])))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def hilbert_form(field: MetricField, x, v) -> np.ndarray:
    """The fiber derivative dF/dv at (x, v), as an ambient covector.

    Evaluated on a tangent displacement it returns xi(dx); Euler's identity
    gives xi(v) = F(x, v).
    """
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise GeodesicError("hilbert form undefined at zero velocity")
    return field.fiber_gradient(x, v)


def _tangent_parts(xs: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Frame coordinates of xi at each row of xs; vectorized replica of the
    deterministic axis rule in numerics.tangent_frame."""
    k = np.argmax(np.abs(xs) < 1.0 - 1e-8, axis=1)
    onehot = np.zeros_like(xs)
    onehot[np.arange(len(xs)), k] = 1.0
    e1 = onehot - xs[np.arange(len(xs)), k][:, None] * xs
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(xs, e1)
    return np.column_stack([e1 @ xi, e2 @ xi])


def _hamiltonian(field: MetricField, sphere: bool):
    def H(x: np.ndarray, xi: np.ndarray) -> float:
        if sphere:
            x = x / np.linalg.norm(x)
        return 0.5 * field.dual_value(x, xi) ** 2
    return H


def _hamilton_rhs(field: MetricField, sphere: bool, dim: int,
                  dx: float = 1e-6, dxi: float = 1e-6):
    """Hamilton's equations with dH by central differences of the dual norm.

    The xi block shares one fiber (and batches the dual evaluations when the
    fiber supports it); the x block batches the fiber construction.
    """
    H = _hamiltonian(field, sphere)
    eye = np.eye(dim)

    if sphere:
        def rhs(y: np.ndarray) -> np.ndarray:
            # both dH/dxi and dH/dx are tangential (homogeneity in x, gauge
            # invariance in xi), so two frame directions per block suffice
            x, xi = y[:dim].copy(), y[dim:]
            x /= np.linalg.norm(x)
            frame = field.frame(x)
            xs = np.vstack([x,
                            x + dx * frame[0], x - dx * frame[0],
                            x + dx * frame[1], x - dx * frame[1]])
            xs /= np.linalg.norm(xs, axis=1)[:, None]
            fibs = field.make_fibers(xs)
            fib = fibs[0]

            w = frame @ xi
            sxi = dxi * max(1.0, float(np.linalg.norm(xi)))
            rows = np.array([w, [w[0] + sxi, w[1]], [w[0] - sxi, w[1]],
                             [w[0], w[1] + sxi], [w[0], w[1] - sxi]])
            dual_many = getattr(fib, "dual_many", None)
            if dual_many is not None:
                duals = dual_many(rows)
            else:
                duals = np.array([fib.dual(r) for r in rows])
            hv = 0.5 * duals ** 2
            dhdxi = np.array([hv[1] - hv[2], hv[3] - hv[4]]) / (2.0 * sxi)

            ws = _tangent_parts(xs[1:], xi)
            hx = 0.5 * mf.dual_across(fibs[1:], ws) ** 2
            dhdx = np.array([hx[0] - hx[1], hx[2] - hx[3]]) / (2.0 * dx)

            out = np.empty(2 * dim)
            out[:dim] = frame.T @ dhdxi
            # gauge fixing: the ambient lift grows xi . x at rate 2H, which H
            # never reads; removing it keeps the stages on the constraint so
            # the FSAL stage stays valid across the post-step projection
            out[dim:] = -(frame.T @ dhdx) - duals[0] ** 2 * x
            return out

        return rhs, H

    def rhs(y: np.ndarray) -> np.ndarray:
        x, xi = y[:dim], y[dim:]
        out = np.empty(2 * dim)
        sxi = dxi * max(1.0, float(np.linalg.norm(xi)))
        fib = field.fiber(x)
        pert = np.vstack([xi + sxi * eye, xi - sxi * eye])
        dual_many = getattr(fib, "dual_many", None)
        if dual_many is not None:
            duals = dual_many(pert)
        else:
            duals = np.array([fib.dual(w) for w in pert])
        hv = 0.5 * duals ** 2
        out[:dim] = (hv[:dim] - hv[dim:]) / (2.0 * sxi)
        xs = np.vstack([x + dx * eye, x - dx * eye])
        fibs = field.make_fibers(xs)
        hx = np.array([0.5 * fk.dual(xi) ** 2 for fk in fibs])
        out[dim:] = -(hx[:dim] - hx[dim:]) / (2.0 * dx)
        return out

    return rhs, H


def inverse_legendre(field: MetricField, x, xi) -> np.ndarray:
    """Velocity v with dF/dv(x, v) = xi, by the duality map (grid + Newton).

    The direction maximizes xi(v)/F(v) over the fiber circle; the scale is
    fixed by F(x, v) = F*(x, xi).
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    fib = field.fiber(x)
    w_xi = field.to_frame(x, xi)
    argmax = getattr(fib, "dual_argmax", None)
    if argmax is not None:
        w = argmax(w_xi)
    else:
        grid = build_sphere_grid(field.fiber_dim, 2)
        ratios = np.array([float(w_xi @ u) / fib.value(u) for u in grid.nodes])
        w = grid.nodes[int(np.argmax(ratios))]
        w = _polish_dual_argmax(fib, w_xi, w)
    w = w / fib.value(w)
    return field.from_frame(x, w * fib.dual(w_xi))


def _polish_dual_argmax(fib, xi2: np.ndarray, w: np.ndarray,
                        iters: int = 40) -> np.ndarray:
    # projected ascent of xi.w/F(w) on the unit circle/sphere, tolerance 1e-10
    step = 0.05
    best = float(xi2 @ w) / fib.value(w)
    for _ in range(iters):
        g = xi2 / fib.value(w) - best * fib.grad(w) / fib.value(w)
        g = g - (g @ w) * w
        if np.linalg.norm(g) < 1e-12:
            break
        cand = w + step * g
        cand /= np.linalg.norm(cand)
        val = float(xi2 @ cand) / fib.value(cand)
        if val > best:
            w, best = cand, val
            step *= 1.3
        else:
            step *= 0.4
            if step < 1e-10:
                break
    return w


def geodesic_trace(field: MetricField, x0, v0, T: float,
                   rtol: float = 1e-9, atol: float = 1e-12,
                   max_steps: int = 200000,
                   boundary_tol: float = 1e-6) -> GeodesicTrajectory:
    """Trace the unit-speed geodesic from (x0, v0) for arclength T.

    Chart trajectories that reach the chart boundary within boundary_tol stop
    early with flag "boundary"; incomplete geodesics are first-class results.
    """
    sphere = isinstance(field.base, SphereBase)
    dim = 3 if sphere else field.fiber_dim
    x0 = np.asarray(x0, dtype=float).copy()
    v0 = np.asarray(v0, dtype=float).copy()
    if sphere:
        x0 /= np.linalg.norm(x0)
        v0 -= np.dot(v0, x0) * x0
    speed = field.value(x0, v0)
    if speed <= 0.0:
        raise GeodesicError("initial velocity has nonpositive F-speed")
    v0 /= speed
    xi0 = field.fiber_gradient(x0, v0)
    rhs, H = _hamilton_rhs(field, sphere, dim)

    y = np.concatenate([x0, xi0])
    t = 0.0
    ts, xs, xis, vs, hs = [0.0], [x0.copy()], [xi0.copy()], [], [H(x0, xi0)]
    k1 = rhs(y)
    vs.append(k1[:dim].copy())
    h = min(0.01, T / 10.0)
    steps = 0
    max_err = 0.0
    flag = "completed"
    while t < T:
        if steps >= max_steps:
            raise GeodesicError("integrator exceeded the step budget")
        h = min(h, T - t)
        stages = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_DP_A[i], stages))
            stages.append(rhs(yi))
        y5 = y + h * sum(b * k for b, k in zip(_DP_B5, stages))
        y4 = y + h * sum(b * k for b, k in zip(_DP_B4, stages))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.max(np.abs(y5 - y4) / scale))
        if err <= 1.0:
            t += h
            y = y5
            if sphere:
                y[:dim] /= np.linalg.norm(y[:dim])
                y[dim:] -= np.dot(y[dim:], y[:dim]) * y[:dim]
            steps += 1
            max_err = max(max_err, err)
            # FSAL: the reprojection shifts y by ~1e-12, negligible at rtol
            k1 = stages[6]
            ts.append(t)
            xs.append(y[:dim].copy())
            xis.append(y[dim:].copy())
            vs.append(k1[:dim].copy())
            hs.append(H(y[:dim], y[dim:]))
            if not sphere:
                margin = _chart_margin(field, y[:dim])
                if margin < boundary_tol:
                    flag = "boundary"
                    break
        h *= min(5.0, max(0.2, 0.9 * (err + 1e-16) ** -0.2))
    vs = vs[:len(ts)]
    return GeodesicTrajectory(
        t=np.array(ts), x=np.array(xs), xi=np.array(xis), v=np.array(vs),
        energy=np.array(hs), steps=steps, max_error=max_err, flag=flag)


def _chart_margin(field: MetricField, x: np.ndarray) -> float:
    base = field.base
    if not base.contains(x):
        return 0.0
    if base.inside is not None:
        # generic inside test: bisect along the outward radial direction
        lo, hi = 0.0, 1.0
        d = x - 0.5 * (np.asarray(base.lo) + np.asarray(base.hi))
        n = np.linalg.norm(d)
        d = d / n if n > 0 else np.eye(len(x))[0]
        while base.contains(x + hi * d) and hi < 1e3:
            hi *= 2.0
        for _ in range(40):
            midpt = 0.5 * (lo + hi)
            if base.contains(x + midpt * d):
                lo = midpt
            else:
                hi = midpt
        return lo
    lo = np.asarray(base.lo, dtype=float)
    hi = np.asarray(base.hi, dtype=float)
    return float(min(np.min(x - lo), np.min(hi - x)))


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = cdist(a, b)
    return max(float(np.max(np.min(d, axis=1))),
               float(np.max(np.min(d, axis=0))))


def reversibility_check(field: MetricField, samples: Sequence, T: float,
                        tol: float = 1e-5, rtol: float = 1e-9) -> CheckReport:
    """Trace forward, then backward from the reversed endpoint; geodesically
    reversible fields retrace the same point set."""
    dists = []
    for (x, v) in samples:
        fwd = geodesic_trace(field, x, v, T, rtol=rtol)
        back = geodesic_trace(field, fwd.x[-1], -fwd.v[-1], fwd.t[-1],
                              rtol=rtol)
        dists.append(hausdorff_distance(fwd.x, back.x))
    worst = max(dists)
    return make_report(
        "reversibility", {"field": field.family, "T": T, "n": len(dists)},
        residuals={"hausdorff": worst}, tolerances={"hausdorff": tol},
        numbers={"mean_hausdorff": float(np.mean(dists)),
                 "max_hausdorff": worst})


# ---------------------------------------------------------------------------
# transversal patches and the geodesic-space 2-form

@dataclass(eq=False)
class TransversalPatch:
    """A 2-parameter family of states (x, v) transverse to the geodesic flow."""

    X: np.ndarray  # (n1, n2, d) footpoints
    V: np.ndarray  # (n1, n2, d) velocities (any positive scale)
    ds: tuple

    @property
    def shape(self):
        return self.X.shape[:2]


def meridian_patch(field: MetricField, s1_range=(0.4, 1.2),
                   s2_range=(0.5, 1.1), n1: int = 20, n2: int = 20,
                   unit_speed: bool = True) -> TransversalPatch:
    """States over a meridian arc of S^2: footpoint angle s1, direction s2.

    s2 is the angle from the meridian tangent; keeping it away from 0 and pi/2
    leaves a comfortable transversality margin.
    """
    s1 = np.linspace(*s1_range, n1)
    s2 = np.linspace(*s2_range, n2)
    X = np.empty((n1, n2, 3))
    V = np.empty((n1, n2, 3))
    for i, a in enumerate(s1):
        x = np.array([math.cos(a), 0.0, math.sin(a)])
        m = np.array([-math.sin(a), 0.0, math.cos(a)])
        phi = np.cross(x, m)
        for j, b in enumerate(s2):
            v = math.cos(b) * m + math.sin(b) * phi
            if unit_speed:
                v = v / field.value(x, v)
            X[i, j] = x
            V[i, j] = v
    return TransversalPatch(X=X, V=V,
                            ds=(float(s1[1] - s1[0]), float(s2[1] - s2[0])))


def transversality_margin(field: MetricField, patch: TransversalPatch,
                          dt: float = 1e-3) -> float:
    """Smallest angle between the flow direction and the patch tangent plane."""
    n1, n2 = patch.shape
    d = patch.X.shape[2]
    T1 = np.gradient(np.concatenate([patch.X, patch.V], axis=2),
                     patch.ds[0], axis=0)
    T2 = np.gradient(np.concatenate([patch.X, patch.V], axis=2),
                     patch.ds[1], axis=1)
    worst = math.inf
    for i in range(n1):
        for j in range(n2):
            x, v = patch.X[i, j], patch.V[i, j]
            tr = geodesic_trace(field, x, v, dt, rtol=1e-8)
            flow = np.concatenate([tr.v[0], (tr.v[-1] - tr.v[0]) / tr.t[-1]])
            basis = np.vstack([T1[i, j], T2[i, j]])
            q, _ = np.linalg.qr(basis.T)
            resid = flow - q @ (q.T @ flow)
            angle = math.asin(min(1.0, np.linalg.norm(resid)
                                  / np.linalg.norm(flow)))
            worst = min(worst, angle)
    return worst


def section_symplectic_form(field: MetricField, patch: TransversalPatch,
                            check_margin: bool = False) -> np.ndarray:
    """Pull back d(alpha) to the patch: w = d1(alpha(d2)) - d2(alpha(d1)).

    Returned on the interior (n1-2) x (n2-2) node window (central differences).
    """
    if check_margin and transversality_margin(field, patch) < 1e-3:
        raise GeodesicError("patch is not transverse to the flow")
    n1, n2 = patch.shape
    A1 = np.empty((n1, n2))
    A2 = np.empty((n1, n2))
    dX1 = np.gradient(patch.X, patch.ds[0], axis=0)
    dX2 = np.gradient(patch.X, patch.ds[1], axis=1)
    for i in range(n1):
        for j in range(n2):
            xi = hilbert_form(field, patch.X[i, j], patch.V[i, j])
            A1[i, j] = float(xi @ dX1[i, j])
            A2[i, j] = float(xi @ dX2[i, j])
    d1A2 = (A2[2:, 1:-1] - A2[:-2, 1:-1]) / (2.0 * patch.ds[0])
    d2A1 = (A1[1:-1, 2:] - A1[1:-1, :-2]) / (2.0 * patch.ds[1])
    return d1A2 - d2A1


def flow_patch(field: MetricField, patch: TransversalPatch, t: float,
               rtol: float = 1e-9) -> TransversalPatch:
    """Advance every patch state by arclength t along the field's flow."""
    n1, n2 = patch.shape
    X = np.empty_like(patch.X)
    V = np.empty_like(patch.V)
    for i in range(n1):
        for j in range(n2):
            tr = geodesic_trace(field, patch.X[i, j], patch.V[i, j], t,
                                rtol=rtol)
            X[i, j] = tr.x[-1]
            V[i, j] = tr.v[-1]
    return TransversalPatch(X=X, V=V, ds=patch.ds)


def motion_integral_ratio(f1: MetricField, f2: MetricField,
                          patch: TransversalPatch,
                          flow_time: float | None = None,
                          flow_field: MetricField | None = None):
    """nu = w_{F2} / w_{F1} nodewise on the patch (dimension-2 manifolds).

    The caller asserts the two fields share unparametrized geodesics. When
    flow_time is given the patch is advanced along the common geodesics (by
    flow_field, default f1) and nu is recomputed at the flowed states; the
    along-flow spread measures how far nu is from an integral of motion.
    """
    w1 = section_symplectic_form(f1, patch)
    w2 = section_symplectic_form(f2, patch)
    if np.min(np.abs(w1)) < 1e-10:
        raise GeodesicError("degenerate patch: w_{F1} vanishes at a node")
    nu = w2 / w1
    result = {
        "nu": nu,
        "mean": float(np.mean(nu)),
        "spread": float(np.max(nu) - np.min(nu)),
    }
    if flow_time is not None:
        flowed = flow_patch(flow_field or f1, patch, flow_time)
        nu_t = (section_symplectic_form(f2, flowed)
                / section_symplectic_form(f1, flowed))
        result["along_flow_spread"] = float(np.max(np.abs(nu_t - nu)))
        result["nu_flowed"] = nu_t
    return result


# ---------------------------------------------------------------------------
# Santalo and Crofton cross checks

def _require_busemann(field: MetricField):
    if not isinstance(field, mf.BusemannSphereField):
        raise GeodesicError("check requires a Busemann (Zoll) field")
    return field.density


def prime_length(field: MetricField, grid_level: int = 3) -> float:
    """Common length of the prime geodesics, by Crofton counting on a great
    circle (every great circle meets every other one twice)."""
    density = _require_busemann(field)
    curve = mf.great_circle_through(np.array([1.0, 0.0, 0.0]),
                                    np.array([0.0, 1.0, 0.3]))
    grid = build_sphere_grid(3, grid_level)
    return cf.crofton_length(density, curve, grid)


def santalo_check(field: MetricField, base_level: int = 3,
                  tol: float = 1e-2) -> CheckReport:
    """vol_2(M, F) = (1/(eps_2 2!)) * integral of length(l) over geodesics.

    LHS: eps_2 * 2! * measured HT volume. RHS: prime length times the omega
    mass of the geodesic space, using the Crofton identification
    |omega| = 4 m dsigma over oriented poles. The identification itself is
    accepted only after crofton_area_check passes on the round density.
    """
    density = _require_busemann(field)
    vol = mf.ht_volume(field, base_level=base_level)
    lhs = mf.EPS_BALL[2] * 2.0 * vol
    ell = prime_length(field, grid_level=base_level)
    omega_mass = 4.0 * cf.total_measure(density, level=base_level)
    rhs = ell * omega_mass
    mismatch = abs(lhs - rhs) / abs(lhs)
    return make_report(
        "santalo", {"field": field.family, "density": density.label},
        residuals={"mismatch": mismatch}, tolerances={"mismatch": tol},
        numbers={"lhs": lhs, "rhs": rhs, "volume": vol, "ell": ell,
                 "omega_mass": omega_mass})


def crofton_area_check(field: MetricField, curve, grid_level: int = 5,
                       tol: float = 1e-2) -> CheckReport:
    """Hypersurface length vs (1/(2 eps_1)) integral of #(gamma cap N)|omega|.

    eps_1 = 2 and |omega| = 4 m dsigma over oriented poles, so the right-hand
    side is an intersection-counting quadrature, independent of the arclength
    path on the left.
    """
    density = _require_busemann(field)
    lhs = mf.hypersurface_area(field, curve)
    grid = build_sphere_grid(3, grid_level)
    counts = cf.count_circle_intersections(curve, grid.nodes)
    omega = 4.0 * density.many(grid.nodes) * grid.weights
    rhs = float(np.dot(omega, counts)) / (2.0 * mf.EPS_BALL[1])
    mismatch = abs(lhs - rhs) / abs(lhs)
    return make_report(
        "crofton-area", {"field": field.family, "density": density.label},
        residuals={"mismatch": mismatch}, tolerances={"mismatch": tol},
        numbers={"lhs": lhs, "rhs": rhs})
