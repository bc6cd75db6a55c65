"""Riemannian metric charts on half-space boxes.

A :class:`MetricChart` is an axis-aligned box of R^d, optionally cut by the
half-space ``x1 >= 0`` whose face ``{x1 = 0}`` plays the boundary of the
ambient manifold. The metric is a symmetric matrix of expressions; all
derivatives of it are finite differences.

All point arguments are batched: arrays of shape ``(k, d)`` (a single point
of shape ``(d,)`` is accepted and returned unbatched).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .expr import Expression, parse
from .numerics import jacobian, named_rng


class GeometryError(ValueError):
    pass


class DomainExit(GeometryError):
    pass


class FocalPointError(GeometryError):
    pass


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


@dataclass(eq=False)
class MetricChart:
    """Coordinate box with a Riemannian metric.

    ``metric_fn`` maps points ``(k, d)`` to matrices ``(k, d, d)``.
    ``halo`` is how far outside the box (and below ``x1 = 0``) finite
    difference stencils may sample the analytic extension of the metric.
    """

    dim: int
    lo: np.ndarray
    hi: np.ndarray
    metric_fn: Callable[[np.ndarray], np.ndarray]
    half_space: bool = True
    fd_step: float = 1e-5
    halo: float = 0.05
    flat: bool = False
    sources: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 2 <= self.dim <= 8:
            raise GeometryError(f"dimension {self.dim} outside 2..8")
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != (self.dim,) or self.hi.shape != (self.dim,):
            raise GeometryError("box bounds must have length dim")
        if np.any(self.hi <= self.lo):
            raise GeometryError("empty box")
        if self.half_space and self.hi[0] <= 0:
            raise GeometryError("box does not meet the half-space x1 >= 0")

    @classmethod
    def from_expressions(
        cls,
        dim: int,
        lo: Sequence[float],
        hi: Sequence[float],
        metric: Sequence[Sequence[str | Expression]],
        half_space: bool = True,
        fd_step: float = 1e-5,
        halo: float = 0.05,
        check_samples: int = 64,
    ) -> "MetricChart":
        """Build a chart from a (d, d) table of expression sources.

        Only the upper triangle is read; the lower triangle is mirrored so
        the stored metric is exactly symmetric.
        """
        if len(metric) != dim or any(len(row) != dim for row in metric):
            raise GeometryError("metric must be a dim x dim table")
        exprs = {}
        for i in range(dim):
            for j in range(i, dim):
                e = metric[i][j]
                exprs[i, j] = e if isinstance(e, Expression) else parse(str(e), dim)
        fns = {key: e.compile() for key, e in exprs.items()}
        flat = all(e.is_constant for e in exprs.values())

        def metric_fn(x):
            x = np.asarray(x, dtype=float)
            g = np.empty(x.shape[:-1] + (dim, dim))
            for (i, j), fn in fns.items():
                g[..., i, j] = fn(x)
                g[..., j, i] = g[..., i, j]
            return g

        chart = cls(
            dim,
            np.asarray(lo, float),
            np.asarray(hi, float),
            metric_fn,
            half_space,
            fd_step,
            halo,
            flat,
            tuple(tuple(exprs[min(i, j), max(i, j)].source for j in range(dim)) for i in range(dim)),
        )
        chart.check_positive_definite(check_samples)
        return chart

    @classmethod
    def euclidean(cls, dim, lo, hi, half_space=True, **kw) -> "MetricChart":
        table = [["1" if i == j else "0" for j in range(dim)] for i in range(dim)]
        return cls.from_expressions(dim, lo, hi, table, half_space, **kw)

    # -- domain --------------------------------------------------------------

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)
        if self.half_space:
            inside &= x[..., 0] >= -tol
        return inside

    def sample_points(self, count: int, seed: int = 0) -> np.ndarray:
        rng = named_rng(seed, "chart-samples")
        lo = self.lo.copy()
        if self.half_space:
            lo[0] = max(lo[0], 0.0)
        return lo + (self.hi - lo) * rng.random((count, self.dim))

    def check_positive_definite(self, count: int = 64) -> float:
        corners = np.array(
            [[self.hi[i] if (c >> i) & 1 else self.lo[i] for i in range(self.dim)] for c in range(2**self.dim)]
        )
        if self.half_space:
            corners[:, 0] = np.maximum(corners[:, 0], 0.0)
        pts = np.concatenate([corners, self.sample_points(count)])
        lam = np.linalg.eigvalsh(self.metric(pts)).min()
        if not lam > 0:
            raise GeometryError(f"metric not positive definite (min eigenvalue {lam:.3g})")
        return float(lam)

    # -- tensors -------------------------------------------------------------

    def metric(self, x) -> np.ndarray:
        return self.metric_fn(np.asarray(x, dtype=float))

    def inner(self, x, u, v) -> np.ndarray:
        g = self.metric(x)
        return np.einsum("...i,...ij,...j->...", u, g, v)

    def norm(self, x, u) -> np.ndarray:
        return np.sqrt(self.inner(x, u, u))

    def metric_derivatives(self, x) -> np.ndarray:
        """``dg[..., k, i, j] = d g_ij / d x_k``.

        Central differences with step ``fd_step``; second-order one-sided
        differences in ``x1`` within ``fd_step`` of the boundary face.
        """
        xb, single = _batch(x)
        k, d = xb.shape
        h = self.fd_step
        dg = np.empty((k, d, d, d))
        if self.flat:
            dg[:] = 0.0
            return dg[0] if single else dg
        for a in range(d):
            e = np.zeros(d)
            e[a] = h
            pts = np.concatenate([xb + e, xb - e])
            vals = self.metric(pts)
            dg[:, a] = (vals[:k] - vals[k:]) / (2 * h)
            if a == 0 and self.half_space:
                near = xb[:, 0] - h < 0
                if np.any(near):
                    xn = xb[near]
                    fwd = self.metric(np.concatenate([xn, xn + e, xn + 2 * e]))
                    m = len(xn)
                    dg[near, a] = (-3 * fwd[:m] + 4 * fwd[m : 2 * m] - fwd[2 * m :]) / (2 * h)
        return dg[0] if single else dg

    def _check_reach(self, xb):
        if not np.all(self.contains(xb, tol=self.halo)):
            bad = xb[~self.contains(xb, tol=self.halo)][0]
            raise DomainExit(f"point {bad.tolist()} outside chart domain")


def christoffel(chart: MetricChart, x) -> np.ndarray:
    """Christoffel symbols ``G[..., k, i, j]`` of the Levi-Civita connection."""
    xb, single = _batch(x)
    chart._check_reach(xb)
    d = chart.dim
    if chart.flat:
        out = np.zeros((len(xb), d, d, d))
        return out[0] if single else out
    g = chart.metric(xb)
    try:
        ginv = np.linalg.inv(g)
    except np.linalg.LinAlgError:
        raise GeometryError("metric not invertible") from None
    dg = chart.metric_derivatives(xb)  # [k, a, i, j]
    # lowered[l, i, j] = d_i g_jl + d_j g_il - d_l g_ij
    lowered = np.transpose(dg, (0, 3, 1, 2)) + np.transpose(dg, (0, 3, 2, 1)) - dg
    k = len(xb)
    gamma = 0.5 * (ginv @ lowered.reshape(k, d, d * d)).reshape(k, d, d, d)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
    return gamma[0] if single else gamma


def covariant_derivative(chart: MetricChart, X, u, x, h: float | None = None, X0=None) -> np.ndarray:
    """``(nabla_u X)^k = u(X^k) + G^k_ij u^i X^j`` with X a batched field.

    ``X`` maps (k, d) -> (k, d); ``X0`` optionally supplies X(x). The
    directional derivative is central unless the backward stencil would
    leave the half-space halo, where a second-order forward stencil is used.
    """
    xb, single = _batch(x)
    ub = np.broadcast_to(np.asarray(u, dtype=float), xb.shape)
    k = len(xb)
    h = np.broadcast_to(np.asarray(chart.fd_step if h is None else h, dtype=float), (k,))[:, None]
    one_sided = np.zeros(k, bool)
    if chart.half_space:
        one_sided = (xb - h * ub)[:, 0] < -chart.halo
    parts = [xb + h * ub, xb - h * ub]
    if X0 is None:
        parts.append(xb)
    vals = np.asarray(X(np.concatenate(parts)), dtype=float)
    fp, fm = vals[:k], vals[k : 2 * k]
    f0 = vals[2 * k :] if X0 is None else np.asarray(X0, dtype=float).reshape(k, -1)
    deriv = (fp - fm) / (2 * h)
    if np.any(one_sided):
        xs, us, hs = xb[one_sided], ub[one_sided], h[one_sided]
        f2 = np.asarray(X(xs + 2 * hs * us), dtype=float)
        deriv[one_sided] = (-3 * f0[one_sided] + 4 * fp[one_sided] - f2) / (2 * hs)
    gamma = christoffel(chart, xb)
    out = deriv + ((gamma @ f0[:, None, :, None])[..., 0] * ub[:, None, :]).sum(-1)
    return out[0] if single else out


# --- geodesics -------------------------------------------------------------


def _geodesic_rhs(chart):
    d = chart.dim

    def rhs(t, y):
        x, v = y[:, :d], y[:, d:]
        gamma = christoffel(chart, x)
        acc = -np.einsum("kaij,ki,kj->ka", gamma, v, v)
        return np.concatenate([v, acc], axis=1)

    return rhs


def exp_map(chart: MetricChart, x0, v0, T, steps: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Batched fixed-step RK4 geodesic shooting (no exit detection).

    ``T`` may be a scalar or one time per row (negative times run backwards).
    """
    xb, single = _batch(x0)
    vb = np.broadcast_to(np.asarray(v0, dtype=float), xb.shape)
    d = chart.dim
    y = np.concatenate([xb, vb], axis=1)
    rhs = _geodesic_rhs(chart)
    T = np.asarray(T, dtype=float)
    dt = np.broadcast_to(T, (len(xb),))[:, None] / steps
    for _ in range(steps):
        k1 = rhs(0, y)
        k2 = rhs(0, y + dt / 2 * k1)
        k3 = rhs(0, y + dt / 2 * k2)
        k4 = rhs(0, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    x, v = y[:, :d], y[:, d:]
    return (x[0], v[0]) if single else (x, v)


@dataclass(eq=False)
class GeodesicPath:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    chart: MetricChart
    exited: bool = False

    @property
    def samples(self):
        return list(zip(self.times, self.positions, self.velocities))

    def speeds(self) -> np.ndarray:
        return self.chart.norm(self.positions, self.velocities)


def geodesic(chart: MetricChart, x0, v0, T: float, steps: int, max_drift: float = 1e-3) -> GeodesicPath:
    """Integrate ``x'' + G(x', x') = 0`` with classic RK4.

    Integration halts (``exited=True``) at the first step that leaves the
    chart domain; raises :class:`DomainExit` if ``x0`` is outside and
    :class:`GeometryError` if the g-speed drifts by more than ``max_drift``.
    """
    if steps < 2:
        raise ValueError("need at least 2 steps")
    x = np.asarray(x0, dtype=float)
    v = np.asarray(v0, dtype=float)
    if not chart.contains(x, tol=1e-12):
        raise DomainExit("geodesic starts outside the chart domain")
    d = chart.dim
    rhs = _geodesic_rhs(chart)
    dt = T / steps
    y = np.concatenate([x, v])[None, :]
    times, xs, vs = [0.0], [x.copy()], [v.copy()]
    speed0 = float(chart.norm(x, v))
    exited = False
    for i in range(steps):
        k1 = rhs(0, y)
        k2 = rhs(0, y + dt / 2 * k1)
        k3 = rhs(0, y + dt / 2 * k2)
        k4 = rhs(0, y + dt * k3)
        y_next = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not chart.contains(y_next[0, :d], tol=1e-12):
            exited = True
            break
        y = y_next
        times.append((i + 1) * dt)
        xs.append(y[0, :d].copy())
        vs.append(y[0, d:].copy())
        speed = float(chart.norm(xs[-1], vs[-1]))
        if speed0 > 0 and abs(speed - speed0) > max_drift * speed0:
            raise GeometryError(f"geodesic blow-up: speed drift {abs(speed - speed0) / speed0:.2e}")
    return GeodesicPath(np.array(times), np.array(xs), np.array(vs), chart, exited)


# --- frames ----------------------------------------------------------------


def orthonormalize(chart: MetricChart, x, vectors, pivot: float = 1e-10) -> np.ndarray:
    """Modified Gram-Schmidt in the inner product g(x); rows in, rows out."""
    x = np.asarray(x, dtype=float)
    g = chart.metric(x)
    out = []
    for v in np.asarray(vectors, dtype=float):
        w = v.copy()
        for _ in range(2):
            for e in out:
                w = w - (e @ g @ w) * e
        nrm = np.sqrt(w @ g @ w)
        if not nrm > pivot:
            raise GeometryError(f"rank deficiency: pivot {nrm:.3g} below {pivot}")
        out.append(w / nrm)
    return np.array(out)


def batch_orthonormalize(g: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Gram-Schmidt for stacks: ``g`` (k, d, d), ``vectors`` (k, r, d)."""
    out = np.empty_like(vectors, dtype=float)
    for i in range(vectors.shape[1]):
        w = vectors[:, i].astype(float)
        for _ in range(2):
            for j in range(i):
                e = out[:, j]
                w = w - np.einsum("ka,kab,kb->k", e, g, w)[:, None] * e
        nrm = np.sqrt(np.einsum("ka,kab,kb->k", w, g, w))
        if np.any(~(nrm > 1e-10)):
            raise GeometryError("rank deficiency in batched Gram-Schmidt")
        out[:, i] = w / nrm[:, None]
    return out


def boundary_normal(chart: MetricChart, x) -> np.ndarray:
    """Inward unit normal of ``{x1 = 0}``: g-normalised gradient of x1."""
    g = chart.metric(x)
    n = np.linalg.solve(g, np.broadcast_to(np.eye(chart.dim)[0], g.shape[:-1])[..., None])[..., 0]
    return n / np.sqrt(n[..., 0])[..., None]


# --- Fermi coordinates -----------------------------------------------------


@dataclass(eq=False)
class FermiChart:
    """Coordinates ``(d, y)`` about a graph hypersurface ``H``.

    ``d`` (stored at ``H.height_index``) is the signed g-distance along the
    normal geodesic, ``y`` (the remaining slots) the base coordinates of its
    foot. ``chart`` carries the pulled-back metric.
    """

    ambient: MetricChart
    surface: object
    chart: MetricChart
    steps: int = 16

    def _split(self, z):
        h = self.surface.hidx
        base = [i for i in range(self.ambient.dim) if i != h]
        return z[:, h], z[:, base]

    def from_fermi(self, z) -> np.ndarray:
        zb, single = _batch(z)
        d, y = self._split(zb)
        foot = self.surface.embed(y)
        nu = self.surface.unit_normal(y)
        x, _ = exp_map(self.ambient, foot, nu, d, self.steps)
        return x[0] if single else x

    def to_fermi(self, x, tol: float = 1e-13, max_iter: int = 30) -> np.ndarray:
        xb, single = _batch(x)
        H = self.surface
        y = H.base(xb)
        nu = H.unit_normal(y)
        d = (xb[:, H.hidx] - H.f_values(y)) / nu[:, H.hidx]
        z = np.empty_like(xb)
        z[:, H.hidx] = d
        z[:, H.base_indices] = y
        for _ in range(max_iter):
            r = self.from_fermi(z) - xb
            if np.max(np.abs(r)) < tol:
                break
            J = jacobian(self.from_fermi, z, 1e-6)
            z = z - np.linalg.solve(J, r[..., None])[..., 0]
        else:
            raise GeometryError("Fermi inversion did not converge")
        return z[0] if single else z

    def jacobian(self, z, h: float = 1e-5) -> np.ndarray:
        zb, single = _batch(z)
        J = jacobian(self.from_fermi, zb, h)
        return J[0] if single else J


def fermi_chart(chart: MetricChart, H, p, radius: float, steps: int = 16, rays: int = 5) -> FermiChart:
    """Fermi coordinates of ``chart`` relative to the graph hypersurface ``H``.

    Raises :class:`FocalPointError` when the Jacobian determinant of the
    normal exponential map changes sign along a sampled ray, and
    :class:`GeometryError` when ``p`` is not on ``H``.
    """
    p = np.asarray(p, dtype=float)
    yp = H.base(p[None])[0]
    if abs(p[H.hidx] - H.f_values(yp[None])[0]) > 1e-8:
        raise GeometryError("p is not on the hypersurface")
    fc = FermiChart(chart, H, None, steps)

    def pulled_back(z):
        z = np.asarray(z, dtype=float)
        shape = z.shape
        zb = z.reshape(-1, shape[-1])
        J = jacobian(fc.from_fermi, zb, 1e-5)
        g = chart.metric(fc.from_fermi(zb))
        gt = np.einsum("kia,kij,kjb->kab", J, g, J)
        return gt.reshape(shape[:-1] + (shape[-1],) * 2)

    zp = np.empty(chart.dim)
    zp[H.hidx] = 0.0
    zp[H.base_indices] = yp
    # focal detection along rays over a grid of feet
    n = chart.dim - 1
    offsets = np.stack(np.meshgrid(*[np.linspace(-0.5, 0.5, rays)] * n), -1).reshape(-1, n) * radius
    feet = yp + offsets
    if H.chart.half_space and 0 in H.base_indices:
        feet[:, H.base_indices.index(0)] = np.maximum(feet[:, H.base_indices.index(0)], 0.0)
    ds = np.linspace(-radius, radius, 9)
    Z = np.zeros((len(feet), len(ds), chart.dim))
    Z[:, :, H.hidx] = ds[None, :]
    Z[:, :, H.base_indices] = feet[:, None, :]
    dets = np.linalg.det(jacobian(fc.from_fermi, Z.reshape(-1, chart.dim), 1e-5)).reshape(len(feet), len(ds))
    signs = np.sign(dets)
    if np.any(signs != signs[:, [len(ds) // 2]]):
        raise FocalPointError("normal exponential map Jacobian changes sign: radius too large")
    fc.chart = MetricChart(
        chart.dim,
        zp - radius,
        zp + radius,
        pulled_back,
        half_space=chart.half_space and H.hidx == 0,
        fd_step=chart.fd_step,
        halo=chart.halo,
    )
    return fc
