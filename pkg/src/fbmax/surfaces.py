"""Graph hypersurfaces with their second fundamental forms; proper sub-domains."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import Expression, parse
from .geometry import GeometryError, MetricChart, batch_orthonormalize, boundary_normal, christoffel


class NumericalError(RuntimeError):
    pass


@dataclass(eq=False)
class GraphHypersurface:
    """The graph ``x_h = f(base coords)`` over the half-ball of radius ``r0``.

    ``height_index`` is 1-based. ``orientation = +1`` selects the unit normal
    pointing into ``{x_h >= f}``. Derivatives of ``f`` use fourth-order
    central stencils of step ``fd_step``; the stencils may reach across
    ``x1 = 0`` through the analytic extension of ``f``.
    """

    chart: MetricChart
    f: Expression | str
    r0: float
    orientation: int = 1
    height_index: int | None = None
    fd_step: float = 1e-3
    _fn: object = field(default=None, repr=False)

    def __post_init__(self):
        d = self.chart.dim
        if self.height_index is None:
            self.height_index = d
        if not 1 <= self.height_index <= d:
            raise GeometryError("height_index out of range")
        if isinstance(self.f, str):
            self.f = parse(self.f, d - 1)
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        self._fn = self.f.compile()

    # -- coordinates -----------------------------------------------------------

    @property
    def hidx(self) -> int:
        return self.height_index - 1

    @property
    def base_indices(self) -> list[int]:
        return [i for i in range(self.chart.dim) if i != self.hidx]

    @property
    def n(self) -> int:
        return self.chart.dim - 1

    @property
    def half(self) -> bool:
        """Whether the base ball is cut by ``x1 >= 0``."""
        return self.chart.half_space and self.hidx != 0

    def base(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[..., self.base_indices]

    def f_values(self, y) -> np.ndarray:
        return self._fn(np.asarray(y, dtype=float))

    def embed(self, y, s=0.0) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        x = np.empty(y.shape[:-1] + (self.chart.dim,))
        x[..., self.base_indices] = y
        x[..., self.hidx] = self.f_values(y) + s
        return x

    def in_half_ball(self, y, tol: float = 0.0) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        ok = np.sum(y * y, axis=-1) <= (self.r0 + tol) ** 2
        if self.half:
            ok &= y[..., 0] >= -tol
        return ok

    def leaf_value(self, x) -> np.ndarray:
        """``x_h - f(base x)``: which translate ``S_s`` passes through x."""
        x = np.asarray(x, dtype=float)
        return x[..., self.hidx] - self.f_values(self.base(x))

    def contains(self, x) -> np.ndarray:
        """Closed super-graph ``{x1 >= 0, x_h >= f}``."""
        x = np.asarray(x, dtype=float)
        ok = self.leaf_value(x) * self.orientation >= 0
        if self.chart.half_space:
            ok &= x[..., 0] >= 0
        return ok

    # -- first order ---------------------------------------------------------

    def grad_f(self, y) -> np.ndarray:
        """Fourth-order central gradient of f, shape (..., n)."""
        y = np.asarray(y, dtype=float)
        shape = y.shape
        yb = y.reshape(-1, shape[-1])
        k, n = yb.shape
        h = self.fd_step
        eye = np.eye(n) * h
        offs = np.concatenate([2 * eye, eye, -eye, -2 * eye])  # (4n, n)
        pts = (yb[:, None, :] + offs[None, :, :]).reshape(-1, n)
        v = self.f_values(pts).reshape(k, 4, n)
        grad = (-v[:, 0] + 8 * v[:, 1] - 8 * v[:, 2] + v[:, 3]) / (12 * h)
        return grad.reshape(shape)

    def hess_f(self, y, h: float | None = None) -> np.ndarray:
        """Fourth-order Hessian of f, shape (k, n, n).

        The default step is ten times ``fd_step`` so that rounding noise stays
        well below the (smooth) truncation error.
        """
        y = np.asarray(y, dtype=float)
        k, n = y.shape
        h = 10 * self.fd_step if h is None else h
        eye = np.eye(n)
        offs = [np.zeros(n)]
        for a in range(n):
            offs += [c * h * eye[a] for c in (2, 1, -1, -2)]
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
        for a, b in pairs:
            for c in (1, 2):
                offs += [c * h * (sa * eye[a] + sb * eye[b]) for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
        offs = np.array(offs)
        v = self.f_values((y[:, None, :] + offs[None]).reshape(-1, n)).reshape(k, len(offs))
        H = np.empty((k, n, n))
        f0 = v[:, 0]
        for a in range(n):
            p2, p1, m1, m2 = (v[:, 1 + 4 * a + j] for j in range(4))
            H[:, a, a] = (-p2 + 16 * p1 - 30 * f0 + 16 * m1 - m2) / (12 * h * h)
        base = 1 + 4 * n
        for idx, (a, b) in enumerate(pairs):
            w = v[:, base + 8 * idx : base + 8 * idx + 8]
            d1 = (w[:, 0] - w[:, 1] - w[:, 2] + w[:, 3]) / (4 * h * h)
            d2 = (w[:, 4] - w[:, 5] - w[:, 6] + w[:, 7]) / (16 * h * h)
            H[:, a, b] = H[:, b, a] = (4 * d1 - d2) / 3
        return H

    def tangents(self, y) -> np.ndarray:
        """Coordinate tangent vectors ``dF/dy_a`` as rows, shape (..., n, d)."""
        y = np.asarray(y, dtype=float)
        df = self.grad_f(y)
        T = np.zeros(y.shape[:-1] + (self.n, self.chart.dim))
        for a, i in enumerate(self.base_indices):
            T[..., a, i] = 1.0
            T[..., a, self.hidx] = df[..., a]
        return T

    def level_covector(self, x) -> np.ndarray:
        """Differential of the leaf function ``x_h - f`` at ambient points."""
        x = np.asarray(x, dtype=float)
        df = self.grad_f(self.base(x))
        w = np.zeros(x.shape)
        w[..., self.hidx] = 1.0
        w[..., self.base_indices] = -df
        return w

    def normal_at(self, x) -> np.ndarray:
        """Unit normal of the translated leaf through the ambient point x."""
        x = np.asarray(x, dtype=float)
        g = self.chart.metric(x)
        w = self.level_covector(x)
        v = np.linalg.solve(g, w[..., None])[..., 0]
        nrm = np.sqrt(np.einsum("...i,...i->...", w, v))
        return self.orientation * v / nrm[..., None]

    def unit_normal(self, y, s=0.0) -> np.ndarray:
        return self.normal_at(self.embed(y, s))

    # -- second order --------------------------------------------------------

    def shape_form(self, y, s=0.0):
        """``B[a, b] = <-nabla_{T_a} nu, T_b>`` on the leaf ``S_s`` at base y.

        Returns (B, T, x) with T the coordinate tangents and x the points.
        The derivative of nu along the surface is a fourth-order central
        difference in the base coordinates.
        """
        y = np.asarray(y, dtype=float)
        k, n = y.shape
        h = self.fd_step
        eye = np.eye(n) * h
        offs = np.concatenate([2 * eye, eye, -eye, -2 * eye])
        pts = (y[:, None, :] + offs[None]).reshape(-1, n)
        s = np.broadcast_to(np.asarray(s, dtype=float), (k,))
        nus = self.unit_normal(pts, np.repeat(s, 4 * n)).reshape(k, 4, n, -1)
        dnu = (-nus[:, 0] + 8 * nus[:, 1] - 8 * nus[:, 2] + nus[:, 3]) / (12 * h)  # (k, n, d)
        x = self.embed(y, s)
        T = self.tangents(y)
        nu = self.normal_at(x)
        gamma = christoffel(self.chart, x)
        cov = dnu + np.einsum("kcij,kai,kj->kac", gamma, T, nu)
        g = self.chart.metric(x)
        B = -np.einsum("kac,kcd,kbd->kab", cov, g, T)
        return B, T, x


@dataclass
class ShapeOperator:
    matrix: np.ndarray  # symmetrised, in the orthonormal basis
    asymmetry: np.ndarray
    basis: np.ndarray  # orthonormal tangent vectors as rows


def _as_base_batch(H, x):
    y = np.asarray(x, dtype=float)
    return (y[None], True) if y.ndim == 1 else (y, False)


def unit_normal(H: GraphHypersurface, x, tol: float = 1e-12) -> np.ndarray:
    """g-unit normal of H at base coordinates x, oriented by ``H.orientation``."""
    y, single = _as_base_batch(H, x)
    if not np.all(H.in_half_ball(y, tol)):
        raise GeometryError("point outside the half-ball")
    nu = H.unit_normal(y)
    return nu[0] if single else nu


def shape_operator(H: GraphHypersurface, x, s: float = 0.0, max_asymmetry: float = 1e-3) -> ShapeOperator:
    """Matrix of ``u -> tangential part of -nabla_u nu`` in an orthonormal basis."""
    y, single = _as_base_batch(H, x)
    B, T, pts = H.shape_form(y, s)
    g = H.chart.metric(pts)
    E = batch_orthonormalize(g, T)
    C = E[..., H.base_indices]  # E = C T since T has identity base block
    M = np.einsum("kab,kbc,kdc->kad", C, B, C)
    asym = np.max(np.abs(M - np.swapaxes(M, 1, 2)), axis=(1, 2))
    if np.any(asym > max_asymmetry):
        raise NumericalError(f"shape operator asymmetry {asym.max():.2e} above {max_asymmetry}")
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    if single:
        return ShapeOperator(M[0], asym[0], E[0])
    return ShapeOperator(M, asym, E)


def principal_curvatures(H: GraphHypersurface, x, s: float = 0.0) -> np.ndarray:
    return np.linalg.eigvalsh(shape_operator(H, x, s).matrix)


@dataclass
class ConvexityReport:
    point: np.ndarray
    curvatures: np.ndarray
    m: int
    margin: float
    verdict: bool


def strong_m_convexity(H: GraphHypersurface, x, m: int, tol: float = 1e-8) -> ConvexityReport:
    if not 1 <= m <= H.n:
        raise ValueError(f"m must lie in 1..{H.n}")
    kappa = np.sort(principal_curvatures(H, np.asarray(x, dtype=float)))
    margin = float(np.sum(kappa[:m]))
    return ConvexityReport(np.asarray(x, dtype=float), kappa, m, margin, bool(margin > tol))


@dataclass(eq=False)
class ProperSubdomain:
    """``N = {x1 >= 0} & {x_h >= f}`` with ``S`` the graph and ``T`` the face x1 = 0."""

    chart: MetricChart
    S: GraphHypersurface
    m: int = 1

    def __post_init__(self):
        if not self.S.half:
            raise GeometryError("sub-domain needs a half-space chart and a graph over x1")

    def corner(self, samples: int = 21) -> np.ndarray:
        """Points of ``S & T``: base coordinates with x1 = 0 inside the ball."""
        n = self.S.n
        r = self.S.r0
        if n == 1:
            y = np.zeros((1, 1))
        elif n == 2:
            y = np.zeros((samples, 2))
            y[:, 1] = np.linspace(-r, r, samples + 2)[1:-1]
        else:
            rng = np.random.default_rng(0)
            v = rng.normal(size=(samples, n - 1))
            v *= (r * rng.random(samples) ** (1 / (n - 1)) / np.linalg.norm(v, axis=1))[:, None]
            y = np.concatenate([np.zeros((samples, 1)), v], axis=1)
        return self.S.embed(y)

    def contains(self, x) -> np.ndarray:
        return self.S.contains(x)


def check_orthogonality(D: ProperSubdomain, samples: int = 21) -> float:
    """``max |<nu_S, nu_T>|`` over corner samples."""
    pts = D.corner(samples)
    if len(pts) == 0:
        raise GeometryError("empty corner")
    nu_s = D.S.normal_at(pts)
    nu_t = boundary_normal(D.chart, pts)
    return float(np.max(np.abs(D.chart.inner(pts, nu_s, nu_t))))


def contains(D: ProperSubdomain, x) -> bool | np.ndarray:
    out = D.contains(x)
    return bool(out) if np.ndim(out) == 0 else out
