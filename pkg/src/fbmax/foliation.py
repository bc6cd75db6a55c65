"""Orthogonal double foliations near a corner point.

The leaves ``S_s`` are the translated graphs ``x_h = f + s``; ``nu`` is their
unit normal field. The transverse leaves ``T_t`` are unions of integral
curves of ``nu`` through the intrinsic parallel sets ``Gamma_t`` of the base
surface, i.e. the points of the base at intrinsic distance ``t`` from its
boundary ``S & {x1 = 0}``.

``t`` is evaluated by flowing a point back along ``nu`` to the base and then
inverting the in-surface normal exponential map of the boundary (geodesic
shooting plus Newton). Every step uses a fixed number of RK4 steps so the
resulting function of position is smooth and can be differenced again.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    GeometryError,
    MetricChart,
    batch_orthonormalize,
    boundary_normal,
    christoffel,
    covariant_derivative,
)
from .surfaces import GraphHypersurface, ProperSubdomain, check_orthogonality


class FoliationError(GeometryError):
    pass


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


@dataclass
class PsiResult:
    value: np.ndarray
    residual: np.ndarray


@dataclass
class AdaptedFrame:
    point: np.ndarray
    vectors: np.ndarray  # rows e_1 .. e_{n+1}

    @property
    def normal(self):
        return self.vectors[..., -1, :]


@dataclass(eq=False)
class OrthogonalFoliation:
    domain: ProperSubdomain
    base: GraphHypersurface
    p: np.ndarray
    delta: float
    fd_step: float = 5e-3
    flow_steps: int = 16
    shoot_steps: int = 8
    slack: float = 0.02

    @property
    def chart(self) -> MetricChart:
        return self.base.chart

    @property
    def n(self) -> int:
        return self.base.n

    # -- leaves ---------------------------------------------------------------

    def in_neighborhood(self, q, tol: float | None = None) -> np.ndarray:
        tol = self.slack if tol is None else tol
        q = np.asarray(q, dtype=float)
        s = self.s(q)
        return self.base.in_half_ball(self.base.base(q), tol) & (np.abs(s) < self.delta + tol)

    def s(self, q) -> np.ndarray:
        return self.base.orientation * self.base.leaf_value(q)

    def nu(self, q) -> np.ndarray:
        return self.base.normal_at(q)

    def _flow_rhs(self, t, x):
        w = self.base.orientation * self.base.level_covector(x)
        v = np.linalg.solve(self.chart.metric(x), w[..., None])[..., 0]
        return v / np.einsum("ki,ki->k", w, v)[:, None]

    def foot(self, q) -> np.ndarray:
        """Follow the nu integral curve from q to the base leaf ``s = 0``.

        Integrates ``dx/ds = grad s / |grad s|^2`` from ``s(q)`` down to 0.
        """
        x = np.array(q, dtype=float)
        s = self.s(x)
        dt = (-s / self.flow_steps)[:, None]
        rhs = self._flow_rhs
        for _ in range(self.flow_steps):
            k1 = rhs(0, x)
            k2 = rhs(0, x + dt / 2 * k1)
            k3 = rhs(0, x + dt / 2 * k2)
            k4 = rhs(0, x + dt * k3)
            x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    # -- intrinsic geometry of the base --------------------------------------

    def induced_metric(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        T = self.base.tangents(y)
        g = self.chart.metric(self.base.embed(y))
        return T @ g @ np.swapaxes(T, -1, -2)

    def _induced_christoffel(self, y):
        """Gauss formula: ``Gamma_ab^c = h^cd <d_a d_b F + Gamma(T_a, T_b), T_d>``."""
        k, n = y.shape
        S = self.base
        T = S.tangents(y)
        x = S.embed(y)
        g = self.chart.metric(x)
        Tg = T @ g  # (k, n, d)
        hinv = np.linalg.inv(Tg @ np.swapaxes(T, 1, 2))
        # second derivatives of the embedding only live in the height slot
        acc = np.zeros((k, n, n, self.chart.dim))
        acc[..., S.hidx] = S.hess_f(y)
        if not self.chart.flat:
            gam = christoffel(self.chart, x)
            Tt = np.swapaxes(T, 1, 2)[:, None]
            amb = T[:, None] @ (gam @ Tt)  # (k, c, a, b)
            acc += np.moveaxis(amb, 1, 3)
        first = acc.reshape(k, n * n, -1) @ np.swapaxes(Tg, 1, 2)  # (k, ab, d)
        out = first @ np.swapaxes(hinv, 1, 2)  # (k, ab, c)
        return np.moveaxis(out.reshape(k, n, n, n), 3, 1), hinv

    def _shoot(self, z):
        """In-surface geodesic from the boundary point ``(0, b)`` along the
        inward unit conormal for intrinsic time ``t``; ``z = (t, b)``."""
        k = len(z)
        n = self.n
        t = z[:, 0]
        y = np.zeros((k, n))
        y[:, 1:] = z[:, 1:]
        _, hinv = self._induced_christoffel(y)
        w = hinv[:, :, 0] / np.sqrt(hinv[:, 0, 0])[:, None]
        state = np.concatenate([y, w], axis=1)
        dt = (t / self.shoot_steps)[:, None]

        def rhs(st):
            gam, _ = self._induced_christoffel(st[:, :n])
            v = st[:, n:]
            vv = (v[:, :, None] * v[:, None, :]).reshape(len(v), n * n, 1)
            acc = (gam.reshape(len(v), n, n * n) @ vv)[..., 0]
            return np.concatenate([v, -acc], axis=1)

        for _ in range(self.shoot_steps):
            k1 = rhs(state)
            k2 = rhs(state + dt / 2 * k1)
            k3 = rhs(state + dt / 2 * k2)
            k4 = rhs(state + dt * k3)
            state = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return state[:, :n]

    def intrinsic_coordinates(self, y0, tol: float = 1e-13, max_iter: int = 12) -> np.ndarray:
        """Invert the boundary's in-surface normal exponential map at base
        points ``y0``: returns ``(t, b)`` rows with t the intrinsic distance.

        Chord-Newton iteration: the central-difference Jacobian is formed in
        the same batched shooting call as the residual, and only refreshed
        when the contraction is poor.
        """
        y0 = np.asarray(y0, dtype=float)
        k, n = y0.shape
        hinv = np.linalg.inv(self.induced_metric(np.concatenate([np.zeros((k, 1)), y0[:, 1:]], axis=1)))
        z = np.concatenate([(y0[:, 0] / np.sqrt(hinv[:, 0, 0]))[:, None], y0[:, 1:]], axis=1)
        eps = 1e-6
        dz = np.concatenate([eps * np.eye(n), -eps * np.eye(n)])
        err = np.inf
        J = None
        for _ in range(max_iter):
            if J is None:
                batch = np.concatenate([z[None], z[None] + dz[:, None]]).reshape(-1, n)
                out = self._shoot(batch).reshape(2 * n + 1, k, n)
                J = np.stack([(out[1 + j] - out[1 + n + j]) / (2 * eps) for j in range(n)], axis=-1)
                r = out[0] - y0
            else:
                r = self._shoot(z) - y0
            prev, err = err, (np.max(np.abs(r)) if k else 0.0)
            if err < tol or err >= prev:
                break
            if err > 0.05 * prev and np.isfinite(prev):
                J, err = None, np.inf
                continue
            z = z - np.linalg.solve(J, r[..., None])[..., 0]
        if err > 1e-9:
            raise FoliationError(f"intrinsic distance inversion stalled at {err:.2e}")
        return z

    def t(self, q) -> np.ndarray:
        """Index of the transverse leaf ``T_t`` through q."""
        q = np.asarray(q, dtype=float)
        foot = self.foot(q)
        return self.intrinsic_coordinates(self.base.base(foot))[:, 0]

    # -- gradients and frames -------------------------------------------------

    def _stencil(self, q):
        k, d = q.shape
        h = self.fd_step
        eye = np.eye(d) * h
        return (q[:, None, :] + np.concatenate([eye, -eye])[None]).reshape(-1, d)

    def _gradient_from_values(self, q, vals):
        k, d = q.shape
        vals = vals.reshape(k, 2, d)
        dv = (vals[:, 0] - vals[:, 1]) / (2 * self.fd_step)
        return np.linalg.solve(self.chart.metric(q), dv[..., None])[..., 0]

    def grad_t(self, q) -> np.ndarray:
        return self._gradient_from_values(q, self.t(self._stencil(q)))

    def grad_s(self, q) -> np.ndarray:
        return self._gradient_from_values(q, self.s(self._stencil(q)))

    def e1(self, q) -> np.ndarray:
        """Unit normal of ``S_s & T_t`` inside ``S_s`` (direction of grad t)."""
        q = np.asarray(q, dtype=float)
        g = self.chart.metric(q)
        nu = self.nu(q)
        v = self.grad_t(q)
        v = v - np.einsum("ki,kij,kj->k", v, g, nu)[:, None] * nu
        return v / np.sqrt(np.einsum("ki,kij,kj->k", v, g, v))[:, None]

    def frame(self, q, e1=None) -> np.ndarray:
        """Rows ``e_1 .. e_{n+1}``; ``e_{n+1} = nu``."""
        q = np.asarray(q, dtype=float)
        k, d = q.shape
        nu = self.nu(q)
        e1 = self.e1(q) if e1 is None else e1
        T = self.base.tangents(self.base.base(q))
        stack = np.concatenate([nu[:, None], e1[:, None], T[:, 1:]], axis=1)
        E = batch_orthonormalize(self.chart.metric(q), stack)
        return np.concatenate([E[:, 1:], E[:, :1]], axis=1)

    def shape_matrix_S(self, q, E) -> np.ndarray:
        """``<A^{S_s}(e_i), e_j>`` for i, j = 1..n."""
        y = self.base.base(q)
        s = self.s(q) * self.base.orientation
        B = self.base.shape_form(y, s)[0]
        B = 0.5 * (B + np.swapaxes(B, 1, 2))
        C = E[:, : self.n][..., self.base.base_indices]
        return np.einsum("kia,kab,kjb->kij", C, B, C)

    def shape_matrix_T(self, q, E) -> np.ndarray:
        """``<A^{T_t}(e_i), e_j> = <-nabla_{e_i} e_1, e_j>`` for i, j = 2..n+1."""
        k = len(q)
        g = self.chart.metric(q)
        dirs = E[:, 1:]
        out = np.empty((k, self.n, self.n))
        e1 = E[:, 0]
        for a in range(self.n):
            cov = covariant_derivative(self.chart, self.e1, dirs[:, a], q, h=self.fd_step, X0=e1)
            out[:, a] = -np.einsum("ki,kij,kbj->kb", cov, g, dirs)
        return out

    def nabla_nu_nu(self, q) -> np.ndarray:
        nu = self.nu(q)
        return covariant_derivative(self.chart, self.nu, nu, q, h=self.fd_step, X0=nu)


def build_foliation(
    D: ProperSubdomain,
    base: GraphHypersurface,
    p,
    delta: float | None = None,
    tau_orth: float = 1e-3,
    fd_step: float = 5e-3,
    samples: int = 9,
) -> OrthogonalFoliation:
    """Foliation by translates of ``base`` with the transverse nu-flow leaves.

    Fails if ``base`` does not meet ``{x1 = 0}`` orthogonally or if leaves
    ``|s| <= delta`` over the half-ball leave the chart.
    """
    if delta is None:
        delta = 0.1 * base.r0
    sub = ProperSubdomain(D.chart, base, D.m)
    resid = check_orthogonality(sub)
    if resid > tau_orth:
        raise FoliationError(f"base surface not orthogonal to the boundary (residual {resid:.2e})")
    F = OrthogonalFoliation(D, base, np.asarray(p, float), float(delta), fd_step)
    n = base.n
    grid = np.linspace(-base.r0, base.r0, samples)
    ys = np.stack(np.meshgrid(*[grid] * n), -1).reshape(-1, n)
    ys = ys[base.in_half_ball(ys)]
    for s in (-delta, delta):
        pts = base.embed(ys, s * base.orientation)
        if not np.all(D.chart.contains(pts, tol=1e-12) | ~D.chart.contains(base.embed(ys), tol=1e-12)):
            raise FoliationError(f"leaf s={s:+g} leaves the chart; reduce delta")
    return F


def leaf_s(F: OrthogonalFoliation, q, check: bool = True):
    qb, single = _batch(q)
    if check and not np.all(F.in_neighborhood(qb)):
        raise FoliationError("point outside the foliated neighborhood")
    s = F.s(qb)
    return float(s[0]) if single else s


def normal_field(F: OrthogonalFoliation, q) -> np.ndarray:
    qb, single = _batch(q)
    nu = F.nu(qb)
    return nu[0] if single else nu


def psi(F: OrthogonalFoliation, q, max_residual: float = 1e-3) -> PsiResult:
    """``psi = <grad s, nu>`` with grad s from central differences of s."""
    qb, single = _batch(q)
    gs = F.grad_s(qb)
    nu = F.nu(qb)
    val = F.chart.inner(qb, gs, nu)
    rvec = gs - val[:, None] * nu
    res = F.chart.norm(qb, rvec)
    if np.any(res > max_residual):
        raise FoliationError(f"grad s not parallel to nu (residual {res.max():.2e})")
    return PsiResult(val[0], res[0]) if single else PsiResult(val, res)


def adapted_frame(F: OrthogonalFoliation, q) -> AdaptedFrame:
    qb, single = _batch(q)
    E = F.frame(qb)
    if single:
        return AdaptedFrame(qb[0], E[0])
    return AdaptedFrame(qb, E)


def frame_identity_residuals(F: OrthogonalFoliation, q) -> np.ndarray:
    """``|<A^S e_1, e_i> + <A^T e_i, e_{n+1}>|`` for i = 2..n, shape (k, n-1)."""
    qb, _ = _batch(q)
    E = F.frame(qb)
    AS = F.shape_matrix_S(qb, E)
    AT = F.shape_matrix_T(qb, E)
    n = F.n
    # AT rows/cols index e_2..e_{n+1}; e_{n+1} is the last slot
    return np.abs(AS[:, 0, 1:] + AT[:, : n - 1, n - 1])


def frame_identity_residual(F: OrthogonalFoliation, q, i: int) -> float:
    if not 2 <= i <= F.n:
        raise ValueError(f"i must lie in 2..{F.n}")
    return float(frame_identity_residuals(F, np.asarray(q, float)[None])[0, i - 2])


def boundary_tangency(F: OrthogonalFoliation, q) -> np.ndarray:
    """``|<nu, nu_{dN*}>|`` at points of ``{x1 = 0}``."""
    qb, _ = _batch(q)
    return np.abs(F.chart.inner(qb, F.nu(qb), boundary_normal(F.chart, qb)))
