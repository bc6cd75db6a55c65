"""Barrier surface and the cutoff test field built on its foliation.

The barrier ``S'`` is the graph of the cubic
``u = a2 x1^2 / 2 + (a3 - eps) x1^3 / 6`` whose x1-jet at the corner point
matches the domain's face up to second order and stays below it at third
order. The test field ``X = phi(s) nu`` is built on the orthogonal
foliation by translates of ``S'``; the bilinear form
``Q(u, v) = <nabla_u X, v>`` is assembled in the adapted frame from
curvature ingredients and cross-checked against a direct finite difference.
Rows of Q are indexed by its first argument.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .expr import parse
from .foliation import FoliationError, OrthogonalFoliation, psi
from .geometry import GeometryError, boundary_normal, covariant_derivative
from .surfaces import GraphHypersurface, NumericalError, ProperSubdomain


class BarrierError(GeometryError):
    pass


class ConfigurationError(ValueError):
    pass


# -- cutoff -------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffProfile:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def _phi_ext(eps: float, s) -> np.ndarray:
    """``exp(1/(s - eps))`` below eps, 0 above; also defined for s < 0."""
    s = np.asarray(s, dtype=float)
    inside = s < eps
    out = np.zeros(s.shape)
    out[inside] = np.exp(1.0 / (s[inside] - eps))
    return out


def _phi_prime_ext(eps: float, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inside = s < eps
    out = np.zeros(s.shape)
    si = s[inside]
    out[inside] = -np.exp(1.0 / (si - eps)) / (si - eps) ** 2
    return out


def _check_nonnegative(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("cutoff is only defined for s >= 0")
    return s


def phi(c: CutoffProfile, s):
    s = _check_nonnegative(s)
    out = _phi_ext(c.epsilon, s)
    return float(out) if out.ndim == 0 else out


def phi_prime(c: CutoffProfile, s):
    s = _check_nonnegative(s)
    out = _phi_prime_ext(c.epsilon, s)
    return float(out) if out.ndim == 0 else out


# -- barrier surface ------------------------------------------------------------


def jet_coefficients(S: GraphHypersurface, h: float = 5e-3) -> tuple[float, float]:
    """Second and third x1-derivatives of f at the base origin.

    Five-point one-sided stencils into ``x1 >= 0``.
    """
    y = np.zeros((5, S.n))
    y[:, 0] = h * np.arange(5)
    v = S.f_values(y)
    a2 = (35 * v[0] - 104 * v[1] + 114 * v[2] - 56 * v[3] + 11 * v[4]) / (12 * h * h)
    a3 = (-5 * v[0] + 18 * v[1] - 24 * v[2] + 14 * v[3] - 3 * v[4]) / (2 * h**3)
    return float(a2), float(a3)


@dataclass(eq=False)
class BarrierSurface:
    a2: float
    a3: float
    epsilon: float
    graph: GraphHypersurface

    @property
    def source(self) -> str:
        return self.graph.f.source

    def u(self, y) -> np.ndarray:
        x1 = np.asarray(y, dtype=float)[..., 0]
        return x1**2 / 2 * self.a2 + x1**3 / 6 * (self.a3 - self.epsilon)


@dataclass
class TouchingReport:
    min_gap: float
    argmin: np.ndarray
    boundary_min: float
    zero_set_radius: float
    tangential_hessian: np.ndarray  # of f at the origin, for the record
    ok: bool


def barrier_expression(a2: float, a3: float, eps: float) -> str:
    return f"x1^2 * {a2 / 2!r} + x1^3 * {(a3 - eps) / 6!r}"


def build_barrier(
    D: ProperSubdomain,
    epsilon: float,
    grid: int = 121,
    tol: float = 1e-8,
    zero_tol: float = 1e-10,
) -> tuple[BarrierSurface, TouchingReport]:
    """Cubic barrier for the face S of D and its touching report.

    The report samples ``f - u`` on a grid of the half-ball of radius r0/2.
    Raises :class:`BarrierError` with a witness point if ``f - u < -tol``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    S = D.S
    a2, a3 = jet_coefficients(S)
    src = barrier_expression(a2, a3, epsilon)
    graph = GraphHypersurface(S.chart, parse(src, S.n), S.r0, S.orientation, S.height_index, S.fd_step)
    B = BarrierSurface(a2, a3, epsilon, graph)

    r = S.r0 / 2
    n = S.n
    if n == 1:
        ys = np.linspace(0, r, grid)[:, None]
    else:
        axes = [np.linspace(0, r, (grid + 1) // 2)] + [np.linspace(-r, r, grid)] * (n - 1)
        if n > 3:
            axes = [np.linspace(a[0], a[-1], 15) for a in axes]
        ys = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    ys = ys[S.in_half_ball(ys)]
    gap = S.orientation * (S.f_values(ys) - B.u(ys))
    i = int(np.argmin(gap))
    if gap[i] < -tol:
        raise BarrierError(f"barrier crosses the face at {ys[i].tolist()} (gap {gap[i]:.3e})")
    on_bd = ys[:, 0] == 0
    bmin = float(np.min(gap[on_bd])) if np.any(on_bd) else math.nan
    zeros = ys[np.abs(gap) < zero_tol]
    zr = float(np.max(np.linalg.norm(zeros, axis=1))) if len(zeros) else 0.0
    if n > 1:
        hess = S.hess_f(np.zeros((1, n)))[0][1:, 1:]
    else:
        hess = np.zeros((0, 0))
    rep = TouchingReport(float(gap[i]), ys[i], bmin, zr, hess, bool(zr <= 1e-3))
    return B, rep


# -- test field and Q ---------------------------------------------------------


def test_field(F: OrthogonalFoliation, c: CutoffProfile, q) -> np.ndarray:
    """``X = phi(s) nu``; zero where ``s >= eps``."""
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    qb = q[None] if single else q
    s = F.s(qb)
    live = s < c.epsilon
    if np.any(live & ~F.in_neighborhood(qb)):
        raise ConfigurationError("cutoff support leaves the foliated neighborhood; enlarge delta or shrink epsilon")
    X = np.zeros(qb.shape)
    if np.any(live):
        X[live] = _phi_ext(c.epsilon, s[live])[:, None] * F.nu(qb[live])
    return X[0] if single else X


test_field.__test__ = False  # keep pytest from collecting it on import


def _field_unchecked(F, eps):
    def X(x):
        return _phi_ext(eps, F.s(x))[:, None] * F.nu(x)

    return X


@dataclass
class QForm:
    point: np.ndarray
    frame: np.ndarray  # rows e_1 .. e_{n+1}
    matrix: np.ndarray
    phi: float
    phi_prime: float
    psi: float
    AS: np.ndarray  # <A^S e_i, e_j>, i, j = 1..n
    AT: np.ndarray  # <A^T e_i, e_j>, i, j = 2..n+1
    nabla_nu_nu: np.ndarray  # <nabla_nu nu, e_j>, j = 1..n
    direct: np.ndarray | None = field(default=None, repr=False)
    mismatch: float = math.nan


def assemble_q(phi_v, phi_p, psi_v, AS, AT, nnu) -> np.ndarray:
    """Batched block assembly; inputs carry a leading sample axis."""
    k, n, _ = AS.shape
    Q = np.zeros((k, n + 1, n + 1))
    f = phi_v[:, None, None]
    Q[:, :n, :n] = -f * AS
    # couplings with e_1, rewritten through the frame identity
    Q[:, 0, 1:n] = phi_v[:, None] * AT[:, n - 1, : n - 1]
    Q[:, 1:n, 0] = phi_v[:, None] * AT[:, : n - 1, n - 1]
    Q[:, n, 0] = phi_v * AT[:, n - 1, n - 1]
    Q[:, n, 1:n] = phi_v[:, None] * nnu[:, 1:]
    Q[:, n, n] = phi_p * psi_v
    return Q


def direct_q(F: OrthogonalFoliation, c: CutoffProfile, q, E, h=None) -> np.ndarray:
    """``<nabla_{e_i} X, e_j>`` by central differences of the field."""
    k, d = q.shape
    s = F.s(q)
    if h is None:
        h = np.minimum(F.fd_step, 0.02 * np.maximum(c.epsilon - s, 0.0) ** 2)
        h = np.maximum(h, 1e-7)
    X = _field_unchecked(F, c.epsilon)
    X0 = X(q)
    g = F.chart.metric(q)
    out = np.empty((k, d, d))
    for i in range(d):
        cov = covariant_derivative(F.chart, X, E[:, i], q, h=h, X0=X0)
        out[:, i] = np.einsum("ka,kab,kjb->kj", cov, g, E)
    return out


def q_forms(F: OrthogonalFoliation, c: CutoffProfile, q, check: bool = True, tol: float = 5e-3) -> list[QForm]:
    """Q in the adapted frame at every row of q (batched)."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    s = F.s(q)
    if np.any(s >= c.epsilon):
        raise ConfigurationError("q_form requested outside the support of X")
    if np.any(~F.in_neighborhood(q)):
        raise ConfigurationError("point outside the foliated neighborhood")
    E = F.frame(q)
    AS = F.shape_matrix_S(q, E)
    AT = F.shape_matrix_T(q, E)
    g = F.chart.metric(q)
    nnu = np.einsum("ka,kab,kjb->kj", F.nabla_nu_nu(q), g, E[:, : F.n])
    ps = psi(F, q, max_residual=np.inf).value
    fv = _phi_ext(c.epsilon, s)
    fp = _phi_prime_ext(c.epsilon, s)
    Q = assemble_q(fv, fp, ps, AS, AT, nnu)
    forms = [QForm(q[i], E[i], Q[i], float(fv[i]), float(fp[i]), float(ps[i]), AS[i], AT[i], nnu[i]) for i in range(len(q))]
    if check:
        Qd = direct_q(F, c, q, E)
        scale = np.maximum(fv, np.max(np.abs(Q), axis=(1, 2)))
        mis = np.max(np.abs(Q - Qd), axis=(1, 2)) / scale
        for i, fm in enumerate(forms):
            fm.direct, fm.mismatch = Qd[i], float(mis[i])
        bad = np.flatnonzero(mis > tol)
        if len(bad):
            i = bad[0]
            diff = np.array2string(Q[i] - Qd[i], precision=3)
            raise NumericalError(f"assembled Q differs from direct Q at {q[i].tolist()} by {mis[i]:.2e}:\n{diff}")
    return forms


def q_form(F: OrthogonalFoliation, c: CutoffProfile, q, check: bool = True) -> QForm:
    return q_forms(F, c, np.asarray(q, dtype=float)[None], check)[0]


# -- trace extremes -----------------------------------------------------------


def extreme_trace_m(Q, m: int) -> tuple[float, float]:
    """Min and max of ``tr_P Q`` over m-dimensional subspaces P."""
    Q = np.asarray(Q, dtype=float)
    size = Q.shape[-1]
    if not 1 <= m <= size:
        raise ValueError(f"m must lie in 1..{size}")
    try:
        ev = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigensolver failed") from exc
    if m == size:
        t = float(np.trace(Q))
        return t, t
    return float(math.fsum(ev[:m])), float(math.fsum(ev[-m:]))


def sample_planes(rng, size: int, m: int, count: int) -> np.ndarray:
    """Orthonormal m-frames, uniform on the Grassmannian; shape (count, m, size)."""
    A = rng.standard_normal((count, size, m))
    Qm, R = np.linalg.qr(A)
    Qm = Qm * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]
    return np.swapaxes(Qm, 1, 2)


def plane_traces(Q, frames) -> np.ndarray:
    S = 0.5 * (Q + Q.T)
    return np.einsum("kai,ij,kaj->k", frames, S, frames)


# -- K and the calculus lemma -------------------------------------------------


@dataclass
class KEstimate:
    K: float
    psi_min: float
    parts: dict


def estimate_K(F: OrthogonalFoliation, q) -> KEstimate:
    """Largest sampled norm of A^S, A^T and <nabla_nu nu, e_j>; needs psi >= 1/2."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if np.any(~F.in_neighborhood(q)):
        raise ConfigurationError("sample region leaves the foliated neighborhood")
    ps = psi(F, q, max_residual=np.inf).value
    if np.min(ps) < 0.5:
        raise FoliationError(f"psi drops to {np.min(ps):.3f} < 1/2; region too large")
    E = F.frame(q)
    AS = F.shape_matrix_S(q, E)
    AT = F.shape_matrix_T(q, E)
    g = F.chart.metric(q)
    nnu = np.einsum("ka,kab,kjb->kj", F.nabla_nu_nu(q), g, E[:, : F.n])
    parts = {
        "A_S": float(np.max(np.linalg.norm(AS, 2, axis=(1, 2)))),
        "A_T": float(np.max(np.linalg.norm(AT, 2, axis=(1, 2)))),
        "nabla_nu_nu": float(np.max(np.linalg.norm(nnu, axis=1))),
    }
    return KEstimate(max(parts.values()), float(np.min(ps)), parts)


@dataclass(frozen=True)
class Lemma34Profile:
    K: float
    n: int
    epsilon: float

    def F(self, theta):
        th = np.asarray(theta, dtype=float)
        sn, cs = np.sin(th), np.cos(th)
        out = (self.K - 0.5 / self.epsilon**2) * sn * sn + math.sqrt(self.n) * self.K * np.abs(sn * cs)
        out = np.where((th == 0) | (th == math.pi), 0.0, out)
        return float(out) if out.ndim == 0 else out

    @property
    def theta0(self) -> float:
        a = self.K - 0.5 / self.epsilon**2
        return 0.5 * math.atan2(math.sqrt(self.n) * self.K, -a)


def lemma34_max(K: float, n: int, epsilon: float) -> tuple[float, float]:
    """Closed-form ``(theta*, max F)`` over ``[0, pi]``."""
    if K < 0 or n < 1 or not epsilon > 0:
        raise ValueError("need K >= 0, n >= 1, epsilon > 0")
    if K == 0:
        return 0.0, 0.0
    if epsilon >= 1 / math.sqrt(2 * K):
        raise ValueError(f"epsilon must be below 1/sqrt(2K) = {1 / math.sqrt(2 * K):.6g}")
    a = K - 0.5 / epsilon**2
    b = math.sqrt(n) * K
    theta = 0.5 * math.atan2(b, -a)
    # b^2 / (2 (r - a)) avoids cancellation since a < 0
    return theta, b * b / (2 * (math.hypot(a, b) - a))


# -- trace sign over the support ----------------------------------------------


@dataclass
class Lemma33Report:
    m: int
    epsilon: float
    verdict: bool
    worst_trace: float
    worst_point: np.ndarray
    maxima: np.ndarray
    decomposition: dict
    epsilon_flag: str | None = None

    def summary(self) -> dict:
        return {
            "m": self.m,
            "epsilon": self.epsilon,
            "verdict": self.verdict,
            "worst_trace": self.worst_trace,
            "worst_point": self.worst_point.tolist(),
            "samples": int(len(self.maxima)),
            "decomposition": self.decomposition,
            "epsilon_flag": self.epsilon_flag,
        }


def _decompose(form: QForm, m: int) -> dict:
    """Split the worst plane trace into the terms of the proof's estimate."""
    Q = form.matrix
    n = len(Q) - 1
    S = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(S)
    P = V[:, -m:]
    Pr = P @ P.T
    tangential = float(np.trace(Pr[1:n, 1:n] @ S[1:n, 1:n]) + Pr[0, 0] * S[0, 0])
    normal = float(Pr[n, n] * S[n, n])
    total = float(np.trace(Pr @ S))
    return {
        "curvature_term": tangential,
        "normal_term": normal,
        "coupling_term": total - tangential - normal,
        "total": total,
        "phi": form.phi,
        "phi_prime_psi": form.phi_prime * form.psi,
    }


CHUNK = 16  # fixed batch size, so results never depend on the thread count


def compute_q_forms(F, c, q, threads: int = 1, check: bool = True) -> list[QForm]:
    """``q_forms`` over fixed-size chunks, reassembled in input order."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    chunks = [slice(i, i + CHUNK) for i in range(0, len(q), CHUNK)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda sl: q_forms(F, c, q[sl], check), chunks))
    else:
        parts = [q_forms(F, c, q[sl], check) for sl in chunks]
    return [f for p in parts for f in p]


def lemma33_from_forms(forms: list[QForm], m: int, epsilon: float, K: float | None = None) -> Lemma33Report:
    maxima = np.array([extreme_trace_m(f.matrix, m)[1] for f in forms])
    i = int(np.argmax(maxima))
    verdict = bool(np.all(maxima < 0))
    flag = None
    if not verdict and K is not None and K > 0 and epsilon >= 1 / math.sqrt(2 * K):
        flag = "epsilon above the 1/sqrt(2K) threshold"
    elif not verdict and K is not None and K > 0:
        flag = "epsilon may be too large"
    return Lemma33Report(m, epsilon, verdict, float(maxima[i]), forms[i].point, maxima, _decompose(forms[i], m), flag)


def verify_lemma33(F, c: CutoffProfile, m: int, q, threads: int = 1, K: float | None = None) -> Lemma33Report:
    """Sign of the largest m-plane trace of Q over sample points in supp X."""
    if not 1 <= m <= F.n:
        raise ValueError(f"m must lie in 1..{F.n}")
    forms = compute_q_forms(F, c, q, threads)
    return lemma33_from_forms(forms, m, c.epsilon, K)


def boundary_field_tangency(F: OrthogonalFoliation, c: CutoffProfile, q) -> np.ndarray:
    """``|<X, nu_{dN*}>|`` at points of ``{x1 = 0}``."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    X = test_field(F, c, q)
    return np.abs(F.chart.inner(q, X, boundary_normal(F.chart, q)))
