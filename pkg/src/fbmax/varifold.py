"""Discrete varifolds and their first variation.

A :class:`DiscreteVarifold` is a finite list of weighted affine m-simplices
in chart coordinates. Its first variation along a field X is

    dV(X) = sum_j theta_j * integral over simplex j of div_P X dA_g,

with ``div_P X = sum_i <nabla_{e_i} X, e_i>`` over a g-orthonormal frame of
the simplex plane. Integrals use the fixed rules of :mod:`fbmax.quadrature`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .barrier import CutoffProfile, build_barrier, lemma33_from_forms, compute_q_forms, test_field
from .foliation import build_foliation
from .geometry import GeometryError, MetricChart, batch_orthonormalize, boundary_normal, covariant_derivative
from .numerics import rk4
from .quadrature import simplex_rule
from .surfaces import ProperSubdomain, check_orthogonality, strong_m_convexity

Field = Callable[[np.ndarray], np.ndarray]


class VarifoldError(GeometryError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, check: str, detail: str):
        super().__init__(f"{check}: {detail}")
        self.check = check


@dataclass(eq=False)
class DiscreteVarifold:
    chart: MetricChart
    m: int
    simplices: np.ndarray  # (S, m + 1, d) vertex coordinates
    weights: np.ndarray  # (S,) multiplicities

    def __post_init__(self):
        d = self.chart.dim
        self.simplices = np.asarray(self.simplices, dtype=float).reshape(-1, self.m + 1, d)
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=float), (len(self.simplices),)).copy()
        if not 1 <= self.m <= d:
            raise VarifoldError(f"m must lie in 1..{d}")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise VarifoldError("multiplicities must be finite and non-negative")
        if len(self.simplices) == 0:
            return
        vol = coordinate_volumes(self.simplices)
        if np.any(vol <= 1e-12):
            i = int(np.argmin(vol))
            raise VarifoldError(f"degenerate simplex {i} (volume {vol[i]:.2e})")
        pts = self.simplices.reshape(-1, d)
        if not np.all(self.chart.contains(pts, tol=1e-12)):
            raise VarifoldError("support leaves the chart")

    def __len__(self):
        return len(self.simplices)

    def union(self, other: "DiscreteVarifold") -> "DiscreteVarifold":
        if other.m != self.m or other.chart is not self.chart:
            raise VarifoldError("union needs the same chart and dimension")
        return DiscreteVarifold(
            self.chart,
            self.m,
            np.concatenate([self.simplices, other.simplices]),
            np.concatenate([self.weights, other.weights]),
        )

    def scaled(self, a: float) -> "DiscreteVarifold":
        return DiscreteVarifold(self.chart, self.m, self.simplices, a * self.weights)

    def vertices(self) -> np.ndarray:
        return self.simplices.reshape(-1, self.chart.dim)

    def nodes(self, order: int = 4):
        """Quadrature nodes (S, q, d), weights (q,) and area elements (S, q)."""
        bary, w = simplex_rule(self.m, order)
        x = np.einsum("qa,sad->sqd", bary, self.simplices)
        edges = self.simplices[:, 1:] - self.simplices[:, :1]  # (S, m, d)
        S, q = x.shape[:2]
        g = self.chart.metric(x.reshape(-1, self.chart.dim)).reshape(S, q, self.chart.dim, -1)
        gram = edges[:, None] @ g @ np.swapaxes(edges, 1, 2)[:, None]
        dA = np.sqrt(np.linalg.det(gram)) / math.factorial(self.m)
        return x, w, dA

    def mass(self, order: int = 4) -> float:
        if len(self) == 0:
            return 0.0
        _, w, dA = self.nodes(order)
        return math.fsum(self.weights * (dA @ w))


def coordinate_volumes(simplices: np.ndarray) -> np.ndarray:
    m = simplices.shape[1] - 1
    E = simplices[:, 1:] - simplices[:, :1]
    return np.sqrt(np.abs(np.linalg.det(E @ np.swapaxes(E, 1, 2)))) / math.factorial(m)


# -- generators -----------------------------------------------------------------


def disk_mesh(radius: float, rings: int, sectors: int, half: bool = False):
    """Polar triangulation of the unit-normalized 2-disk (or half-disk y1 >= 0).

    Returns (points (P, 2), triangles (T, 3) index array). Boundary vertices
    lie on the circle.
    """
    if half:
        ang = np.linspace(-np.pi / 2, np.pi / 2, sectors + 1)
    else:
        ang = np.linspace(0, 2 * np.pi, sectors, endpoint=False)
    na = len(ang)
    pts = [np.zeros((1, 2))]
    for r in np.arange(1, rings + 1) / rings:
        pts.append(radius * r * np.stack([np.cos(ang), np.sin(ang)], axis=1))
    pts = np.concatenate(pts)
    tris = []
    wrap = not half
    span = na if wrap else na - 1

    def idx(ring, j):
        return 1 + (ring - 1) * na + (j % na)

    for j in range(span):
        tris.append((0, idx(1, j), idx(1, j + 1)))
    for ring in range(1, rings):
        for j in range(span):
            a, b = idx(ring, j), idx(ring, j + 1)
            c, d = idx(ring + 1, j), idx(ring + 1, j + 1)
            tris += [(a, c, d), (a, d, b)]
    return pts, np.array(tris)


def disk_varifold(chart, center, basis, radius, rings=16, sectors=64, half=False, lift=None, weight=1.0):
    """Triangulated 2-disk ``center + y1 b1 + y2 b2`` (+ optional lift(y) along b3)."""
    pts, tris = disk_mesh(radius, rings, sectors, half)
    basis = np.asarray(basis, dtype=float)
    X = np.asarray(center, float) + pts @ basis[:2]
    if lift is not None:
        X = X + lift(pts)[:, None] * basis[2]
    return DiscreteVarifold(chart, 2, X[tris], weight)


def segment_varifold(chart, a, b, pieces=64, weight=1.0, points=None):
    """Polyline from a to b in ``pieces`` segments, or through given points."""
    if points is None:
        t = np.linspace(0, 1, pieces + 1)[:, None]
        points = (1 - t) * np.asarray(a, float) + t * np.asarray(b, float)
    points = np.asarray(points, dtype=float)
    segs = np.stack([points[:-1], points[1:]], axis=1)
    return DiscreteVarifold(chart, 1, segs, weight)


# -- differential pieces --------------------------------------------------------


def tangent_plane(chart: MetricChart, simplex, x) -> np.ndarray:
    """g(x)-orthonormal frame (rows) of the plane spanned by the simplex edges."""
    simplex = np.asarray(simplex, dtype=float)
    x = np.asarray(x, dtype=float)
    single = simplex.ndim == 2
    sb = simplex[None] if single else simplex
    xb = x[None] if x.ndim == 1 else x
    E = sb[:, 1:] - sb[:, :1]
    if np.any(coordinate_volumes(sb) <= 1e-12):
        raise VarifoldError("degenerate simplex")
    P = batch_orthonormalize(chart.metric(xb), E)
    return P[0] if single else P


def divergence_on_plane(chart: MetricChart, X: Field, x, P, h: float | None = None) -> np.ndarray:
    """``sum_i <nabla_{e_i} X, e_i>_g`` over the rows of the frame P."""
    x = np.asarray(x, dtype=float)
    P = np.asarray(P, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    Pb = P[None] if single else P
    g = chart.metric(xb)
    X0 = np.asarray(X(xb), dtype=float)
    total = np.zeros(len(xb))
    if not np.any(X0) and _vanishes_nearby(X, xb, chart.fd_step if h is None else h):
        return 0.0 if single else total
    for i in range(Pb.shape[1]):
        e = Pb[:, i]
        cov = covariant_derivative(chart, X, e, xb, h=h, X0=X0)
        total = total + np.einsum("ka,kab,kb->k", cov, g, e)
    return float(total[0]) if single else total


def _vanishes_nearby(X, x, h):
    """True if X is exactly zero on the whole central stencil around x."""
    d = x.shape[1]
    off = np.concatenate([np.eye(d), -np.eye(d)]) * h
    pts = (x[:, None] + off[None]).reshape(-1, d)
    return not np.any(np.asarray(X(pts)))


@dataclass
class VariationReport:
    total: float
    contributions: np.ndarray
    order: int
    richardson: float
    reliable: bool
    tangential_residual: float | None = None
    inside_N: bool | None = None
    low_order_total: float = field(default=math.nan, repr=False)


def _contributions(V: DiscreteVarifold, X: Field, order: int, h) -> np.ndarray:
    x, w, dA = V.nodes(order)
    S, q, d = x.shape
    xs = x.reshape(-1, d)
    P = tangent_plane(V.chart, np.repeat(V.simplices, q, axis=0), xs)
    div = divergence_on_plane(V.chart, X, xs, P, h).reshape(S, q)
    return V.weights * np.sum(div * dA * w, axis=1)


def first_variation(
    V: DiscreteVarifold,
    X: Field,
    order: int = 4,
    check_order: int = 2,
    h: float | None = None,
    boundary_samples=None,
    domain: ProperSubdomain | None = None,
) -> VariationReport:
    """``dV(X)`` with a two-rule (order vs check_order) error estimate."""
    if len(V) == 0:
        return VariationReport(0.0, np.zeros(0), order, 0.0, True)
    c_hi = _contributions(V, X, order, h)
    c_lo = _contributions(V, X, check_order, h)
    total = math.fsum(c_hi)
    low = math.fsum(c_lo)
    est = abs(total - low)
    reliable = est <= 0.1 * abs(total) or est <= 1e-14 * max(1.0, V.mass())
    tang = None
    if boundary_samples is not None and len(boundary_samples):
        tang = is_tangential(V.chart, X, boundary_samples)
    inside = None
    if domain is not None:
        inside = bool(np.all(domain.contains(V.vertices()) | (np.abs(domain.S.leaf_value(V.vertices())) < 1e-12)))
    return VariationReport(total, c_hi, order, est, bool(reliable), tang, inside, low)


def is_tangential(chart: MetricChart, X: Field, boundary_samples, normal: Field | None = None) -> float:
    """``max |<X, nu_{dN*}>_g|`` over the samples."""
    q = np.atleast_2d(np.asarray(boundary_samples, dtype=float))
    nu = boundary_normal(chart, q) if normal is None else np.asarray(normal(q), dtype=float)
    return float(np.max(np.abs(chart.inner(q, np.asarray(X(q), dtype=float), nu))))


def c1_norm(V: DiscreteVarifold, X: Field, order: int = 4, h: float | None = None) -> float:
    """Sampled ``sup |X|_g + sup |dX|`` over quadrature nodes (coordinate Jacobian)."""
    x, _, _ = V.nodes(order)
    xs = x.reshape(-1, V.chart.dim)
    h = V.chart.fd_step if h is None else h
    d = V.chart.dim
    vals = np.asarray(X(xs), dtype=float)
    jac = np.stack(
        [(np.asarray(X(xs + h * e), float) - np.asarray(X(xs - h * e), float)) / (2 * h) for e in np.eye(d)],
        axis=-1,
    )
    return float(np.max(V.chart.norm(xs, vals)) + np.max(np.linalg.norm(jac, axis=(1, 2))))


def stationarity_residual(
    V: DiscreteVarifold,
    fields: Sequence[Field],
    boundary_samples=None,
    normal: Field | None = None,
    tau_orth: float = 1e-3,
    order: int = 4,
) -> float:
    """``max |dV(X)| / (mass(V) |X|_C1)`` over tangential fields."""
    mass = V.mass(order) if len(V) else 0.0
    if mass == 0.0:
        return 0.0
    worst = 0.0
    for i, X in enumerate(fields):
        if boundary_samples is not None:
            r = is_tangential(V.chart, X, boundary_samples, normal)
            if r > tau_orth:
                raise VarifoldError(f"field {i} is not tangential (residual {r:.2e})")
        dv = first_variation(V, X, order).total
        norm = c1_norm(V, X, order)
        if norm > 0:
            worst = max(worst, abs(dv) / (mass * norm))
    return worst


def flow(V: DiscreteVarifold, X: Field, t: float, steps: int = 32) -> DiscreteVarifold:
    """Push the vertices along X for time t (RK4)."""
    d = V.chart.dim
    pts = V.vertices()
    moved = rk4(lambda _, y: np.asarray(X(y), dtype=float), pts, 0.0, t, steps)
    return DiscreteVarifold(V.chart, V.m, moved.reshape(-1, V.m + 1, d), V.weights)


def flow_consistency(V: DiscreteVarifold, X: Field, times=(4e-2, 2e-2, 1e-2, 5e-3), order: int = 4):
    """Fit the log-log slope of ``|area(t) - area(0) - t dV(X)|`` against t."""
    a0 = V.mass(order)
    dv = first_variation(V, X, order).total
    errs = np.array([abs(flow(V, X, t).mass(order) - a0 - t * dv) for t in times])
    slope = float(np.polyfit(np.log(times), np.log(errs), 1)[0])
    return slope, errs


# -- the maximum principle experiment ------------------------------------------


@dataclass
class TouchingVarifold:
    name: str
    varifold: DiscreteVarifold
    first_variation: float
    mass: float
    tau_neg: float
    tangential_residual: float
    distance_to_p: float

    @property
    def negative(self) -> bool:
        return self.first_variation < -self.tau_neg

    def summary(self) -> dict:
        return {
            "name": self.name,
            "first_variation": self.first_variation,
            "mass": self.mass,
            "tau_neg": self.tau_neg,
            "negative": self.negative,
            "tangential_residual": self.tangential_residual,
            "distance_to_p": self.distance_to_p,
        }


@dataclass
class ExperimentReport:
    m: int
    epsilon: float
    entries: list
    lemma33_worst: float | None
    verdict: bool

    def summary(self) -> dict:
        return {
            "m": self.m,
            "epsilon": self.epsilon,
            "verdict": self.verdict,
            "lemma33_worst_trace": self.lemma33_worst,
            "varifolds": [e.summary() for e in self.entries],
        }


def touching_varifolds(D: ProperSubdomain, m: int, radius: float = 0.1, bends=(0.0, 0.5, 2.0), resolution: int = 12):
    """Graph patches ``x_h = f(y) + c |y|^2`` over small half m-disks at the origin.

    The patches lie in N and contain the corner point itself.
    """
    S = D.S
    n = S.n
    if not 1 <= m <= min(n, 2):
        raise VarifoldError("touching varifolds are generated for m in {1, 2}")
    out = []
    for c in bends:
        if m == 1:
            t = np.linspace(0, radius, 4 * resolution + 1)
            y = np.zeros((len(t), n))
            y[:, 0] = t
            pts = S.embed(y, S.orientation * c * t**2)
            V = segment_varifold(D.chart, None, None, points=pts)
        else:
            p2, tris = disk_mesh(radius, resolution, 4 * resolution, half=True)
            y = np.zeros((len(p2), n))
            y[:, :2] = p2
            pts = S.embed(y, S.orientation * c * np.sum(p2 * p2, axis=1))
            V = DiscreteVarifold(D.chart, 2, pts[tris], 1.0)
        out.append((f"{'segment' if m == 1 else 'half_disk'}_c{c:g}", V))
    return out


def max_principle_experiment(
    D: ProperSubdomain,
    epsilon: float,
    m: int,
    p=None,
    delta: float | None = None,
    tau_orth: float = 1e-3,
    tau_neg_factor: float = 1e-8,
    lemma33_samples=None,
    varifolds=None,
    radius: float = 0.1,
) -> ExperimentReport:
    """Build the test field from the barrier and evaluate it on touching varifolds.

    Preconditions (orthogonality, strong m-convexity at p, barrier touching)
    abort with :class:`ExperimentError` naming the failing check.
    """
    S = D.S
    p = np.zeros(D.chart.dim) if p is None else np.asarray(p, dtype=float)
    orth = check_orthogonality(D)
    if orth > tau_orth:
        raise ExperimentError("orthogonality", f"residual {orth:.2e}")
    conv = strong_m_convexity(S, S.base(p), m)
    if not conv.verdict:
        raise ExperimentError("strong_m_convexity", f"margin {conv.margin:.3e} at p")
    try:
        B, touch = build_barrier(D, epsilon)
    except GeometryError as exc:
        raise ExperimentError("barrier", str(exc)) from exc
    F = build_foliation(D, B.graph, p, delta)
    c = CutoffProfile(epsilon)
    worst = None
    if lemma33_samples is not None:
        rep = lemma33_from_forms(compute_q_forms(F, c, lemma33_samples), m, epsilon)
        worst = rep.worst_trace
        if not rep.verdict:
            raise ExperimentError("lemma33", f"max trace {rep.worst_trace:.3e} >= 0")

    def X(x):
        return test_field(F, c, x)

    if varifolds is None:
        varifolds = touching_varifolds(D, m, radius)
    y = np.zeros((9, S.n))
    y[:, 1:] = np.linspace(-radius, radius, 9)[:, None] if S.n > 1 else 0.0
    bsamples = B.graph.embed(y, np.linspace(0, 0.9 * epsilon, 9))
    tang = is_tangential(D.chart, X, bsamples)
    sup_phi = math.exp(-1.0 / epsilon)
    entries = []
    for name, V in varifolds:
        dv = first_variation(V, X).total
        mass = V.mass()
        dist = float(np.min(np.linalg.norm(V.vertices() - p, axis=1)))
        entries.append(TouchingVarifold(name, V, dv, mass, tau_neg_factor * mass * sup_phi, tang, dist))
    verdict = all(e.negative and e.distance_to_p <= 1e-3 for e in entries) and tang < tau_orth
    return ExperimentReport(m, epsilon, entries, worst, bool(verdict))
