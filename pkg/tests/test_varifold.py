import math

import numpy as np
import pytest

from fbmax.geometry import MetricChart
from fbmax.varifold import (
    DiscreteVarifold,
    ExperimentError,
    VarifoldError,
    c1_norm,
    disk_mesh,
    disk_varifold,
    first_variation,
    flow,
    flow_consistency,
    is_tangential,
    max_principle_experiment,
    segment_varifold,
    stationarity_residual,
    tangent_plane,
    touching_varifolds,
)
from oracles import polygon_disk_area

BALL = MetricChart.euclidean(3, [-1.2] * 3, [1.2] * 3, half_space=False)
PLANE = np.eye(3)


def sphere_normal(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sphere_tangent_fields(count, seed=0):
    """X = P - <P, x> x with P a random quadratic map; tangent to the unit sphere."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        A, B, C = rng.standard_normal(3), rng.standard_normal((3, 3)), rng.standard_normal((3, 3, 3))

        def X(x, A=A, B=B, C=C):
            P = A + x @ B.T + np.einsum("aij,ki,kj->ka", C, x, x)
            return P - np.sum(P * x, axis=1, keepdims=True) * x

        out.append(X)
    return out


@pytest.fixture(scope="module")
def unit_disk():
    return disk_varifold(BALL, [0, 0, 0], PLANE, 1.0, rings=8, sectors=64)


def test_disk_mesh_counts():
    pts, tris = disk_mesh(1.0, 4, 16)
    assert len(pts) == 1 + 4 * 16
    assert len(tris) == 16 * (1 + 2 * 3)
    _, half = disk_mesh(1.0, 4, 16, half=True)
    assert len(half) == 16 * 7


def test_disk_mass_is_polygon_area(unit_disk):
    assert unit_disk.mass() == pytest.approx(polygon_disk_area(64), rel=1e-13)


def test_segment_mass_in_metric():
    chart = MetricChart.from_expressions(2, [0, -1], [1, 1], [["1", "0"], ["0", "4"]])
    V = segment_varifold(chart, [0.5, -0.5], [0.5, 0.5], pieces=10)
    assert V.mass() == pytest.approx(2.0, rel=1e-14)


def test_radial_field_variation(unit_disk):
    # div_P x = 2 on a plane through the origin
    rep = first_variation(unit_disk, lambda x: x)
    assert rep.total == pytest.approx(2 * polygon_disk_area(64), rel=1e-9)
    assert rep.reliable


def test_zero_field_exact(unit_disk):
    assert first_variation(unit_disk, lambda x: np.zeros_like(x)).total == 0.0


def test_union_and_scaling(unit_disk):
    X = sphere_tangent_fields(1, 5)[0]
    a = first_variation(unit_disk, X).total
    assert first_variation(unit_disk.union(unit_disk.scaled(2.0)), X).total == pytest.approx(3 * a, rel=1e-12)


def test_rejects_degenerate():
    with pytest.raises(VarifoldError):
        DiscreteVarifold(BALL, 2, [[[0, 0, 0], [1, 0, 0], [2, 0, 0]]], 1.0)


def test_rejects_negative_weight():
    with pytest.raises(VarifoldError):
        segment_varifold(BALL, [0, 0, 0], [0.5, 0, 0], weight=-1.0)


def test_rejects_outside_chart():
    with pytest.raises(VarifoldError):
        segment_varifold(BALL, [0, 0, 0], [2, 0, 0])


def test_tangent_plane_orthonormal():
    P = tangent_plane(BALL, [[0, 0, 0], [1, 0, 0], [1, 1, 0]], [0.5, 0.2, 0])
    assert np.allclose(P @ P.T, np.eye(2), atol=1e-14)
    assert np.allclose(P[:, 2], 0)


def test_fields_are_tangential():
    rng = np.random.default_rng(1)
    q = sphere_normal(rng.standard_normal((50, 3)))
    for X in sphere_tangent_fields(3):
        assert is_tangential(BALL, X, q, sphere_normal) < 1e-13


def test_equatorial_disk_free_boundary_stationary(unit_disk):
    rng = np.random.default_rng(2)
    q = sphere_normal(rng.standard_normal((20, 3)))
    res = stationarity_residual(unit_disk, sphere_tangent_fields(4), q, sphere_normal)
    assert res < 1e-3


def test_tilted_disk_not_stationary():
    a = math.radians(10)
    basis = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    V = disk_varifold(BALL, [0, 0, math.sin(a)], basis, math.cos(a), rings=8, sectors=64)
    rng = np.random.default_rng(2)
    q = sphere_normal(rng.standard_normal((20, 3)))
    assert stationarity_residual(V, sphere_tangent_fields(8), q, sphere_normal) > 1e-2


def test_non_tangential_field_rejected(unit_disk):
    q = sphere_normal(np.random.default_rng(0).standard_normal((10, 3)))
    with pytest.raises(VarifoldError):
        stationarity_residual(unit_disk, [lambda x: x], q, sphere_normal)


def test_c1_norm_linear_field(unit_disk):
    # sup over quadrature nodes of |x|, plus the Frobenius norm sqrt(3) of the identity Jacobian
    x, _, _ = unit_disk.nodes()
    top = np.max(np.linalg.norm(x, axis=-1))
    assert c1_norm(unit_disk, lambda x: x) == pytest.approx(top + math.sqrt(3), rel=1e-12)


def test_flow_translates():
    V = segment_varifold(BALL, [0, 0, 0], [0.5, 0, 0], pieces=4)
    W = flow(V, lambda x: np.tile([0, 0.1, 0], (len(x), 1)), 1.0)
    assert np.allclose(W.vertices()[:, 1], 0.1, atol=1e-15)
    assert W.mass() == pytest.approx(V.mass(), rel=1e-14)


def test_flow_consistency_second_order():
    V = disk_varifold(BALL, [0, 0, 0], PLANE, 0.5, rings=6, sectors=32)
    slope, errs = flow_consistency(V, sphere_tangent_fields(1, 7)[0])
    assert 1.8 <= slope <= 2.2


def test_touching_varifolds_in_domain(cap):
    for m in (1, 2):
        for name, V in touching_varifolds(cap.domain, m, resolution=4):
            assert np.all(cap.domain.contains(V.vertices()) | (np.abs(cap.surface.leaf_value(V.vertices())) < 1e-12))
            assert np.min(np.linalg.norm(V.vertices() - cap.p, axis=1)) < 1e-12


def test_experiment_cap(cap):
    rep = max_principle_experiment(cap.domain, 0.05, 1, cap.p, cap.delta, varifolds=touching_varifolds(cap.domain, 1, resolution=6))
    assert rep.verdict
    assert all(e.first_variation < -e.tau_neg for e in rep.entries)


def test_experiment_far_varifold_zero(cap):
    # a segment beyond the cutoff support sees X = 0 exactly
    y = np.array([[0.05, 0.0], [0.1, 0.0]])
    V = segment_varifold(cap.chart, None, None, points=cap.surface.embed(y, 0.2))
    rep = max_principle_experiment(cap.domain, 0.05, 1, cap.p, cap.delta, varifolds=[("far", V)])
    assert rep.entries[0].first_variation == 0.0
    assert not rep.verdict


def test_experiment_flat_precondition(flat):
    with pytest.raises(ExperimentError) as err:
        max_principle_experiment(flat.domain, 0.05, 1)
    assert err.value.check == "strong_m_convexity"
