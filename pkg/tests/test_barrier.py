import math

import numpy as np
import pytest

from conftest import support_samples
from fbmax.barrier import (
    BarrierError,
    BarrierSurface,
    ConfigurationError,
    CutoffProfile,
    Lemma34Profile,
    assemble_q,
    boundary_field_tangency,
    build_barrier,
    estimate_K,
    extreme_trace_m,
    jet_coefficients,
    lemma34_max,
    phi,
    phi_prime,
    plane_traces,
    q_forms,
    sample_planes,
    test_field as field_X,
    verify_lemma33,
)
from fbmax.foliation import build_foliation
from fbmax.geometry import MetricChart
from fbmax.numerics import named_rng
from fbmax.surfaces import GraphHypersurface, ProperSubdomain
from oracles import grid_then_brent, max_trace_monte_carlo

EUCLID = MetricChart.euclidean(3, [0, -1, -1], [1, 1, 1])


# -- cutoff -----------------------------------------------------------------


def test_phi_at_zero():
    assert phi(CutoffProfile(0.5), 0.0) == pytest.approx(math.exp(-2), rel=1e-15)


def test_phi_vanishes_beyond_epsilon(cutoff):
    assert phi(cutoff, 0.05) == 0.0
    assert phi(cutoff, 0.3) == 0.0
    assert phi_prime(cutoff, 0.06) == 0.0


def test_phi_rejects_negative(cutoff):
    with pytest.raises(ValueError):
        phi(cutoff, -0.01)


def test_cutoff_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        CutoffProfile(0.0)


@pytest.mark.parametrize("eps", [0.02, 0.05, 0.3])
def test_phi_prime_dominates(eps):
    c = CutoffProfile(eps)
    s = np.linspace(0, eps, 401)[:-1]
    assert np.all(phi_prime(c, s) + phi(c, s) / eps**2 <= 0)
    assert np.all(phi(c, s) >= 0)
    # exp(1/(s - eps)) underflows near eps; positivity is checked where it is representable
    assert np.all(phi(c, s[s < eps - 1 / 700]) > 0)


def test_phi_prime_matches_difference(cutoff):
    s, h = 0.02, 1e-6
    fd = (phi(cutoff, s + h) - phi(cutoff, s - h)) / (2 * h)
    assert phi_prime(cutoff, s) == pytest.approx(fd, rel=1e-8)


# -- barrier ------------------------------------------------------------------


def test_barrier_cubic_value():
    B = BarrierSurface(0.0, 0.0, 0.06, None)
    assert B.u([1.0, 0.0]) == pytest.approx(-0.01, abs=1e-16)


def test_jet_coefficients_exact_on_cubic():
    S = GraphHypersurface(EUCLID, "x1^2 + 2*x1^3 + x2^2", 0.6)
    a2, a3 = jet_coefficients(S)
    assert a2 == pytest.approx(2.0, abs=1e-8)
    assert a3 == pytest.approx(12.0, abs=1e-5)


def test_cap_jet(cap):
    # along x2 = 0 the face is 1 - sqrt(1 - x1^2) = x1^2/2 + x1^4/8 + ...
    a2, a3 = jet_coefficients(cap.surface)
    assert a2 == pytest.approx(1.0, abs=1e-6)
    assert a3 == pytest.approx(0.0, abs=1e-3)


def test_cap_touching(cap_barrier):
    B, rep = cap_barrier
    assert rep.min_gap >= -1e-8
    assert rep.ok
    assert rep.zero_set_radius <= 1e-3
    assert B.u([0.0, 0.3]) == 0.0


def test_barrier_below_face(cap, cap_barrier):
    B, _ = cap_barrier
    y = np.array([[0.1, 0.0], [0.2, 0.1], [0.05, -0.2]])
    assert np.all(cap.surface.f_values(y) - B.u(y) > 0)


def test_barrier_crossing_detected():
    S = GraphHypersurface(EUCLID, "x1^2/2 - 10*x1^4", 0.6)
    with pytest.raises(BarrierError):
        build_barrier(ProperSubdomain(EUCLID, S), 0.05)


def test_flat_touching_not_isolated(flat):
    _, rep = build_barrier(flat.domain, 0.05)
    assert not rep.ok


# -- trace extremes -----------------------------------------------------------


def test_extreme_trace_diag():
    assert extreme_trace_m(np.diag([1.0, 2.0, 3.0]), 2) == (3.0, 5.0)
    assert extreme_trace_m(np.diag([-1.0, 0.0, 2.0]), 2) == (-1.0, 2.0)


def test_extreme_trace_full_is_trace():
    Q = np.arange(9.0).reshape(3, 3)
    assert extreme_trace_m(Q, 3) == (12.0, 12.0)


def test_extreme_trace_bad_m():
    with pytest.raises(ValueError):
        extreme_trace_m(np.eye(3), 0)


def test_extreme_trace_against_sampling():
    rng = np.random.default_rng(3)
    Q = rng.standard_normal((4, 4))
    lo, hi = extreme_trace_m(Q, 2)
    tr = plane_traces(Q, sample_planes(rng, 4, 2, 20000))
    assert lo - 1e-12 <= tr.min() and tr.max() <= hi + 1e-12
    assert max_trace_monte_carlo(Q, 2, 40000, rng) == pytest.approx(hi, abs=1e-4)


def test_sample_planes_orthonormal():
    F = sample_planes(np.random.default_rng(0), 5, 3, 10)
    assert np.allclose(F @ np.swapaxes(F, 1, 2), np.eye(3), atol=1e-13)


# -- calculus bound --------------------------------------------------------------


def test_profile_at_right_angle():
    assert Lemma34Profile(1.0, 2, 0.1).F(math.pi / 2) == pytest.approx(-49.0, abs=1e-12)


def test_profile_endpoints():
    P = Lemma34Profile(1.0, 3, 0.1)
    assert P.F(0.0) == 0.0 and P.F(math.pi) == 0.0


@pytest.mark.parametrize("K,n,eps", [(1.0, 2, 0.1), (2.0, 5, 0.05), (0.5, 3, 0.3)])
def test_lemma34_against_brent(K, n, eps):
    theta, Fmax = lemma34_max(K, n, eps)
    P = Lemma34Profile(K, n, eps)
    ref, _ = grid_then_brent(P.F, 0.0, math.pi, 1e-4)
    assert Fmax == pytest.approx(ref, rel=1e-9, abs=1e-15)
    assert P.F(theta) == pytest.approx(Fmax, rel=1e-12)
    assert P.theta0 == pytest.approx(theta, abs=1e-15)
    assert Fmax > 0


def test_lemma34_threshold():
    with pytest.raises(ValueError):
        lemma34_max(1.0, 2, 1 / math.sqrt(2))


def test_lemma34_zero_K():
    assert lemma34_max(0.0, 3, 0.5) == (0.0, 0.0)


# -- field and Q ---------------------------------------------------------------


@pytest.fixture(scope="module")
def flat_fol(flat):
    return build_foliation(flat.domain, flat.surface, flat.p, 0.2)


def test_flat_q_is_diagonal(flat_fol, cutoff):
    q = np.array([[0.1, 0.05, 0.01], [0.2, -0.1, 0.03]])
    for fm in q_forms(flat_fol, cutoff, q):
        expected = np.diag([0.0, 0.0, fm.phi_prime])
        assert np.max(np.abs(fm.matrix - expected)) <= 1e-8 * abs(fm.phi_prime)
        assert fm.psi == pytest.approx(1.0, abs=1e-12)


def test_field_zero_off_support(flat_fol, cutoff):
    X = field_X(flat_fol, cutoff, np.array([[0.1, 0.0, 0.06], [0.1, 0.0, 0.01]]))
    assert np.all(X[0] == 0)
    assert X[1] == pytest.approx([0, 0, phi(cutoff, 0.01)], abs=1e-15)


def test_field_support_must_fit(flat_fol):
    with pytest.raises(ConfigurationError):
        field_X(flat_fol, CutoffProfile(0.5), [0.1, 0.0, 0.3])


def test_q_outside_support(flat_fol, cutoff):
    with pytest.raises(ConfigurationError):
        q_forms(flat_fol, cutoff, [[0.1, 0.0, 0.06]])


def test_assemble_q_layout():
    AS = np.array([[[1.0, 2.0], [2.0, 3.0]]])
    AT = np.array([[[4.0, 5.0], [6.0, 7.0]]])
    nnu = np.array([[8.0, 9.0]])
    Q = assemble_q(np.array([2.0]), np.array([-5.0]), np.array([1.5]), AS, AT, nnu)[0]
    expected = np.array([[-2.0, 12.0, 0.0], [10.0, -6.0, 0.0], [14.0, 18.0, -7.5]])
    assert np.array_equal(Q, expected)


def test_cap_q_matches_direct(cap, cap_barrier, cap_barrier_foliation, cutoff):
    B, _ = cap_barrier
    q = support_samples(cap, B, 0.05, 6, seed=1)
    forms = q_forms(cap_barrier_foliation, cutoff, q)
    assert max(f.mismatch for f in forms) < 5e-3


def test_cap_K(cap, cap_barrier, cap_barrier_foliation):
    B, _ = cap_barrier
    est = estimate_K(cap_barrier_foliation, support_samples(cap, B, 0.05, 10, seed=2))
    assert est.psi_min >= 0.5
    assert est.K == pytest.approx(1.0, abs=0.1)


@pytest.mark.parametrize("m", [1, 2])
def test_cap_lemma33(cap, cap_barrier, cap_barrier_foliation, cutoff, m):
    B, _ = cap_barrier
    q = support_samples(cap, B, 0.05, 12, seed=3)
    rep = verify_lemma33(cap_barrier_foliation, cutoff, m, q)
    assert rep.verdict and rep.worst_trace < 0
    assert rep.summary()["samples"] == len(q)


def test_lemma33_thread_invariant(cap, cap_barrier, cap_barrier_foliation, cutoff):
    B, _ = cap_barrier
    q = support_samples(cap, B, 0.05, 20, seed=4)
    a = verify_lemma33(cap_barrier_foliation, cutoff, 1, q, threads=1)
    b = verify_lemma33(cap_barrier_foliation, cutoff, 1, q, threads=2)
    assert np.array_equal(a.maxima, b.maxima)


def test_field_tangent_to_boundary(cap, cap_barrier_foliation, cutoff):
    q = cap.domain.corner(7)
    assert np.max(boundary_field_tangency(cap_barrier_foliation, cutoff, q)) < 1e-8


def test_named_rng_streams_differ():
    a = named_rng(1, "a").random(3)
    assert not np.array_equal(a, named_rng(1, "b").random(3))
    assert np.array_equal(a, named_rng(1, "a").random(3))
