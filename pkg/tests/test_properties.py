"""Invariants checked over generated inputs."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fbmax.barrier import CutoffProfile, Lemma34Profile, extreme_trace_m, lemma34_max, phi, phi_prime, plane_traces, sample_planes
from fbmax.geometry import MetricChart, christoffel
from fbmax.quadrature import simplex_rule
from fbmax.varifold import disk_varifold, first_variation, segment_varifold

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def square(size):
    return arrays(np.float64, (size, size), elements=finite)


@given(st.integers(2, 6).flatmap(lambda k: st.tuples(square(k), square(k), st.integers(1, k))))
def test_trace_ignores_antisymmetric_part(args):
    Q, A, m = args
    lo, hi = extreme_trace_m(Q, m)
    lo2, hi2 = extreme_trace_m(Q + (A - A.T), m)
    assert hi2 == pytest.approx(hi, abs=1e-9) and lo2 == pytest.approx(lo, abs=1e-9)


@given(st.integers(2, 6).flatmap(square))
def test_full_dimension_is_trace(Q):
    lo, hi = extreme_trace_m(Q, len(Q))
    assert lo == hi == pytest.approx(np.trace(Q), abs=1e-12)


@given(st.integers(2, 5).flatmap(lambda k: st.tuples(square(k), st.integers(1, k - 1), st.integers(0, 2**32 - 1))))
def test_sampled_planes_inside_bounds(args):
    Q, m, seed = args
    lo, hi = extreme_trace_m(Q, m)
    tr = plane_traces(Q, sample_planes(np.random.default_rng(seed), len(Q), m, 200))
    assert np.all(tr <= hi + 1e-9) and np.all(tr >= lo - 1e-9)


@given(st.integers(2, 6).flatmap(lambda k: st.tuples(square(k), st.integers(1, k - 1))))
def test_min_max_duality(args):
    Q, m = args
    lo, _ = extreme_trace_m(Q, m)
    _, hi = extreme_trace_m(-Q, m)
    assert lo == pytest.approx(-hi, abs=1e-9)


@given(st.sampled_from([0.5, 1.0, 2.0]), st.sampled_from([2, 3, 5]), st.lists(st.floats(0.01, 0.49), min_size=2, max_size=6, unique=True))
def test_lemma34_monotone_in_epsilon(K, n, eps):
    eps = sorted(e for e in eps if e < 1 / math.sqrt(2 * K))
    vals = [lemma34_max(K, n, e)[1] for e in eps]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert all(v > 0 for v in vals)


@given(st.floats(0.05, 4), st.integers(1, 8), st.floats(0.01, 0.3), st.floats(0, math.pi))
def test_lemma34_is_maximum(K, n, eps, theta):
    if eps >= 1 / math.sqrt(2 * K):
        return
    th, Fs = lemma34_max(K, n, eps)
    P = Lemma34Profile(K, n, eps)
    assert 0 < th < math.pi / 2
    assert P.F(theta) <= Fs * (1 + 1e-12) + 1e-15


@given(st.floats(0.01, 1.0), st.floats(0, 1))
def test_cutoff_inequality(eps, frac):
    c = CutoffProfile(eps)
    s = frac * eps
    assert phi_prime(c, s) + phi(c, s) / eps**2 <= 0
    assert 0 <= phi(c, s) <= math.exp(-1 / eps)


@given(st.integers(1, 4), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_quadrature_exact_random_polynomial(m, order, seed):
    rng = np.random.default_rng(seed)
    nodes, w = simplex_rule(m, order)
    alpha = rng.multinomial(order, np.ones(m + 1) / (m + 1)) if order else np.zeros(m + 1, int)
    exact = math.factorial(m) * math.prod(math.factorial(a) for a in alpha) / math.factorial(m + order)
    assert math.fsum(w * np.prod(nodes**alpha, axis=1)) == pytest.approx(exact, rel=1e-12)


CHART = MetricChart.from_expressions(
    3, [-1, -1, -1], [1, 1, 1], [["1 + 0.2*x1^2", "0", "0.1*x2"], ["0", "1", "0"], ["0.1*x2", "0", "1 + 0.1*x3^2"]], half_space=False
)
DISK = disk_varifold(CHART, [0.1, 0, 0], np.eye(3), 0.4, rings=3, sectors=12)
vec3 = arrays(np.float64, 3, elements=st.floats(-1, 1))


def linear_field(A, b):
    return lambda x: x @ A.T + b


@given(arrays(np.float64, (3, 3), elements=st.floats(-1, 1)), vec3, arrays(np.float64, (3, 3), elements=st.floats(-1, 1)), vec3, st.floats(-2, 2))
def test_first_variation_linear(A, b, C, d, a):
    X, Y = linear_field(A, b), linear_field(C, d)
    Z = lambda x: a * X(x) + Y(x)  # noqa: E731
    lhs = first_variation(DISK, Z).total
    rhs = a * first_variation(DISK, X).total + first_variation(DISK, Y).total
    assert lhs == pytest.approx(rhs, abs=1e-6)


@given(st.floats(0.3, 0.9), vec3)
def test_first_variation_local(offset, b):
    # a field supported in x1 > offset does not see a segment in x1 < 0.25
    V = segment_varifold(CHART, [-0.5, 0, 0], [0.25, 0.1, 0], pieces=8)

    def X(x):
        w = np.clip(x[:, 0] - offset, 0, None) ** 3
        return w[:, None] * b

    assert first_variation(V, X).total == 0.0


@given(arrays(np.float64, 3, elements=st.floats(-0.8, 0.8)))
def test_christoffel_lower_symmetry(x):
    G = christoffel(CHART, x)
    assert np.allclose(G, np.swapaxes(G, -1, -2), atol=1e-12)
