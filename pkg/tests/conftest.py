import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "fbmax",
    deadline=None,
    max_examples=40,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("fbmax")

from fbmax.barrier import CutoffProfile, build_barrier  # noqa: E402
from fbmax.foliation import build_foliation  # noqa: E402
from fbmax.geometry import MetricChart  # noqa: E402
from fbmax.scenario import bundled  # noqa: E402
from fbmax.surfaces import GraphHypersurface, ProperSubdomain  # noqa: E402


@pytest.fixture(scope="session")
def cap():
    return bundled("cap_corner")


@pytest.fixture(scope="session")
def flat():
    return bundled("flat_halfspace")


@pytest.fixture(scope="session")
def conformal():
    return bundled("conformal_cap")


@pytest.fixture(scope="session")
def cap_face_foliation(cap):
    return build_foliation(cap.domain, cap.surface, cap.p, cap.delta)


@pytest.fixture(scope="session")
def cap_barrier(cap):
    return build_barrier(cap.domain, 0.05)


@pytest.fixture(scope="session")
def cap_barrier_foliation(cap, cap_barrier):
    B, _ = cap_barrier
    return build_foliation(cap.domain, B.graph, cap.p, cap.delta)


@pytest.fixture(scope="session")
def flat_barrier_foliation(flat):
    B, _ = build_barrier(flat.domain, 0.05)
    return build_foliation(flat.domain, B.graph, flat.p, flat.delta)


@pytest.fixture(scope="session")
def cutoff():
    return CutoffProfile(0.05)


@pytest.fixture
def euclid3():
    return MetricChart.euclidean(3, [0, -1, -1], [1, 1, 1])


def support_samples(sc, B, eps, k, radius=0.15, seed=0):
    """Points (y, u(y) + s) in N with s in [max(0, f - u), 0.9 eps]."""
    rng = np.random.default_rng(seed)
    S = sc.surface
    y = rng.uniform([0, -radius], [radius, radius], (4 * k, 2))
    y = y[np.linalg.norm(y, axis=1) < radius][:k]
    lo = np.maximum(0, S.f_values(y) - B.u(y))
    s = lo + rng.random(len(y)) * (0.9 * eps - lo)
    return B.graph.embed(y, s)


def pytest_configure(config):
    config.fbmax_acceptance = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "fbmax_acceptance", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line[1])
