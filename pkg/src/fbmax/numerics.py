"""Small numerical helpers shared by the geometry modules."""

from __future__ import annotations

import zlib

import numpy as np


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and a stream name."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(ss))


def directional_derivative(func, x, u, h, order=2):
    """Central difference of a batched function along directions ``u``.

    ``func`` maps (k, d) -> (k, ...); ``x`` and ``u`` are (k, d).
    ``order`` 2 uses the 3-point stencil, 4 the 5-point stencil.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if order == 2:
        pts = np.concatenate([x + h * u, x - h * u])
        vals = func(pts)
        k = len(x)
        return (vals[:k] - vals[k:]) / (2 * h)
    pts = np.concatenate([x + 2 * h * u, x + h * u, x - h * u, x - 2 * h * u])
    vals = func(pts)
    k = len(x)
    f2, f1, m1, m2 = vals[:k], vals[k : 2 * k], vals[2 * k : 3 * k], vals[3 * k :]
    return (-f2 + 8 * f1 - 8 * m1 + m2) / (12 * h)


def jacobian(func, x, h, order=2):
    """Batched Jacobian ``J[k, ..., j] = d func / d x_j`` by central differences."""
    x = np.asarray(x, dtype=float)
    k, d = x.shape
    cols = []
    eye = np.eye(d)
    for j in range(d):
        u = np.broadcast_to(eye[j], (k, d))
        cols.append(directional_derivative(func, x, u, h, order))
    return np.stack(cols, axis=-1)


def rk4(rhs, y0, t0, t1, steps):
    """Fixed-step classic RK4 from t0 to t1 (t1 may be an array per row)."""
    y = np.array(y0, dtype=float)
    dt = (np.asarray(t1, dtype=float) - t0) / steps
    if np.ndim(dt):
        dt = dt.reshape((-1,) + (1,) * (y.ndim - 1))
    t = t0
    for _ in range(steps):
        k1 = rhs(t, y)
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t + dt
    return y
