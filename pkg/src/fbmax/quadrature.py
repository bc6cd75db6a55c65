"""Fixed quadrature rules on the reference m-simplex.

Nodes are barycentric coordinates, shape (q, m + 1); weights sum to one, so
``integral over a simplex = volume * sum(w_i f(x_i))``. ``order`` is the
guaranteed polynomial degree of exactness.

Constants:

* m = 1: Gauss-Legendre, 2 points for order <= 3, 3 points for order <= 5.
* m = 2, order 2: the three interior points ``(2/3, 1/6, 1/6)`` with equal
  weights (exact for degree 2).
* m = 2, order 4: the 6-point degree-4 rule with orbits
  ``(a, a, 1 - 2a)``, weight 0.2233815896780107, ``a = 0.44594849091596467``
  and ``(b, b, 1 - 2b)``, weight 0.10995174365532263,
  ``b = 0.09157621350977124`` (moment equations solved to round-off).
* m >= 3: Grundmann-Moeller rules of degree ``2s + 1`` with
  ``s = ceil((order - 1) / 2)``; these carry negative weights.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

_D4_W1 = 0.2233815896780107
_D4_A = 0.44594849091596467
_D4_W2 = 0.10995174365532263
_D4_B = 0.09157621350977124


def _gauss_segment(points: int):
    x, w = np.polynomial.legendre.leggauss(points)
    t = (x + 1) / 2
    return np.stack([1 - t, t], axis=1), w / 2


def _orbit(c):
    return [(c, c, 1 - 2 * c), (c, 1 - 2 * c, c), (1 - 2 * c, c, c)]


def _grundmann_moeller(m: int, s: int):
    d = 2 * s + 1
    nodes, weights = [], []
    for i in range(s + 1):
        q = s - i
        w = (-1) ** i * 2.0 ** (-2 * s) * (d + m - 2 * i) ** d / (math.factorial(i) * math.factorial(d + m - i))
        for beta in itertools.product(range(q + 1), repeat=m + 1):
            if sum(beta) != q:
                continue
            nodes.append([(2 * b + 1) / (d + m - 2 * i) for b in beta])
            weights.append(w)
    # weights above integrate against the simplex of volume 1/m!
    return np.array(nodes), np.array(weights) * math.factorial(m)


@lru_cache(maxsize=None)
def simplex_rule(m: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    if m < 1 or order < 0:
        raise ValueError("need m >= 1 and order >= 0")
    if m == 1:
        if order > 5:
            return _gauss_segment((order + 2) // 2)
        return _gauss_segment(2 if order <= 3 else 3)
    if m == 2 and order <= 2:
        return np.array(_orbit(1 / 6)), np.full(3, 1 / 3)
    if m == 2 and order <= 4:
        nodes = np.array(_orbit(_D4_A) + _orbit(_D4_B))
        return nodes, np.array([_D4_W1] * 3 + [_D4_W2] * 3)
    s = max(0, math.ceil((order - 1) / 2))
    return _grundmann_moeller(m, s)
