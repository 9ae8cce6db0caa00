"""Quadrature rules on the reference triangle.

All rules integrate with the convention

    integral_T f dA  ~=  area(T) * sum_q w_q f(x_q),

i.e. weights sum to one and the element area carries the measure. Points
are stored in barycentric coordinates (lam0, lam1, lam2).

Shipped rules:

* degree 1: centroid rule (1 point),
* degree 2: 3-point symmetric rule,
* degree 6: 12-point symmetric rule (Dunavant-type orbit structure, with
  orbit constants refined to 25 significant digits so monomial exactness
  holds to machine precision),
* degree >= 7: collapsed Gauss-Legendre product rules, exact by
  construction for any requested degree.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss
from math import factorial


class QuadratureRule:
    """Positive-weight quadrature rule on the reference triangle.

    Attributes
    ----------
    points : ndarray, shape (n, 3)
        Barycentric coordinates of the quadrature points.
    weights : ndarray, shape (n,)
        Weights, summing to one.
    exactness_degree : int
        Total polynomial degree integrated exactly.
    """

    def __init__(self, points, weights, exactness_degree):
        points = np.asarray(points, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("quadrature points must have shape (n, 3)")
        if np.any(weights <= 0.0):
            raise ValueError("quadrature weights must be positive")
        self.points = points
        self.weights = weights
        self.exactness_degree = int(exactness_degree)

    @property
    def npoints(self):
        return self.points.shape[0]

    def __repr__(self):
        return "QuadratureRule(degree=%d, npoints=%d)" % (
            self.exactness_degree, self.npoints)


def _orbit_s3():
    return np.full((1, 3), 1.0 / 3.0)


def _orbit_s21(a):
    b = 0.5 * (1.0 - a)
    return np.array([[a, b, b], [b, a, b], [b, b, a]])


def _orbit_s111(a, b):
    c = 1.0 - a - b
    return np.array([[a, b, c], [a, c, b], [b, a, c],
                     [b, c, a], [c, a, b], [c, b, a]])


def _collapsed_product_rule(degree):
    """Conical-product Gauss rule of given total-degree exactness.

    Maps a tensor Gauss grid on the unit square through the standard
    collapse (x, y) = (u(1-v), uv) whose Jacobian is u; an n-point rule
    per direction is exact for total degree 2n-2.
    """
    n = max(2, (degree + 2 + 1) // 2)  # 2n-2 >= degree
    xg, wg = leggauss(n)
    u = 0.5 * (xg + 1.0)
    wu = 0.5 * wg
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(wu, wu) * uu          # Jacobian of the collapse
    x = uu * (1.0 - vv)
    y = uu * vv
    lam = np.stack([1.0 - x - y, x, y], axis=-1).reshape(-1, 3)
    w = 2.0 * ww.ravel()                # normalize: reference area is 1/2
    return QuadratureRule(lam, w, 2 * n - 2)


_RULES = {}


def _build_fixed_rules():
    rules = {}
    rules[1] = QuadratureRule(_orbit_s3(), np.array([1.0]), 1)
    rules[2] = QuadratureRule(
        _orbit_s21(2.0 / 3.0), np.full(3, 1.0 / 3.0), 2)
    # 12-point symmetric rule, orbit parameters refined well past
    # double precision (two S21 orbits and one S111 orbit).
    pts = np.vstack([
        _orbit_s21(0.5014265096581791574167229),
        _orbit_s21(0.8738219710169955433193368),
        _orbit_s111(0.05314504984481694735324967,
                    0.3103524510337844054166077),
    ])
    wts = np.concatenate([
        np.full(3, 0.1167862757263793660252896),
        np.full(3, 0.05084490637020681692093681),
        np.full(6, 0.08285107561837357519355346),
    ])
    rules[6] = QuadratureRule(pts, wts, 6)
    return rules


def rule(degree):
    """Return a shipped rule with exactness at least ``degree``."""
    if not _RULES:
        _RULES.update(_build_fixed_rules())
    for d in sorted(k for k in _RULES if isinstance(k, int)):
        if d >= degree and _RULES[d].exactness_degree >= degree:
            return _RULES[d]
    r = _collapsed_product_rule(degree)
    _RULES[("prod", degree)] = r
    return r


def reference_monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)
