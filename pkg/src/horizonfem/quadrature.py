"""Gauss quadrature rules on reference cells.

Provides 1D Gauss-Legendre, 1D Gauss-Jacobi with an endpoint-singular
weight ``(1 - t)**(-alpha)``, tensor-product rules on the square
``[-1, 1]**2`` and symmetric rules on the unit reference triangle.
"""

from dataclasses import dataclass, field
from math import gamma

import numpy as np
from scipy.linalg import eigh_tridiagonal

MAX_POINTS = 20

# (points, weights) on the unit triangle (0,0)-(1,0)-(0,1), area 1/2.
# order 3 is the positive-weight six-point rule (degree 4).
_TRI_A = 0.445948490915965
_TRI_B = 0.091576213509771
_TRI_RULES = {
    1: (np.array([[1 / 3, 1 / 3]]), np.array([0.5])),
    2: (
        np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]),
        np.array([1 / 6, 1 / 6, 1 / 6]),
    ),
    3: (
        np.array(
            [
                [_TRI_A, _TRI_A],
                [1 - 2 * _TRI_A, _TRI_A],
                [_TRI_A, 1 - 2 * _TRI_A],
                [_TRI_B, _TRI_B],
                [1 - 2 * _TRI_B, _TRI_B],
                [_TRI_B, 1 - 2 * _TRI_B],
            ]
        ),
        0.5
        * np.array(
            [
                0.223381589678011,
                0.223381589678011,
                0.223381589678011,
                0.109951743655322,
                0.109951743655322,
                0.109951743655322,
            ]
        ),
    ),
}


@dataclass(frozen=True)
class QuadratureRule:
    """Immutable quadrature rule on a reference cell.

    Attributes
    ----------
    points : ndarray
        Shape ``(n,)`` for 1D rules, ``(n, 2)`` for 2D rules.
    weights : ndarray
        Positive weights, shape ``(n,)``.
    kind : str
        One of ``"legendre"``, ``"jacobi"``, ``"triangle"``.
    alpha : float or None
        Singular exponent for Jacobi rules, in (0, 1).
    """

    points: np.ndarray
    weights: np.ndarray
    kind: str
    alpha: float | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    @property
    def n(self):
        return len(self.weights)


def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [-1, 1], exact for degree <= 2n-1."""
    if not 1 <= n <= MAX_POINTS:
        raise ValueError(f"gauss_legendre size must be in [1, {MAX_POINTS}], got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(points=x, weights=w, kind="legendre")


def jacobi_moment_zero(alpha: float) -> float:
    """Integral of (1 - t)**(-alpha) over [-1, 1]."""
    return 2.0 ** (1.0 - alpha) / (1.0 - alpha)


def _jacobi_recurrence(n: int, alpha: float):
    """Monic three-term recurrence coefficients for the weight (1-t)^(-alpha).

    Returns (A, B) with p_{k+1} = (t - A[k]) p_k - B[k] p_{k-1} and
    B[0] set to the zeroth moment.
    """
    a, b = -alpha, 0.0
    k = np.arange(n, dtype=float)
    A = np.empty(n)
    B = np.empty(n)
    A[0] = (b - a) / (a + b + 2.0)
    B[0] = 2.0 ** (a + b + 1.0) * gamma(a + 1.0) * gamma(b + 1.0) / gamma(a + b + 2.0)
    if n > 1:
        kk = k[1:]
        den = 2.0 * kk + a + b
        A[1:] = (b * b - a * a) / (den * (den + 2.0))
        B[1:] = (
            4.0 * kk * (kk + a) * (kk + b) * (kk + a + b)
            / (den * den * (den + 1.0) * (den - 1.0))
        )
    return A, B


def _monic_jacobi_value(t, A, B, n):
    """Monic Jacobi polynomial p_n and derivative at t (vectorized)."""
    p_prev = np.zeros_like(t)
    p = np.ones_like(t)
    dp_prev = np.zeros_like(t)
    dp = np.zeros_like(t)
    for k in range(n):
        p_next = (t - A[k]) * p - (B[k] if k > 0 else 0.0) * p_prev
        dp_next = p + (t - A[k]) * dp - (B[k] if k > 0 else 0.0) * dp_prev
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
    return p, dp


def gauss_jacobi(n: int, alpha: float) -> QuadratureRule:
    """n-point Gauss rule for the weight (1 - t)**(-alpha) on [-1, 1].

    Exact for ``f`` of degree <= 2n-1 in the integral
    ``int f(t) (1-t)^(-alpha) dt``.  The singular endpoint t=1 is never
    a node.  Nodes start from the Golub-Welsch tridiagonal eigenvalues
    and are polished by Newton iteration to a step below 1e-14.
    """
    if not 1 <= n <= MAX_POINTS:
        raise ValueError(f"gauss_jacobi size must be in [1, {MAX_POINTS}], got {n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"gauss_jacobi exponent must lie in (0, 1), got {alpha}")
    A, B = _jacobi_recurrence(n, alpha)
    if n == 1:
        x = np.array([A[0]])
    else:
        x = eigh_tridiagonal(A, np.sqrt(B[1:]), eigvals_only=True)
    for _ in range(50):
        p, dp = _monic_jacobi_value(x, A, B, n)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-14:
            break
    else:
        raise ValueError("gauss_jacobi Newton polish did not converge")
    # Christoffel weights from the orthonormal recurrence.
    pi_prev = np.zeros_like(x)
    pi = np.full_like(x, 1.0 / np.sqrt(B[0]))
    ssum = pi * pi
    for k in range(n - 1):
        pi_next = ((x - A[k]) * pi - (np.sqrt(B[k]) if k > 0 else 0.0) * pi_prev) / np.sqrt(B[k + 1])
        pi_prev, pi = pi, pi_next
        ssum += pi * pi
    w = 1.0 / ssum
    order = np.argsort(x)
    return QuadratureRule(points=x[order], weights=w[order], kind="jacobi", alpha=float(alpha))


def tensor_rule(rule1d: QuadratureRule) -> QuadratureRule:
    """Tensor product of a 1D Legendre rule on the square [-1, 1]^2."""
    if rule1d.kind != "legendre" or rule1d.points.ndim != 1:
        raise ValueError("tensor_rule requires a 1D Legendre rule")
    x = rule1d.points
    w = rule1d.weights
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wij = np.outer(w, w)
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    return QuadratureRule(points=pts, weights=wij.ravel(), kind="legendre")


def triangle_rule(order: int) -> QuadratureRule:
    """Symmetric rule on the unit reference triangle, weight sum 1/2."""
    if order not in _TRI_RULES:
        raise ValueError(f"triangle_rule order must be in {sorted(_TRI_RULES)}, got {order}")
    pts, w = _TRI_RULES[order]
    return QuadratureRule(points=pts.copy(), weights=w.copy(), kind="triangle")
