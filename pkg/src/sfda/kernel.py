"""Reproducing kernel of the m-th order Sobolev space on [0, 1].

The space H^m[0, 1] is split into the polynomial null space of the
penalty, spanned by ``1, t, ..., t^(m-1)``, and its complement with
reproducing kernel

    R(s, t) = B_m(s) B_m(t) / (m!)^2 + (-1)^(m-1) B_2m(|s - t|) / (2m)!

where ``B_r`` is the r-th Bernoulli polynomial. For the cubic case m = 2
the second term enters with a minus sign. The alternating sign keeps the
kernel positive semidefinite for odd orders too.
"""

from dataclasses import dataclass
from fractions import Fraction
from math import comb, factorial

import numpy as np

from sfda.errors import RankDeficiencyError, ValidationError

MAX_DEGREE = 12
MAX_ORDER = MAX_DEGREE // 2


def _bernoulli_numbers(n):
    # B_1 = -1/2 convention; sum_{k<=j} C(j+1, k) B_k = 0 for j >= 1.
    numbers = [Fraction(1)]
    for j in range(1, n + 1):
        acc = sum(comb(j + 1, k) * numbers[k] for k in range(j))
        numbers.append(-acc / (j + 1))
    return numbers


def _bernoulli_coefficients(n):
    """Exact monomial coefficients of B_0..B_n, highest degree first."""
    numbers = _bernoulli_numbers(n)
    table = []
    for r in range(n + 1):
        # B_r(t) = sum_k C(r, k) B_k t^(r - k)
        table.append(tuple(comb(r, k) * numbers[k] for k in range(r + 1)))
    return tuple(table)


BERNOULLI_COEFFICIENTS = _bernoulli_coefficients(MAX_DEGREE)
_FLOAT_COEFFICIENTS = tuple(
    np.array([float(c) for c in row]) for row in BERNOULLI_COEFFICIENTS
)


def check_order(m):
    """Validate a spline order and return it as ``int``."""
    if isinstance(m, bool) or int(m) != m:
        raise ValidationError(f"spline order must be an integer, got {m!r}")
    m = int(m)
    if m < 1:
        raise ValidationError(f"spline order must be >= 1, got {m}")
    if m > MAX_ORDER:
        raise ValidationError(
            f"unsupported spline order {m}: Bernoulli polynomials are "
            f"tabulated up to degree {MAX_DEGREE} (m <= {MAX_ORDER})"
        )
    return m


def _check_unit_interval(x, name):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValidationError(f"{name} must lie in [0, 1]")
    return x


def bernoulli_poly(r, t):
    """Evaluate the Bernoulli polynomial ``B_r`` at ``t`` (scalar or array).

    Coefficients are exact rationals rounded once to double precision.
    """
    if isinstance(r, bool) or int(r) != r or not 0 <= int(r) <= MAX_DEGREE:
        raise ValidationError(
            f"unsupported Bernoulli order {r!r}; supported range is 0..{MAX_DEGREE}"
        )
    coefs = _FLOAT_COEFFICIENTS[int(r)]
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, coefs[0])
    for c in coefs[1:]:
        out = out * t + c
    return out if out.ndim else float(out)


def kernel_R(s, t, m=2):
    """Reproducing kernel ``R(s, t)`` of the penalized component.

    ``s`` and ``t`` broadcast against each other, so passing column and row
    vectors yields a full kernel matrix.
    """
    m = check_order(m)
    s = _check_unit_interval(s, "s")
    t = _check_unit_interval(t, "t")
    scale_m = float(factorial(m)) ** 2
    scale_2m = (-1.0) ** (m - 1) * float(factorial(2 * m))
    out = (
        bernoulli_poly(m, s) * bernoulli_poly(m, t) / scale_m
        + bernoulli_poly(2 * m, np.abs(t - s)) / scale_2m
    )
    return out if np.ndim(out) else float(out)


def null_basis(m, t):
    """Null-space basis ``(1, t, ..., t^(m-1))``.

    Scalar ``t`` gives a length-m vector; an array of shape (M,) gives an
    (M, m) design matrix.
    """
    m = check_order(m)
    t = _check_unit_interval(t, "t")
    return t[..., None] ** np.arange(m)


@dataclass(frozen=True)
class KernelGram:
    """Kernel and null-space design matrices over a set of points.

    Attributes
    ----------
    Q : ndarray, shape (M, M)
        ``Q[a, b] = R(points[a], points[b])``.
    T : ndarray, shape (M, m)
        ``T[a, k] = points[a] ** k``.
    points : ndarray, shape (M,)
    """

    Q: np.ndarray
    T: np.ndarray
    points: np.ndarray


def gram_matrices(points, m=2):
    """Assemble :class:`KernelGram` at ``points`` (duplicates allowed).

    Raises
    ------
    RankDeficiencyError
        If there are fewer than ``m`` distinct points.
    """
    m = check_order(m)
    points = _check_unit_interval(np.atleast_1d(points), "points").ravel()
    n_distinct = np.unique(points).size
    if n_distinct < m:
        raise RankDeficiencyError(
            f"{n_distinct} distinct point(s) cannot identify a null space of "
            f"dimension {m}"
        )
    Q = kernel_R(points[:, None], points[None, :], m)
    # exact symmetry regardless of rounding in |t - s|
    Q = 0.5 * (Q + Q.T)
    return KernelGram(Q=Q, T=null_basis(m, points), points=points)
