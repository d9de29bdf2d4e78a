"""Gauss-Hermite collocation: nodes, Vandermonde fits, and the conditional
moment algebra that projects one polynomial-mapped Gaussian onto another.

Polynomial coefficient vectors are plain 1-D numpy arrays indexed by power
of the standard-normal argument.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, TailCoverageError

MIN_ORDER = 2
MAX_ORDER = 16
MAX_MOMENT_POWER = 30


@dataclass(frozen=True)
class CollocationBasis:
    """Zeros of the probabilists' Hermite polynomial He_N with the
    Vandermonde matrix V[i, j] = x_i**j."""

    order: int
    nodes: np.ndarray
    vandermonde: np.ndarray


def hermite_nodes(n):
    """Collocation basis on the N zeros of He_N.

    Uses the Golub-Welsch method: the zeros are the eigenvalues of the
    symmetric Jacobi matrix with off-diagonal sqrt(1..N-1). Symmetry about
    zero is enforced exactly.
    """
    if not MIN_ORDER <= n <= MAX_ORDER:
        raise DomainError(f"collocation order {n} outside [{MIN_ORDER}, {MAX_ORDER}]")
    jacobi = np.diag(np.sqrt(np.arange(1.0, n)), 1)
    nodes = np.linalg.eigvalsh(jacobi + jacobi.T)
    nodes = 0.5 * (nodes - nodes[::-1])
    if n % 2 == 1:
        nodes[n // 2] = 0.0
    vand = np.vander(nodes, n, increasing=True)
    for arr in (nodes, vand):
        arr.setflags(write=False)
    return CollocationBasis(order=n, nodes=nodes, vandermonde=vand)


def solve_vandermonde(basis, values):
    """Coefficients of the degree N-1 polynomial interpolating `values` at
    the basis nodes (direct LU solve in double precision)."""
    values = np.asarray(values, dtype=float)
    if values.shape != (basis.order,):
        raise DomainError(
            f"expected {basis.order} values, got shape {values.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise DomainError("non-finite values in Vandermonde solve")
    return np.linalg.solve(basis.vandermonde, values)


def eval_poly(coeffs, z):
    """Horner evaluation of a coefficient vector at z (vectorized)."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    for c in np.asarray(coeffs, dtype=float)[::-1]:
        out = out * z + c
    return float(out) if out.ndim == 0 else out


def poly_derivative(coeffs):
    c = np.asarray(coeffs, dtype=float)
    if len(c) <= 1:
        return np.zeros(1)
    return c[1:] * np.arange(1, len(c))


def min_poly_slope(coeffs, lo=-4.0, hi=4.0, samples=401):
    """Smallest derivative of the polynomial on [lo, hi]; a monotonicity
    diagnostic for fitted quantile maps."""
    grid = np.linspace(lo, hi, samples)
    return float(np.min(eval_poly(poly_derivative(coeffs), grid)))


def fit_marginal(dist, basis):
    """Fit the quantile transform g(z) = F^{-1}(Phi(z)) of a marginal as a
    polynomial interpolated at the basis nodes.

    Raises TailCoverageError when a node maps outside the marginal's
    evaluable strike window (the declared bounds are too narrow for this
    order). Emits a RuntimeWarning when the fitted polynomial is not
    monotone on [-4, 4]; pricing needs only the node values and the exact
    strike-to-z map, so this is a diagnostic, not a failure.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        values = dist.quantile_of_z(basis.nodes)
    for warning in caught:
        if "saturated" in str(warning.message):
            raise TailCoverageError(
                f"collocation node beyond tail coverage at T={dist.maturity}; "
                "widen the declared [K_lo, K_hi]"
            )
        warnings.warn_explicit(
            warning.message, warning.category, warning.filename, warning.lineno
        )
    if np.any(np.diff(values) <= 0.0):
        raise TailCoverageError(
            f"node-mapped quantiles not strictly increasing at T={dist.maturity}; "
            "widen the declared [K_lo, K_hi]"
        )
    coeffs = solve_vandermonde(basis, values)
    # warn only on dips inside the node span: pricing uses node values and
    # the exact strike-to-z map, so wiggle beyond the last node (common,
    # mild) is left to the min_poly_slope diagnostic
    span = min(4.0, float(basis.nodes[-1]))
    if min_poly_slope(coeffs, -span, span) <= 0.0:
        warnings.warn(
            f"fitted quantile polynomial non-monotone inside the node span "
            f"at T={dist.maturity}",
            RuntimeWarning,
            stacklevel=2,
        )
    return coeffs


def double_factorial(n):
    """n!! with the empty-product convention (-1)!! = 0!! = 1."""
    if n <= 0:
        return 1
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def normal_raw_moments(count):
    """E[Z^k] for k = 0..count-1, Z standard normal."""
    out = np.zeros(count)
    for k in range(0, count, 2):
        out[k] = float(double_factorial(k - 1))
    return out


def conditional_moment_coeffs(n, rho):
    """Coefficients q_i such that E[Z1^n | Z2 = z] = sum_i q_i(n; rho) z^i
    for standard normals with correlation rho.

    The conditioned variable is N(rho z, sqrt(1 - rho^2)), so its n-th raw
    moment expands over even central powers with double-factorial weights.
    """
    if not 0 <= n <= MAX_MOMENT_POWER:
        raise DomainError(f"moment power {n} outside [0, {MAX_MOMENT_POWER}]")
    if abs(rho) > 1.0:
        raise DomainError(f"correlation {rho} outside [-1, 1]")
    one_minus = 1.0 - rho * rho
    q = np.zeros(n + 1)
    for j in range(n // 2 + 1):
        i = n - 2 * j
        q[i] = (
            math.comb(n, 2 * j)
            * double_factorial(2 * j - 1)
            * one_minus**j
            * rho**i
        )
    return q


def conditional_moment_matrix(n_max, rho):
    """Lower-triangular table Q[n, i] = q_i(n; rho) for 0 <= i <= n <= n_max."""
    table = np.zeros((n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        table[n, : n + 1] = conditional_moment_coeffs(n, rho)
    return table


def condition_coeffs(a, rho):
    """Project a polynomial in Z1 onto its conditional expectation in Z2.

    b_n = sum_{j >= n} a_j q_n(j; rho), so that
    E[poly_a(Z1) | Z2 = z] = poly_b(z).
    """
    a = np.asarray(a, dtype=float)
    table = conditional_moment_matrix(len(a) - 1, rho)
    return a @ table


def convolve(a, b):
    """Coefficients of the product polynomial (plain convolution)."""
    return np.convolve(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
