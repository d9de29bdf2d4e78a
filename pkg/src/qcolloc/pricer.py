"""Quanto pricing by polynomial expansion of the quanto-vanilla spread.

The per-maturity state (fitted marginal polynomials, conditional and
product coefficient vectors) lives in an immutable QuantoContext and is
strike-independent, so pricing a strip of strikes amortizes everything but
one CDF lookup, one truncated-moment recursion and one dot product per
strike. The vanilla leg always comes from the exact surface Black price;
the expansion only carries the spread, which acts as a control variate.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .black import black_call, black_implied_vol, norm_pdf
from .collocation import (
    condition_coeffs,
    convolve,
    fit_marginal,
    hermite_nodes,
    normal_raw_moments,
)
from .errors import CalibrationError, DomainError
from .market import forward

DEFAULT_ORDER = 7
MAX_KAPPA = 12.0
MAX_MOMENTS = 31

# beyond this z-space strike the truncated-normal survival is below double
# precision and the spread is numerically zero
KAPPA_CLAMP = 8.0


@dataclass(frozen=True)
class TruncatedMoments:
    """Raw moments m_i = E[Z^i | Z > kappa] of the standard normal, i < n."""

    kappa: float
    moments: np.ndarray
    survival: float


def truncated_moments(kappa, count):
    """Conditional raw moments of a truncated standard normal.

    Two-term recursion m_i = (i-1) m_{i-2} + kappa^{i-1} * phi/(1-Phi);
    the normal CDF and PDF are evaluated exactly once per call.
    """
    if not abs(kappa) <= MAX_KAPPA:
        raise DomainError(
            f"|kappa| = {abs(kappa)} > {MAX_KAPPA}: survival below double "
            "precision reliability"
        )
    if not 1 <= count <= MAX_MOMENTS:
        raise DomainError(f"moment count {count} outside [1, {MAX_MOMENTS}]")
    moments = _truncated_moment_matrix(np.array([kappa]), count)[:, 0]
    moments.setflags(write=False)
    return TruncatedMoments(
        kappa=float(kappa), moments=moments, survival=float(ndtr(-kappa))
    )


def _truncated_moment_matrix(kappas, count):
    """Moment vectors for an array of kappa values, shape (count, len)."""
    kappas = np.asarray(kappas, dtype=float)
    survival = ndtr(-kappas)
    hazard = norm_pdf(kappas) / survival
    out = np.empty((count, len(kappas)))
    out[0] = 1.0
    if count > 1:
        out[1] = hazard
    kappa_pow = np.array(kappas)
    for i in range(2, count):
        out[i] = (i - 1) * out[i - 2] + kappa_pow * hazard
        kappa_pow *= kappas
    return out


@dataclass(frozen=True)
class QuantoContext:
    """Per-maturity pricing state; reusable across strikes.

    Coefficients follow the un-normalized convention: `a1` interpolates the
    FX quantile map itself (levels of X, not X/X_0) and `a2` the equity
    quantile map. `b` is the conditional projection of `a1` onto the equity
    driver, `c` the product-polynomial convolution of `a2` and `b`.
    """

    maturity: float
    rho: float
    x0: float
    fx_marginal: object
    eq_marginal: object
    a1: np.ndarray
    a2: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def n1(self):
        return len(self.a1)

    @property
    def n2(self):
        return len(self.a2)


def build_context(setup, surf_eq, surf_fx, maturity, n1=DEFAULT_ORDER,
                  n2=DEFAULT_ORDER):
    """Fit both marginals at `maturity` and precompute the strike-free
    coefficient vectors."""
    basis1 = hermite_nodes(n1)
    basis2 = hermite_nodes(n2)
    fx_marginal = surf_fx.marginal(maturity)
    eq_marginal = surf_eq.marginal(maturity)
    a1 = fit_marginal(fx_marginal, basis1)
    a2 = fit_marginal(eq_marginal, basis2)
    b = condition_coeffs(a1, setup.rho)
    c = convolve(a2, b)
    for arr in (a1, a2, b, c):
        arr.setflags(write=False)
    return QuantoContext(
        maturity=maturity,
        rho=setup.rho,
        x0=setup.spot_fx,
        fx_marginal=fx_marginal,
        eq_marginal=eq_marginal,
        a1=a1,
        a2=a2,
        b=b,
        c=c,
    )


def spread_coeffs(ctx, strike):
    """Strike-dependent coefficient vector e of the spread expansion:
    e_n = c_n - K b_n [n < N1] - X0 a2_n [n < N2] + X0 K [n = 0]."""
    e = _spread_coeff_matrix(ctx, np.array([float(strike)]))[:, 0]
    return e


def _spread_coeff_matrix(ctx, strikes):
    e = np.repeat(ctx.c[:, None], len(strikes), axis=1)
    e[: ctx.n1] -= ctx.b[:, None] * strikes[None, :]
    e[: ctx.n2] -= ctx.x0 * ctx.a2[:, None]
    e[0] += ctx.x0 * strikes
    return e


def quanto_vanilla_spread(ctx, strikes):
    """Undiscounted spread E_F[X_T (S_T - K)_+] - X_0 E_F[(S_T - K)_+].

    Evaluated as (sum_n e_n(K) m_n(kappa)) * P(S_T > K) with kappa the
    z-space strike. Strikes beyond tail coverage (|kappa| > 8) contribute
    zero and raise a RuntimeWarning.
    """
    k = np.atleast_1d(np.asarray(strikes, dtype=float))
    survival = np.atleast_1d(ctx.eq_marginal.survival(k))
    with np.errstate(divide="ignore"):
        kappa = -ndtri(np.maximum(survival, 1e-320))
    deep = np.abs(kappa) > KAPPA_CLAMP
    if np.any(deep):
        warnings.warn(
            "strike beyond tail coverage (|kappa| > 8); spread set to its "
            "deep-tail limit",
            RuntimeWarning,
            stacklevel=2,
        )
    kappa = np.clip(kappa, -KAPPA_CLAMP, KAPPA_CLAMP)
    moments = _truncated_moment_matrix(kappa, len(ctx.c))
    e = _spread_coeff_matrix(ctx, k)
    value = np.einsum("ns,ns->s", e, moments) * survival
    value = np.where(deep & (kappa > 0.0), 0.0, value)
    if np.ndim(strikes) == 0:
        return float(value[0])
    return value


def quanto_call(ctx, setup, strikes):
    """Domestic-currency discounted quanto call price.

    C_Q = B_F * (spread / X_0 + E_F[(S_T - K)_+]), with the vanilla leg
    taken exactly from the equity surface.
    """
    spread = quanto_vanilla_spread(ctx, strikes)
    vanilla = ctx.eq_marginal.surface.call_price(strikes, ctx.maturity)
    b_f = setup.discount_foreign(ctx.maturity)
    out = b_f * (np.asarray(spread) / ctx.x0 + vanilla)
    return float(out) if np.ndim(strikes) == 0 else out


def quanto_forward(ctx, setup):
    """Forward of the equity under the domestic measure,
    E_F[X_T S_T] / E_F[X_T], from the product-polynomial moments."""
    mu = normal_raw_moments(len(ctx.c))
    e_xs = float(ctx.c @ mu)
    e_x = forward(setup, "FX", ctx.maturity)
    return e_xs / e_x


def vanilla_call(ctx, setup, strikes):
    """Foreign-measure vanilla C_S = B_F * E_F[(S_T - K)_+] from the surface."""
    b_f = setup.discount_foreign(ctx.maturity)
    return b_f * ctx.eq_marginal.surface.call_price(strikes, ctx.maturity)


def implied_correlation(setup, surf_eq, surf_fx, maturity, target_forward,
                        n1=DEFAULT_ORDER, n2=DEFAULT_ORDER, tol=1e-10):
    """Correlation reproducing an observed quanto forward.

    The marginal fits are correlation-free and done once; only the
    conditional projection is re-evaluated inside the root search.
    Monotonicity of the forward in rho is verified on a coarse pre-scan.
    """
    basis1 = hermite_nodes(n1)
    basis2 = hermite_nodes(n2)
    a1 = fit_marginal(surf_fx.marginal(maturity), basis1)
    a2 = fit_marginal(surf_eq.marginal(maturity), basis2)
    mu = normal_raw_moments(n1 + n2 - 1)
    e_x = forward(setup, "FX", maturity)

    def fq(rho):
        c = convolve(a2, condition_coeffs(a1, rho))
        return float(c @ mu) / e_x

    lo, hi = -0.999, 0.999
    scan = np.linspace(lo, hi, 9)
    values = np.array([fq(r) for r in scan])
    diffs = np.diff(values)
    if not (np.all(diffs > 0.0) or np.all(diffs < 0.0)):
        raise CalibrationError(
            "quanto forward not monotone in correlation on this market"
        )
    f_lo, f_hi = values[0], values[-1]
    attainable = (min(f_lo, f_hi), max(f_lo, f_hi))
    if not attainable[0] <= target_forward <= attainable[1]:
        raise CalibrationError(
            f"target forward {target_forward} outside attainable range "
            f"[{attainable[0]:.10g}, {attainable[1]:.10g}] for rho in [-0.999, 0.999]"
        )
    rho_star = brentq(
        lambda r: fq(r) - target_forward, lo, hi, xtol=1e-14, rtol=8.9e-16
    )
    residual = fq(rho_star) - target_forward
    if abs(residual) > tol * abs(target_forward):
        raise CalibrationError(
            f"calibration residual {residual:.3e} above tolerance"
        )
    return rho_star


def implied_vol_of(price, fwd, strike, maturity):
    """Black implied vol of an undiscounted call price."""
    return black_implied_vol(price, fwd, strike, maturity)


def adhoc_quanto_price(setup, surf_eq, surf_fx, maturity, strikes):
    """Constant-drift baseline: Black price with the forward shifted by
    exp(rho * atm_vol_eq * atm_vol_fx * T) and the equity smile vol at K.

    Exact in a no-skew world; serves as the biased reference elsewhere.
    """
    f_eq = forward(setup, "EQ", maturity)
    f_fx = forward(setup, "FX", maturity)
    sig_eq_atm = surf_eq.vol(f_eq, maturity)
    sig_fx_atm = surf_fx.vol(f_fx, maturity)
    f_adj = f_eq * math.exp(setup.rho * sig_eq_atm * sig_fx_atm * maturity)
    sig_k = surf_eq.vol(strikes, maturity)
    b_d = setup.discount_domestic(maturity)
    out = b_d * black_call(f_adj, strikes, sig_k * math.sqrt(maturity))
    return float(out) if np.ndim(strikes) == 0 else out
