"""Markovian-projected quanto drift.

Projects the FX local vol onto the equity level: the 2-factor quanto
dynamics collapse to one factor with drift r_F - delta + rho * sigma_S(S,t)
* sigma_XS(S,t), where sigma_XS is the measure-weighted conditional FX
local vol. Each time slice fits the weighted FX local vol nu(z) at the
collocation nodes and projects the coefficients onto the equity driver,
so no FX local-vol grid is ever built.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .collocation import (
    condition_coeffs,
    eval_poly,
    hermite_nodes,
    solve_vandermonde,
)
from .errors import DomainError

DEFAULT_DRIFT_ORDER = 7
MAX_DRIFT_ORDER = 10

# floor applied to the conditional FX vol when the fitted polynomial
# oscillates below zero in the far tails
VOL_FLOOR = 1e-6


@dataclass(frozen=True)
class DriftSlice:
    """Conditional FX local vol at one time, as a polynomial in the
    equity z-coordinate z_S = g2^{-1}(S)."""

    t: float
    rho: float
    nodes_a: np.ndarray  # fitted nu coefficients (FX driver)
    coeffs: np.ndarray  # conditional coefficients (equity driver)
    eq_marginal: object
    measure_ratio: float  # B_F^t / B_D^t


def nu_values(surf_fx, setup, t, basis):
    """Measure-weighted FX local vol at the collocation nodes:
    nu(x_i) = g1(x_i)/X_0 * sigma_X(g1(x_i), t) * B_F/B_D.

    Only the node values are computed; this is the whole per-slice cost.
    """
    fx_marginal = surf_fx.marginal(t)
    levels = fx_marginal.quantile_of_z(basis.nodes)
    local = surf_fx.local_vol(levels, t)
    ratio = setup.discount_foreign(t) / setup.discount_domestic(t)
    values = levels / setup.spot_fx * local * ratio
    if np.any(values <= 0.0):
        raise DomainError(f"non-positive weighted FX local vol at t={t}")
    return values


def fit_drift_slice(surf_fx, surf_eq, setup, t, order=DEFAULT_DRIFT_ORDER):
    """Build the drift slice at time t: fit nu on the nodes, then project
    the coefficients onto the equity driver via the conditional moments."""
    if not 2 <= order <= MAX_DRIFT_ORDER:
        raise DomainError(f"drift order {order} outside [2, {MAX_DRIFT_ORDER}]")
    basis = hermite_nodes(order)
    values = nu_values(surf_fx, setup, t, basis)
    a_t = solve_vandermonde(basis, values)
    b_t = condition_coeffs(a_t, setup.rho)
    grid = np.linspace(-4.0, 4.0, 161)
    if np.min(eval_poly(b_t, grid)) <= 0.0:
        warnings.warn(
            f"conditional FX vol polynomial dips <= 0 on z in [-4, 4] at t={t}; "
            "evaluations are floored",
            RuntimeWarning,
            stacklevel=2,
        )
    for arr in (a_t, b_t):
        arr.setflags(write=False)
    return DriftSlice(
        t=t,
        rho=setup.rho,
        nodes_a=a_t,
        coeffs=b_t,
        eq_marginal=surf_eq.marginal(t),
        measure_ratio=setup.discount_foreign(t) / setup.discount_domestic(t),
    )


def conditional_fx_vol(slice_, levels):
    """sigma_XS(S, t): conditional FX local vol at equity level S.

    Polynomial in z_S = g2^{-1}(S); floored at VOL_FLOOR so a consuming
    engine never sees a non-positive vol.
    """
    z = slice_.eq_marginal.z_of(levels)
    out = np.maximum(eval_poly(slice_.coeffs, z), VOL_FLOOR)
    return float(out) if np.ndim(levels) == 0 else out


def _conditional_fx_vol_clipped(slice_, levels):
    """Path-safe variant: clips wild levels into the evaluable window
    instead of raising, for Monte Carlo engines."""
    k_min, k_max = slice_.eq_marginal.strike_window()
    return conditional_fx_vol(slice_, np.clip(levels, k_min, k_max))


def quanto_local_drift(slice_, surf_eq, levels):
    """Quanto drift adjustment rho * sigma_S(S, t) * sigma_XS(S, t), per year."""
    sig_s = surf_eq.local_vol(levels, slice_.t)
    return slice_.rho * sig_s * conditional_fx_vol(slice_, levels)
