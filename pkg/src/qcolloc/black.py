"""Black formula on (forward, strike, total vol) and fast standard-normal helpers.

Everything here is undiscounted and measure-agnostic: prices are plain
expectations E[(F_T - K)_+] for a lognormal F_T with the given total
volatility sigma*sqrt(T). Discounting is the caller's business.
"""

import math

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import BoundViolationError

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# scipy ufuncs, re-exported under readable names; ndtr is erfc-based so the
# complementary call norm_sf(x) = ndtr(-x) is cancellation-free for x >> 0.
norm_cdf = ndtr
norm_ppf = ndtri


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


def norm_sf(x):
    return ndtr(np.negative(x))


def black_call(forward, strike, total_vol):
    """Undiscounted Black call value; `total_vol` is sigma*sqrt(T).

    Vectorized over any argument. Degenerate total vol returns intrinsic.
    """
    f = np.asarray(forward, dtype=float)
    k = np.asarray(strike, dtype=float)
    s = np.asarray(total_vol, dtype=float)
    intrinsic = np.maximum(f - k, 0.0)
    s_safe = np.where(s > 0.0, s, 1.0)
    d1 = np.log(f / k) / s_safe + 0.5 * s_safe
    d2 = d1 - s_safe
    value = f * ndtr(d1) - k * ndtr(d2)
    out = np.where(s > 0.0, value, intrinsic)
    if out.ndim == 0:
        return float(out)
    return out


def black_vega(forward, strike, total_vol):
    """d(black_call)/d(total_vol), undiscounted."""
    f = np.asarray(forward, dtype=float)
    k = np.asarray(strike, dtype=float)
    s = np.asarray(total_vol, dtype=float)
    s_safe = np.where(s > 0.0, s, 1.0)
    d1 = np.log(f / k) / s_safe + 0.5 * s_safe
    out = np.where(s > 0.0, f * norm_pdf(d1), 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def black_implied_vol(price, forward, strike, maturity, tol=1e-14):
    """Implied Black vol from an undiscounted call price.

    Bracketed bisection on total vol followed by Newton polishing, so it
    stays safe for prices arbitrarily close to the no-arbitrage bounds.
    Raises BoundViolationError when price is outside [(F-K)_+, F].
    """
    intrinsic = max(forward - strike, 0.0)
    if not (intrinsic - 1e-12 * forward <= price <= forward * (1.0 + 1e-12)):
        raise BoundViolationError(
            f"call price {price} outside no-arbitrage bounds "
            f"[{intrinsic}, {forward}] for F={forward}, K={strike}"
        )
    if price <= intrinsic:
        return 0.0

    def diff(s):
        return black_call(forward, strike, s) - price

    lo, hi = 1e-12, 2.0
    while diff(hi) < 0.0:
        hi *= 2.0
        if hi > 256.0:
            raise BoundViolationError(
                f"no total vol below 256 reproduces price {price}"
            )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if diff(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * hi:
            break
    s = 0.5 * (lo + hi)
    # Newton polish; vega can underflow deep in the wings, bisection result
    # is already at price-space tolerance there.
    for _ in range(3):
        v = black_vega(forward, strike, s)
        if v <= 0.0:
            break
        step = diff(s) / v
        s_new = s - step
        if not lo <= s_new <= hi:
            break
        s = s_new
        if abs(step) < tol * max(s, 1e-8):
            break
    return s / math.sqrt(maturity)
