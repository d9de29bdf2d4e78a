"""Arbitrage-safe parametric implied-vol surfaces and their marginal laws.

A surface is a set of per-maturity smiles, each quadratic in log-moneyness
m = ln(K / F(T_pillar)) inside its declared strike window [K_lo, K_hi].
Outside the window the smile slope decays smoothly to zero (tanh taper),
so extrapolation is asymptotically flat-vol but the quantile transform
stays continuously differentiable; a hard freeze would put a slope kink
right where the collocation nodes sample the tails. Between pillar
maturities, total implied variance is interpolated linearly in t at fixed
log-moneyness; outside the pillar span the nearest smile is carried with
total variance proportional to t.

Because the smile is analytic, call prices, the marginal CDF (via the
strike derivative of calls, chain rule through the smile), quantiles and
Dupire local vol are all closed-form up to a monotone root solve for the
quantile. As a belt-and-braces guard the CDF is clamped monotone across
the window junctions so the marginal stays a valid distribution even for
configurations where the taper is pushed hard.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import market
from .black import black_call, norm_pdf
from .errors import ArbitrageError, DomainError, MarketDataError

# Width, in ATM standard deviations, of the flat-vol tail kept evaluable
# beyond the declared strike window.
DEFAULT_TAIL_SPAN = 8.0

_QUANTILE_TOL = 1e-10
_MAX_QUANTILE_ITER = 100


@dataclass(frozen=True)
class SmilePillar:
    """One maturity slice: quadratic implied vol in log-moneyness.

    vol(m) = atm_vol + skew * m + curvature * m^2 on the window
    [ln(k_lo/F), ln(k_hi/F)]; outside, the slope tapers smoothly to zero
    and the vol saturates at a finite tail level.
    """

    maturity: float
    atm_vol: float
    skew: float
    curvature: float
    k_lo: float
    k_hi: float

    def __post_init__(self):
        if self.maturity <= 0.0:
            raise MarketDataError(f"pillar maturity {self.maturity} must be > 0")
        if self.atm_vol <= 0.0:
            raise MarketDataError(f"pillar atm_vol {self.atm_vol} must be > 0")
        if not 0.0 < self.k_lo < self.k_hi:
            raise MarketDataError(
                f"pillar strike window [{self.k_lo}, {self.k_hi}] must satisfy 0 < K_lo < K_hi"
            )


class VolSurface:
    """Implied-vol surface for one asset, immutable after construction.

    All evaluation methods are pure and vectorized over strikes, so
    concurrent use needs no synchronization.
    """

    def __init__(self, asset, pillars, setup, tail_span=DEFAULT_TAIL_SPAN):
        if asset not in market.ASSET_TAGS:
            raise MarketDataError(f"unknown asset tag {asset!r}")
        if not pillars:
            raise MarketDataError("at least one smile pillar required")
        pillars = sorted(pillars, key=lambda p: p.maturity)
        mats = [p.maturity for p in pillars]
        if len(set(mats)) != len(mats):
            raise MarketDataError("duplicate pillar maturities")
        self.asset = asset
        self.setup = setup
        self.pillars = tuple(pillars)
        self.tail_span = float(tail_span)
        self._mats = np.array(mats)
        # per-pillar log-moneyness windows vs the pillar's own forward
        self._y_lo = np.array(
            [math.log(p.k_lo / self.forward(p.maturity)) for p in pillars]
        )
        self._y_hi = np.array(
            [math.log(p.k_hi / self.forward(p.maturity)) for p in pillars]
        )
        for i, p in enumerate(pillars):
            if self._y_lo[i] >= 0.0 or self._y_hi[i] <= 0.0:
                raise MarketDataError(
                    f"pillar T={p.maturity}: strike window must straddle the forward"
                )
        self._init_tapers()
        # per-maturity caches; values are immutable and writes idempotent,
        # so unsynchronized concurrent use stays safe
        self._slice_cache = {}
        self._guard_cache = {}
        self._validate_slices()

    def _init_tapers(self):
        """Per-pillar tail tapers.

        The slope decays as sech^2 over a length of at least one standard
        deviation in log-moneyness. Steep edges get a longer taper (the
        decay itself contributes negative curvature, i.e. butterfly risk),
        capped so the saturated tail vol stays positive.
        """
        sig_lo, slope_lo, lam_lo = [], [], []
        sig_hi, slope_hi, lam_hi = [], [], []
        for j, p in enumerate(self.pillars):
            for y_edge, sigs, slopes, lams in (
                (self._y_lo[j], sig_lo, slope_lo, lam_lo),
                (self._y_hi[j], sig_hi, slope_hi, lam_hi),
            ):
                sig = p.atm_vol + p.skew * y_edge + p.curvature * y_edge**2
                slope = p.skew + 2.0 * p.curvature * y_edge
                lam = sig * math.sqrt(p.maturity)
                if abs(slope) > 0.0:
                    lam = max(lam, 0.55 * sig / abs(slope))
                    lam = min(lam, 0.9 * sig / abs(slope))
                lam = min(lam, 8.0 * sig * math.sqrt(p.maturity))
                sigs.append(sig)
                slopes.append(slope)
                lams.append(lam)
        self._edge_sig = (np.array(sig_lo), np.array(sig_hi))
        self._edge_slope = (np.array(slope_lo), np.array(slope_hi))
        self._edge_lam = (np.array(lam_lo), np.array(lam_hi))

    # ------------------------------------------------------------------
    # basic curves

    def forward(self, t):
        return market.forward(self.setup, self.asset, t)

    def _pillar_smile(self, j, y):
        """Vol and y-derivatives of pillar j: quadratic inside the window,
        tanh slope taper outside."""
        p = self.pillars[j]
        y = np.asarray(y, dtype=float)
        y_lo, y_hi = self._y_lo[j], self._y_hi[j]
        c = np.minimum(np.maximum(y, y_lo), y_hi)
        sig = p.atm_vol + (p.skew + p.curvature * c) * c
        dsig = p.skew + 2.0 * p.curvature * c
        d2sig = 2.0 * p.curvature

        below = y < y_lo
        above = y > y_hi
        if below.any() or above.any():
            d2sig = np.full(np.shape(c), d2sig)
            for side, outside in ((0, below), (1, above)):
                if not outside.any():
                    continue
                s0 = self._edge_sig[side][j]
                sl = self._edge_slope[side][j]
                lam = self._edge_lam[side][j]
                th = np.tanh((y - (y_lo if side == 0 else y_hi)) / lam)
                sech2 = 1.0 - th * th
                sig = np.where(outside, s0 + sl * lam * th, sig)
                dsig = np.where(outside, sl * sech2, dsig)
                d2sig = np.where(outside, -2.0 * sl / lam * sech2 * th, d2sig)
        return sig, dsig, d2sig

    def _pillar_w(self, j, y):
        """Total variance of pillar j and its y-derivatives at its own maturity."""
        t_j = self.pillars[j].maturity
        sig, dsig, d2sig = self._pillar_smile(j, y)
        w = sig * sig * t_j
        wy = 2.0 * sig * dsig * t_j
        wyy = 2.0 * (dsig * dsig + sig * d2sig) * t_j
        return w, wy, wyy

    def _bracket(self, t):
        """Pillar indices and weights contributing at time t."""
        mats = self._mats
        if t <= mats[0]:
            return ((0, 1.0),), t / mats[0], mats[0]
        if t >= mats[-1]:
            n = len(mats) - 1
            return ((n, 1.0),), t / mats[-1], mats[-1]
        j = int(np.searchsorted(mats, t, side="right")) - 1
        theta = (t - mats[j]) / (mats[j + 1] - mats[j])
        if theta == 0.0:
            return ((j, 1.0),), t / mats[j], mats[j]
        return ((j, 1.0 - theta), (j + 1, theta)), None, None

    def _slice_data(self, t):
        cached = self._slice_cache.get(t)
        if cached is None:
            cached = (*self._bracket(t), self.forward(t))
            if len(self._slice_cache) > 4096:
                self._slice_cache.clear()
            self._slice_cache[t] = cached
        return cached

    def _eval(self, strikes, t):
        """Total variance w(y, t), its y-derivatives, the t-slope and y itself."""
        if t <= 0.0:
            raise DomainError(f"maturity {t} must be > 0")
        k = np.asarray(strikes, dtype=float)
        if np.any(k <= 0.0):
            raise DomainError("strikes must be strictly positive")
        parts, scale, t_edge, f = self._slice_data(t)
        y = np.log(k / f)
        if scale is not None:
            # single pillar carried with total variance proportional to t
            w0, wy0, wyy0 = self._pillar_w(parts[0][0], y)
            return y, w0 * scale, wy0 * scale, wyy0 * scale, w0 / t_edge, f
        (j, wj), (jn, wjn) = parts
        w_a, wy_a, wyy_a = self._pillar_w(j, y)
        w_b, wy_b, wyy_b = self._pillar_w(jn, y)
        w = wj * w_a + wjn * w_b
        wy = wj * wy_a + wjn * wy_b
        wyy = wj * wyy_a + wjn * wyy_b
        wt = (w_b - w_a) / (self._mats[jn] - self._mats[j])
        return y, w, wy, wyy, wt, f

    def vol(self, strikes, t):
        """Implied vol at (K, t)."""
        _, w, _, _, _, _ = self._eval(strikes, t)
        out = np.sqrt(w / t)
        return float(out) if out.ndim == 0 else out

    def total_variance(self, strikes, t):
        _, w, _, _, _, _ = self._eval(strikes, t)
        return float(w) if w.ndim == 0 else w

    def strike_window(self, t):
        """Evaluable strike range at t: declared bounds padded by
        `tail_span` standard deviations of the saturated tail vol."""
        parts, _, _ = self._bracket(t)
        f = self.forward(t)
        k_min = math.inf
        k_max = -math.inf
        for j, _weight in parts:
            for side, y_edge, sign in ((0, self._y_lo[j], -1.0), (1, self._y_hi[j], 1.0)):
                sig_tail = (
                    self._edge_sig[side][j]
                    + abs(self._edge_slope[side][j]) * self._edge_lam[side][j]
                )
                span = self.tail_span * sig_tail * math.sqrt(t)
                k_edge = f * math.exp(y_edge + sign * span)
                k_min = min(k_min, k_edge)
                k_max = max(k_max, k_edge)
        return k_min, k_max

    # ------------------------------------------------------------------
    # prices and the marginal law

    def call_price(self, strikes, t):
        """Undiscounted foreign-measure call E[(A_T - K)_+] from the smile."""
        self._check_window(strikes, t)
        _, w, _, _, _, f = self._eval(strikes, t)
        return black_call(f, strikes, np.sqrt(w))

    def _check_window(self, strikes, t):
        k_min, k_max = self.strike_window(t)
        k = np.asarray(strikes, dtype=float)
        if np.any(k < k_min) or np.any(k > k_max):
            bad = k[(k < k_min) | (k > k_max)]
            raise DomainError(
                f"strike {float(np.atleast_1d(bad)[0])} outside evaluable range "
                f"[{k_min:.6g}, {k_max:.6g}] at t={t}"
            )

    def _raw_cdf_survival(self, strikes, t):
        """Unrepaired CDF and survival from the analytic strike derivative.

        cdf(K) = 1 + dC/dK = Phi(-d2) + phi(d2) * w_y / (2 sqrt(w)), where
        the last term is the smile-slope (vega) contribution.
        """
        y, w, wy, _, _, _ = self._eval(strikes, t)
        sqrt_w = np.sqrt(w)
        d2 = -y / sqrt_w - 0.5 * sqrt_w
        slope_term = norm_pdf(d2) * wy / (2.0 * sqrt_w)
        cdf = ndtr(-d2) + slope_term
        sf = ndtr(d2) - slope_term
        return np.clip(cdf, 0.0, 1.0), np.clip(sf, 0.0, 1.0), y

    def _kink_guards(self, t):
        """Monotonicity caps at the window-edge junctions of the smile.

        Returns (junction y sorted, cdf floor per junction, survival cap per
        junction). For K beyond a junction the CDF may not fall below the
        value attained just inside it; mirrored for survival.
        """
        cached = self._guard_cache.get(t)
        if cached is not None:
            return cached
        parts, _, _, f = self._slice_data(t)
        kys = sorted(
            {float(self._y_lo[j]) for j, _ in parts}
            | {float(self._y_hi[j]) for j, _ in parts}
        )
        eps = np.array([1e-12 * max(1.0, abs(ky)) for ky in kys])
        k_minus = f * np.exp(np.array(kys) - eps)
        cdf_minus, sf_minus, _ = self._raw_cdf_survival(k_minus, t)
        floors = np.maximum.accumulate(cdf_minus)
        caps = np.minimum.accumulate(sf_minus)
        guards = (np.array(kys), floors, caps)
        if len(self._guard_cache) > 4096:
            self._guard_cache.clear()
        self._guard_cache[t] = guards
        return guards

    def cdf(self, strikes, t):
        """Marginal CDF P(A_t < K), monotone-repaired across tail kinks."""
        self._check_window(strikes, t)
        out = self._cdf_survival_clipped(strikes, t)[0]
        return float(out) if out.ndim == 0 else out

    def survival(self, strikes, t):
        """P(A_t > K); complementary form, accurate in the upper tail."""
        self._check_window(strikes, t)
        out = self._cdf_survival_clipped(strikes, t)[1]
        return float(out) if out.ndim == 0 else out

    def _cdf_survival_clipped(self, strikes, t):
        """CDF/survival with the kink repair, no window check (clips nothing
        in K; callers wanting safety for wild inputs clip strikes first)."""
        cdf, sf, y = self._raw_cdf_survival(strikes, t)
        kys, floors, caps = self._kink_guards(t)
        idx = np.searchsorted(kys, y, side="right") - 1
        has_guard = idx >= 0
        safe_idx = np.maximum(idx, 0)
        cdf = np.where(has_guard, np.maximum(cdf, floors[safe_idx]), cdf)
        sf = np.where(has_guard, np.minimum(sf, caps[safe_idx]), sf)
        return cdf, sf

    def local_vol(self, strikes, t):
        """Dupire local vol from the analytic smile derivatives.

        Raises ArbitrageError when the denominator of the local-variance
        expression (or the calendar slope) is non-positive.
        """
        y, w, wy, wyy, wt, _ = self._eval(strikes, t)
        denom = (
            1.0
            - y * wy / w
            + 0.25 * (-0.25 - 1.0 / w + (y / w) ** 2) * wy * wy
            + 0.5 * wyy
        )
        bad = (denom <= 0.0) | (wt <= 0.0)
        if np.any(bad):
            k_bad = np.atleast_1d(np.asarray(strikes, dtype=float))[
                np.atleast_1d(bad)
            ][0]
            raise ArbitrageError(
                f"local vol undefined at (K={k_bad:.6g}, t={t}): "
                "non-positive Dupire denominator or calendar slope"
            )
        out = np.sqrt(wt / denom)
        return float(out) if out.ndim == 0 else out

    def marginal(self, t):
        """Marginal law of the asset at t implied by the surface."""
        if t <= 0.0:
            raise DomainError(f"maturity {t} must be > 0")
        return MarginalDistribution(self, t)

    def kink_strikes(self, t):
        """Strikes where the smile slope is discontinuous at t (window
        edges of the contributing pillars)."""
        parts, _, _ = self._bracket(t)
        f = self.forward(t)
        kys = sorted(
            {float(self._y_lo[j]) for j, _ in parts}
            | {float(self._y_hi[j]) for j, _ in parts}
        )
        return [f * math.exp(ky) for ky in kys]

    # ------------------------------------------------------------------
    # quantile machinery

    def quantile(self, probs, t):
        """Strike K with cdf(K, t) = q, for q in (0, 1).

        Bracketed bisection refined by secant steps on the monotone CDF
        (survival form for the upper tail). Probabilities beyond the mass
        of the evaluable window saturate to the window edge and raise a
        RuntimeWarning.
        """
        q = np.asarray(probs, dtype=float)
        if np.any((q <= 0.0) | (q >= 1.0)):
            raise DomainError("quantile probability must lie strictly in (0, 1)")
        upper = q > 0.5
        target = np.where(upper, 1.0 - q, q)
        out = self._invert(target, upper, t, ndtri(q))
        return float(out) if out.ndim == 0 and np.ndim(probs) == 0 else out

    def quantile_of_z(self, z, t):
        """g(z) = quantile(Phi(z)): the map from a standard normal to the
        marginal. Works in survival space for z > 0 to keep tail accuracy."""
        z = np.asarray(z, dtype=float)
        upper = z > 0.0
        target = ndtr(-np.abs(z))
        out = self._invert(target, upper, t, z)
        return float(out) if out.ndim == 0 and np.ndim(z) == 0 else out

    def _invert(self, target, upper, t, z_hint):
        """Solve cdf(K) = target (upper=False) or survival(K) = target
        (upper=True), elementwise. target and upper are broadcastable;
        z_hint is the normal coordinate of the target, used to seed a
        tight initial bracket around the ATM-vol lognormal quantile."""
        shape = np.shape(target)
        target = np.atleast_1d(np.asarray(target, dtype=float))
        upper = np.broadcast_to(upper, target.shape)
        z_hint = np.broadcast_to(np.atleast_1d(np.asarray(z_hint, dtype=float)),
                                 target.shape)
        k_min, k_max = self.strike_window(t)
        ln_min, ln_max = math.log(k_min), math.log(k_max)

        def value(k):
            cdf, sf = self._cdf_survival_clipped(k, t)
            return np.where(upper, sf, cdf)

        sign = np.where(upper, -1.0, 1.0)  # cdf increases, survival decreases
        _, _, _, fwd = self._slice_data(t)
        sqw = math.sqrt(float(self._eval(fwd, t)[1]))
        seed = math.log(fwd) + sqw * z_hint - 0.5 * sqw * sqw
        delta = sqw * (0.75 + 0.35 * np.abs(z_hint)) + 0.05
        lo = np.clip(seed - delta, ln_min, ln_max)
        hi = np.clip(seed + delta, ln_min, ln_max)
        f_lo = sign * (value(np.exp(lo)) - target)
        f_hi = sign * (value(np.exp(hi)) - target)
        for _ in range(8):
            widen_lo = (f_lo > 0.0) & (lo > ln_min)
            widen_hi = (f_hi < 0.0) & (hi < ln_max)
            if not (np.any(widen_lo) or np.any(widen_hi)):
                break
            delta = delta * 2.0
            lo = np.where(widen_lo, np.maximum(seed - delta, ln_min), lo)
            hi = np.where(widen_hi, np.minimum(seed + delta, ln_max), hi)
            f_lo = np.where(widen_lo, sign * (value(np.exp(lo)) - target), f_lo)
            f_hi = np.where(widen_hi, sign * (value(np.exp(hi)) - target), f_hi)

        saturated_lo = f_lo > 0.0
        saturated_hi = f_hi < 0.0
        if np.any(saturated_lo) or np.any(saturated_hi):
            warnings.warn(
                f"quantile saturated at the evaluable strike window edge for t={t}; "
                "widen [K_lo, K_hi] or the tail span",
                RuntimeWarning,
                stacklevel=2,
            )

        # bracketed bisection, then Illinois-damped secant; both keep the
        # bracket valid so flat (repaired) CDF regions cannot derail it
        for _ in range(6):
            if np.all(hi - lo < 0.02):
                break
            mid = 0.5 * (lo + hi)
            f_mid = sign * (value(np.exp(mid)) - target)
            go_up = f_mid < 0.0
            lo = np.where(go_up, mid, lo)
            f_lo = np.where(go_up, f_mid, f_lo)
            hi = np.where(go_up, hi, mid)
            f_hi = np.where(go_up, f_hi, f_mid)
        last_up = np.zeros(target.shape, dtype=bool)
        for _ in range(_MAX_QUANTILE_ITER - 6):
            if np.all((np.abs(f_lo) < 1e-12) | (np.abs(f_hi) < 1e-12)
                      | (hi - lo < 1e-14)):
                break
            denom = f_hi - f_lo
            with np.errstate(divide="ignore", invalid="ignore"):
                x = hi - f_hi * (hi - lo) / denom
            mid = 0.5 * (lo + hi)
            bad = ~np.isfinite(x) | (x <= lo) | (x >= hi)
            x = np.where(bad, mid, x)
            f_x = sign * (value(np.exp(x)) - target)
            go_up = f_x < 0.0
            same_side = go_up == last_up
            # Illinois: halve the stale endpoint value on a repeated side
            f_hi = np.where(go_up & same_side, 0.5 * f_hi, f_hi)
            f_lo = np.where(~go_up & same_side, 0.5 * f_lo, f_lo)
            lo = np.where(go_up, x, lo)
            f_lo = np.where(go_up, f_x, f_lo)
            hi = np.where(go_up, hi, x)
            f_hi = np.where(go_up, f_hi, f_x)
            last_up = go_up
        x = np.where(np.abs(f_lo) <= np.abs(f_hi), lo, hi)
        x = np.where(saturated_lo, math.log(k_min), x)
        x = np.where(saturated_hi, math.log(k_max), x)
        return np.exp(x.reshape(shape))

    # ------------------------------------------------------------------
    # construction-time sanity

    def _validate_slices(self):
        """Check each pillar smile for positive vols and butterfly arbitrage
        on a dense strike grid across its window and taper regions."""
        for j, p in enumerate(self.pillars):
            f = self.forward(p.maturity)
            lo = self._y_lo[j] - 5.0 * self._edge_lam[0][j]
            hi = self._y_hi[j] + 5.0 * self._edge_lam[1][j]
            y_grid = np.linspace(lo, hi, 401)
            sig = self._pillar_smile(j, y_grid)[0]
            if np.any(sig <= 0.0):
                raise MarketDataError(
                    f"pillar T={p.maturity}: implied vol non-positive inside window"
                )
            cdf, _, _ = self._raw_cdf_survival(f * np.exp(y_grid), p.maturity)
            steps = np.diff(cdf)
            if np.any(steps < -1e-10):
                k_bad = f * math.exp(float(y_grid[int(np.argmin(steps)) + 1]))
                raise MarketDataError(
                    f"pillar T={p.maturity}: butterfly arbitrage near K={k_bad:.6g} "
                    "(CDF decreasing); reduce skew/curvature"
                )


@dataclass(frozen=True)
class MarginalDistribution:
    """One maturity slice of a surface, as a probability law on strikes."""

    surface: VolSurface
    maturity: float

    def cdf(self, strikes):
        return self.surface.cdf(strikes, self.maturity)

    def survival(self, strikes):
        return self.surface.survival(strikes, self.maturity)

    def quantile(self, probs):
        return self.surface.quantile(probs, self.maturity)

    def quantile_of_z(self, z):
        return self.surface.quantile_of_z(z, self.maturity)

    def z_of(self, strikes):
        """Map a strike to its standard-normal coordinate Phi^{-1}(cdf(K)),
        evaluated through whichever tail is better conditioned."""
        self.surface._check_window(strikes, self.maturity)
        cdf, sf = self.surface._cdf_survival_clipped(strikes, self.maturity)
        out = np.where(cdf <= 0.5, ndtri(np.maximum(cdf, 1e-320)),
                       -ndtri(np.maximum(sf, 1e-320)))
        return float(out) if out.ndim == 0 else out

    def strike_window(self):
        return self.surface.strike_window(self.maturity)
