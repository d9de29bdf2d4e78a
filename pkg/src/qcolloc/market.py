"""Market state (spots, rates, correlation) and market-data file ingestion."""

import json
import math
from dataclasses import dataclass

from .errors import DomainError, MarketDataError

ASSET_TAGS = ("EQ", "FX")


@dataclass(frozen=True)
class MarketSetup:
    """Spots, flat continuous rates, dividend yield and equity-FX correlation.

    `spot_fx` follows the convention of foreign currency units per one unit
    of domestic currency. Rates are continuously compounded, per year.
    """

    spot_eq: float
    spot_fx: float
    r_foreign: float
    r_domestic: float
    div_yield: float
    rho: float

    def __post_init__(self):
        if not (self.spot_eq > 0.0 and self.spot_fx > 0.0):
            raise MarketDataError("spots must be strictly positive")
        if not abs(self.rho) <= 1.0:
            raise MarketDataError(f"correlation {self.rho} outside [-1, 1]")
        for name in ("r_foreign", "r_domestic", "div_yield"):
            if not math.isfinite(getattr(self, name)):
                raise MarketDataError(f"{name} must be finite")

    def discount_domestic(self, t):
        return math.exp(-self.r_domestic * t)

    def discount_foreign(self, t):
        return math.exp(-self.r_foreign * t)


def forward(setup, asset, t):
    """Forward of the equity ("EQ") or FX rate ("FX") at maturity t under
    the foreign measure."""
    if t < 0.0:
        raise DomainError(f"negative maturity {t}")
    if asset == "EQ":
        return setup.spot_eq * math.exp((setup.r_foreign - setup.div_yield) * t)
    if asset == "FX":
        return setup.spot_fx * math.exp((setup.r_foreign - setup.r_domestic) * t)
    raise DomainError(f"unknown asset tag {asset!r}, expected one of {ASSET_TAGS}")


def _require(cond, path, message):
    if not cond:
        raise MarketDataError(f"{path}: {message}")


def _get(obj, key, path, kind=None):
    if key not in obj:
        raise MarketDataError(f"{path}: missing field '{key}'")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise MarketDataError(f"{path}.{key}: expected {kind.__name__}")
    return value


def load_market(source):
    """Parse a market-data document into (MarketSetup, {"EQ": VolSurface, "FX": VolSurface}).

    `source` is a file path, a JSON string, or an already-parsed dict. The
    document layout is::

        {"setup": {"spot_S": .., "spot_X": .., "r_F": .., "r_D": ..,
                   "div_yield": .., "rho": ..},
         "surfaces": [{"asset": "EQ"|"FX",
                       "pillars": [{"T": .., "params": {"atm_vol": ..,
                                    "skew": .., "curvature": ..},
                                    "K_lo": .., "K_hi": ..}, ...]}, ...]}

    Vols are decimals (0.20 = 20%), times are years, strikes are in the
    asset's own units.
    """
    from .surface import SmilePillar, VolSurface

    if isinstance(source, dict):
        doc = source
    else:
        text = None
        try:
            with open(source) as fh:
                text = fh.read()
        except OSError:
            text = str(source)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MarketDataError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MarketDataError("top level: expected a JSON object")

    raw_setup = _get(doc, "setup", "top level", dict)
    numbers = {}
    for key in ("spot_S", "spot_X", "r_F", "r_D", "div_yield", "rho"):
        value = _get(raw_setup, key, "setup")
        _require(isinstance(value, (int, float)) and not isinstance(value, bool),
                 f"setup.{key}", "expected a number")
        numbers[key] = float(value)
    setup = MarketSetup(
        spot_eq=numbers["spot_S"],
        spot_fx=numbers["spot_X"],
        r_foreign=numbers["r_F"],
        r_domestic=numbers["r_D"],
        div_yield=numbers["div_yield"],
        rho=numbers["rho"],
    )

    raw_surfaces = _get(doc, "surfaces", "top level", list)
    surfaces = {}
    for i, raw_surface in enumerate(raw_surfaces):
        path = f"surfaces[{i}]"
        _require(isinstance(raw_surface, dict), path, "expected an object")
        asset = _get(raw_surface, "asset", path)
        _require(asset in ASSET_TAGS, f"{path}.asset",
                 f"expected one of {ASSET_TAGS}, got {asset!r}")
        _require(asset not in surfaces, f"{path}.asset", f"duplicate {asset} surface")
        raw_pillars = _get(raw_surface, "pillars", path, list)
        _require(len(raw_pillars) > 0, f"{path}.pillars", "at least one pillar required")
        pillars = []
        for j, raw_pillar in enumerate(raw_pillars):
            ppath = f"{path}.pillars[{j}]"
            _require(isinstance(raw_pillar, dict), ppath, "expected an object")
            params = _get(raw_pillar, "params", ppath, dict)
            for key, owner, opath in (
                ("T", raw_pillar, ppath),
                ("K_lo", raw_pillar, ppath),
                ("K_hi", raw_pillar, ppath),
                ("atm_vol", params, f"{ppath}.params"),
                ("skew", params, f"{ppath}.params"),
                ("curvature", params, f"{ppath}.params"),
            ):
                value = _get(owner, key, opath)
                _require(isinstance(value, (int, float)) and not isinstance(value, bool),
                         f"{opath}.{key}", "expected a number")
            pillars.append(SmilePillar(
                maturity=float(raw_pillar["T"]),
                atm_vol=float(params["atm_vol"]),
                skew=float(params["skew"]),
                curvature=float(params["curvature"]),
                k_lo=float(raw_pillar["K_lo"]),
                k_hi=float(raw_pillar["K_hi"]),
            ))
        surfaces[asset] = VolSurface(asset, pillars, setup)

    for tag in ASSET_TAGS:
        _require(tag in surfaces, "surfaces", f"missing {tag} surface")
    return setup, surfaces
