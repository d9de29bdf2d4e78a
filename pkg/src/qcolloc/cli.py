"""Command-line front end: pricing tables, correlation calibration, drift
grids and the batch-amortization timing harness.

All commands read one market-data JSON document (see `qcolloc.market`) and
write CSV with 12 significant digits (JSON mirror behind --json), so runs
are byte-for-byte reproducible. Exit codes: 0 ok, 2 bad input, 3 pricing
domain error, 4 calibration failure.
"""

import functools
import json
import math
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import click
import numpy as np

from . import drift, oracles, pricer
from .black import black_implied_vol
from .errors import (
    BoundViolationError,
    CalibrationError,
    DomainError,
    MarketDataError,
)
from .market import forward, load_market


@dataclass(frozen=True)
class RunConfig:
    market_path: str
    maturities: tuple = ()
    strikes: tuple = ()
    strike_unit: str = "pct"
    n1: int = pricer.DEFAULT_ORDER
    n2: int = pricer.DEFAULT_ORDER
    nt: int = drift.DEFAULT_DRIFT_ORDER
    oracle: str = "none"
    out: str = "-"
    seed: int = 12345
    parallel: bool = False
    as_json: bool = False
    extra: dict = field(default_factory=dict)


def _fail(message, code):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _command_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MarketDataError as exc:
            _fail(exc, 2)
        except CalibrationError as exc:
            _fail(exc, 4)
        except (DomainError, BoundViolationError) as exc:
            _fail(exc, 3)

    return wrapper


def _parse_csv_floats(text, name):
    try:
        values = tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise MarketDataError(f"--{name}: expected comma-separated numbers, got {text!r}")
    if not values:
        raise MarketDataError(f"--{name}: at least one value required")
    return values


def _fmt(x):
    return f"{x:.12g}"


def _emit(header, rows, config):
    if config.as_json:
        payload = [dict(zip(header, row)) for row in rows]
        text = json.dumps(payload, indent=2) + "\n"
    else:
        lines = [",".join(header)]
        lines += [",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row)
                  for row in rows]
        text = "\n".join(lines) + "\n"
    if config.out == "-":
        click.echo(text, nl=False)
    else:
        with open(config.out, "w") as fh:
            fh.write(text)


def _absolute_strikes(config, setup):
    if config.strike_unit == "abs":
        return np.asarray(config.strikes, dtype=float)
    return np.asarray(config.strikes, dtype=float) / 100.0 * setup.spot_eq


def _safe_vol(price_undisc, fwd, strike, maturity):
    try:
        return black_implied_vol(price_undisc, fwd, strike, maturity)
    except BoundViolationError:
        return float("nan")


_market_option = click.option(
    "--market", "market_path", required=True,
    type=click.Path(exists=True, dir_okay=False), help="Market-data JSON file.")
_out_option = click.option("--out", default="-", show_default=True,
                           help="Output file, '-' for stdout.")
_json_option = click.option("--json", "as_json", is_flag=True,
                            help="Emit JSON instead of CSV.")


@click.group(context_settings={"auto_envvar_prefix": "QCOLL"})
def main():
    """Analytic quanto option pricing on skewed vol surfaces.

    Set QCOLL_<COMMAND>_<OPTION> environment variables to override flags.
    """


@main.command("price")
@_market_option
@click.option("--maturities", required=True, help="Comma-separated years.")
@click.option("--strikes", required=True,
              help="Comma-separated strikes (percent of spot by default).")
@click.option("--strike-unit", type=click.Choice(["pct", "abs"]), default="pct",
              show_default=True)
@click.option("--n1", default=pricer.DEFAULT_ORDER, show_default=True,
              help="FX collocation order.")
@click.option("--n2", default=pricer.DEFAULT_ORDER, show_default=True,
              help="Equity collocation order.")
@click.option("--oracle", type=click.Choice(["copula", "mc", "none"]),
              default="none", show_default=True,
              help="Append slow reference columns.")
@click.option("--seed", default=12345, show_default=True, help="MC oracle seed.")
@click.option("--parallel", is_flag=True, help="Price maturities in parallel.")
@_out_option
@_json_option
@_command_errors
def cmd_price(market_path, maturities, strikes, strike_unit, n1, n2, oracle,
              seed, parallel, out, as_json):
    """Quanto call prices, the vanilla leg, the spread and implied vols.

    The quanto vol is quoted off the model's quanto forward; the constant
    drift-adjustment baseline is quoted off its own forward, which matches
    all models on the forward and isolates the skew effect.
    """
    config = RunConfig(
        market_path=market_path,
        maturities=_parse_csv_floats(maturities, "maturities"),
        strikes=_parse_csv_floats(strikes, "strikes"),
        strike_unit=strike_unit, n1=n1, n2=n2, oracle=oracle, seed=seed,
        parallel=parallel, out=out, as_json=as_json,
    )
    setup, surfaces = load_market(config.market_path)
    surf_eq, surf_fx = surfaces["EQ"], surfaces["FX"]
    strikes_abs = _absolute_strikes(config, setup)

    def price_one_maturity(t):
        ctx = pricer.build_context(setup, surf_eq, surf_fx, t, config.n1, config.n2)
        fq = pricer.quanto_forward(ctx, setup)
        b_d = setup.discount_domestic(t)
        f_eq = forward(setup, "EQ", t)
        f_adhoc = f_eq * math.exp(
            setup.rho * surf_eq.vol(f_eq, t)
            * surf_fx.vol(forward(setup, "FX", t), t) * t
        )
        rows = []
        for k in strikes_abs:
            k = float(k)
            quanto = pricer.quanto_call(ctx, setup, k)
            vanilla = pricer.vanilla_call(ctx, setup, k)
            spread = pricer.quanto_vanilla_spread(ctx, k)
            adhoc = pricer.adhoc_quanto_price(setup, surf_eq, surf_fx, t, k)
            row = [t, k, quanto, vanilla, spread,
                   _safe_vol(quanto / b_d, fq, k, t),
                   _safe_vol(adhoc / b_d, f_adhoc, k, t)]
            if config.oracle == "copula":
                ref = oracles.copula_quanto_price(setup, surf_eq, surf_fx, t, k)
                row += [ref.value, _safe_vol(ref.value / b_d, fq, k, t)]
            elif config.oracle == "mc":
                ref = oracles.mc_quanto_price(
                    setup, surf_eq, surf_fx, t, k, oracles.McSpec(seed=config.seed))
                row += [ref.value, ref.error]
            rows.append(row)
        return rows

    header = ["maturity", "strike", "quanto_price", "vanilla_price", "spread",
              "quanto_vol", "adhoc_vol"]
    if config.oracle == "copula":
        header += ["oracle_price", "oracle_vol"]
    elif config.oracle == "mc":
        header += ["oracle_price", "oracle_se"]

    if config.parallel and len(config.maturities) > 1:
        with ThreadPoolExecutor() as pool:
            blocks = list(pool.map(price_one_maturity, config.maturities))
    else:
        blocks = [price_one_maturity(t) for t in config.maturities]
    _emit(header, [row for block in blocks for row in block], config)


@main.command("calibrate-rho")
@_market_option
@click.option("--maturities", required=True,
              help="Maturity in years (first value used).")
@click.option("--target-forward", required=True, type=float,
              help="Observed quanto forward to match.")
@click.option("--n1", default=pricer.DEFAULT_ORDER, show_default=True)
@click.option("--n2", default=pricer.DEFAULT_ORDER, show_default=True)
@_command_errors
def cmd_calibrate_rho(market_path, maturities, target_forward, n1, n2):
    """Implied equity-FX correlation from a quanto forward."""
    maturity = _parse_csv_floats(maturities, "maturities")[0]
    setup, surfaces = load_market(market_path)
    rho = pricer.implied_correlation(
        setup, surfaces["EQ"], surfaces["FX"], maturity, target_forward, n1, n2)
    ctx_setup = setup.__class__(**{**setup.__dict__, "rho": rho})
    ctx = pricer.build_context(ctx_setup, surfaces["EQ"], surfaces["FX"],
                               maturity, n1, n2)
    residual = pricer.quanto_forward(ctx, ctx_setup) - target_forward
    click.echo(f"rho = {_fmt(rho)}")
    click.echo(f"residual = {_fmt(residual)}")


@main.command("drift-grid")
@_market_option
@click.option("--maturities", required=True, help="Time slices, years.")
@click.option("--s-range", default="50,150", show_default=True,
              help="Equity grid range, percent of spot.")
@click.option("--s-points", default=41, show_default=True)
@click.option("--nt", default=drift.DEFAULT_DRIFT_ORDER, show_default=True,
              help="Drift collocation order.")
@click.option("--oracle", type=click.Choice(["copula", "none"]), default="none",
              show_default=True, help="Append quadrature reference columns.")
@_out_option
@_json_option
@_command_errors
def cmd_drift_grid(market_path, maturities, s_range, s_points, nt, oracle,
                   out, as_json):
    """Local quanto drift rho*sigma_S(S,t)*sigma_XS(S,t) on an (S, t) grid.

    Rows are equity levels, one column per time slice.
    """
    config = RunConfig(
        market_path=market_path,
        maturities=_parse_csv_floats(maturities, "maturities"),
        nt=nt, oracle=oracle, out=out, as_json=as_json,
        extra={"s_range": _parse_csv_floats(s_range, "s-range"),
               "s_points": int(s_points)},
    )
    lo, hi = config.extra["s_range"][0], config.extra["s_range"][-1]
    if not 0.0 < lo < hi:
        raise MarketDataError(f"--s-range: need 0 < lo < hi, got {lo},{hi}")
    setup, surfaces = load_market(config.market_path)
    surf_eq, surf_fx = surfaces["EQ"], surfaces["FX"]
    levels = np.linspace(lo, hi, config.extra["s_points"]) / 100.0 * setup.spot_eq

    header = ["spot_level"]
    columns = [levels]
    for t in config.maturities:
        slice_ = drift.fit_drift_slice(surf_fx, surf_eq, setup, t, config.nt)
        columns.append(drift.quanto_local_drift(slice_, surf_eq, levels))
        header.append(f"drift_T{_fmt(t)}")
        if config.oracle == "copula":
            sig_s = surf_eq.local_vol(levels, t)
            ref = setup.rho * sig_s * oracles.exact_conditional_fx_vol(
                setup, surf_eq, surf_fx, t, levels)
            columns.append(ref)
            header.append(f"oracle_T{_fmt(t)}")
    rows = [list(float(c[i]) for c in columns) for i in range(len(levels))]
    _emit(header, rows, config)


_BENCH_SHAPES = ((1, 1), (1, 100), (10, 10), (10, 100))


@main.command("bench")
@_market_option
@click.option("--repetitions", default=15, show_default=True,
              help="Timing repetitions (median reported); at least 10.")
@click.option("--n1", default=pricer.DEFAULT_ORDER, show_default=True)
@click.option("--n2", default=pricer.DEFAULT_ORDER, show_default=True)
@_out_option
@_json_option
@_command_errors
def cmd_bench(market_path, repetitions, n1, n2, out, as_json):
    """Batch-amortization timing: per-maturity state is built once and
    shared across that maturity's strikes.

    Reports the four row shapes 1x1, 1x100, 10x10, 10x100
    (maturities x strikes), median over warmed-up repetitions.
    """
    repetitions = max(int(repetitions), 10)
    config = RunConfig(market_path=market_path, n1=n1, n2=n2, out=out,
                       as_json=as_json)
    setup, surfaces = load_market(config.market_path)
    surf_eq, surf_fx = surfaces["EQ"], surfaces["FX"]
    pillar_ts = [p.maturity for p in surf_eq.pillars]
    base_t = pillar_ts[len(pillar_ts) // 2]
    if len(pillar_ts) > 1:
        ten_ts = list(np.linspace(pillar_ts[0], pillar_ts[-1], 10))
    else:
        ten_ts = list(base_t * np.linspace(0.5, 1.5, 10))
    spot = setup.spot_eq

    def run_block(mats, strikes):
        for t in mats:
            ctx = pricer.build_context(setup, surf_eq, surf_fx, t,
                                       config.n1, config.n2)
            pricer.quanto_call(ctx, setup, strikes)

    rows = []
    for n_mat, n_strike in _BENCH_SHAPES:
        mats = [base_t] if n_mat == 1 else ten_ts
        strikes = (np.array([spot]) if n_strike == 1
                   else np.linspace(0.7, 1.3, n_strike) * spot)
        run_block(mats, strikes)  # warm-up
        samples = []
        for _ in range(repetitions):
            start = time.perf_counter()
            run_block(mats, strikes)
            samples.append(time.perf_counter() - start)
        total = statistics.median(samples)
        n_options = n_mat * n_strike
        rows.append([n_options, n_mat, n_strike, total, total / n_options])
    _emit(["options", "maturities", "strikes", "total_seconds",
           "per_option_seconds"], rows, config)


if __name__ == "__main__":
    main()
