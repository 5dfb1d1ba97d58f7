"""Command-line front end.

Subcommands: calibrate, analyze, test, simulate, power. Exit codes are
0 on success, 2 for input errors, 3 when a weight table is missing or does
not match, and 4 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import calibrate as cal
from . import inference, mc
from .evt_core import RngStream

EXIT_OK, EXIT_INPUT, EXIT_CALIBRATION, EXIT_NUMERIC = 0, 2, 3, 4
DATA_DIR = Path(__file__).parent / "data"
DEFAULT_RATES = DATA_DIR / "rates_hk.csv"


class InputError(ValueError):
    """Malformed user input (file contents or flags)."""


@dataclass(frozen=True)
class PriceData:
    prices: np.ndarray
    dates: tuple
    labels: tuple
    unit: str | None = None


def parse_prices_csv(path) -> PriceData:
    """Read ``label,date,price[,unit]`` rows; dates are ISO (YYYY-MM-DD)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: empty input")
    header = [h.strip().lower() for h in rows[0]]
    for col in ("label", "date", "price"):
        if col not in header:
            raise InputError(f"{path}: missing column {col!r} in header")
    body = rows[1:]
    if not body:
        raise InputError(f"{path}: empty input (header only)")
    ix = {h: i for i, h in enumerate(header)}
    prices, dates, labels, units = [], [], [], set()
    for lineno, r in enumerate(body, start=2):
        if len(r) < len(header):
            r = r + [""] * (len(header) - len(r))
        raw = r[ix["price"]].strip()
        try:
            price = float(raw)
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric price {raw!r}") from None
        if not np.isfinite(price):
            raise InputError(f"{path}:{lineno}: price must be finite")
        try:
            date = dt.date.fromisoformat(r[ix["date"]].strip())
        except ValueError:
            raise InputError(f"{path}:{lineno}: malformed date {r[ix['date']]!r}") from None
        prices.append(price)
        dates.append(date)
        labels.append(r[ix["label"]].strip())
        if "unit" in ix and r[ix["unit"]].strip():
            units.add(r[ix["unit"]].strip())
    if len(prices) < 3:
        raise InputError(f"{path}: need at least 3 auctions, got {len(prices)}")
    if len(units) > 1:
        raise InputError(f"{path}: mixed currency units {sorted(units)}")
    return PriceData(np.array(prices), tuple(dates), tuple(labels), units.pop() if units else None)


def load_rates(path=DEFAULT_RATES) -> dict:
    """Annual inflation rates in percent, keyed by year."""
    out = {}
    try:
        with open(path, newline="") as fh:
            for lineno, r in enumerate(csv.DictReader(fh), start=2):
                try:
                    out[int(r["year"])] = float(r["rate_percent"]) / 100.0
                except (KeyError, TypeError, ValueError):
                    raise InputError(f"{path}:{lineno}: expected year,rate_percent") from None
    except OSError as exc:
        raise InputError(f"cannot read rate table {path}: {exc}") from exc
    return out


def adjust_inflation(prices, dates, base_year: int, rate_table: dict) -> np.ndarray:
    """Express prices in base-year money: multiply by (1 + rate) for each year up to the base.

    A price from year t < base is multiplied by the rates of years t..base-1;
    a price from a later year is divided by the rates of base..t-1.
    """
    out = np.array(prices, dtype=float)
    for i, d in enumerate(dates):
        year = d.year if hasattr(d, "year") else int(d)
        lo, hi = sorted((year, base_year))
        need = list(range(lo, hi))
        missing = [y for y in need if y not in rate_table]
        if missing:
            raise InputError(f"rate table has no entry for years {missing}")
        factor = float(np.prod([1.0 + rate_table[y] for y in need])) if need else 1.0
        out[i] = out[i] * factor if year <= base_year else out[i] / factor
    return out


# ---------------------------------------------------------------------------
# emission


def _fmt_value(v, prec):
    if isinstance(v, float) and prec is not None:
        return f"{v:.{prec}f}"
    return str(v)


def emit(records: list[dict], out: str, title: str = "", stream=None) -> str:
    stream = stream or sys.stdout
    if out == "json":
        text = json.dumps({"title": title, "rows": records}, indent=2, default=_json_default) + "\n"
    elif out == "csv":
        keys = _keys(records)
        lines = [",".join(keys)]
        for r in records:
            lines.append(",".join(repr(r.get(k, "")) if isinstance(r.get(k), float) else str(r.get(k, ""))
                                  for k in keys))
        text = "\n".join(lines) + "\n"
    else:
        keys = _keys(records)
        lines = [f"### {title}", ""] if title else []
        lines += ["| " + " | ".join(keys) + " |", "|" + "---|" * len(keys)]
        for r in records:
            lines.append("| " + " | ".join(_fmt_value(r.get(k, ""), 3) for k in keys) + " |")
        text = "\n".join(lines) + "\n"
    stream.write(text)
    return text


def _keys(records):
    keys = []
    for r in records:
        for k in r:
            if k not in keys:
                keys.append(k)
    return keys


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ---------------------------------------------------------------------------
# commands


def _read_input(args) -> PriceData:
    if not args.input:
        raise InputError("--input is required")
    data = parse_prices_csv(args.input)
    if args.base_year is not None:
        rates = load_rates(args.rates or DEFAULT_RATES)
        data = PriceData(adjust_inflation(data.prices, data.dates, args.base_year, rates),
                         data.dates, data.labels, data.unit)
    return data


def _table(args, target: str, n: int) -> cal.WeightTable:
    if args.weights and Path(args.weights).is_file():
        return cal.load_table(args.weights, target=target, n=n)
    try:
        return cal.find_table(target, n, args.alpha, args.weights)
    except FileNotFoundError as exc:
        raise cal.TableError(
            f"{exc}. Run: evtauction calibrate --target {target} --n {n} --alpha {args.alpha}"
            + (f" --weights {args.weights}" if args.weights else "")
        ) from None


def cmd_analyze(args) -> list[dict]:
    data = _read_input(args)
    n = data.prices.size
    fmt = args.format
    rows = []
    for quantity in ("winner", "seller"):
        table = _table(args, f"{quantity}_{fmt}", n)
        fn = getattr(inference, f"ci_{quantity}_{fmt}")
        ci = fn(data.prices, table)
        lo = ci.lo
        if quantity == "seller" and args.reserve is not None:
            # a sale never clears below the reserve, so neither does expected revenue
            lo = max(lo, args.reserve)
        rows.append({"quantity": quantity, "lo": lo, "hi": ci.hi, "alpha": ci.alpha, "n": n,
                     "format": ci.format, "weight_table_id": ci.weight_table_id})
    seed = inference.NULL_SEED if args.seed is None else args.seed
    t = inference.test_regularity(data.prices, args.alpha, seed, fmt)
    rows.append({"quantity": "regularity_test", "statistic": t.statistic, "p_value": t.p_value,
                 "reject": t.reject, "alpha": args.alpha, "n": n, "format": t.format, "seed": t.seed,
                 "null_draws": t.null_draws})
    return rows


def cmd_test(args) -> list[dict]:
    data = _read_input(args)
    seed = inference.NULL_SEED if args.seed is None else args.seed
    if args.xi1 is not None:
        t = inference.test_simple(data.prices, args.xi0, args.xi1, args.alpha, seed, args.format)
    else:
        t = inference.test_composite(data.prices, args.xi0, None, args.alpha, seed, args.format)
    return [t.as_dict()]


def cmd_calibrate(args) -> list[dict]:
    if args.n is None or args.n < 3:
        raise InputError("--n must be at least 3")
    cfg = cal.CalibrationConfig(M=args.M, B=args.B, S=args.S, epsilon=args.epsilon,
                                seed=cal.CalibrationConfig.seed if args.seed is None else args.seed)
    outdir = Path(args.weights) if args.weights else Path(".")
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    cache: dict = {}
    for target in args.target.split(","):
        table = cal.calibrate_weights(target, args.n, args.alpha, cfg, RngStream(cfg.seed), strict=False,
                                      lhs_cache=cache)
        path = cal.save_table(table, outdir / cal.table_filename(target, args.n, args.alpha))
        worst = float(np.min(table.coverage))
        rows.append({"target": target, "n": args.n, "alpha": args.alpha, "path": str(path),
                     "weight_table_id": table.table_id, "min_coverage": worst, "seed": cfg.seed})
        if worst < 1 - args.alpha - cal.COVERAGE_SLACK:
            logging.warning("%s: in-sample coverage %.3f below %.3f", target, worst,
                            1 - args.alpha - cal.COVERAGE_SLACK)
    return rows


def _parse_k(text: str):
    if "," in text or ".." in text:
        a, b = text.replace("..", ",").split(",")
        return int(a), int(b)
    return int(text)


def cmd_simulate(args) -> list[dict]:
    reps = args.reps or (500 if args.full_scale else 200)
    seed = 0 if args.seed is None else args.seed
    design = mc.Design(mc.DGPSpec(args.dgp), args.n, _parse_k(args.K), args.format)
    if args.experiment == "test":
        rep = mc.run_test_experiment(design, reps, RngStream(seed), args.alpha)
    else:
        methods = tuple(args.methods.split(","))
        table = _table(args, f"{args.target}_{args.format}", args.n) if "ours" in methods else None
        rep = mc.run_coverage_experiment(design, methods, reps, RngStream(seed), table, args.target, args.alpha)
        for r in rep.rows:
            r["weight_table_id"] = table.table_id if table is not None else ""
    for r in rep.rows:
        r["reps"] = reps
        r["seed"] = seed
    if args.figures:
        _figure_simulate(rep.rows, Path(args.figures), args)
    return rep.rows


def cmd_power(args) -> list[dict]:
    reps = args.reps or 500
    grid = [float(x) for x in args.xi_grid.split(",")] if args.xi_grid else list(np.linspace(-1, 0.5, 10))
    nvals = [int(x) for x in args.n_values.split(",")]
    seed = 0 if args.seed is None else args.seed
    rows = inference.power_curve(grid, nvals, args.alpha, RngStream(seed), reps, args.format)
    for r in rows:
        r["seed"] = seed
    if args.figures:
        _figure_power(rows, Path(args.figures), args)
    return rows


# ---------------------------------------------------------------------------
# figures (optional, written next to the tabular output)


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _figure_power(rows, outdir: Path, args):
    plt = _plt()
    outdir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for n in sorted({r["n"] for r in rows}):
        sub = [r for r in rows if r["n"] == n]
        ax.plot([r["xi"] for r in sub], [r["rejection"] for r in sub], marker="o", label=f"n={n}")
    ax.axhline(args.alpha, color="grey", lw=0.8, ls="--")
    ax.set_xlabel("tail index")
    ax.set_ylabel("rejection rate")
    ax.legend()
    fig.tight_layout()
    path = outdir / "power.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logging.info("wrote %s", path)


def _figure_simulate(rows, outdir: Path, args):
    plt = _plt()
    outdir.mkdir(parents=True, exist_ok=True)
    key = "rejection" if args.experiment == "test" else "coverage"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([r.get("method", "test") for r in rows], [r[key] for r in rows])
    if key == "coverage":
        ax.axhline(1 - args.alpha, color="grey", lw=0.8, ls="--")
    ax.set_ylabel(key)
    ax.set_title(f"{args.dgp}, n={args.n}, K={args.K}")
    fig.tight_layout()
    path = outdir / f"simulate_{args.dgp}_n{args.n}.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logging.info("wrote %s", path)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="CSV with label,date,price[,unit]")
    common.add_argument("--format", choices=("sp", "fp"), default="sp", help="auction format")
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--weights", help="weight-table directory (or a single table file)")
    common.add_argument("--base-year", type=int, help="express prices in this year's money")
    common.add_argument("--rates", help="inflation table CSV (year,rate_percent)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", choices=("json", "csv", "markdown"), default="markdown")
    common.add_argument("--reps", type=int)
    common.add_argument("--full-scale", action="store_true", help="full replication counts (500 per design)")
    common.add_argument("--figures", help="directory for PNG figures (power, simulate)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="evtauction", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", parents=[common], help="compute Lagrange weight tables")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--target", default="winner_sp,seller_sp")
    c.add_argument("--M", type=int, default=50)
    c.add_argument("--B", type=int, default=10_000)
    c.add_argument("--S", type=int, default=2000)
    c.add_argument("--epsilon", type=float, default=0.05)
    c.set_defaults(func=cmd_calibrate)

    a = sub.add_parser("analyze", parents=[common], help="CIs and regularity test for a price file")
    a.add_argument("--reserve", type=float, help="reserve price (output units); floors the seller CI")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("test", parents=[common], help="tail-index test")
    t.add_argument("--xi0", type=float, default=-1.0)
    t.add_argument("--xi1", type=float, help="point alternative (default: uniform weight above xi0)")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo coverage or rejection experiment")
    s.add_argument("--dgp", default="uniform_0_3", help="uniform_0_3|abs_normal|abs_t20|pareto_025 (or u03, ...)")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--K", default="100", help="bidders per auction, or lo,hi for a uniform draw")
    s.add_argument("--experiment", choices=("coverage", "test"), default="coverage")
    s.add_argument("--methods", default="ours,tstat,bootstrap")
    s.add_argument("--target", choices=("winner", "seller"), default="winner")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("power", parents=[common], help="rejection-rate grid of the regularity test")
    w.add_argument("--xi-grid", help="comma-separated tail indices (default 10 points on [-1, 0.5])")
    w.add_argument("--n-values", default="5,10,20")
    w.set_defaults(func=cmd_power)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not 0 < args.alpha < 1:
        print("error: --alpha must lie in (0, 1)", file=sys.stderr)
        return EXIT_INPUT
    try:
        rows = args.func(args)
    except (cal.TableError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (inference.ConfidenceSetError, cal.CalibrationError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    emit(rows, args.out, args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
