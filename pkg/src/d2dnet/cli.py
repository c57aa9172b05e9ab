"""Command-line front end: analyze, validate and sweep.

Every command produces a ``ResultTable`` written as CSV (metadata in leading
``#`` lines) or JSON (``{metadata, columns, rows}``). The metadata carries the
full parameter set in SI units plus every option needed to re-run the command.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import ConvergenceError, D2DNetError, ModelDomainError, ParameterFileError, SaturationError
from .model import (
    DEFAULT_PARAMS,
    NetworkParams,
    convert_value,
    derive,
    linear_to_db,
    load_params,
    mode_selection_probability,
    params_from_mapping,
    watts_to_dbm,
)
from .outage import Mode, link_capacity, outage_cellular, outage_d2d, potential_d2d_rate, total_network_capacity
from .power import (
    case4_split_probability,
    moment_power_case2,
    moment_power_case4_cellular,
    moment_power_d2d,
    mean_power_potential_d2d,
)
from .sim import SimulationConfig, classify_and_schedule, realize_network, run_campaign, write_dump

log = logging.getLogger("d2dnet")

EXIT_OK = 0
EXIT_PARAMS = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4
EXIT_SIMULATION = 5

NA = "NA"
NATS_PER_BIT = math.log(2.0)


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add_row(self, values: dict) -> None:
        self.rows.append([values.get(c) for c in self.columns])

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


# ---------------------------------------------------------------------------
# writers


def _cell_text(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return NA
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_cell(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, np.generic):
        return _json_cell(value.item())
    return value


def render(table: ResultTable, fmt: str) -> str:
    if fmt == "json":
        doc = {
            "metadata": table.metadata,
            "columns": table.columns,
            "rows": [[_json_cell(v) for v in row] for row in table.rows],
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    for key, value in table.metadata.items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell_text(v) for v in row])
    return buf.getvalue()


def write_output(table: ResultTable, fmt: str = "csv", path: str | Path | None = None) -> None:
    """Write ``table`` to ``path`` (stdout when None or ``-``)."""
    text = render(table, fmt)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _parse_cell(text: str):
    if text == NA:
        return None
    try:
        return float(text)
    except ValueError:
        return text


def read_table(path: str | Path) -> ResultTable:
    """Parse a file written by ``write_output`` (format chosen by content)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        return ResultTable(doc["columns"], doc["rows"], doc["metadata"])
    metadata = {}
    lines = text.splitlines()
    body_start = 0
    for body_start, line in enumerate(lines):
        if not line.startswith("#"):
            break
        key, value = line[1:].strip().split(": ", 1)
        metadata[key] = json.loads(value)
    else:
        body_start = len(lines)
    reader = csv.reader(lines[body_start:])
    columns = next(reader, [])
    rows = [[_parse_cell(c) for c in row] for row in reader]
    return ResultTable(columns, rows, metadata)


# ---------------------------------------------------------------------------
# analytical metrics

METRICS = (
    "mode_selection_prob",
    "truncation_cellular",
    "truncation_d2d",
    "outage_cellular",
    "outage_d2d",
    "capacity_cellular",
    "capacity_d2d",
    "potential_d2d_rate",
    "total_capacity",
    "mean_power_potential_d2d",
    "mean_power_d2d",
    "mean_power_case2",
    "mean_power_case4_cellular",
)


def _d2d_active(p: NetworkParams) -> bool:
    return p.potential_d2d_intensity > 0 and (p.bias_is_infinite or p.bias > 0)


class _MetricEvaluator:
    """Lazy evaluation of the analytical metrics for one parameter set.

    Metrics that do not apply (D2D quantities when nobody uses D2D) are None.
    """

    def __init__(self, params: NetworkParams, bits: bool = False):
        self.p = params
        self.scale = 1.0 / NATS_PER_BIT if bits else 1.0
        self._rates = None

    def rates(self):
        if self._rates is None:
            r_c = link_capacity(Mode.CELLULAR, self.p)
            r_d = link_capacity(Mode.D2D, self.p) if _d2d_active(self.p) else None
            self._rates = (r_c, r_d)
        return self._rates

    def __call__(self, name: str):
        p = self.p
        active = _d2d_active(p)
        if name == "mode_selection_prob":
            return mode_selection_probability(p).prob_d2d
        if name == "truncation_cellular":
            return derive(p).truncation_outage
        if name == "truncation_d2d":
            return 1.0 - derive(p).d2d_retention
        if name == "outage_cellular":
            return outage_cellular(p).outage_probability
        if name == "outage_d2d":
            return outage_d2d(p).outage_probability if active else None
        if name == "capacity_cellular":
            return self.rates()[0] * self.scale
        if name == "capacity_d2d":
            r_d = self.rates()[1]
            return None if r_d is None else r_d * self.scale
        if name == "potential_d2d_rate":
            return potential_d2d_rate(p, self.rates()) * self.scale if p.potential_d2d_intensity > 0 else None
        if name == "total_capacity":
            return total_network_capacity(p, self.rates()) * self.scale
        if name == "mean_power_potential_d2d":
            return mean_power_potential_d2d(p) if p.potential_d2d_intensity > 0 else None
        if name == "mean_power_d2d":
            return moment_power_d2d(1.0, p) if active else None
        if name == "mean_power_case2":
            return moment_power_case2(1.0, p)
        if name == "mean_power_case4_cellular":
            if p.potential_d2d_intensity == 0 or case4_split_probability(p).prob_cellular_given_case4 == 0:
                return None
            return moment_power_case4_cellular(1.0, p)
        raise KeyError(name)


def _metric_columns(metrics: Sequence[str]) -> list[str]:
    cols = []
    for m in metrics:
        cols.append(m)
        if m.startswith("mean_power_"):
            cols.append(m + "_dbm")
    return cols


def _metric_values(params: NetworkParams, metrics: Sequence[str], bits: bool) -> dict:
    ev = _MetricEvaluator(params, bits)
    out = {}
    for m in metrics:
        value = ev(m)
        out[m] = value
        if m.startswith("mean_power_"):
            out[m + "_dbm"] = None if value is None else watts_to_dbm(value)
    return out


# ---------------------------------------------------------------------------
# parameter handling


def _parse_overrides(items: Sequence[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ParameterFileError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        out[key] = value
    return out


def resolve_params(param_file: str | None, overrides: Sequence[str] | None) -> NetworkParams:
    base = load_params(param_file) if param_file else DEFAULT_PARAMS
    return params_from_mapping(_parse_overrides(overrides), base)


def _base_metadata(command: str, params: NetworkParams, bits: bool) -> dict:
    return {
        "tool": "d2dnet",
        "version": __version__,
        "command": command,
        "params": params.to_dict(),
        "rate_unit": "bits/s/Hz" if bits else "nats/s/Hz",
    }


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(params: NetworkParams, bits: bool = False) -> ResultTable:
    """One row with every analytical metric at ``params``."""
    d = derive(params)
    geometry = {
        "max_d2d_range_m": d.max_d2d_range,
        "d2d_range_m": d.d2d_range,
        "cellular_range_m": d.cellular_range,
        "d2d_link_intensity_per_m2": mode_selection_probability(params).d2d_link_intensity,
    }
    columns = list(geometry) + _metric_columns(METRICS)
    table = ResultTable(columns, metadata=_base_metadata("analyze", params, bits))
    table.add_row({**geometry, **_metric_values(params, METRICS, bits)})
    return table


VALIDATE_COLUMNS = [
    "theta",
    "theta_db",
    "outage_cellular_analytic",
    "outage_cellular_sim",
    "outage_cellular_ci95",
    "outage_cellular_gap",
    "outage_d2d_analytic",
    "outage_d2d_sim",
    "outage_d2d_ci95",
    "outage_d2d_gap",
]


def cmd_validate(params: NetworkParams, config: SimulationConfig, thresholds: Sequence[float],
                 workers: int = 1) -> ResultTable:
    """Analytical against simulated outage, one row per SINR threshold."""
    th = np.asarray(thresholds, dtype=float)
    metrics = run_campaign(params, config, th, workers=workers)
    est = {m: metrics.estimate(f"{m}_outage") for m in ("cellular", "d2d")}
    table = ResultTable(list(VALIDATE_COLUMNS), metadata=_base_metadata("validate", params, False))
    table.metadata["simulation"] = {
        "rng_seed": config.rng_seed,
        "num_realizations": config.num_realizations,
        "window_side_m": config.window_side,
        "guard_fraction": config.guard_fraction,
        "saturation_enabled": config.saturation_enabled,
    }
    summary = {}
    for name in ("cellular_truncation", "d2d_truncation", "mode_rule_fraction", "d2d_mode_fraction"):
        e = metrics.estimate(name)
        summary[name] = {"mean": _json_cell(float(e.mean)), "stderr": _json_cell(float(e.stderr))}
    table.metadata["empirical"] = summary
    active = _d2d_active(params)
    for i, theta in enumerate(th):
        row = {"theta": float(theta), "theta_db": linear_to_db(float(theta))}
        for mode, fn in (("cellular", outage_cellular), ("d2d", outage_d2d)):
            if mode == "d2d" and not active:
                continue
            analytic = fn(params, float(theta)).outage_probability
            sim_mean = float(est[mode].mean[i])
            row[f"outage_{mode}_analytic"] = analytic
            row[f"outage_{mode}_sim"] = sim_mean
            row[f"outage_{mode}_ci95"] = float(est[mode].ci95()[i])
            row[f"outage_{mode}_gap"] = abs(analytic - sim_mean)
        table.add_row(row)
    return table


SWEEP_PARAMETERS = {
    "T_d": "bias",
    "rho_o": "cutoff_threshold",
    "theta": "sinr_threshold",
    "lambda": "bs_intensity",
}
_DB_PARAMETERS = {"rho_o": "dBm", "theta": "dB"}


def parse_grid(parameter: str, text: str) -> list[float]:
    """Parse a sweep grid.

    Either a comma list of values (units allowed, e.g. ``-80dBm,-70dBm``) or
    ``start:stop:count:spacing`` with spacing ``linear``, ``log`` or ``dB``.
    With ``dB`` spacing, start and stop are given in dB (dBm for rho_o) and
    the points are evenly spaced in dB.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ParameterFileError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEP_PARAMETERS)}", key=parameter)
    key = SWEEP_PARAMETERS[parameter]
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 4:
            raise ParameterFileError(f"grid {text!r}: expected start:stop:count:spacing", key=parameter)
        start_s, stop_s, count_s, spacing = parts
        try:
            count = int(count_s)
        except ValueError:
            raise ParameterFileError(f"grid count {count_s!r} is not an integer", key=parameter) from None
        if count < 1:
            raise ParameterFileError("grid count must be >= 1", key=parameter)
        spacing = spacing.strip()
        if spacing == "dB":
            if parameter not in _DB_PARAMETERS:
                raise ParameterFileError(f"dB spacing is only allowed for {sorted(_DB_PARAMETERS)}", key=parameter)
            unit = _DB_PARAMETERS[parameter]
            db_values = np.linspace(float(start_s), float(stop_s), count)
            values = [float(convert_value(key, f"{float(v)!r} {unit}")) for v in db_values]
        elif spacing in ("linear", "log"):
            lo, hi = float(convert_value(key, start_s)), float(convert_value(key, stop_s))
            if spacing == "log":
                if not (lo > 0 and hi > 0):
                    raise ParameterFileError("log spacing needs positive endpoints", key=parameter)
                values = list(np.geomspace(lo, hi, count))
            else:
                values = list(np.linspace(lo, hi, count))
            values = [float(v) for v in values]
        else:
            raise ParameterFileError(f"unknown spacing {spacing!r}", key=parameter)
    else:
        values = []
        for item in text.split(","):
            if not item.strip():
                continue
            v = convert_value(key, item.strip())
            values.append(float(v) if isinstance(v, (int, float)) else v)
    if not values:
        raise ParameterFileError("grid is empty", key=parameter)
    numeric = [_grid_value(v) for v in values]
    diffs = np.diff(numeric)
    if len(values) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ParameterFileError("grid must be strictly monotone", key=parameter)
    return values


def cmd_sweep(params: NetworkParams, parameter: str, grid: Sequence, metrics: Sequence[str] = METRICS,
              bits: bool = False) -> ResultTable:
    """One row per grid point; failures at a point go into the ``error`` column."""
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise ParameterFileError(f"unknown metric(s) {unknown}; choose from {list(METRICS)}")
    key = SWEEP_PARAMETERS[parameter]
    lead = [parameter]
    if parameter == "rho_o":
        lead.append("rho_o_dbm")
    elif parameter == "theta":
        lead.append("theta_db")
    columns = lead + _metric_columns(metrics) + ["error"]
    table = ResultTable(columns, metadata=_base_metadata("sweep", params, bits))
    table.metadata["sweep"] = {"parameter": parameter, "grid": [_json_cell(_grid_value(v)) for v in grid]}
    for value in grid:
        row = {parameter: _grid_value(value)}
        if parameter == "rho_o":
            row["rho_o_dbm"] = watts_to_dbm(value)
        elif parameter == "theta":
            row["theta_db"] = linear_to_db(value)
        try:
            point = params.with_(**{key: value})
            row.update(_metric_values(point, metrics, bits))
        except D2DNetError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        table.add_row(row)
    return table


def _grid_value(v):
    return math.inf if not isinstance(v, (int, float)) else float(v)


# ---------------------------------------------------------------------------
# argument parsing


def _theta_grid(text: str) -> list[float]:
    if ":" in text:
        start, stop, step = (float(s) for s in text.split(":"))
        n = int(round((stop - start) / step)) + 1
        db = [round(start + i * step, 12) for i in range(n)]
    else:
        db = [float(s) for s in text.split(",") if s.strip()]
    return [10.0 ** (v / 10.0) for v in db]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", metavar="FILE", help="parameter file (key = value unit)")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one parameter, e.g. --set cutoff_threshold=-80dBm (repeatable)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", metavar="PATH", help="output file (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="d2dnet", description="D2D underlay uplink analysis and simulation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="all analytical metrics at one parameter point")
    a.add_argument("--bits", action="store_true", help="report rates in bits instead of nats")

    v = sub.add_parser("validate", parents=[common], help="analytical vs Monte Carlo outage")
    v.add_argument("--seed", type=int, default=SimulationConfig.rng_seed)
    v.add_argument("--realizations", type=int, default=2000)
    v.add_argument("--window-km2", type=float, default=100.0)
    v.add_argument("--guard", type=float, default=0.2, help="guard ring width as a fraction of the window side")
    v.add_argument("--no-saturation", action="store_true")
    v.add_argument("--theta-db", default="-10:20:2", help="start:stop:step or comma list, in dB")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--dump", metavar="PATH", help="also write the first realization, one row per UE")

    s = sub.add_parser("sweep", parents=[common], help="analytical metrics along a parameter grid")
    s.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMETERS))
    s.add_argument("--grid", required=True, help="v1,v2,... or start:stop:count:linear|log|dB")
    s.add_argument("--metrics", default=",".join(METRICS), help="comma-separated metric names")
    s.add_argument("--bits", action="store_true")
    return parser


def _run(args) -> ResultTable:
    params = resolve_params(args.params, args.set)
    if args.command == "analyze":
        return cmd_analyze(params, bits=args.bits)
    if args.command == "validate":
        if args.window_km2 <= 0:
            raise ModelDomainError("--window-km2 must be positive")
        config = SimulationConfig(
            window_side=math.sqrt(args.window_km2 * 1e6),
            guard_fraction=args.guard,
            num_realizations=args.realizations,
            rng_seed=args.seed,
            saturation_enabled=not args.no_saturation,
        )
        try:
            thresholds = _theta_grid(args.theta_db)
        except ValueError as exc:
            raise ParameterFileError(f"bad --theta-db {args.theta_db!r}: {exc}", key="theta") from None
        if args.dump:
            write_dump(classify_and_schedule(realize_network(params, config, 0)), args.dump)
        return cmd_validate(params, config, thresholds, workers=args.workers)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    grid = parse_grid(args.param, args.grid)
    return cmd_sweep(params, args.param, grid, metrics, bits=args.bits)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        table = _run(args)
        write_output(table, args.format, args.out)
    except ParameterFileError as exc:
        where = f" [{exc.key}]" if exc.key else ""
        print(f"parameter error{where}: {exc}", file=sys.stderr)
        return EXIT_PARAMS
    except ModelDomainError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAMS
    except ConvergenceError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except SaturationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    # runtime stays out of the table so identical inputs give identical files
    print(f"{args.command} finished in {time.perf_counter() - started:.2f} s", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
