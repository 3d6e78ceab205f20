"""Command-line front end: CSV measurements in, smoothed derivatives out.

Input is a two-column CSV with header ``t,y``; rows sharing a time value
are simultaneous measurements at one abscissa.  Output is a CSV of the
smoothed state (signal and derivatives) with posterior standard
deviations, either at the data abscissas or on a dense query grid.

Exit codes: 0 success, 1 malformed input or usage, 2 fitting or
conditioning failure, 3 non-convergence under ``--strict``.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np

from .em import EmConfig, FitReport, fit
from .errors import ConditioningError, FittingError
from .model import MAX_ORDER
from .series import TimeSeries
from .smoother import dense_predict


class ParseError(ValueError):
    """Malformed input file."""


@dataclass
class CliConfig:
    input_path: str
    order: int = 3
    max_iters: int = 50
    rel_tol: float = 1e-3
    dense_step: float | None = None
    dense_times_path: str | None = None
    params_out_path: str | None = None
    fixed_r: float | None = None
    strict: bool = False
    output_path: str | None = None


def parse_input(path: str) -> TimeSeries:
    """Read a ``t,y`` CSV; repeated times become simultaneous measurements."""
    try:
        with open(path, "r", encoding="utf-8-sig") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc

    header_seen = False
    times: list[float] = []
    values: list[float] = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        if not header_seen:
            if text != "t,y":
                raise ParseError(f"expected header 't,y' (line {lineno})")
            header_seen = True
            continue
        fields = text.split(",")
        if len(fields) != 2:
            raise ParseError(f"expected two comma-separated fields (line {lineno})")
        try:
            t_val = float(fields[0])
            y_val = float(fields[1])
        except ValueError:
            raise ParseError(f"non-numeric field (line {lineno})") from None
        if not (math.isfinite(t_val) and math.isfinite(y_val)):
            raise ParseError(f"non-finite value (line {lineno})")
        if times and t_val < times[-1]:
            raise ParseError(f"abscissas must be nondecreasing (line {lineno})")
        times.append(t_val)
        values.append(y_val)
    if not header_seen:
        raise ParseError("empty input file")
    if not times:
        raise ParseError("no data rows")
    return TimeSeries.from_columns(times, values)


def _fmt(x: float) -> str:
    # 17 significant digits: lossless round trip for 64-bit floats
    return format(float(x), ".17g")


def _node_sds(report: FitReport) -> np.ndarray:
    factors = report.smoothed.factors
    return np.sqrt(np.einsum("kij,kij->ki", factors, factors))


def _parse_times_file(path: str) -> list[float]:
    try:
        with open(path, "r", encoding="utf-8-sig") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    out = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            value = float(text)
        except ValueError:
            raise ParseError(f"non-numeric query time (line {lineno})") from None
        if not math.isfinite(value):
            raise ParseError(f"non-finite query time (line {lineno})")
        out.append(value)
    if not out:
        raise ParseError(f"no query times in {path}")
    return out


def _dense_grid(t_first: float, t_last: float, step: float) -> list[float]:
    grid = []
    i = 0
    while True:
        value = t_first + i * step
        if value >= t_last - 1e-9 * step:
            break
        grid.append(value)
        i += 1
    grid.append(t_last)
    return grid


def _query_row(ts: TimeSeries, report: FitReport, tq: float, node_sds: np.ndarray):
    t = ts.abscissas
    idx = int(np.searchsorted(t, tq))
    if idx < t.size and t[idx] == tq:
        return tq, report.smoothed.means[idx], node_sds[idx]
    k = idx - 1
    dt = float(t[k + 1] - t[k])
    theta = (tq - t[k]) / dt
    if theta <= 1e-12:
        return tq, report.smoothed.means[k], node_sds[k]
    if theta >= 1.0 - 1e-12:
        return tq, report.smoothed.means[k + 1], node_sds[k + 1]
    state = dense_predict(report.forward, report.smoothed, k, theta)
    sd = np.sqrt(np.clip(np.diagonal(state.cov), 0.0, None))
    return tq, state.mean, sd


def _output_rows(ts: TimeSeries, report: FitReport, cfg: CliConfig):
    node_sds = _node_sds(report)
    t = ts.abscissas
    if cfg.dense_step is None and cfg.dense_times_path is None:
        return [(float(t[k]), report.smoothed.means[k], node_sds[k]) for k in range(t.size)]
    if cfg.dense_step is not None:
        queries = _dense_grid(float(t[0]), float(t[-1]), cfg.dense_step)
    else:
        queries = sorted(_parse_times_file(cfg.dense_times_path))
        for value in queries:
            if value < t[0] or value > t[-1]:
                raise ParseError(
                    f"query time {value} is outside the data range [{t[0]}, {t[-1]}]"
                )
    return [_query_row(ts, report, tq, node_sds) for tq in queries]


def _render_csv(rows, order: int) -> str:
    header = (
        "t,"
        + ",".join(f"x{j}" for j in range(order))
        + ","
        + ",".join(f"sd{j}" for j in range(order))
    )
    lines = [header]
    for tq, mean, sd in rows:
        cells = [_fmt(tq)]
        cells.extend(_fmt(v) for v in mean)
        cells.extend(_fmt(v) for v in sd)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _render_params(report: FitReport) -> str:
    params = report.params
    p0 = params.p0_factor @ params.p0_factor.T
    lines = [
        f"q = {_fmt(params.q)}",
        f"R = {_fmt(params.r)}",
        "m0 = " + " ".join(_fmt(v) for v in params.m0),
        "P0 = " + " ".join(_fmt(v) for v in p0.ravel()),
        f"nll = {_fmt(report.nll_trace[-1])}",
        "nll_trace = " + " ".join(_fmt(v) for v in report.nll_trace),
        f"iterations = {report.iterations}",
        f"converged = {'true' if report.converged else 'false'}",
    ]
    return "\n".join(lines) + "\n"


def run(cfg: CliConfig) -> int:
    try:
        ts = parse_input(cfg.input_path)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    em_cfg = EmConfig(max_iters=cfg.max_iters, rel_tol=cfg.rel_tol, fixed_r=cfg.fixed_r)
    try:
        report = fit(ts, cfg.order, em_cfg)
        rows = _output_rows(ts, report, cfg)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConditioningError, FittingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    text = _render_csv(rows, cfg.order)
    if cfg.output_path is not None:
        with open(cfg.output_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)

    if cfg.params_out_path is not None:
        with open(cfg.params_out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_render_params(report))

    if cfg.strict and not report.converged:
        print(
            f"error: did not converge within {cfg.max_iters} iterations",
            file=sys.stderr,
        )
        return 3
    return 0


class _ArgumentParser(argparse.ArgumentParser):
    # usage problems exit with the same code as malformed input
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="smoothdiff",
        description=(
            "Estimate a smooth signal and its derivatives from noisy measurements "
            "by maximum-likelihood state-space smoothing."
        ),
    )
    parser.add_argument("input", help="CSV file with header t,y; repeated t values are simultaneous measurements")
    parser.add_argument("--order", type=int, default=3, help="state components: signal plus order-1 derivatives (default 3)")
    parser.add_argument("--max-iter", type=int, default=50, help="EM iteration cap (default 50)")
    parser.add_argument("--tol", type=float, default=1e-3, help="relative change of the smoothed signal at which EM stops (default 1e-3)")
    dense = parser.add_mutually_exclusive_group()
    dense.add_argument("--dense-step", type=float, metavar="DT", help="emit output on a uniform grid with this spacing")
    dense.add_argument("--dense-times", metavar="FILE", help="emit output at the times listed in FILE, one per line")
    parser.add_argument("--params-out", metavar="FILE", help="also write the fitted parameters and fit diagnostics to FILE")
    parser.add_argument("--fixed-r", type=float, metavar="VAR", help="pin the measurement variance instead of estimating it")
    parser.add_argument("--strict", action="store_true", help="exit with status 3 if the fit does not converge")
    parser.add_argument("--output", metavar="FILE", help="write the output CSV here instead of stdout")
    return parser


def parse_args(argv=None) -> CliConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if not 1 <= ns.order <= MAX_ORDER:
        parser.error(f"--order must be in [1, {MAX_ORDER}]")
    if ns.max_iter < 1:
        parser.error("--max-iter must be at least 1")
    if not ns.tol > 0.0:
        parser.error("--tol must be positive")
    if ns.dense_step is not None and not ns.dense_step > 0.0:
        parser.error("--dense-step must be positive")
    if ns.fixed_r is not None and not ns.fixed_r > 0.0:
        parser.error("--fixed-r must be positive")
    return CliConfig(
        input_path=ns.input,
        order=ns.order,
        max_iters=ns.max_iter,
        rel_tol=ns.tol,
        dense_step=ns.dense_step,
        dense_times_path=ns.dense_times,
        params_out_path=ns.params_out,
        fixed_r=ns.fixed_r,
        strict=ns.strict,
        output_path=ns.output,
    )


def main(argv=None) -> None:
    sys.exit(run(parse_args(argv)))


if __name__ == "__main__":
    main()
