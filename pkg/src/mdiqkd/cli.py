"""Command-line runner.

::

    mdiqkd evaluate          --config run.yaml [--out report.csv]
    mdiqkd optimize          --config run.yaml [--out best.csv] [--seed N]
    mdiqkd scan-distance     --config run.yaml --out scan.csv [--threads N] [--plot]
    mdiqkd scan-compensation --config run.yaml --out grid.csv [--threads N] [--plot]

CSV files start with a ``# config <hash>`` comment line followed by a header
row; numbers are written in scientific notation with six significant
digits.  ``optimize`` also writes the optimisation trace next to ``--out``
(``<stem>_trace.csv``).  ``--plot`` additionally renders a PNG next to the
CSV of a scan.

Exit status is 0 on success.  Failures print one JSON line
``{"error": <category>, "message": ...}`` to stderr and exit with
2 (usage), 3 (config), 4 (io), 5 (numerical) or 1 (internal).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

from .channel import CompensationPolicy
from .config import ArmConfig, ConfigError, RunConfig, load_config
from .keyrate import KeyRateReport
from .model import DEFAULT_START, ModelOptimum, optimize_model
from .sources import PARAM_NAMES

__all__ = [
    "main",
    "run_evaluate",
    "run_optimize",
    "run_scan_distance",
    "run_scan_compensation",
    "format_number",
    "EXIT_CODES",
]

log = logging.getLogger("mdiqkd")

EXIT_CODES = {"usage": 2, "config": 3, "io": 4, "numerical": 5, "internal": 1}

_STAT_KEYS = ("xx", "yy", "zz", "oo", "ox", "xo", "oy", "yo")


def format_number(value) -> str:
    if isinstance(value, bool) or isinstance(value, str):
        return str(value)
    if isinstance(value, int):
        return str(value)
    return f"{float(value):.5e}"


def _write_csv(target, digest: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    buf.write(f"# config {digest}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    text = buf.getvalue()
    if target is None:
        sys.stdout.write(text)
    else:
        Path(target).write_text(text)


def _start(cfg: RunConfig):
    return (cfg.params or DEFAULT_START).to_array()


# ---------------------------------------------------------------------------
# tasks


def run_evaluate(cfg: RunConfig) -> tuple[KeyRateReport, dict]:
    """Report for the configured parameters plus the per-source-pair statistics."""
    if cfg.params is None:
        raise ConfigError("params", "evaluate needs explicit parameters")
    model = cfg.model()
    report = model.report(cfg.params)
    stats = model.stats(cfg.params)
    table = {k: (stats.N[k], stats.S[k], stats.E[k]) for k in _STAT_KEYS}
    return report, table


def run_optimize(cfg: RunConfig) -> ModelOptimum:
    return optimize_model(cfg.model(), _start(cfg), cfg.optimizer)


def _distance_point(args) -> tuple[float, float, float, tuple[float, ...]]:
    cfg, la, lb = args
    channel = replace(cfg.channel, A=ArmConfig(km=la), B=ArmConfig(km=lb))
    opt = optimize_model(cfg.model(channel=channel), _start(cfg), cfg.optimizer)
    return la, lb, opt.value, tuple(opt.best.to_array())


def _compensation_point(args) -> tuple[float, float, float, float, tuple[float, ...]]:
    cfg, d, e = args
    policy = CompensationPolicy.from_db(d, e)
    opt = optimize_model(cfg.model(compensation=policy), _start(cfg), cfg.optimizer)
    return d, e, policy.delta, opt.value, tuple(opt.best.to_array())


def _map(fn, jobs, threads: int):
    # results come back in input order whatever the completion order
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def run_scan_distance(cfg: RunConfig, threads: int = 1) -> list[tuple]:
    if not cfg.scan.distances:
        raise ConfigError("scan.distances", "scan-distance needs a non-empty list of (L_A, L_B) pairs")
    if cfg.channel.A.unstable:
        raise ConfigError("channel", "scan-distance needs a stable channel")
    return _map(_distance_point, [(cfg, la, lb) for la, lb in cfg.scan.distances], threads)


def compensation_grid(cfg: RunConfig) -> list[tuple[float, float]]:
    """The configured cells with the no-compensation baseline ``(0, 0)`` first."""
    cells = [tuple(c) for c in cfg.scan.compensation]
    if (0.0, 0.0) in cells:
        cells.remove((0.0, 0.0))
    return [(0.0, 0.0)] + cells


def run_scan_compensation(cfg: RunConfig, threads: int = 1) -> list[tuple]:
    if not cfg.scan.compensation:
        raise ConfigError("scan.compensation", "scan-compensation needs a list of (delta_dB, eta_prime_dB) cells")
    jobs = [(cfg, d, e) for d, e in compensation_grid(cfg)]
    return _map(_compensation_point, jobs, threads)


# ---------------------------------------------------------------------------
# output


def _report_rows(report: KeyRateReport, table: dict) -> list[tuple[str, object]]:
    rows = [(k, v) for k, v in report.as_dict().items() if k != "clamped"]
    rows.append(("clamped", ";".join(report.clamped)))
    for k, (N, S, E) in table.items():
        rows += [(f"N_{k}", N), (f"S_{k}", S), (f"E_{k}", E)]
    return rows


def _print_report(report: KeyRateReport, table: dict, stream) -> None:
    print(f"{'pair':>4} {'N':>12} {'S':>12} {'E':>12}", file=stream)
    for k, (N, S, E) in table.items():
        print(f"{k:>4} {N:12.5e} {S:12.5e} {E:12.5e}", file=stream)
    for k, v in report.as_dict().items():
        print(f"{k:>12} = {v if isinstance(v, (str, tuple, list)) else format_number(v)}", file=stream)


def _trace_path(out: Path) -> Path:
    return out.with_name(out.stem + "_trace.csv")


def _cmd_evaluate(cfg, args) -> None:
    report, table = run_evaluate(cfg)
    _print_report(report, table, sys.stderr if args.out is None else sys.stdout)
    _write_csv(args.out, cfg.digest(), ("quantity", "value"), _report_rows(report, table))


def _cmd_optimize(cfg, args) -> None:
    opt = run_optimize(cfg)
    header = ("R_per_pair", *PARAM_NAMES, "s11_lower", "e11ph_upper", "s11_argmin", "e11ph_argmin",
              "H_argmin", "branch")
    r = opt.report
    row = (opt.value, *opt.best.to_array(), r.s11_lower, r.e11ph_upper, r.s11_argmin, r.e11ph_argmin,
           r.H_argmin, r.branch)
    _write_csv(args.out, cfg.digest(), header, [row])
    trace_rows = [
        (e.start, e.iteration, e.move, e.value, *e.params) for e in opt.result.trace
    ]
    trace_target = args.trace or (_trace_path(Path(args.out)) if args.out else None)
    if trace_target is not None:
        _write_csv(trace_target, cfg.digest(), ("start", "iteration", "move", "R_per_pair", *PARAM_NAMES),
                   trace_rows)
    log.info("optimum %.6e after %d evaluations", opt.value, opt.result.trace.evaluations)


def _cmd_scan_distance(cfg, args) -> None:
    rows = run_scan_distance(cfg, args.threads)
    header = ("L_A_km", "L_B_km", "R_per_pair", *PARAM_NAMES)
    _write_csv(args.out, cfg.digest(), header, [(a, b, r, *p) for a, b, r, p in rows])
    if args.plot:
        from .plotting import plot_distance_scan

        png = Path(args.out).with_suffix(".png")
        plot_distance_scan([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], png)
        log.info("wrote %s", png)


def _cmd_scan_compensation(cfg, args) -> None:
    for d, e in compensation_grid(cfg):
        p = CompensationPolicy.from_db(d, e)
        print(
            f"delta {d:g} dB -> linear threshold {p.delta:.6g}; extra loss {e:g} dB -> eta' {p.eta_prime:.6g}",
            file=sys.stderr,
        )
    rows = run_scan_compensation(cfg, args.threads)
    header = ("delta_dB", "eta_prime_dB", "delta_linear", "R_per_pair", *PARAM_NAMES)
    _write_csv(args.out, cfg.digest(), header, [(d, e, dl, r, *p) for d, e, dl, r, p in rows])
    if args.plot:
        from .plotting import plot_compensation_scan

        png = Path(args.out).with_suffix(".png")
        plot_compensation_scan([r[0] for r in rows], [r[1] for r in rows], [r[3] for r in rows], png)
        log.info("wrote %s", png)


_COMMANDS = {
    "evaluate": _cmd_evaluate,
    "optimize": _cmd_optimize,
    "scan-distance": _cmd_scan_distance,
    "scan-compensation": _cmd_scan_compensation,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdiqkd", description="Four-intensity decoy-state MDI-QKD key rates.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output CSV (stdout if omitted)")
        p.add_argument("--seed", type=int, help="override optimizer.seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes for scans")
        p.add_argument("--verbose", "-v", action="count", default=0)
        if name == "optimize":
            p.add_argument("--trace", help="trace CSV (default: <out stem>_trace.csv)")
        if name.startswith("scan"):
            p.add_argument("--plot", action="store_true", help="also write a PNG figure next to --out")
    return parser


def _fail(category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES[category]


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        return _fail("usage", str(exc))
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1:
        return _fail("usage", "--threads must be at least 1")
    if getattr(args, "plot", False) and args.out is None:
        return _fail("usage", "--plot needs --out")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        return _fail("usage", "--seed must be an unsigned 64-bit integer")
    try:
        cfg = load_config(args.config)
        if cfg.task is not None and cfg.task != args.command:
            raise ConfigError("task", f"config is for {cfg.task!r}, not {args.command!r}")
        if args.seed is not None:
            cfg = replace(cfg, optimizer=replace(cfg.optimizer, seed=args.seed))
        _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        return _fail("config", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    except (ValueError, ArithmeticError) as exc:
        return _fail("numerical", f"{type(exc).__name__}: {exc}")
    except Exception as exc:  # pragma: no cover - last resort
        log.debug("unexpected failure", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
