"""Command-line front end: run experiments, export metrics, audit traces.

One experiment per invocation.  A run writes four artifacts into the output
directory: trace.json (full per-period record plus the config that produced
it), metrics.csv (fixed column order, 9 significant digits), report.md
(headline numbers against the equal-share baseline), and manifest.json
(enough to reproduce the run bit-exactly).  --audit replays the ledger
invariants over a stored trace; --rerun repeats a run from its manifest.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, CreditBandError
from .online import AllocationTrace
from .ratelimit import ConnectionSpec, run_fluid, schedule_reads
from .sim import (
    MODES,
    ExperimentConfig,
    audit_trace,
    metrics_from_trace,
    run_experiment,
    utility_ratio_cdf,
)

log = logging.getLogger("creditband")

TRACE_SCHEMA = 1
MANIFEST_SCHEMA = 1

RATELIMIT_DEFAULTS = {
    "R": 8.0, "rtt": 0.1, "buf_B": 2.0, "dt": 1e-3, "fluid_duration": 2.0,
    "schedule_duration": 10.0, "bin_s": 0.1,
    "connections": [{"alpha": 1.0}, {"alpha": 0.5}],
}
CONNECTION_FIELDS = {"alpha", "backlog", "block_b", "start_s"}


def _g9(x) -> str:
    return format(float(x), ".9g")


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {p} is not valid JSON: {err}") from err
    return ExperimentConfig.from_dict(raw)


def write_trace(path: Path, config: ExperimentConfig, trace: AllocationTrace) -> None:
    doc = {
        "schema_version": TRACE_SCHEMA,
        "kind": "allocation",
        "config": config.to_dict(),
        "trace": trace.to_dict(),
    }
    _write_atomic(path, json.dumps(doc))


def read_trace(path) -> tuple[dict, ExperimentConfig]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"trace file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"trace file {p} is not valid JSON: {err}") from err
    if not isinstance(doc, dict) or doc.get("schema_version") != TRACE_SCHEMA:
        raise ConfigError(f"trace file {p} has an unsupported schema")
    return doc, ExperimentConfig.from_dict(doc["config"])


def allocation_csv(metrics) -> str:
    n = metrics.budgets.shape[1]
    header = ["period", "mode", "jain_inst", "jain_cum", "total_utility"]
    header += [f"budget_{i + 1}" for i in range(n)]
    lines = [",".join(header)]
    for t in range(metrics.budgets.shape[0]):
        row = [str(t), metrics.mode, _g9(metrics.jain_inst[t]),
               _g9(metrics.jain_cum[t]), _g9(metrics.utility_per_period[t])]
        row += [_g9(b) for b in metrics.budgets[t]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def rates_csv(result, bin_s: float) -> str:
    k = result.rates.shape[0]
    header = ["time"] + [f"rate_{i + 1}" for i in range(k)]
    lines = [",".join(header)]
    edges = np.arange(0.0, result.duration + bin_s / 2, bin_s)
    for t0, t1 in zip(edges[:-1], edges[1:]):
        row = [_g9(t0)] + [_g9(r) for r in result.rates_between(t0, t1)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _late_slice(config: ExperimentConfig) -> slice:
    return slice(config.learn_days * config.slots_per_day, config.periods)


def allocation_report(config, trace, metrics, equal_trace, equal_metrics,
                      recovery, duration_s: float) -> str:
    lines = [
        "# creditband run report", "",
        f"- mode: {config.mode}",
        f"- seed: {config.seed}",
        f"- gateways: {config.n}, periods: {config.periods} "
        f"({config.days} days x {config.slots_per_day} slots)",
        f"- total first-tier utility: {_g9(metrics.total_utility)}",
        f"- cumulative Jain index at the end: {_g9(metrics.jain_cum[-1])}",
        f"- minimum instantaneous Jain index: {_g9(metrics.jain_inst.min())}",
    ]
    if config.mode == "equal_share":
        if np.all(metrics.jain_inst == 1.0):
            lines.append("- instantaneous Jain index is 1 in every period")
    else:
        ratio = metrics.total_utility / equal_metrics.total_utility
        cdf = utility_ratio_cdf(trace, equal_trace)
        lines += [
            f"- equal-share baseline utility: {_g9(equal_metrics.total_utility)}",
            f"- utility ratio vs equal share: {_g9(ratio)}",
            f"- cells below the equal-share utility: "
            f"{_g9(100 * cdf.fraction_below_one)}% (max ratio {_g9(cdf.max_ratio)})",
        ]
    if recovery is not None:
        lines.append(
            f"- online recovery of the optimum after learning: {_g9(100 * recovery)}%")
    lines += [f"- wall-clock: {duration_s:.1f} s", ""]
    return "\n".join(lines)


def _ratelimit_settings(config: ExperimentConfig) -> dict:
    settings = dict(RATELIMIT_DEFAULTS)
    given = config.ratelimit or {}
    unknown = sorted(set(given) - set(RATELIMIT_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown ratelimit fields: {', '.join(unknown)}")
    settings.update(given)
    specs = []
    for k, c in enumerate(settings["connections"]):
        if not isinstance(c, dict) or set(c) - CONNECTION_FIELDS or "alpha" not in c:
            raise ConfigError(f"ratelimit connection {k} needs alpha plus "
                              f"optional backlog, block_b, start_s")
        try:
            specs.append(ConnectionSpec(**c))
        except ValueError as err:
            raise ConfigError(f"ratelimit connection {k}: {err}") from err
    settings["connections"] = specs
    return settings


def run_ratelimit(config: ExperimentConfig, out: Path) -> None:
    s = _ratelimit_settings(config)
    fluid = run_fluid(s["R"], s["rtt"], buf_B=s["buf_B"],
                      duration=s["fluid_duration"], dt=s["dt"])
    result = schedule_reads(s["connections"], s["R"], s["schedule_duration"])
    log.info("ratelimit: terminal error %.3g, rates %s",
             fluid.terminal_rate_error, result.rates)
    doc = {
        "schema_version": TRACE_SCHEMA,
        "kind": "ratelimit",
        "config": config.to_dict(),
        "summary": {
            "R": s["R"], "rtt": s["rtt"],
            "terminal_rate_error": fluid.terminal_rate_error,
            "terminal_window": float(fluid.window[-1]),
            "rates": result.rates.tolist(),
            "alphas": [c.alpha for c in s["connections"]],
        },
    }
    _write_atomic(out / "trace.json", json.dumps(doc))
    _write_atomic(out / "metrics.csv", rates_csv(result, s["bin_s"]))
    lines = [
        "# creditband rate-limit report", "",
        f"- target rate: {_g9(s['R'])} Mbps, rtt: {_g9(s['rtt'])} s",
        f"- terminal rate error: {_g9(100 * fluid.terminal_rate_error)}%",
        f"- terminal window: {_g9(fluid.window[-1])} Mb "
        f"(equilibrium {_g9(s['R'] * s['rtt'])})",
        f"- per-connection rates: {', '.join(_g9(r) for r in result.rates)} Mbps",
        f"- aggregate rate: {_g9(result.rates.sum())} Mbps", "",
    ]
    _write_atomic(out / "report.md", "\n".join(lines))


def cmd_run(config_path, mode=None, seed=None, out_dir="runs") -> int:
    t0 = time.monotonic()
    config = load_config(config_path)
    overrides = {}
    if mode is not None:
        overrides["mode"] = mode
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        config = dataclasses.replace(config, **overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("run: mode %s seed %d -> %s", config.mode, config.seed, out)
    if config.mode == "ratelimit":
        run_ratelimit(config, out)
    else:
        trace, metrics = run_experiment(config)
        violations = audit_trace(trace, config)
        if violations:
            for v in violations:
                print(f"audit: {v}", file=sys.stderr)
            return 1
        if config.mode == "equal_share":
            equal_trace, equal_metrics = trace, metrics
        else:
            equal_trace, equal_metrics = run_experiment(
                dataclasses.replace(config, mode="equal_share"))
        recovery = None
        late = _late_slice(config)
        if config.mode == "online" and late.start < config.periods:
            reference, _ = run_experiment(
                dataclasses.replace(config, mode="global_optimal"))
            recovery = (trace.utilities[late].sum()
                        / reference.utilities[late].sum())
        write_trace(out / "trace.json", config, trace)
        _write_atomic(out / "metrics.csv", allocation_csv(metrics))
        _write_atomic(out / "report.md", allocation_report(
            config, trace, metrics, equal_trace, equal_metrics,
            recovery, time.monotonic() - t0))
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "config_path": str(config_path),
        "mode": config.mode,
        "seed": config.seed,
        "out_dir": str(out),
        "tool_version": __version__,
        "duration_s": round(time.monotonic() - t0, 3),
    }
    _write_atomic(out / "manifest.json", json.dumps(manifest, indent=2))
    return 0


def cmd_audit(trace_path) -> int:
    doc, config = read_trace(trace_path)
    if doc["kind"] == "ratelimit":
        summary = doc["summary"]
        problems = []
        if summary["terminal_rate_error"] > 0.04:
            problems.append(
                f"terminal rate error {summary['terminal_rate_error']:.3g} above 4%")
        total = sum(summary["rates"])
        if total > summary["R"] * 1.02:
            problems.append(f"aggregate rate {total:.9g} above the limit")
        for p in problems:
            print(f"audit: {p}", file=sys.stderr)
        if problems:
            return 1
        print(f"audit passed: rate-limit run at R={_g9(summary['R'])} Mbps")
        return 0
    trace = AllocationTrace.from_dict(doc["trace"])
    violations = audit_trace(trace, config)
    for v in violations:
        print(f"audit: {v}", file=sys.stderr)
    if violations:
        return 1
    metrics = metrics_from_trace(trace, config)
    note = ""
    if np.all(metrics.jain_inst == 1.0):
        note = "; instantaneous Jain index is 1 in every period"
    print(f"audit passed: {trace.periods} periods, {trace.n} gateways{note}")
    return 0


def cmd_rerun(manifest_path, out_override=None) -> int:
    p = Path(manifest_path)
    if not p.is_file():
        raise ConfigError(f"manifest file not found: {p}")
    try:
        manifest = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"manifest {p} is not valid JSON: {err}") from err
    if not isinstance(manifest, dict) or manifest.get("schema_version") != MANIFEST_SCHEMA:
        raise ConfigError(f"manifest {p} has an unsupported schema")
    try:
        return cmd_run(manifest["config_path"], mode=manifest["mode"],
                       seed=manifest["seed"],
                       out_dir=out_override or manifest["out_dir"])
    except KeyError as err:
        raise ConfigError(f"manifest {p} is missing field {err.args[0]!r}") from err


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="creditband",
        description="Credit-based bandwidth allocation experiments.")
    parser.add_argument("--config", metavar="PATH", help="experiment config JSON")
    parser.add_argument("--mode", choices=MODES, help="override the config's mode")
    parser.add_argument("--seed", type=int, metavar="N", help="override the config's seed")
    parser.add_argument("--out", metavar="DIR", help="output directory (default: runs)")
    parser.add_argument("--audit", metavar="PATH", help="audit a stored trace.json")
    parser.add_argument("--rerun", metavar="MANIFEST",
                        help="repeat a run from its manifest.json")
    parser.add_argument("--version", action="version",
                        version=f"creditband {__version__}")
    args = parser.parse_args(argv)
    level = getattr(logging, os.environ.get("CREDITBAND_LOG", "WARNING").upper(),
                    logging.WARNING)
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")
    try:
        if args.audit:
            return cmd_audit(args.audit)
        if args.rerun:
            return cmd_rerun(args.rerun, out_override=args.out)
        if not args.config:
            print("config error: --config is required unless --audit or "
                  "--rerun is given", file=sys.stderr)
            return 2
        return cmd_run(args.config, mode=args.mode, seed=args.seed,
                       out_dir=args.out or "runs")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except CreditBandError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
