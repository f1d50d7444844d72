"""Command-line front end.

Subcommands wire the pipeline:

* fit          — per-pair empirical CDFs over a time-of-day window of the
                 historical series, concave PWL fits, utilities file +
                 fit-quality CSV;
* allocate     — solve the allocation, clean flow cycles, disaggregate,
                 write demands/flows/circuits/summary/residuals;
* disaggregate — re-derive circuits from saved demands + flows;
* simulate     — OSPF saturation search, strategy x load sweep, report CSV;
* report       — optional SVG plots from a report CSV.

A config file holds flat `key value` lines mirroring the flags (plus
repeatable `merge <from> <into>` directives); command-line flags override
file values. Every command rewrites the effective config next to its
outputs, so a run can be reproduced exactly from its output directory.
Exit codes: 0 ok, 2 validation/config error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import allocator, circuits as circuits_mod, netmodel, simulator, utility
from .errors import ConfigurationError, SolverError, ValidationError

DEFAULT_MULTIPLIERS = (0.33, 0.67, 1.0, 1.17, 1.33, 1.5, 1.67)
_WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")

_CONFIG_KEYS = (
    "topology", "traffic_dir", "units_scale", "alpha", "segments", "mode",
    "out", "window", "method", "strategies", "multipliers", "circuits",
    "utilities", "matrix_index", "dt", "buffer_seconds", "threshold_seconds",
    "warmup_slots", "plots",
)


@dataclass
class RunConfig:
    topology: str | None = None
    traffic_dir: str | None = None
    units_scale: float = 1.0
    alpha: float = 2.0
    segments: int = 3
    mode: str = "history"
    out: str = "out"
    window: str | None = None          # e.g. "wed 15:00-15:30"
    method: str = "greedy"             # disaggregation
    strategies: str | None = None      # comma list of sweep labels
    multipliers: str | None = None     # comma list, units of s0
    circuits: str | None = None        # circuits file (HIST strategies)
    utilities: str | None = None       # utilities file
    matrix_index: int = -1
    dt: float = 1.0
    buffer_seconds: float = 1.0
    threshold_seconds: float = 0.1
    warmup_slots: int = 300
    plots: bool = False
    merges: list = field(default_factory=list)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in _CONFIG_KEYS:
                val = getattr(self, key)
                if val is None:
                    continue
                if isinstance(val, bool):
                    val = "true" if val else "false"
                fh.write(f"{key} {val}\n")
            for frm, into in self.merges:
                fh.write(f"merge {frm} {into}\n")


def load_config(path) -> RunConfig:
    cfg = RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 1)
            key = parts[0]
            if key == "merge":
                toks = parts[1].split() if len(parts) > 1 else []
                if len(toks) != 2:
                    raise ConfigurationError(
                        f"{path}:{line_no}: merge needs `<from> <into>`")
                cfg.merges.append((toks[0], toks[1]))
                continue
            if key not in _CONFIG_KEYS:
                raise ConfigurationError(f"{path}:{line_no}: unknown key {key!r}")
            if len(parts) != 2:
                raise ConfigurationError(f"{path}:{line_no}: missing value")
            _set_typed(cfg, key, parts[1].strip())
    return cfg


def _set_typed(cfg: RunConfig, key: str, value: str) -> None:
    current = getattr(RunConfig(), key)
    if isinstance(current, bool):
        setattr(cfg, key, value.lower() in ("1", "true", "yes", "on"))
    elif isinstance(current, int):
        setattr(cfg, key, int(value))
    elif isinstance(current, float):
        setattr(cfg, key, float(value))
    else:
        setattr(cfg, key, value)


def _merge_cli(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "merge", None):
        cfg.merges.extend((frm, into) for frm, into in args.merge)
    return cfg


# ---------------------------------------------------------------------------
# shared loading


def _load_inputs(cfg: RunConfig, need_traffic: bool = True):
    if not cfg.topology:
        raise ConfigurationError("a topology file is required (--topology)")
    topo = netmodel.load_topology(cfg.topology)
    index_map = None
    raw_n = topo.num_nodes
    if cfg.merges:
        topo, index_map = netmodel.merge_nodes(topo, cfg.merges)
    series = None
    if need_traffic:
        if not cfg.traffic_dir:
            raise ConfigurationError("a traffic directory is required (--traffic-dir)")
        series = netmodel.load_traffic_series(
            cfg.traffic_dir, raw_n, units_scale=cfg.units_scale)
        if index_map is not None:
            merged = []
            for mat in series.matrices:
                off = netmodel.merge_demand_entries(
                    mat.offdiagonal(), index_map, topo.num_nodes)
                merged.append(netmodel.complete_demand_matrix(off))
            series = netmodel.TrafficSeries(
                timestamps=series.timestamps, matrices=tuple(merged),
                interval=series.interval)
    return topo, series


def _parse_window(text: str):
    try:
        day_part, span = text.split()
        start_s, end_s = span.split("-")
        day = _WEEKDAYS.index(day_part.lower()[:3])
        sh, sm = (int(v) for v in start_s.split(":"))
        eh, em = (int(v) for v in end_s.split(":"))
    except (ValueError, IndexError):
        raise ConfigurationError(
            f"bad window {text!r}; expected e.g. `wed 15:00-15:30`")
    return day, sh * 60 + sm, eh * 60 + em


def _filter_window(series: netmodel.TrafficSeries, window: str):
    day, start_min, end_min = _parse_window(window)
    picked = []
    for ts, mat in zip(series.timestamps, series.matrices):
        t = datetime.fromtimestamp(ts, tz=timezone.utc)
        minutes = t.hour * 60 + t.minute
        if t.weekday() == day and start_min <= minutes < end_min:
            picked.append((ts, mat))
    if not picked:
        span = (datetime.fromtimestamp(series.timestamps[0], tz=timezone.utc),
                datetime.fromtimestamp(series.timestamps[-1], tz=timezone.utc))
        raise ValidationError(
            f"window {window!r} selects no matrices; series spans "
            f"{span[0].isoformat()} .. {span[1].isoformat()}")
    return picked


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg: RunConfig) -> int:
    if cfg.mode != "history":
        raise ConfigurationError("fit runs in history mode (--mode history)")
    if not cfg.window:
        raise ConfigurationError("history mode needs a time-of-day window "
                                 "(--window 'wed 15:00-15:30')")
    topo, series = _load_inputs(cfg)
    picked = _filter_window(series, cfg.window)
    if len(picked) < 2:
        print(f"warning: only {len(picked)} matrix in the window; "
              f"fits degrade to the degenerate fallback", file=sys.stderr)
    n = topo.num_nodes
    utilities = {}
    quality = []
    for k in range(n):
        for l in range(n):
            if k == l:
                continue
            samples = np.array([mat.entries[k, l] for _, mat in picked])
            cdf = utility.empirical_cdf(samples)
            pwl = utility.fit_concave_pwl(cdf, segments=cfg.segments)
            utilities[(k, l)] = pwl
            med = cdf.median()
            xs = cdf.samples[cdf.samples >= med]
            if xs.size:
                err = np.array([pwl.evaluate(float(x)) for x in xs]) - cdf(xs)
                rms = float(np.sqrt(np.mean(err ** 2)))
            else:
                rms = 0.0
            bp = ";".join(f"{x:.6g}:{y:.6g}" for x, y in pwl.breakpoints)
            quality.append((k, l, rms, bp))
    family = utility.UtilityFamily(alpha=cfg.alpha, utilities=utilities)
    os.makedirs(cfg.out, exist_ok=True)
    utility.save_utilities(family, os.path.join(cfg.out, "utilities.txt"))
    with open(os.path.join(cfg.out, "fit_quality.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("k,l,rms_error,breakpoints\n")
        for k, l, rms, bp in quality:
            fh.write(f"{k + 1},{l + 1},{rms:.9g},{bp}\n")
    cfg.dump(os.path.join(cfg.out, "effective.conf"))
    print(f"fitted {len(utilities)} utilities from {len(picked)} matrices "
          f"-> {cfg.out}/utilities.txt")
    return 0


def _realtime_family(cfg: RunConfig, series: netmodel.TrafficSeries,
                     idx: int) -> utility.UtilityFamily:
    """Rates for real-time allocation: mean of the snapshot and its
    predecessor (the first snapshot stands alone)."""
    idx = idx % len(series)
    if idx == 0:
        rates = series.matrices[0]
    else:
        mean = 0.5 * (series.matrices[idx].offdiagonal()
                      + series.matrices[idx - 1].offdiagonal())
        rates = netmodel.complete_demand_matrix(mean)
    return utility.realtime_utilities(rates, alpha=cfg.alpha)


def _allocate_once(cfg: RunConfig, topo, family):
    problem = allocator.build_problem(topo, family)
    result = allocator.solve(problem)
    cleaned = allocator.cancel_cycles(result.flows, topo)
    if cfg.method == "proportional":
        detailed = circuits_mod.disaggregate_proportional(
            cleaned, result.demands, topo)
    elif cfg.method == "greedy":
        detailed = circuits_mod.disaggregate_greedy(
            cleaned, result.demands, topo)
    else:
        raise ConfigurationError(f"unknown disaggregation method {cfg.method!r}")
    config = circuits_mod.build_circuit_config(detailed, result.demands, topo)
    return result, cleaned, detailed, config


def cmd_allocate(cfg: RunConfig) -> int:
    topo, series = _load_inputs(cfg, need_traffic=(cfg.mode == "realtime"))
    if cfg.mode == "realtime":
        family = _realtime_family(cfg, series, cfg.matrix_index)
    else:
        if not cfg.utilities:
            raise ConfigurationError(
                "history mode needs a fitted utilities file (--utilities)")
        family = utility.load_utilities(cfg.utilities)
        if family.alpha != cfg.alpha:
            family = utility.UtilityFamily(alpha=cfg.alpha,
                                           utilities=family.utilities)
    result, cleaned, _detailed, config = _allocate_once(cfg, topo, family)
    os.makedirs(cfg.out, exist_ok=True)
    netmodel.save_traffic_matrix(result.demands,
                                 os.path.join(cfg.out, "tstar.tm"))
    allocator.save_flows(cleaned, os.path.join(cfg.out, "flows.txt"))
    allocator.save_allocation_summary(result,
                                      os.path.join(cfg.out, "summary.csv"))
    circuits_mod.save_circuits(config, os.path.join(cfg.out, "circuits.txt"))
    rep = allocator.residual_report(result)
    with open(os.path.join(cfg.out, "residuals.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(f"max_conservation {rep.max_conservation:.9g}\n"
                 f"mean_conservation {rep.mean_conservation:.9g}\n"
                 f"max_capacity_rel {rep.max_capacity_rel:.9g}\n"
                 f"mean_capacity_rel {rep.mean_capacity_rel:.9g}\n")
    cfg.dump(os.path.join(cfg.out, "effective.conf"))
    print(f"allocated {len(config.entries)} circuits "
          f"(objective {result.objective_value:.6g}) -> {cfg.out}/")
    return 0


def cmd_disaggregate(cfg: RunConfig) -> int:
    topo, _ = _load_inputs(cfg, need_traffic=False)
    tstar = cfg.utilities  # unused; kept for symmetric flag handling
    del tstar
    out = cfg.out
    demands = netmodel.load_traffic_matrix(
        os.path.join(out, "tstar.tm"), topo.num_nodes)
    flows = allocator.load_flows(os.path.join(out, "flows.txt"),
                                 topo.num_nodes, topo.num_edges)
    cleaned = allocator.cancel_cycles(flows, topo)
    if cfg.method == "proportional":
        detailed = circuits_mod.disaggregate_proportional(cleaned, demands, topo)
    else:
        detailed = circuits_mod.disaggregate_greedy(cleaned, demands, topo)
    config = circuits_mod.build_circuit_config(detailed, demands, topo)
    circuits_mod.save_circuits(config, os.path.join(out, "circuits.txt"))
    cfg.dump(os.path.join(out, "effective.conf"))
    print(f"disaggregated {len(config.entries)} circuits -> {out}/circuits.txt")
    return 0


def _sweep_specs(cfg: RunConfig, topo, series):
    wanted = ([s.strip() for s in cfg.strategies.split(",")]
              if cfg.strategies else None)
    hist_config = None
    if cfg.circuits:
        hist_config = circuits_mod.load_circuits(cfg.circuits, topo)
    rt_configs = None

    def rt():
        nonlocal rt_configs
        if rt_configs is None:
            built = []
            for idx in range(len(series)):
                family = _realtime_family(cfg, series, idx)
                _, _, _, config = _allocate_once(cfg, topo, family)
                built.append(config)
            rt_configs = tuple(built)
        return rt_configs

    available = {"OSPF": lambda: simulator.StrategySpec("OSPF", simulator.OSPF)}
    for rr, kind in (("NoRR", simulator.NORR), ("GreedyRR", simulator.GREEDYRR),
                     ("OptRR", simulator.OPTRR)):
        if series is not None:
            available[f"RT-{rr}"] = (
                lambda rr=rr, kind=kind: simulator.StrategySpec(
                    f"RT-{rr}", kind, rt()))
        if hist_config is not None:
            available[f"HIST-{rr}"] = (
                lambda rr=rr, kind=kind, hc=hist_config:
                simulator.StrategySpec(f"HIST-{rr}", kind, hc))
    if wanted is None:
        wanted = list(available)
    specs = []
    for label in wanted:
        if label not in available:
            raise ConfigurationError(
                f"strategy {label!r} unavailable (have: {', '.join(available)})")
        specs.append(available[label]())
    return specs


def cmd_simulate(cfg: RunConfig) -> int:
    topo, series = _load_inputs(cfg)
    routing = simulator.shortest_path_tables(topo)
    s0 = simulator.normalize_load(topo, series, dt=cfg.dt,
                                  warmup_slots=cfg.warmup_slots,
                                  routing=routing)
    mults = ([float(v) for v in cfg.multipliers.split(",")]
             if cfg.multipliers else list(DEFAULT_MULTIPLIERS))
    specs = _sweep_specs(cfg, topo, series)
    report = simulator.sweep(
        topo, series, specs, [m * s0 for m in mults], dt=cfg.dt,
        warmup_slots=cfg.warmup_slots, buffer_seconds=cfg.buffer_seconds,
        threshold_seconds=cfg.threshold_seconds, routing=routing)
    # report rows quote normalized loads
    rows = []
    for row in report.rows:
        rows.append(simulator.SimulationMetrics(
            strategy=row.strategy,
            load_multiplier=row.load_multiplier / s0,
            drop_rate=row.drop_rate, mean_hops=row.mean_hops,
            router_load_mbps=row.router_load_mbps,
            frac_routed=row.frac_routed, offered_mb=row.offered_mb,
            delivered_mb=row.delivered_mb, dropped_mb=row.dropped_mb,
            error=row.error))
    report = simulator.SimulationReport(rows=tuple(rows))
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "report.csv")
    simulator.write_report_csv(report, path)
    with open(os.path.join(cfg.out, "saturation.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(f"s0 {s0:.9g}\n")
    cfg.dump(os.path.join(cfg.out, "effective.conf"))
    if cfg.plots:
        _plot_report(path, cfg.out)
    print(f"s0={s0:.6g}; wrote {len(report.rows)} rows -> {path}")
    return 0


def _plot_report(csv_path, out_dir) -> None:
    import csv as csv_mod

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv_mod.DictReader(fh) if not r["errors"]]
    metrics = ("drop_rate", "mean_hops", "router_load_mbps", "frac_routed")
    strategies = sorted({r["strategy"] for r in rows})
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(6, 4))
        for strat in strategies:
            pts = sorted((float(r["load_multiplier"]), float(r[metric]))
                         for r in rows if r["strategy"] == strat)
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker="o", label=strat)
        ax.set_xlabel("normalized load")
        ax.set_ylabel(metric)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, f"{metric}.svg"))
        plt.close(fig)


def cmd_report(cfg: RunConfig) -> int:
    path = os.path.join(cfg.out, "report.csv")
    if not os.path.exists(path):
        raise ConfigurationError(f"no report at {path}; run simulate first")
    _plot_report(path, cfg.out)
    print(f"plots -> {cfg.out}/")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="circuitfair",
        description="alpha-fair optical circuit allocation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("fit", cmd_fit), ("allocate", cmd_allocate),
                     ("disaggregate", cmd_disaggregate),
                     ("simulate", cmd_simulate), ("report", cmd_report)):
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="config file of `key value` lines")
        p.add_argument("--topology")
        p.add_argument("--traffic-dir", dest="traffic_dir")
        p.add_argument("--units-scale", dest="units_scale", type=float)
        p.add_argument("--merge", nargs=2, action="append",
                       metavar=("FROM", "INTO"))
        p.add_argument("--alpha", type=float)
        p.add_argument("--segments", type=int)
        p.add_argument("--mode", choices=("realtime", "history"))
        p.add_argument("--out")
        p.add_argument("--window")
        p.add_argument("--method", choices=("greedy", "proportional"))
        p.add_argument("--strategies")
        p.add_argument("--multipliers")
        p.add_argument("--circuits")
        p.add_argument("--utilities")
        p.add_argument("--matrix-index", dest="matrix_index", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--buffer-seconds", dest="buffer_seconds", type=float)
        p.add_argument("--threshold-seconds", dest="threshold_seconds",
                       type=float)
        p.add_argument("--warmup-slots", dest="warmup_slots", type=int)
        p.add_argument("--plots", action="store_const", const=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = _merge_cli(cfg, args)
        return args.func(cfg)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
