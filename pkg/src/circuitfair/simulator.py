"""Time-slotted fluid simulator: shortest-path packet routing vs circuits.

Volume (Mb) moves between per-node per-destination queues once per slot.
Four forwarding strategies:

* OSPF      — static single shortest paths over the physical topology,
              one hop per slot, every forwarded Mb consumes electronic
              routing at the sending node;
* NoRR      — each pair's traffic uses only its direct circuit;
* GreedyRR  — queue above its threshold re-routes the excess one logical
              hop over the circuit with the most residual capacity this
              slot (spilling to the next-best when one is not enough);
* OptRR     — excess moves over the logical full mesh by backpressure:
              candidate (circuit, destination) moves execute in descending
              queue-differential order while the differential stays
              positive, each capped by the circuit's residual.

Queues hold hop-count cohorts (node x destination x hops-taken): cohorts
are not provenance - they exist so delivered volume knows its logical hop
count, re-routed volume can be charged to router load, and GreedyRR can
enforce its n-1 hop budget. Direct circuits serve low-hop cohorts first;
buffer overflow drops high-hop cohorts first (transit before direct).

Deterministic throughout: fixed tie-breaking, no randomness.
"""

from __future__ import annotations

import csv
import heapq
import os
from dataclasses import dataclass

import numpy as np

from .circuits import CircuitConfig
from .errors import ConfigurationError, ValidationError
from .netmodel import Topology, TrafficSeries

__all__ = [
    "OSPF",
    "NORR",
    "GREEDYRR",
    "OPTRR",
    "STRATEGIES",
    "RoutingTables",
    "Scenario",
    "SimulationMetrics",
    "SimulationReport",
    "shortest_path_tables",
    "simulate",
    "normalize_load",
    "sweep",
    "StrategySpec",
    "write_report_csv",
]

OSPF = "OSPF"
NORR = "NoRR"
GREEDYRR = "GreedyRR"
OPTRR = "OptRR"
STRATEGIES = (OSPF, NORR, GREEDYRR, OPTRR)

_STATIONARY_SLOTS = 5      # consecutive near-constant slots to end warm-up
_STATIONARY_RTOL = 1e-9


@dataclass(frozen=True)
class RoutingTables:
    """Static next-hop tables: next_hop[i, k] is i's neighbor toward k,
    hops[i, k] the path length in edges, bundle[(i, v)] the edge indices
    of all parallel edges i->v."""

    next_hop: np.ndarray
    hops: np.ndarray
    bundle: dict


def shortest_path_tables(topology: Topology,
                         weights: np.ndarray | None = None) -> RoutingTables:
    """Deterministic single shortest paths (Dijkstra, unit weights by
    default); equal-cost ties resolve to the lowest next-hop node index."""
    n, m = topology.num_nodes, topology.num_edges
    if weights is None:
        weights = np.ones(m)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (m,) or np.any(weights <= 0):
        raise ValidationError("edge weights must be positive, one per edge")

    # cheapest direct arc per (tail, head), pooling parallel edges for capacity
    best_w = {}
    bundle: dict[tuple[int, int], list[int]] = {}
    for j, e in enumerate(topology.edges):
        bundle.setdefault((e.tail, e.head), []).append(j)
        key = (e.tail, e.head)
        if key not in best_w or weights[j] < best_w[key]:
            best_w[key] = weights[j]

    dist = np.full((n, n), np.inf)
    for src in range(n):
        d = np.full(n, np.inf)
        d[src] = 0.0
        done = np.zeros(n, dtype=bool)
        heap = [(0.0, src)]
        while heap:
            dv, v = heapq.heappop(heap)
            if done[v]:
                continue
            done[v] = True
            for (a, b), w in best_w.items():
                if a != v:
                    continue
                nd = dv + w
                if nd < d[b]:
                    d[b] = nd
                    heapq.heappush(heap, (nd, b))
        dist[src] = d

    next_hop = np.full((n, n), -1, dtype=int)
    hops = np.zeros((n, n), dtype=int)
    for i in range(n):
        for k in range(n):
            if i == k:
                continue
            best = None
            for (a, v), w in best_w.items():
                if a != i:
                    continue
                cost = w + dist[v, k]
                if best is None or cost < best[0] - 1e-12 or (
                        abs(cost - best[0]) <= 1e-12 and v < best[1]):
                    best = (cost, v)
            if best is None or not np.isfinite(best[0]):
                raise ValidationError(f"no route from node {i} to {k}")
            next_hop[i, k] = best[1]
    for i in range(n):
        for k in range(n):
            if i == k:
                continue
            at, count = i, 0
            while at != k:
                at = next_hop[at, k]
                count += 1
                if count > n:
                    raise ValidationError("inconsistent next-hop tables")
            hops[i, k] = count
    return RoutingTables(next_hop=next_hop, hops=hops,
                         bundle={k: tuple(v) for k, v in bundle.items()})


@dataclass(frozen=True)
class Scenario:
    """One simulation cell: a strategy replaying a traffic series at a
    load multiplier.

    Buffer and threshold limits derive from each queue's direct-circuit
    capacity (or next-hop bundle capacity for OSPF): B = buffer_seconds x
    capacity, L_max = threshold_seconds x capacity; B >= L_max > 0.
    """

    topology: Topology
    strategy: str
    series: TrafficSeries
    load_multiplier: float = 1.0
    circuits: CircuitConfig | None = None
    routing: RoutingTables | None = None
    dt: float = 1.0
    buffer_seconds: float = 1.0
    threshold_seconds: float = 0.1
    rate_window: int = 5
    warmup_slots: int = 300
    measure_slots: int | None = None   # default: series interval / dt
    trace_path: str | None = None      # per-slot debug trace (appended)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if not (self.buffer_seconds >= self.threshold_seconds > 0):
            raise ValidationError("need buffer >= threshold > 0")
        if self.load_multiplier < 0:
            raise ValidationError("load multiplier must be >= 0")
        if self.strategy != OSPF and self.circuits is None:
            raise ConfigurationError(
                f"strategy {self.strategy} needs a circuit configuration")

    @property
    def slots(self) -> int:
        if self.measure_slots is not None:
            return self.measure_slots
        return max(1, int(round(self.series.interval / self.dt)))


@dataclass(frozen=True)
class SimulationMetrics:
    strategy: str
    load_multiplier: float
    drop_rate: float
    mean_hops: float
    router_load_mbps: float
    frac_routed: float
    offered_mb: float = 0.0
    delivered_mb: float = 0.0
    dropped_mb: float = 0.0
    queue_growth_mb: float = 0.0
    error: str = ""


@dataclass(frozen=True)
class SimulationReport:
    rows: tuple


# ---------------------------------------------------------------------------
# per-matrix engines


class _Trace:
    """Per-slot debug trace: queue totals and windowed circuit send rates
    (the residual-capacity estimate over the scenario's rate window)."""

    def __init__(self, scenario):
        self.fh = open(scenario.trace_path, "a", encoding="utf-8")
        self.window = max(1, scenario.rate_window)
        self.dt = scenario.dt
        self.history = []
        self.slot = 0

    def record(self, queued, sent):
        self.history.append(sent)
        if len(self.history) > self.window:
            self.history.pop(0)
        mu = sum(s.sum() for s in self.history) / (len(self.history) * self.dt)
        peak = max(s.max() for s in self.history) / self.dt
        self.fh.write(f"slot {self.slot} queued {queued:.6g} "
                      f"sent_mbps {mu:.6g} peak_circuit_mbps {peak:.6g}\n")
        self.slot += 1

    def close(self):
        self.fh.close()


@dataclass
class _Tally:
    offered: float = 0.0
    delivered: float = 0.0
    dropped: float = 0.0
    hop_volume: float = 0.0    # sum of delivered Mb x logical hops
    routed_mb: float = 0.0     # Mb that consumed an electronic decision
    routed_delivered: float = 0.0  # delivered Mb with >= 1 routing decision
    queue_delta: float = 0.0       # growth of queued volume over the windows
    slots: int = 0


def _warmup_then_measure(step, total_queued, warmup_slots,
                         measure_slots, tally: _Tally,
                         stop_on_drop: bool = False) -> None:
    """Run the warm-up phase to stationarity (or its slot cap), then the
    measurement window, accumulating into the tally."""
    stable = 0
    prev = total_queued()
    for _ in range(warmup_slots):
        step(None)
        cur = total_queued()
        if abs(cur - prev) <= _STATIONARY_RTOL * max(prev, 1.0):
            stable += 1
            if stable >= _STATIONARY_SLOTS:
                break
        else:
            stable = 0
        prev = cur
    start = total_queued()
    for _ in range(measure_slots):
        step(tally)
        tally.slots += 1
        if stop_on_drop and tally.dropped > 0:
            break
    tally.queue_delta += total_queued() - start


def _simulate_ospf_matrix(scenario: Scenario, matrix_idx: int,
                          tally: _Tally, stop_on_drop: bool = False) -> None:
    topo = scenario.topology
    n = topo.num_nodes
    tables = scenario.routing or shortest_path_tables(topo)
    caps = topo.capacities
    dt = scenario.dt
    rates = scenario.series.matrices[matrix_idx].offdiagonal() \
        * scenario.load_multiplier
    ingress = rates.T * dt  # [node l, dest k]

    # per node: next-hop groups {v: (dest list, bundle budget per slot)}
    groups: list[list[tuple[int, np.ndarray, float]]] = []
    buf = np.zeros((n, n))
    for i in range(n):
        by_hop: dict[int, list[int]] = {}
        for k in range(n):
            if k != i:
                by_hop.setdefault(int(tables.next_hop[i, k]), []).append(k)
        glist = []
        for v in sorted(by_hop):
            budget = sum(caps[j] for j in tables.bundle[(i, v)]) * dt
            dests = np.array(by_hop[v])
            glist.append((v, dests, budget))
            buf[i, by_hop[v]] = scenario.buffer_seconds * budget / dt
        groups.append(glist)

    Q = np.zeros((n, n))

    def total_queued():
        return float(Q.sum())

    def step(t: _Tally | None):
        np.add(Q, ingress, out=Q)
        if t is not None:
            t.offered += float(ingress.sum())
        arrivals = np.zeros((n, n))
        for i in range(n):
            for v, dests, budget in groups[i]:
                vol = Q[i, dests]
                total = float(vol.sum())
                if total <= 0.0:
                    continue
                factor = min(1.0, budget / total)
                moved = vol * factor
                Q[i, dests] -= moved
                arrivals[v, dests] += moved
                if t is not None:
                    t.routed_mb += float(moved.sum())
        # egress at destination, queue elsewhere
        delivered = arrivals.diagonal().copy()
        if t is not None:
            t.delivered += float(delivered.sum())
            t.routed_delivered += float(delivered.sum())
        np.fill_diagonal(arrivals, 0.0)
        np.add(Q, arrivals, out=Q)
        over = Q - buf
        np.clip(over, 0.0, None, out=over)
        if over.any():
            np.subtract(Q, over, out=Q)
            if t is not None:
                t.dropped += float(over.sum())

    _warmup_then_measure(step, total_queued, scenario.warmup_slots,
                         scenario.slots, tally, stop_on_drop)


def _circuit_arrays(scenario: Scenario) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(capacity, L_max, buffer) per (source node, destination)."""
    n = scenario.topology.num_nodes
    capT = np.zeros((n, n))
    for (k, l), entry in scenario.circuits.entries.items():
        capT[l, k] = entry.capacity
    lmax = scenario.threshold_seconds * capT
    buf = scenario.buffer_seconds * capT
    return capT, lmax, buf


def _check_circuit_cover(scenario: Scenario, capT: np.ndarray) -> None:
    for mat in scenario.series.matrices:
        off = mat.offdiagonal()
        bad = (off.T > 0) & (capT <= 0)
        if bad.any():
            l, k = np.argwhere(bad)[0]
            raise ConfigurationError(
                f"offered pair (dest {k}, source {l}) has no circuit")


def _simulate_circuit_matrix(scenario: Scenario, matrix_idx: int,
                             tally: _Tally, stop_on_drop: bool = False) -> None:
    topo = scenario.topology
    n = topo.num_nodes
    dt = scenario.dt
    capT, lmax, buf = _circuit_arrays(scenario)
    _check_circuit_cover(scenario, capT)
    strategy = scenario.strategy
    # cohort cap: NoRR volume never re-routes; GreedyRR enforces the n-1
    # hop budget by never moving its top cohort; OptRR gets slack plus a
    # tail bucket
    if strategy == NORR:
        H = 1
    elif strategy == GREEDYRR:
        H = max(n, 2)
    else:
        H = 4 * n
    C = np.zeros((n, n, H))
    rates = scenario.series.matrices[matrix_idx].offdiagonal() \
        * scenario.load_multiplier
    ingress = rates.T * dt
    budget_slot = capT * dt

    def total_queued():
        return float(C.sum())

    trace = _Trace(scenario) if scenario.trace_path else None

    def step(t: _Tally | None):
        C[:, :, 0] += ingress
        if t is not None:
            t.offered += float(ingress.sum())
        sent = np.zeros((n, n))
        # direct circuits: low-hop cohorts first
        budget = budget_slot.copy()
        for h in range(H):
            take = np.minimum(C[:, :, h], budget)
            if take.any():
                C[:, :, h] -= take
                budget -= take
                sent += take
                if t is not None:
                    moved = float(take.sum())
                    t.delivered += moved
                    t.hop_volume += moved * (h + 1)
                    if h >= 1:
                        t.routed_delivered += moved
            if not budget.any():
                break
        if strategy in (GREEDYRR, OPTRR):
            _reroute(strategy, C, capT, lmax, buf, budget_slot, sent, n, H, t)
        # buffer overflow: drop most-travelled cohorts first (ignore float
        # dust from transfers that fill a buffer exactly)
        qtot = C.sum(axis=2)
        over = qtot - buf
        over[over <= 1e-12 * np.maximum(buf, 1.0)] = 0.0
        if (over > 0.0).any():
            for l, k in zip(*np.nonzero(over > 0.0)):
                excess = over[l, k]
                for h in range(H - 1, -1, -1):
                    cut = min(C[l, k, h], excess)
                    C[l, k, h] -= cut
                    excess -= cut
                    if excess <= 0.0:
                        break
                if t is not None:
                    t.dropped += float(over[l, k])
        if trace is not None:
            trace.record(float(C.sum()), sent)

    _warmup_then_measure(step, total_queued, scenario.warmup_slots,
                         scenario.slots, tally, stop_on_drop)
    if trace is not None:
        trace.close()


def _reroute(strategy, C, capT, lmax, buf, budget_slot, sent, n, H, t):
    qtot = C.sum(axis=2)
    excess = qtot - lmax
    flagged = [(l, k) for l, k in zip(*np.nonzero(excess > 0.0)) if l != k]
    if not flagged:
        return
    residual = budget_slot - sent  # remaining circuit budget this slot
    if strategy == GREEDYRR:
        # largest excess first; each queue fills circuits by residual rank
        flagged.sort(key=lambda p: (-excess[p[0], p[1]], p))
        for l, k in flagged:
            need = excess[l, k]
            cands = [m for m in range(n)
                     if m != k and m != l and capT[l, m] > 0
                     and residual[l, m] > 0.0]
            cands.sort(key=lambda m: (-residual[l, m], m))
            for m in cands:
                if need <= 0.0:
                    break
                room = buf[m, k] - C[m, k].sum()
                amount = min(need, residual[l, m], max(room, 0.0))
                moved = _move_cohorts(C, l, k, m, amount, H)
                if moved > 0.0:
                    residual[l, m] -= moved
                    sent[l, m] += moved
                    need -= moved
                    if t is not None:
                        t.routed_mb += moved
    else:
        # backpressure: descending queue differential over the full mesh
        cands = []
        for l, k in flagged:
            for m in range(n):
                if m == k or m == l or capT[l, m] <= 0:
                    continue
                diff = qtot[l, k] - qtot[m, k]
                if diff > 0.0:
                    cands.append((-diff, l, m, k))
        cands.sort()
        for _, l, m, k in cands:
            if residual[l, m] <= 0.0:
                continue
            qlk = C[l, k].sum()
            diff_now = qlk - C[m, k].sum()
            if diff_now <= 0.0:
                continue
            need = qlk - lmax[l, k]
            if need <= 0.0:
                continue
            room = buf[m, k] - C[m, k].sum()
            amount = min(need, residual[l, m], max(room, 0.0))
            moved = _move_cohorts(C, l, k, m, amount, H)
            if moved > 0.0:
                residual[l, m] -= moved
                sent[l, m] += moved
                if t is not None:
                    t.routed_mb += moved


def _move_cohorts(C, l, k, m, amount, H) -> float:
    """Move up to `amount` from queue (l, k) to (m, k), advancing cohorts
    by one hop; the top cohort never moves (hop budget / tail bucket)."""
    if amount <= 0.0:
        return 0.0
    moved = 0.0
    for h in range(H - 1):
        take = min(C[l, k, h], amount - moved)
        if take > 0.0:
            C[l, k, h] -= take
            C[m, k, h + 1] += take
            moved += take
        if moved >= amount:
            break
    return moved


# ---------------------------------------------------------------------------
# public surface


def _static_ospf_hops(scenario: Scenario) -> float:
    tables = scenario.routing or shortest_path_tables(scenario.topology)
    vol = 0.0
    hop_vol = 0.0
    for mat in scenario.series.matrices:
        off = mat.offdiagonal()  # [dest, src]
        vol += float(off.sum())
        hop_vol += float((off * tables.hops.T).sum())
    return hop_vol / vol if vol > 0 else 0.0


def simulate(scenario: Scenario, stop_on_drop: bool = False) -> SimulationMetrics:
    """Replay every matrix of the scenario's series (fresh queues and a
    warm-up per matrix) and pool the volume-weighted metrics."""
    n = scenario.topology.num_nodes
    tally = _Tally()
    for idx in range(len(scenario.series)):
        if scenario.strategy == OSPF:
            _simulate_ospf_matrix(scenario, idx, tally, stop_on_drop)
        else:
            _simulate_circuit_matrix(scenario, idx, tally, stop_on_drop)
        if stop_on_drop and tally.dropped > 0:
            break
    offered = tally.offered
    delivered = tally.delivered
    if scenario.strategy == OSPF:
        mean_hops = _static_ospf_hops(scenario)
        frac_routed = 1.0 if delivered > 0 else 0.0
    else:
        mean_hops = tally.hop_volume / delivered if delivered > 0 else 0.0
        frac_routed = tally.routed_delivered / delivered if delivered > 0 else 0.0
    load = tally.routed_mb / (n * tally.slots) if tally.slots else 0.0
    return SimulationMetrics(
        strategy=scenario.strategy,
        load_multiplier=scenario.load_multiplier,
        drop_rate=tally.dropped / offered if offered > 0 else 0.0,
        mean_hops=mean_hops,
        router_load_mbps=load,
        frac_routed=frac_routed,
        offered_mb=offered,
        delivered_mb=delivered,
        dropped_mb=tally.dropped,
        queue_growth_mb=tally.queue_delta,
    )


def conservation_gap(scenario: Scenario) -> float:
    """Relative volume-conservation error over one measured replay
    (offered vs delivered + dropped + queue growth); test hook."""
    tally = _Tally()
    for idx in range(len(scenario.series)):
        if scenario.strategy == OSPF:
            _simulate_ospf_matrix(scenario, idx, tally)
        else:
            _simulate_circuit_matrix(scenario, idx, tally)
    gap = abs(tally.offered - tally.delivered - tally.dropped
              - tally.queue_delta)
    return gap / max(tally.offered, 1.0)


def normalize_load(topology: Topology, series: TrafficSeries,
                   dt: float = 1.0, warmup_slots: int = 300,
                   precision: float = 1e-3,
                   routing: RoutingTables | None = None) -> float:
    """Smallest load multiplier at which OSPF drops volume (binary search
    to the requested relative precision). Sweeps quote loads in units of
    this saturation multiplier."""
    routing = routing or shortest_path_tables(topology)

    def drops(mult: float) -> bool:
        sc = Scenario(topology=topology, strategy=OSPF, series=series,
                      load_multiplier=mult, routing=routing, dt=dt,
                      warmup_slots=warmup_slots)
        m = simulate(sc, stop_on_drop=True)
        # sustained queue growth over the window means the buffers will
        # overflow on a longer horizon: count it as saturation so the
        # search is not biased by buffer depth
        return (m.dropped_mb > 0
                or m.queue_growth_mb > 1e-6 * max(m.offered_mb, 1.0))

    hi = 1.0
    for _ in range(60):
        if drops(hi):
            break
        hi *= 2.0
    else:
        raise ValidationError("OSPF never saturates; is the series empty?")
    lo = 0.0 if hi == 1.0 else hi / 2.0
    while hi - lo > precision * hi:
        mid = 0.5 * (lo + hi)
        if drops(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class StrategySpec:
    """One sweep series: a label (e.g. RT-OptRR), a strategy, and the
    circuits to use — a single config, or one per series matrix."""

    label: str
    strategy: str
    circuits: CircuitConfig | tuple | None = None

    def circuits_for(self, matrix_idx: int) -> CircuitConfig | None:
        if self.circuits is None or isinstance(self.circuits, CircuitConfig):
            return self.circuits
        return self.circuits[matrix_idx]


def sweep(topology: Topology, series: TrafficSeries,
          specs: list[StrategySpec], multipliers: list[float],
          dt: float = 1.0, warmup_slots: int = 300,
          buffer_seconds: float = 1.0, threshold_seconds: float = 0.1,
          routing: RoutingTables | None = None) -> SimulationReport:
    """Cartesian product of strategy specs and load multipliers; per-cell
    failures land in the row's error column instead of aborting."""
    routing = routing or shortest_path_tables(topology)
    rows = []
    for spec in specs:
        # static paths make the OSPF hop statistic load-independent;
        # compute it once so every multiplier reports the identical value
        ospf_hops = None
        if spec.strategy == OSPF:
            ospf_hops = _static_ospf_hops(Scenario(
                topology=topology, strategy=OSPF, series=series,
                routing=routing))
        for mult in multipliers:
            try:
                per_matrix = []
                tally = _Tally()
                for idx in range(len(series)):
                    one = TrafficSeries(
                        timestamps=(series.timestamps[idx],),
                        matrices=(series.matrices[idx],),
                        interval=series.interval)
                    sc = Scenario(
                        topology=topology, strategy=spec.strategy,
                        series=one, load_multiplier=mult,
                        circuits=spec.circuits_for(idx), routing=routing,
                        dt=dt, warmup_slots=warmup_slots,
                        buffer_seconds=buffer_seconds,
                        threshold_seconds=threshold_seconds)
                    per_matrix.append(simulate(sc))
                row = _pool_metrics(spec.label, spec.strategy, mult,
                                    per_matrix)
                if ospf_hops is not None:
                    row = SimulationMetrics(
                        strategy=row.strategy,
                        load_multiplier=row.load_multiplier,
                        drop_rate=row.drop_rate, mean_hops=ospf_hops,
                        router_load_mbps=row.router_load_mbps,
                        frac_routed=row.frac_routed,
                        offered_mb=row.offered_mb,
                        delivered_mb=row.delivered_mb,
                        dropped_mb=row.dropped_mb,
                        queue_growth_mb=row.queue_growth_mb)
            except (ValidationError, ConfigurationError) as exc:
                row = SimulationMetrics(
                    strategy=spec.label, load_multiplier=mult,
                    drop_rate=float("nan"), mean_hops=float("nan"),
                    router_load_mbps=float("nan"), frac_routed=float("nan"),
                    error=str(exc))
            rows.append(row)
    return SimulationReport(rows=tuple(rows))


def _pool_metrics(label: str, strategy: str, mult: float,
                  per_matrix: list[SimulationMetrics]) -> SimulationMetrics:
    offered = sum(m.offered_mb for m in per_matrix)
    delivered = sum(m.delivered_mb for m in per_matrix)
    dropped = sum(m.dropped_mb for m in per_matrix)
    if strategy == OSPF and offered > 0:
        # static paths: weight by offered volume so the statistic is
        # exactly load-invariant
        hops = sum(m.mean_hops * m.offered_mb for m in per_matrix) / offered
        routed = 1.0 if delivered > 0 else 0.0
    elif delivered > 0:
        hops = sum(m.mean_hops * m.delivered_mb for m in per_matrix) / delivered
        routed = sum(m.frac_routed * m.delivered_mb for m in per_matrix) / delivered
    else:
        hops = routed = 0.0
    load = float(np.mean([m.router_load_mbps for m in per_matrix]))
    return SimulationMetrics(
        strategy=label, load_multiplier=mult,
        drop_rate=dropped / offered if offered > 0 else 0.0,
        mean_hops=hops, router_load_mbps=load, frac_routed=routed,
        offered_mb=offered, delivered_mb=delivered, dropped_mb=dropped)


def write_report_csv(report: SimulationReport, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "load_multiplier", "drop_rate",
                         "mean_hops", "router_load_mbps", "frac_routed",
                         "errors"])
        for r in report.rows:
            writer.writerow([
                r.strategy, f"{r.load_multiplier:.6g}",
                f"{r.drop_rate:.9g}", f"{r.mean_hops:.9g}",
                f"{r.router_load_mbps:.9g}", f"{r.frac_routed:.9g}",
                r.error])
