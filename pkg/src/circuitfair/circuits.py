"""Disaggregate per-destination flows into per-IE-pair flows and circuits.

A solved allocation gives flows aggregated per destination. To provision
circuits each pair needs its own flow description: Z[(k, l, j)] is the
flow of pair (destination k, source l) on edge j. Two constructions,
both processing pairs one at a time against a working copy of the flow
matrix that shrinks as pairs are attributed:

* greedy — at each node route the whole pending amount over a single
  outgoing edge with enough remaining destination flow when one exists
  (largest first, ties to the lowest edge index); split only when forced;
* proportional — at each node split the pending amount across outgoing
  edges in proportion to their remaining destination flow, truncating
  dust shares below a relative threshold.

Working copies, attribution amounts, and path stripping all use exact
rational arithmetic (fractions.Fraction over the binary-exact float
inputs), so per-pair conservation is exact and path decompositions
reconstruct Z bit-for-bit; only the solver's own F-vs-T dust remains,
absorbed into the final pair per destination and checked against the
stated tolerance.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ParseError, ValidationError
from .netmodel import DestinationFlowMatrix, Topology, TrafficDemandMatrix

__all__ = [
    "DetailedFlowSet",
    "CircuitPath",
    "CircuitEntry",
    "CircuitConfig",
    "disaggregate_greedy",
    "disaggregate_proportional",
    "paths_from_detailed",
    "build_circuit_config",
    "save_circuits",
    "load_circuits",
]

SPLIT_TRUNCATION = Fraction(1, 10_000)  # proportional shares below this
                                        # fraction of the pair demand fold
                                        # into the largest sibling branch


@dataclass(frozen=True)
class DetailedFlowSet:
    """Sparse per-pair edge flows: (dest k, source l, edge j) -> Fraction."""

    flows: dict

    def value(self, dest: int, source: int, edge: int) -> float:
        return float(self.flows.get((dest, source, edge), 0))

    def pair_edges(self, dest: int, source: int) -> dict:
        return {j: v for (k, l, j), v in self.flows.items()
                if k == dest and l == source}

    def pairs(self) -> list[tuple[int, int]]:
        return sorted({(k, l) for (k, l, _) in self.flows})

    def attributed(self, num_dest: int, num_edges: int) -> np.ndarray:
        """Sum over sources: the reconstructed per-destination flow matrix."""
        out = np.zeros((num_dest, num_edges))
        for (k, _l, j), v in self.flows.items():
            out[k, j] += float(v)
        return out

    def delivered(self, dest: int, source: int, topology: Topology) -> Fraction:
        """Net outflow of the pair at its source node (exact)."""
        total = Fraction(0)
        for j, v in self.pair_edges(dest, source).items():
            e = topology.edges[j]
            if e.tail == source:
                total += v
            elif e.head == source:
                total -= v
        return total


def _pair_order(demands: TrafficDemandMatrix) -> list[tuple[int, int]]:
    """Descending demand, ties broken (k, l) lexicographic."""
    n = demands.n
    pairs = [(k, l) for k in range(n) for l in range(n)
             if k != l and demands.entries[k, l] > 0]
    return sorted(pairs, key=lambda p: (-demands.entries[p[0], p[1]], p))


def _check_consistency(flows: DestinationFlowMatrix,
                       demands: TrafficDemandMatrix,
                       topology: Topology, tolerance: float) -> None:
    from .netmodel import build_incidence
    if flows.entries.shape != (demands.n, topology.num_edges):
        raise ValidationError("flow matrix shape does not match topology")
    res = flows.conservation_residual(demands, build_incidence(topology))
    if res > tolerance:
        raise ValidationError(
            f"flows and demands are inconsistent: conservation residual "
            f"{res:.3g} exceeds tolerance {tolerance:.3g}")


def _topo_order(row: np.ndarray, topology: Topology, source: int) -> list[int]:
    """Topological order of the positive-flow subgraph reachable from the
    source (Kahn's algorithm restricted to reachable nodes)."""
    n = topology.num_nodes
    out_edges: dict[int, list[int]] = {i: [] for i in range(n)}
    for j, e in enumerate(topology.edges):
        if row[j] > 0:
            out_edges[e.tail].append(j)
    reach = set()
    stack = [source]
    while stack:
        v = stack.pop()
        if v in reach:
            continue
        reach.add(v)
        for j in out_edges[v]:
            stack.append(topology.edges[j].head)
    indeg = {v: 0 for v in reach}
    for v in reach:
        for j in out_edges[v]:
            h = topology.edges[j].head
            if h in reach:
                indeg[h] += 1
    ready = sorted(v for v in reach if indeg[v] == 0)
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for j in out_edges[v]:
            h = topology.edges[j].head
            if h in reach:
                indeg[h] -= 1
                if indeg[h] == 0:
                    ready.append(h)
        ready.sort()
    if len(order) != len(reach):
        raise ValidationError(
            "destination flow contains a cycle; run cycle cancellation first")
    return order


def _working_copy(flows: DestinationFlowMatrix) -> dict:
    work = {}
    n, m = flows.entries.shape
    for k in range(n):
        for j in range(m):
            v = flows.entries[k, j]
            if v > 0:
                work[(k, j)] = Fraction(v)
    return work


def _route_pair(work: dict, topology: Topology, dest: int, source: int,
                amount: Fraction, proportional: bool,
                assignments: dict) -> Fraction:
    """Push one pair's amount through the working copy; returns the part
    that could not be attributed (solver dust).

    A shortfall at an intermediate node is walked back to the source along
    the pair's own assignments (restoring the working copy), so the pair's
    detailed flow conserves exactly at every node: it simply delivers the
    dust less.
    """
    row = np.zeros(topology.num_edges)
    for (k, j), v in work.items():
        if k == dest:
            row[j] = float(v)
    order = _topo_order(row, topology, source)
    if source not in set(order):
        return amount
    pending = {v: Fraction(0) for v in order}
    pending[source] = amount
    unattributed = Fraction(0)
    for node in order:
        amt = pending.get(node, Fraction(0))
        if amt == 0 or node == dest:
            continue
        cands = [(j, work[(dest, j)]) for j in topology.out_edges(node)
                 if work.get((dest, j), 0) > 0]
        if proportional:
            takes = _proportional_shares(amt, cands) if cands else []
        else:
            takes = _greedy_shares(amt, cands) if cands else []
        taken_total = Fraction(0)
        for j, take in takes:
            if take == 0:
                continue
            assignments[(dest, source, j)] = (
                assignments.get((dest, source, j), Fraction(0)) + take)
            left = work[(dest, j)] - take
            if left > 0:
                work[(dest, j)] = left
            else:
                del work[(dest, j)]
            head = topology.edges[j].head
            pending[head] = pending.get(head, Fraction(0)) + take
            taken_total += take
        if taken_total < amt:
            shortfall = amt - taken_total
            _unwind(work, assignments, topology, dest, source, node, shortfall)
            unattributed += shortfall
    return unattributed


def _unwind(work: dict, assignments: dict, topology: Topology, dest: int,
            source: int, node: int, delta: Fraction) -> None:
    """Remove `delta` of the pair's flow arriving at `node`, walking back
    to the source and returning the flow to the working copy."""
    if node == source or delta == 0:
        return
    incoming = sorted(
        ((j, assignments.get((dest, source, j), Fraction(0)))
         for j in topology.in_edges(node)),
        key=lambda c: (-c[1], c[0]))
    remaining = delta
    for j, assigned in incoming:
        if remaining == 0:
            break
        take = min(assigned, remaining)
        if take == 0:
            continue
        key = (dest, source, j)
        left = assignments[key] - take
        if left > 0:
            assignments[key] = left
        else:
            del assignments[key]
        work[(dest, j)] = work.get((dest, j), Fraction(0)) + take
        _unwind(work, assignments, topology, dest, source,
                topology.edges[j].tail, take)
        remaining -= take
    if remaining != 0:
        raise ValidationError(
            f"internal: could not unwind {float(remaining)} at node {node}")


def _greedy_shares(amount: Fraction, cands: list) -> list:
    # single edge with enough remaining flow: largest first, lowest index
    full = [c for c in cands if c[1] >= amount]
    if full:
        j = max(full, key=lambda c: (c[1], -c[0]))[0]
        return [(j, amount)]
    remaining = amount
    takes = []
    for j, avail in sorted(cands, key=lambda c: (-c[1], c[0])):
        if remaining == 0:
            break
        take = min(avail, remaining)
        takes.append((j, take))
        remaining -= take
    return takes


def _proportional_shares(amount: Fraction, cands: list) -> list:
    total = sum(v for _, v in cands)
    if total == 0:
        return []
    amount = min(amount, total)
    shares = {j: amount * v / total for j, v in cands}
    cutoff = amount * SPLIT_TRUNCATION
    kept = {j: s for j, s in shares.items() if s >= cutoff}
    if not kept:
        kept = {max(shares, key=lambda j: (shares[j], -j)): Fraction(0)}
    spill = amount - sum(kept.values())
    # reassign truncated dust to the largest branches, capped by what each
    # edge still carries; spill back to truncated branches only if the kept
    # ones are full
    avail = dict(cands)
    order = sorted(kept, key=lambda j: (-kept[j], j))
    order += sorted((j for j in shares if j not in kept),
                    key=lambda j: (-avail[j], j))
    for j in order:
        if spill == 0:
            break
        room = avail[j] - kept.get(j, Fraction(0))
        add = min(room, spill)
        if add > 0:
            kept[j] = kept.get(j, Fraction(0)) + add
            spill -= add
    return sorted((j, s) for j, s in kept.items() if s > 0)


def disaggregate_greedy(flows: DestinationFlowMatrix,
                        demands: TrafficDemandMatrix,
                        topology: Topology,
                        tolerance: float | None = None) -> DetailedFlowSet:
    """Greedy attribution; see module docstring for the rule."""
    return _disaggregate(flows, demands, topology, tolerance, proportional=False)


def disaggregate_proportional(flows: DestinationFlowMatrix,
                              demands: TrafficDemandMatrix,
                              topology: Topology,
                              tolerance: float | None = None) -> DetailedFlowSet:
    """Proportional-split attribution; see module docstring for the rule."""
    return _disaggregate(flows, demands, topology, tolerance, proportional=True)


def _disaggregate(flows, demands, topology, tolerance, proportional):
    if tolerance is None:
        tolerance = 1e-6 * float(topology.capacities.max())
    _check_consistency(flows, demands, topology, tolerance)
    work = _working_copy(flows)
    assignments: dict = {}
    for k, l in _pair_order(demands):
        amount = Fraction(float(demands.entries[k, l]))
        dust = _route_pair(work, topology, k, l, amount, proportional,
                           assignments)
        if dust > tolerance:
            raise ValidationError(
                f"pair ({k}, {l}): {float(dust):.3g} Mb/s could not be "
                f"attributed (tolerance {tolerance:.3g})")
    return DetailedFlowSet(flows=assignments)


@dataclass(frozen=True)
class CircuitPath:
    nodes: tuple[int, ...]          # source ... destination
    edges: tuple[int, ...]
    fraction: float                 # of the pair's circuit capacity
    amount: Fraction                # exact flow carried, Mb/s

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise ValidationError("circuit path must be simple")
        if self.fraction <= 0:
            raise ValidationError("path fraction must be positive")


@dataclass(frozen=True)
class CircuitEntry:
    capacity: float                 # allocated circuit capacity, Mb/s
    paths: tuple[CircuitPath, ...]


@dataclass(frozen=True)
class CircuitConfig:
    """Per-IE-pair circuit capacities with their physical path sets."""

    entries: dict                   # (dest, source) -> CircuitEntry

    def capacity(self, dest: int, source: int) -> float:
        e = self.entries.get((dest, source))
        return e.capacity if e else 0.0

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.entries)


def paths_from_detailed(detailed: DetailedFlowSet, pair: tuple[int, int],
                        topology: Topology) -> CircuitEntry:
    """Decompose one pair's flow into weighted simple paths by repeatedly
    stripping the bottleneck along a source-to-destination walk (largest
    remaining flow first, ties to the lowest edge index)."""
    dest, source = pair
    sub = detailed.pair_edges(dest, source)
    if not sub:
        raise ValidationError(f"pair {pair} has no flow to decompose")
    total = detailed.delivered(dest, source, topology)
    if total <= 0:
        raise ValidationError(f"pair {pair} delivers no positive flow")

    paths = []
    guard = len(sub) + 1
    while sub and guard:
        guard -= 1
        nodes = [source]
        edges = []
        at = source
        while at != dest:
            cands = [(j, v) for j, v in sub.items()
                     if topology.edges[j].tail == at]
            if not cands:
                raise ValidationError(
                    f"pair {pair}: flow stranded at node {at}")
            j, _ = max(cands, key=lambda c: (c[1], -c[0]))
            edges.append(j)
            at = topology.edges[j].head
            nodes.append(at)
        bottleneck = min(sub[j] for j in edges)
        for j in edges:
            left = sub[j] - bottleneck
            if left > 0:
                sub[j] = left
            else:
                del sub[j]
        paths.append(CircuitPath(
            nodes=tuple(nodes), edges=tuple(edges),
            fraction=float(bottleneck / total), amount=bottleneck))
    if sub:
        raise ValidationError(
            f"pair {pair}: path stripping left residual flow")
    return CircuitEntry(capacity=float(total), paths=tuple(paths))


def build_circuit_config(detailed: DetailedFlowSet,
                         demands: TrafficDemandMatrix,
                         topology: Topology) -> CircuitConfig:
    entries = {}
    for k, l in _pair_order(demands):
        entries[(k, l)] = paths_from_detailed(detailed, (k, l), topology)
    return CircuitConfig(entries=entries)


def save_circuits(config: CircuitConfig, path: str | os.PathLike) -> None:
    """One line per path: `circuit <k> <l> <capacity> path <fraction>
    <node> <node> ...` (1-based node indices, source first)."""
    with open(path, "w", encoding="utf-8") as fh:
        for (k, l) in config.pairs():
            entry = config.entries[(k, l)]
            for p in entry.paths:
                seq = " ".join(str(v + 1) for v in p.nodes)
                fh.write(f"circuit {k + 1} {l + 1} {entry.capacity:.17g} "
                         f"path {p.fraction:.17g} {seq}\n")


def load_circuits(path: str | os.PathLike, topology: Topology) -> CircuitConfig:
    accum: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] != "circuit" or "path" not in parts:
                raise ParseError(path, line_no, "expected a `circuit ... path ...` line")
            try:
                k, l = int(parts[1]) - 1, int(parts[2]) - 1
                cap = float(parts[3])
                pi = parts.index("path")
                frac = float(parts[pi + 1])
                nodes = tuple(int(tok) - 1 for tok in parts[pi + 2:])
            except (ValueError, IndexError):
                raise ParseError(path, line_no, "malformed circuit line")
            if len(nodes) < 2 or nodes[0] != l or nodes[-1] != k:
                raise ParseError(
                    path, line_no, "path must run from the source to the destination")
            edges = []
            for a, b in zip(nodes, nodes[1:]):
                match = [j for j, e in enumerate(topology.edges)
                         if e.tail == a and e.head == b]
                if not match:
                    raise ParseError(path, line_no, f"no edge {a + 1}->{b + 1}")
                edges.append(match[0])
            accum.setdefault((k, l), (cap, []))[1].append(CircuitPath(
                nodes=nodes, edges=tuple(edges), fraction=frac,
                amount=Fraction(frac) * Fraction(cap)))
    entries = {}
    for pair, (cap, paths) in accum.items():
        total = sum(p.fraction for p in paths)
        if abs(total - 1.0) > 1e-6:
            raise ParseError(path, 0,
                             f"pair {pair}: path fractions sum to {total}, not 1")
        entries[pair] = CircuitEntry(capacity=cap, paths=tuple(paths))
    return CircuitConfig(entries=entries)
