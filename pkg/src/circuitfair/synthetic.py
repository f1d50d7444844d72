"""Deterministic synthetic traffic with a diurnal-repeat structure.

Generates gravity-model demand matrices sampled at one time of day across
consecutive weeks: a historical block (default 7 weeks x 6 five-minute
snapshots = 42 matrices) and a test block (2 weeks x 6 = 12), mimicking
how smooth backbone traffic repeats day over day. Rates combine the
gravity base, a per-snapshot day level, and per-pair lognormal jitter,
scaled so that static shortest-path routing of the mean matrix reaches a
chosen peak edge utilization.
"""

from __future__ import annotations

import numpy as np

from .netmodel import Topology, TrafficSeries, complete_demand_matrix
from .simulator import shortest_path_tables

__all__ = ["synthetic_diurnal"]

# Wed 2004-05-05 15:00 UTC; snapshots step 300 s, weeks step 7 days
_BASE_TS = 1083769200
_WEEK = 7 * 86400


def _edge_loads(topology: Topology, demand_off: np.ndarray) -> np.ndarray:
    """Static shortest-path edge loads for one off-diagonal demand array."""
    tables = shortest_path_tables(topology)
    loads = np.zeros(topology.num_edges)
    n = topology.num_nodes
    for k in range(n):
        for l in range(n):
            if k == l or demand_off[k, l] == 0:
                continue
            at = l
            while at != k:
                nh = int(tables.next_hop[at, k])
                js = tables.bundle[(at, nh)]
                caps = np.array([topology.edges[j].capacity for j in js])
                share = demand_off[k, l] * caps / caps.sum()
                for j, s in zip(js, share):
                    loads[j] += s
                at = nh
    return loads


def synthetic_diurnal(topology: Topology, weeks_historical: int = 7,
                      weeks_test: int = 2, snapshots_per_day: int = 6,
                      seed: int = 0, peak_utilization: float = 0.5,
                      day_sigma: float = 0.08, pair_sigma: float = 0.2,
                      ) -> tuple[TrafficSeries, TrafficSeries]:
    """Returns (historical, test) series over the same gravity base."""
    rng = np.random.default_rng(seed)
    n = topology.num_nodes
    weights = np.exp(rng.uniform(0.0, 1.5, size=n))
    base = np.outer(weights, weights)
    np.fill_diagonal(base, 0.0)
    base /= base.sum()

    # scale so the mean matrix loads the worst shortest-path edge to the
    # requested utilization
    caps = topology.capacities
    unit_loads = _edge_loads(topology, base)
    scale = peak_utilization / float((unit_loads / caps).max())
    base = base * scale

    def block(weeks, week0):
        timestamps, matrices = [], []
        for w in range(weeks):
            day_level = float(rng.lognormal(mean=0.0, sigma=day_sigma))
            for s in range(snapshots_per_day):
                jitter = rng.lognormal(mean=0.0, sigma=pair_sigma, size=(n, n))
                slot_level = day_level * float(
                    rng.lognormal(mean=0.0, sigma=day_sigma / 2))
                matrices.append(complete_demand_matrix(
                    base * jitter * slot_level))
                timestamps.append(_BASE_TS + (week0 + w) * _WEEK + s * 300)
        return TrafficSeries(timestamps=tuple(timestamps),
                             matrices=tuple(matrices), interval=300.0)

    historical = block(weeks_historical, 0)
    test = block(weeks_test, weeks_historical)
    return historical, test
