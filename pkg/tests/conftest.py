import numpy as np
import pytest

from circuitfair import Edge, Topology, complete_demand_matrix, realtime_utilities


@pytest.fixture
def two_node():
    return Topology(nodes=("a", "b"),
                    edges=(Edge(0, 1, 10.0), Edge(1, 0, 10.0)))


@pytest.fixture
def tri_cycle():
    """Directed 3-cycle with unit capacities."""
    return Topology(nodes=("1", "2", "3"),
                    edges=(Edge(0, 1, 1.0), Edge(1, 2, 1.0), Edge(2, 0, 1.0)))


@pytest.fixture
def tri_cycle10():
    return Topology(nodes=("1", "2", "3"),
                    edges=(Edge(0, 1, 10.0), Edge(1, 2, 10.0), Edge(2, 0, 10.0)))


def ring_chords_topology(rng, n, extra_chords=2, cap_lo=5.0, cap_hi=20.0):
    """Directed ring plus a few random chords; always strongly connected."""
    edges = [(i, (i + 1) % n) for i in range(n)]
    tries = 0
    while extra_chords > 0 and tries < 30:
        a, b = (int(v) for v in rng.integers(0, n, size=2))
        tries += 1
        if a != b and (a, b) not in edges:
            edges.append((a, b))
            extra_chords -= 1
    caps = rng.uniform(cap_lo, cap_hi, size=len(edges))
    return Topology(nodes=tuple(str(i + 1) for i in range(n)),
                    edges=tuple(Edge(t, h, float(c))
                                for (t, h), c in zip(edges, caps)))


def near_uniform_rates(rng, n, lo=1.0, hi=1.06):
    off = rng.uniform(lo, hi, size=(n, n))
    np.fill_diagonal(off, 0.0)
    return complete_demand_matrix(off)


def random_linear_family(rng, n, alpha, lo=1.0, hi=1.06):
    return realtime_utilities(near_uniform_rates(rng, n, lo, hi), alpha=alpha)
