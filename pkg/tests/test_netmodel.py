import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circuitfair import (
    Edge,
    ParseError,
    Topology,
    ValidationError,
    build_incidence,
    check_feasible,
    complete_demand_matrix,
    load_topology,
    load_traffic_series,
    merge_nodes,
)
from circuitfair.netmodel import (
    load_traffic_matrix,
    merge_demand_entries,
    save_topology,
    save_traffic_matrix,
)

ABILENE = "data/abilene.topo"


# ---------------------------------------------------------------------------
# topology + incidence


def test_incidence_single_edge():
    topo = Topology(nodes=("a", "b"), edges=(Edge(0, 1, 5.0), Edge(1, 0, 5.0)))
    A = build_incidence(topo)
    assert A[:, 0].tolist() == [-1.0, 1.0]


def test_incidence_directed_3cycle(tri_cycle):
    A = build_incidence(tri_cycle)
    assert A.shape == (3, 3)
    for i in range(3):
        row = A[i]
        assert sorted(row.tolist()) == [-1.0, 0.0, 1.0]
    assert np.all(A.sum(axis=0) == 0)


def test_incidence_abilene_columns_sum_zero():
    topo = load_topology(ABILENE)
    assert topo.num_nodes == 11
    A = build_incidence(topo)
    assert np.all(A.sum(axis=0) == 0)
    assert np.all(np.count_nonzero(A, axis=0) == 2)


def test_topology_rejects_self_loop():
    with pytest.raises(ValidationError):
        Topology(nodes=("a", "b"), edges=(Edge(0, 0, 1.0), Edge(0, 1, 1.0),
                                          Edge(1, 0, 1.0)))


def test_topology_rejects_nonpositive_capacity():
    with pytest.raises(ValidationError):
        Topology(nodes=("a", "b"), edges=(Edge(0, 1, 0.0), Edge(1, 0, 1.0)))


def test_topology_requires_strong_connectivity():
    with pytest.raises(ValidationError):
        Topology(nodes=("a", "b", "c"),
                 edges=(Edge(0, 1, 1.0), Edge(1, 0, 1.0)))


def test_parallel_edges_allowed():
    topo = Topology(nodes=("a", "b"),
                    edges=(Edge(0, 1, 1.0), Edge(0, 1, 2.0), Edge(1, 0, 1.0)))
    assert topo.num_edges == 3


# ---------------------------------------------------------------------------
# demand matrices


def test_complete_demand_2x2():
    off = np.array([[0.0, 5.0], [0.0, 0.0]])
    dm = complete_demand_matrix(off)
    assert dm.entries[0, 0] == -5.0
    assert dm.entries[1, 1] == 0.0


def test_complete_demand_zero_matrix():
    dm = complete_demand_matrix(np.zeros((3, 3)))
    assert np.all(dm.entries == 0)


def test_complete_demand_row():
    off = np.zeros((3, 3))
    off[0, 1], off[0, 2] = 2.0, 3.0
    dm = complete_demand_matrix(off)
    assert dm.entries[0, 0] == -5.0


def test_complete_demand_rejects_negative():
    off = np.zeros((2, 2))
    off[0, 1] = -1.0
    with pytest.raises(ValidationError):
        complete_demand_matrix(off)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_complete_demand_rows_sum_zero(n, seed):
    rng = np.random.default_rng(seed)
    off = rng.uniform(0, 1e6, size=(n, n))
    dm = complete_demand_matrix(off)
    scale = max(abs(dm.entries).max(), 1.0)
    assert np.abs(dm.entries.sum(axis=1)).max() <= 1e-9 * scale


# ---------------------------------------------------------------------------
# feasibility


def test_feasible_single_edge(two_node):
    off = np.zeros((2, 2))
    off[1, 0] = 5.0
    res = check_feasible(two_node, complete_demand_matrix(off))
    assert res.feasible
    A = build_incidence(two_node)
    assert res.witness.conservation_residual(
        complete_demand_matrix(off), A) <= 1e-6
    assert np.all(res.witness.edge_totals()
                  <= two_node.capacities + 1e-6)


def test_infeasible_single_edge(two_node):
    off = np.zeros((2, 2))
    off[1, 0] = 11.0
    res = check_feasible(two_node, complete_demand_matrix(off))
    assert res.verdict == "infeasible"
    assert res.edge_shortfall is not None
    assert res.edge_shortfall.max() == pytest.approx(1.0, abs=1e-6)


def test_3cycle_feasible_exactly_at_capacity(tri_cycle):
    # each next-hop pair demands the full unit capacity of its only route:
    # the unique routing on a cycle saturates every edge exactly
    off = np.zeros((3, 3))
    off[1, 0] = off[2, 1] = off[0, 2] = 1.0
    res = check_feasible(tri_cycle, complete_demand_matrix(off))
    assert res.feasible
    off *= 1.0 + 1e-3
    res = check_feasible(tri_cycle, complete_demand_matrix(off))
    assert res.verdict == "infeasible"


# ---------------------------------------------------------------------------
# file round-trips and parse errors


def test_topology_roundtrip(tmp_path, tri_cycle):
    path = tmp_path / "t.topo"
    save_topology(tri_cycle, path)
    back = load_topology(path)
    assert back == tri_cycle


def test_matrix_roundtrip(tmp_path):
    off = np.array([[0.0, 1.5, 2.25], [0.5, 0.0, 0.0], [4.0, 0.125, 0.0]])
    dm = complete_demand_matrix(off)
    path = tmp_path / "m.tm"
    save_traffic_matrix(dm, path)
    back = load_traffic_matrix(path, 3)
    assert np.array_equal(back.entries, dm.entries)


def test_load_two_node_file(tmp_path):
    path = tmp_path / "two.topo"
    path.write_text("nodes: 2\nnode 1 a\nnode 2 b\nedges:\n"
                    "edge 1 2 10\nedge 2 1 10\n")
    topo = load_topology(path)
    assert topo.num_nodes == 2
    assert topo.edges[0].capacity == 10.0


def test_series_loading(tmp_path):
    dm = complete_demand_matrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
    for i in range(12):
        save_traffic_matrix(dm, tmp_path / f"{1000 + 300 * i}.tm")
    series = load_traffic_series(tmp_path, 2)
    assert len(series) == 12
    assert series.timestamps == tuple(1000 + 300 * i for i in range(12))


def test_series_units_scale(tmp_path):
    dm = complete_demand_matrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
    save_traffic_matrix(dm, tmp_path / "100.tm")
    series = load_traffic_series(tmp_path, 2, units_scale=8e-6)
    assert series.matrices[0].entries[0, 1] == pytest.approx(8e-6)


def test_matrix_wrong_shape_is_parse_error(tmp_path):
    path = tmp_path / "bad.tm"
    path.write_text("1 2 3\n4 5\n")  # n*n - 1 values
    with pytest.raises(ParseError) as exc:
        load_traffic_matrix(path, 3)
    assert "bad.tm" in str(exc.value)


def test_topology_parse_error_names_line(tmp_path):
    path = tmp_path / "bad.topo"
    path.write_text("nodes: 2\nnode 1 a\nnode 2 b\nedges:\nedge 1 oops 3\n")
    with pytest.raises(ParseError) as exc:
        load_topology(path)
    assert ":5:" in str(exc.value)


# ---------------------------------------------------------------------------
# node merge


def test_merge_reattaches_and_sums():
    topo = Topology(
        nodes=("a", "a2", "b"),
        edges=(Edge(0, 1, 5.0), Edge(1, 0, 5.0),   # a <-> a2 becomes loop
               Edge(1, 2, 7.0), Edge(2, 1, 7.0),   # a2 <-> b reattaches
               Edge(0, 2, 3.0), Edge(2, 0, 3.0)))
    merged, index_map = merge_nodes(topo, [("a2", "a")])
    assert merged.nodes == ("a", "b")
    assert merged.num_edges == 4  # the a<->a2 pair dropped as self-loops
    off = np.zeros((3, 3))
    off[2, 0] = 1.0   # b <- a
    off[2, 1] = 2.0   # b <- a2
    off[0, 1] = 4.0   # a <- a2 collapses onto the diagonal, dropped
    out = merge_demand_entries(off, index_map, 2)
    assert out[1, 0] == 3.0
    assert out.sum() == 3.0


def test_merge_unknown_target():
    topo = Topology(nodes=("a", "b"), edges=(Edge(0, 1, 1.0), Edge(1, 0, 1.0)))
    with pytest.raises(ValidationError):
        merge_nodes(topo, [("a", "zzz")])
