import numpy as np
import pytest

from circuitfair import (
    Edge,
    LinearUtility,
    SolverError,
    Topology,
    UtilityFamily,
    ValidationError,
    build_incidence,
    build_problem,
    cancel_cycles,
    complete_demand_matrix,
    evaluate_utility,
    maxmin_oracle,
    realtime_utilities,
    residual_report,
    solve,
)
from circuitfair.allocator import AllocationResult
from circuitfair.utility import empirical_cdf, fit_concave_pwl

from conftest import near_uniform_rates, random_linear_family, ring_chords_topology
from oracles import perpair_problem, perpair_reference_objective


def ring30_topology():
    """11 nodes, 15 undirected links (ring + 4 chords) = 30 directed edges."""
    n = 11
    links = [(i, (i + 1) % n) for i in range(n)]
    links += [(0, 5), (2, 7), (3, 9), (4, 8)]
    edges = []
    for a, b in links:
        edges.append(Edge(a, b, 9920.0))
        edges.append(Edge(b, a, 9920.0))
    return Topology(nodes=tuple(f"n{i}" for i in range(n)), edges=tuple(edges))


def uniform_family(topology, alpha=2.0):
    n = topology.num_nodes
    rates = np.ones((n, n))
    np.fill_diagonal(rates, 0.0)
    return realtime_utilities(complete_demand_matrix(rates), alpha=alpha)


# ---------------------------------------------------------------------------
# problem assembly and variable counting


def test_flow_variable_reduction_11_30():
    topo = ring30_topology()
    fam = uniform_family(topo)
    prob = build_problem(topo, fam)
    assert topo.num_edges == 30
    assert prob.num_flow_vars == 330
    ref, _, Z, _ = perpair_problem(topo, fam)
    assert int(np.prod(Z.shape)) == 3300
    assert prob.num_flow_vars * (topo.num_nodes - 1) == int(np.prod(Z.shape))


def test_counting_two_nodes(two_node):
    prob = build_problem(two_node, uniform_family(two_node))
    assert prob.num_flow_vars == 2 * 2
    assert prob.num_demand_vars == 2


def test_epigraph_counting():
    topo = ring30_topology()
    rng = np.random.default_rng(0)
    utilities = {}
    for k in range(11):
        for l in range(11):
            if k != l:
                samples = rng.lognormal(3.0, 0.5, size=42)
                utilities[(k, l)] = fit_concave_pwl(empirical_cdf(samples),
                                                    segments=3)
    fam = UtilityFamily(alpha=2.0, utilities=utilities)
    prob = build_problem(topo, fam)
    assert prob.num_epigraph_vars == 110
    assert prob.num_epigraph_constraints == 330


def test_family_coverage_mismatch(tri_cycle):
    fam = UtilityFamily(alpha=2.0, utilities={(0, 1): LinearUtility(1.0)})
    with pytest.raises(ValidationError):
        build_problem(tri_cycle, fam)


# ---------------------------------------------------------------------------
# solve: examples


def test_single_edge_saturates(two_node):
    result = solve(build_problem(two_node, uniform_family(two_node)))
    assert result.demands.entries[1, 0] == pytest.approx(10.0, rel=1e-5)
    assert result.demands.entries[0, 1] == pytest.approx(10.0, rel=1e-5)


def test_two_pairs_sharing_one_edge_split_evenly():
    # pairs (b<-a) and (c<-a) must both cross a->b (capacity 10); every
    # other pair has its own ample edge and a vanishing weight, so the
    # split approaches the ideal 5/5 of the two-pair textbook case
    topo = Topology(nodes=("a", "b", "c"), edges=(
        Edge(0, 1, 10.0), Edge(1, 2, 1000.0), Edge(2, 0, 1000.0)))
    fam = _family_with_rates(topo, {(1, 0): 1.0, (2, 0): 1.0},
                             default=1e-6, alpha=2.0)
    result = solve(build_problem(topo, fam))
    assert result.demands.entries[1, 0] == pytest.approx(5.0, rel=1e-2)
    assert result.demands.entries[2, 0] == pytest.approx(5.0, rel=1e-2)


def test_symmetric_cycle_allocations():
    # equal weights on a symmetric directed cycle: the three one-hop pairs
    # match, the three two-hop pairs match, and each edge carries
    # one-hop + 2 x two-hop = capacity
    topo = Topology(nodes=("1", "2", "3"), edges=(
        Edge(0, 1, 10.0), Edge(1, 2, 10.0), Edge(2, 0, 10.0)))
    result = solve(build_problem(topo, uniform_family(topo)))
    T = result.demands.entries
    one_hop = [T[1, 0], T[2, 1], T[0, 2]]
    two_hop = [T[2, 0], T[0, 1], T[1, 2]]
    assert max(one_hop) - min(one_hop) < 1e-4 * max(one_hop)
    assert max(two_hop) - min(two_hop) < 1e-4 * max(two_hop)
    assert one_hop[0] + 2 * two_hop[0] == pytest.approx(10.0, rel=1e-6)


def test_diamond_matches_oracle():
    # 4-node diamond: source 0 reaches 3 via two 2-hop paths; unequal
    # weights; large alpha approaches the weighted max-min allocation
    topo = Topology(nodes=("s", "a", "b", "t"), edges=(
        Edge(0, 1, 10.0), Edge(1, 3, 10.0), Edge(0, 2, 8.0),
        Edge(2, 3, 8.0), Edge(3, 0, 25.0), Edge(1, 0, 6.0),
        Edge(3, 1, 6.0), Edge(2, 0, 7.0), Edge(0, 3, 9.0)))
    rng = np.random.default_rng(77)
    fam = random_linear_family(rng, 4, alpha=32.0)
    result = solve(build_problem(topo, fam))
    oracle = maxmin_oracle(topo, fam)
    for pair, (_, level) in oracle.items():
        phi, _ = evaluate_utility(fam, pair, result.demands.entries[pair])
        assert phi == pytest.approx(level, rel=0.01)


# ---------------------------------------------------------------------------
# maxmin oracle


def shared_edge_topology():
    return Topology(nodes=("a", "b", "c"), edges=(
        Edge(0, 1, 12.0), Edge(1, 2, 100.0), Edge(2, 0, 100.0),
        Edge(1, 0, 100.0), Edge(2, 1, 100.0)))


def _family_with_rates(topology, rate_map, default=1.0, alpha=32.0):
    n = topology.num_nodes
    utilities = {}
    for k in range(n):
        for l in range(n):
            if k != l:
                utilities[(k, l)] = LinearUtility(
                    rate=float(rate_map.get((k, l), default)))
    return UtilityFamily(alpha=alpha, utilities=utilities)


def test_oracle_equal_split_on_shared_edge():
    topo = shared_edge_topology()
    fam = _family_with_rates(topo, {})
    oracle = maxmin_oracle(topo, fam)
    # pairs (b<-a) and (c<-a) both cross the 12-capacity edge
    assert oracle[(1, 0)][0] == pytest.approx(6.0, rel=1e-6)
    assert oracle[(2, 0)][0] == pytest.approx(6.0, rel=1e-6)


def test_oracle_weighted_split():
    topo = shared_edge_topology()
    fam = _family_with_rates(topo, {(1, 0): 1.0, (2, 0): 2.0})
    oracle = maxmin_oracle(topo, fam)
    assert oracle[(1, 0)][0] == pytest.approx(4.0, rel=1e-6)
    assert oracle[(2, 0)][0] == pytest.approx(8.0, rel=1e-6)
    assert oracle[(1, 0)][1] == pytest.approx(oracle[(2, 0)][1], rel=1e-6)


def test_oracle_refuses_large_instances():
    topo = ring30_topology()
    with pytest.raises(ValidationError):
        maxmin_oracle(topo, uniform_family(topo))


def test_large_alpha_matches_oracle_small_batch():
    rng = np.random.default_rng(2024)
    for _ in range(3):
        n = int(rng.integers(3, 6))
        topo = ring_chords_topology(rng, n, extra_chords=int(rng.integers(0, 3)))
        fam = random_linear_family(rng, n, alpha=32.0)
        result = solve(build_problem(topo, fam))
        oracle = maxmin_oracle(topo, fam)
        for pair, (_, level) in oracle.items():
            phi, _ = evaluate_utility(fam, pair,
                                      result.demands.entries[pair])
            assert phi == pytest.approx(level, rel=0.01)


# ---------------------------------------------------------------------------
# residuals and invariants


def test_residual_report_bounds(tri_cycle10):
    result = solve(build_problem(tri_cycle10, uniform_family(tri_cycle10)))
    rep = residual_report(result)
    assert rep.max_conservation <= 1e-6 * 10.0
    assert rep.max_capacity_rel <= 1e-6


def test_residual_report_requires_solved(tri_cycle10):
    result = solve(build_problem(tri_cycle10, uniform_family(tri_cycle10)))
    failed = AllocationResult(
        demands=result.demands, flows=result.flows, objective_value=0.0,
        pair_values={}, status="failed", solver_name="x", rounds=1,
        solve_seconds=0.0, problem=result.problem)
    with pytest.raises(ValidationError):
        residual_report(failed)


def test_scale_invariance():
    rng = np.random.default_rng(31)
    topo = ring_chords_topology(rng, 4, extra_chords=2)
    off = rng.uniform(1.0, 5.0, size=(4, 4))
    np.fill_diagonal(off, 0.0)
    base = complete_demand_matrix(off)
    t_ref = None
    for factor in (1.0, 37.5):
        fam = realtime_utilities(base.scaled(factor), alpha=2.0)
        result = solve(build_problem(topo, fam))
        if t_ref is None:
            t_ref = result.demands.entries
        else:
            diff = np.abs(result.demands.entries - t_ref)
            assert diff.max() <= 1e-4 * np.abs(t_ref).max()


def test_objective_matches_recomputation():
    rng = np.random.default_rng(8)
    topo = ring_chords_topology(rng, 4, extra_chords=1)
    fam = random_linear_family(rng, 4, alpha=2.0, lo=1.0, hi=3.0)
    result = solve(build_problem(topo, fam))
    total = 0.0
    for pair in result.problem.pairs:
        _, u = evaluate_utility(fam, pair, result.demands.entries[pair])
        total += u
    assert total == pytest.approx(result.objective_value, rel=1e-6)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_formulation_equivalence(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 6))
    topo = ring_chords_topology(rng, n, extra_chords=int(rng.integers(0, 3)))
    fam = random_linear_family(rng, n, alpha=2.0, lo=1.0, hi=4.0)
    result = solve(build_problem(topo, fam))
    ref = perpair_reference_objective(topo, fam)
    assert result.objective_value == pytest.approx(ref, rel=1e-5)


def test_no_cycles_after_cleanup():
    rng = np.random.default_rng(44)
    topo = ring_chords_topology(rng, 5, extra_chords=3)
    fam = random_linear_family(rng, 5, alpha=2.0, lo=1.0, hi=3.0)
    result = solve(build_problem(topo, fam))
    cleaned = cancel_cycles(result.flows, topo)
    # T* unchanged: cancellation only removes circulation
    A = build_incidence(topo)
    res_before = np.abs(result.demands.entries
                        + result.flows.entries @ A.T).max()
    res_after = np.abs(result.demands.entries
                       + cleaned.entries @ A.T).max()
    assert res_after <= res_before + 1e-9
    # acyclic above the acceptance threshold
    thresholds = 10 * 1e-6 * topo.capacities
    for k in range(5):
        assert _is_acyclic(cleaned.entries[k], topo, thresholds)
    # and edge totals only decreased
    assert np.all(cleaned.edge_totals()
                  <= result.flows.edge_totals() + 1e-12)


def _is_acyclic(row, topology, thresholds):
    from circuitfair.allocator import _find_cycle
    return _find_cycle(row, topology, thresholds) is None


def test_pwl_allocation_matches_reference():
    rng = np.random.default_rng(90)
    topo = ring_chords_topology(rng, 4, extra_chords=1)
    utilities = {}
    for k in range(4):
        for l in range(4):
            if k != l:
                samples = rng.lognormal(1.5, 0.5, size=42)
                utilities[(k, l)] = fit_concave_pwl(empirical_cdf(samples),
                                                    segments=3)
    fam = UtilityFamily(alpha=2.0, utilities=utilities)
    result = solve(build_problem(topo, fam))
    ref = perpair_reference_objective(topo, fam)
    assert result.objective_value == pytest.approx(ref, rel=1e-5)
    rep = residual_report(result)
    assert rep.max_capacity_rel <= 1e-6
