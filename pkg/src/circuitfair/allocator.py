"""Alpha-fair circuit allocation over the destination-based flow polytope.

The allocation problem: maximize the sum over ordered IE pairs of
U(phi(T_kl)) subject to nonnegative per-destination edge flows F,
conservation T + F A^T = 0, and full capacity use F^T 1 = c. U is the
alpha-fair utility, phi the per-pair utility (linear weight or concave
PWL). PWL utilities enter through epigraph variables bounded by each
segment's affine function; U enters through power cones (alpha > 1),
the exponential cone (alpha = 1), or directly (alpha <= 1).

For large alpha the objective is numerically flat for pairs sitting well
above the bottleneck utility level (their terms fall below any achievable
duality gap), so a single solve cannot place them. solve() therefore runs
a level continuation above _ALPHA_DIRECT_MAX: rescale utilities by the
conditional bottleneck level (a small LP), solve the cone program, freeze
the bottom cluster at its solved demands, and repeat on the remaining
pairs. Every round optimizes the genuine alpha-fair objective.

maxmin_oracle() is an independent verification oracle: progressive
filling over the classical per-IE-pair flow formulation, solved as a
sequence of LPs. It shares no code with solve().
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import SolverError, ValidationError
from .netmodel import (
    DestinationFlowMatrix,
    Topology,
    TrafficDemandMatrix,
    build_incidence,
    complete_demand_matrix,
)
from .utility import ConcavePwl, LinearUtility, UtilityFamily, alpha_utility

__all__ = [
    "AllocationProblem",
    "AllocationResult",
    "ResidualReport",
    "build_problem",
    "solve",
    "maxmin_oracle",
    "residual_report",
    "cancel_cycles",
]

_ALPHA_DIRECT_MAX = 4.0   # above this, use the level continuation
_FREEZE_DELTA = 0.005     # freeze pairs within this relative band of the level
_FREEZE_SHAVE = 1e-7      # relative shave on frozen floors (absorbs residuals)


@dataclass(frozen=True)
class AllocationProblem:
    topology: Topology
    family: UtilityFamily
    alpha: float
    feasibility_tol: float = 1e-6
    optimality_tol: float = 1e-6
    incidence: np.ndarray = field(repr=False, default=None)
    pairs: tuple = field(repr=False, default=None)

    @property
    def num_flow_vars(self) -> int:
        return self.topology.num_nodes * self.topology.num_edges

    @property
    def num_demand_vars(self) -> int:
        n = self.topology.num_nodes
        return n * (n - 1)

    @property
    def num_epigraph_vars(self) -> int:
        return sum(1 for p in self.pairs
                   if isinstance(self.family.utilities[p], ConcavePwl))

    @property
    def num_epigraph_constraints(self) -> int:
        return sum(len(self.family.utilities[p].pieces()) for p in self.pairs
                   if isinstance(self.family.utilities[p], ConcavePwl))


def build_problem(topology: Topology, family: UtilityFamily,
                  alpha: float | None = None,
                  feasibility_tol: float = 1e-6,
                  optimality_tol: float = 1e-6) -> AllocationProblem:
    """Assemble the allocation problem; validates that the utility family
    covers exactly the topology's ordered IE pairs."""
    n = topology.num_nodes
    if not family.covers(n):
        raise ValidationError(
            f"utility family does not cover the {n * (n - 1)} ordered IE pairs")
    return AllocationProblem(
        topology=topology,
        family=family,
        alpha=family.alpha if alpha is None else alpha,
        feasibility_tol=feasibility_tol,
        optimality_tol=optimality_tol,
        incidence=build_incidence(topology),
        pairs=tuple(sorted(family.utilities)),
    )


@dataclass(frozen=True)
class AllocationResult:
    demands: TrafficDemandMatrix           # T*
    flows: DestinationFlowMatrix           # F*
    objective_value: float
    pair_values: dict                      # (k, l) -> (phi, U)
    status: str
    solver_name: str
    rounds: int
    solve_seconds: float
    problem: AllocationProblem = field(repr=False, default=None)


@dataclass(frozen=True)
class ResidualReport:
    max_conservation: float
    mean_conservation: float
    max_capacity_rel: float
    mean_capacity_rel: float


def residual_report(result: AllocationResult) -> ResidualReport:
    """Conservation and capacity residual summary for a solved result."""
    if result.status != "optimal":
        raise ValidationError(
            f"residual report needs a solved result, got status {result.status!r}")
    A = result.problem.incidence
    caps = result.problem.topology.capacities
    cons = np.abs(result.demands.entries + result.flows.entries @ A.T)
    cap = np.abs(result.flows.edge_totals() - caps) / caps
    return ResidualReport(
        max_conservation=float(cons.max()),
        mean_conservation=float(cons.mean()),
        max_capacity_rel=float(cap.max()),
        mean_capacity_rel=float(cap.mean()),
    )


# ---------------------------------------------------------------------------
# bottleneck-level LP (used for objective prescaling and the continuation)


def _level_lp(problem: AllocationProblem, frozen: dict,
              equality_caps: bool = False):
    """Max-min utility level of the non-frozen pairs over the flow
    polytope, holding frozen pairs at their demand floors. Small LP.

    With equality_caps the edge capacities bind exactly (used to extract a
    complete solution when one free pair remains: maximizing its level is
    then the exact alpha-fair objective). Returns (level, flows array).
    """
    topo, fam, A = problem.topology, problem.family, problem.incidence
    n, m = topo.num_nodes, topo.num_edges
    pairs = problem.pairs
    caps = topo.capacities

    pwl_free = [i for i, p in enumerate(pairs)
                if i not in frozen and isinstance(fam.utilities[p], ConcavePwl)]
    scol = {i: n * m + 1 + rank for rank, i in enumerate(pwl_free)}
    lam_col = n * m
    nvars = n * m + 1 + len(pwl_free)

    def fcol(k, j):
        return k * m + j

    rows, cols, vals, bub = [], [], [], []
    rc = 0

    def add_row(entries, rhs):
        nonlocal rc
        for c_, v_ in entries:
            rows.append(rc)
            cols.append(c_)
            vals.append(v_)
        bub.append(rhs)
        rc += 1

    eq_rows, eq_cols, eq_vals, beq = [], [], [], []
    if equality_caps:
        for j in range(m):
            for k in range(n):
                eq_rows.append(j)
                eq_cols.append(fcol(k, j))
                eq_vals.append(1.0)
            beq.append(caps[j])
    else:
        for j in range(m):
            add_row([(fcol(k, j), 1.0) for k in range(n)], caps[j])

    for i, (k, l) in enumerate(pairs):
        # T_p = -(F A^T)_{kl}; demand_terms holds the (FA^T)_{kl} coefficients
        demand_terms = [(fcol(k, j), A[l, j]) for j in range(m) if A[l, j] != 0]
        # T_p >= 0 for every pair
        add_row(demand_terms, 0.0)
        if i in frozen:
            # T_p >= floor
            add_row(demand_terms, -frozen[i])
            continue
        u = fam.utilities[pairs[i]]
        if isinstance(u, LinearUtility):
            # lam <= T_p / r
            add_row(demand_terms + [(lam_col, u.rate)], 0.0)
        else:
            # s_p <= a_i + b_i T_p per piece; lam <= s_p
            for a_, b_ in u.pieces():
                add_row([(scol[i], 1.0)] + [(c_, b_ * v_) for c_, v_ in demand_terms],
                        a_)
            add_row([(lam_col, 1.0), (scol[i], -1.0)], 0.0)

    A_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(rc, nvars))
    kwargs = {}
    if equality_caps:
        kwargs["A_eq"] = sparse.csr_matrix(
            (eq_vals, (eq_rows, eq_cols)), shape=(m, nvars))
        kwargs["b_eq"] = np.array(beq)
    c = np.zeros(nvars)
    c[lam_col] = -1.0
    bounds = [(0, None)] * nvars
    res = linprog(c, A_ub=A_ub, b_ub=bub, bounds=bounds, method="highs",
                  **kwargs)
    if res.status != 0:
        raise SolverError(f"bottleneck level LP failed: {res.message}")
    flows = res.x[:n * m].reshape(n, m)
    return float(-res.fun), flows


# ---------------------------------------------------------------------------
# cone solve


def _alpha_objective(alpha, s_expr, count, constraints):
    """Concave alpha-fair objective over already-scaled utilities."""
    if alpha == 0:
        return cp.sum(s_expr)
    if alpha == 1:
        return cp.sum(cp.log(s_expr))
    if alpha < 1:
        return cp.sum(cp.power(s_expr, 1.0 - alpha)) / (1.0 - alpha)
    # alpha > 1: t >= s^(1-alpha) via one 3-d power cone per pair
    t = cp.Variable(count, nonneg=True)
    if count == 1:
        constraints.append(cp.constraints.PowCone3D(
            t[0], s_expr[0], 1.0, 1.0 / alpha))
    else:
        constraints.append(cp.constraints.PowCone3D(
            t, s_expr, np.ones(count), np.full(count, 1.0 / alpha)))
    return cp.sum(t) / (1.0 - alpha)


def _cone_solve(problem: AllocationProblem, scale: float, frozen: dict,
                free: list[int], allow_inaccurate: bool = False):
    """One alpha-fair solve with frozen pairs held at demand floors.

    Returns (Toff, F, solver_name). Raises SolverError if no backend
    reaches an optimal status; with allow_inaccurate, a reduced-accuracy
    solution is returned as a last resort (callers must validate it).
    """
    topo, fam, A = problem.topology, problem.family, problem.incidence
    n, m = topo.num_nodes, topo.num_edges
    pairs = problem.pairs
    P = len(pairs)

    F = cp.Variable((n, m), nonneg=True)
    Toff = cp.Variable(P, nonneg=True)
    FA = F @ A.T
    constraints = [cp.sum(F, axis=0) == topo.capacities]
    for i, (k, l) in enumerate(pairs):
        constraints.append(Toff[i] + FA[k, l] == 0)
    for i, floor in frozen.items():
        constraints.append(Toff[i] >= floor)

    # per-pair utility expressions for the free pairs
    s_parts = []
    pwl_free = [i for i in free if isinstance(fam.utilities[pairs[i]], ConcavePwl)]
    s_pwl = cp.Variable(len(pwl_free), nonneg=True) if pwl_free else None
    pwl_rank = {i: r for r, i in enumerate(pwl_free)}
    for i in free:
        u = fam.utilities[pairs[i]]
        if isinstance(u, LinearUtility):
            s_parts.append(Toff[i] / (u.rate * scale))
        else:
            sv = s_pwl[pwl_rank[i]]
            for a_, b_ in u.pieces():
                constraints.append(sv <= a_ + b_ * Toff[i])
            s_parts.append(sv / scale)
    s_expr = cp.hstack(s_parts)

    objective = _alpha_objective(problem.alpha, s_expr, len(free), constraints)
    prob = cp.Problem(cp.Maximize(objective), constraints)

    # tolerance ladder: every rung is a certified solve (the backend's own
    # termination criteria), all tighter than the problem's optimality tol
    attempts = (
        ("CLARABEL", {}),
        ("SCS", {"eps": 1e-9, "max_iters": 200000}),
        ("CLARABEL", {"tol_gap_abs": 1e-9, "tol_gap_rel": 1e-9,
                      "tol_feas": 1e-8}),
        ("SCS", {"eps": 1e-8, "max_iters": 400000}),
    )
    last_status = "no_attempt"
    for solver_name, kwargs in attempts:
        try:
            prob.solve(solver=solver_name, **kwargs)
        except cp.SolverError:
            last_status = "solver_error"
            continue
        last_status = prob.status
        if prob.status == "optimal" and Toff.value is not None:
            return (np.maximum(Toff.value, 0.0), np.maximum(F.value, 0.0),
                    solver_name)
    raise SolverError(
        f"allocation solve failed (alpha={problem.alpha}): "
        f"last status {last_status!r}")


def _phi_values(problem: AllocationProblem, toff: np.ndarray) -> np.ndarray:
    fam, pairs = problem.family, problem.pairs
    return np.array([fam.utilities[p].evaluate(float(toff[i]))
                     for i, p in enumerate(pairs)])


def solve(problem: AllocationProblem) -> AllocationResult:
    """Solve the allocation problem to certified accuracy.

    Returns an AllocationResult satisfying the conservation and
    capacity-equality residual bounds; raises SolverError (never a silent
    partial result) if no backend converges or the residuals fail.
    """
    t_start = time.perf_counter()
    pairs = problem.pairs
    P = len(pairs)

    frozen: dict[int, float] = {}
    free = list(range(P))
    rounds = 0
    toff = flows = None
    solver_name = ""
    while free:
        rounds += 1
        if rounds > P + 1:
            raise SolverError("level continuation failed to terminate")
        continuation = problem.alpha > _ALPHA_DIRECT_MAX
        if continuation and len(free) == 1:
            # one free pair: any increasing utility reduces to maximizing
            # its demand, which the level LP solves exactly (equality
            # capacities keep the full-allocation invariant)
            level, flows = _level_lp(problem, frozen, equality_caps=True)
            fa = flows @ problem.incidence.T
            toff = np.array([max(-fa[k, l], 0.0) for (k, l) in pairs])
            solver_name = "highs-lp"
        else:
            level, _ = _level_lp(problem, frozen)
            scale = level if level > 0 else 1.0
            toff, flows, solver_name = _cone_solve(problem, scale, frozen, free)
        if not continuation:
            break
        phis = _phi_values(problem, toff)
        lam = min(phis[i] for i in free)
        thresh = max(level * (1.0 + _FREEZE_DELTA), lam)
        newly = [i for i in free if phis[i] <= thresh]
        for i in newly:
            frozen[i] = float(toff[i]) * (1.0 - _FREEZE_SHAVE)
            free.remove(i)

    n, m = problem.topology.num_nodes, problem.topology.num_edges
    offdiag = np.zeros((n, n))
    for i, (k, l) in enumerate(pairs):
        offdiag[k, l] = toff[i]
    demands = complete_demand_matrix(offdiag)
    flow_matrix = DestinationFlowMatrix(flows)

    caps = problem.topology.capacities
    cons = float(np.abs(demands.entries + flows @ problem.incidence.T).max())
    cap_rel = float((np.abs(flows.sum(axis=0) - caps) / caps).max())
    if cons > problem.feasibility_tol * caps.max():
        raise SolverError(
            f"conservation residual {cons:.3g} exceeds tolerance "
            f"{problem.feasibility_tol * caps.max():.3g}")
    if cap_rel > problem.feasibility_tol:
        raise SolverError(
            f"capacity residual {cap_rel:.3g} exceeds relative tolerance "
            f"{problem.feasibility_tol:.3g}")

    phis = _phi_values(problem, toff)
    pair_values = {}
    objective = 0.0
    for i, p in enumerate(pairs):
        u_val = alpha_utility(float(phis[i]), problem.alpha)
        pair_values[p] = (float(phis[i]), u_val)
        objective += u_val

    return AllocationResult(
        demands=demands,
        flows=flow_matrix,
        objective_value=objective,
        pair_values=pair_values,
        status="optimal",
        solver_name=solver_name,
        rounds=rounds,
        solve_seconds=time.perf_counter() - t_start,
        problem=problem,
    )


# ---------------------------------------------------------------------------
# cycle cancellation


def _find_cycle(row: np.ndarray, topology: Topology,
                thresholds: np.ndarray) -> list[int] | None:
    """One directed cycle (as edge indices) in the above-threshold flow
    subgraph of a single destination row, or None."""
    n = topology.num_nodes
    out: dict[int, list[int]] = {i: [] for i in range(n)}
    for j, e in enumerate(topology.edges):
        if row[j] > thresholds[j]:
            out[e.tail].append(j)
    color = [0] * n  # 0 unvisited, 1 on stack, 2 done
    for start in range(n):
        if color[start] != 0:
            continue
        stack = [(start, iter(out[start]))]
        path_edges: list[int] = []
        color[start] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for j in it:
                nxt = topology.edges[j].head
                if color[nxt] == 1:
                    # back edge: walk the edge stack back to nxt to close it
                    cycle = [j]
                    walk = node
                    for ej in reversed(path_edges):
                        if walk == nxt:
                            break
                        cycle.append(ej)
                        walk = topology.edges[ej].tail
                    cycle.reverse()
                    return cycle
                if color[nxt] == 0:
                    color[nxt] = 1
                    path_edges.append(j)
                    stack.append((nxt, iter(out[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = 2
                stack.pop()
                if path_edges:
                    path_edges.pop()
    return None


def cancel_cycles(flows: DestinationFlowMatrix, topology: Topology,
                  threshold: float = 0.0) -> DestinationFlowMatrix:
    """Remove flow cycles per destination.

    Repeatedly finds a directed cycle in each destination's positive-flow
    subgraph (entries strictly above threshold, default all positive flow)
    and subtracts the cycle's minimum flow, which zeroes at least one
    edge exactly. Node balance is untouched, so T + F A^T = 0 is
    preserved and edge totals only decrease.
    """
    F = np.array(flows.entries, dtype=float)
    thresholds = np.full(topology.num_edges, threshold)
    for k in range(F.shape[0]):
        row = F[k]
        while True:
            cycle = _find_cycle(row, topology, thresholds)
            if cycle is None:
                break
            delta = min(row[j] for j in cycle)
            for j in cycle:
                row[j] -= delta
    return DestinationFlowMatrix(F)


# ---------------------------------------------------------------------------
# progressive-filling max-min oracle (verification aid; per-IE-pair LP)


_ORACLE_MAX_NODES = 6


def maxmin_oracle(topology: Topology, family: UtilityFamily,
                  max_nodes: int = _ORACLE_MAX_NODES) -> dict:
    """Lexicographic (weighted / PWL-composed) max-min allocation by
    progressive filling on the classical per-IE-pair flow formulation.

    Intended as a test oracle for small instances; refuses anything larger
    than max_nodes. Returns {pair: (demand, utility_level)}.
    """
    n, m = topology.num_nodes, topology.num_edges
    if n > max_nodes:
        raise ValidationError(
            f"oracle supports at most {max_nodes} nodes, got {n}")
    if not family.covers(n):
        raise ValidationError("utility family must cover all ordered IE pairs")
    A = build_incidence(topology)
    caps = topology.capacities
    pairs = sorted(family.utilities)
    P = len(pairs)

    # variables: Z (P*m) pair flows, T (P), u (P), lam
    nz = P * m

    def zcol(p, j):
        return p * m + j

    def tcol(p):
        return nz + p

    def ucol(p):
        return nz + P + p

    lam_col = nz + 2 * P
    nvars = nz + 2 * P + 1

    eq_rows, eq_cols, eq_vals, beq = [], [], [], []
    rc = 0
    for p, (k, l) in enumerate(pairs):
        for i in range(n):
            for j in range(m):
                if A[i, j] != 0:
                    eq_rows.append(rc)
                    eq_cols.append(zcol(p, j))
                    eq_vals.append(A[i, j])
            coef = (1.0 if i == l else 0.0) - (1.0 if i == k else 0.0)
            if coef != 0.0:
                eq_rows.append(rc)
                eq_cols.append(tcol(p))
                eq_vals.append(coef)
            beq.append(0.0)
            rc += 1
        u = family.utilities[pairs[p]]
        if isinstance(u, LinearUtility):
            # u_p == T_p / r
            eq_rows.extend([rc, rc])
            eq_cols.extend([ucol(p), tcol(p)])
            eq_vals.extend([1.0, -1.0 / u.rate])
            beq.append(0.0)
            rc += 1
    A_eq = sparse.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(rc, nvars))
    b_eq = np.array(beq)

    base_rows, base_cols, base_vals, base_b = [], [], [], []
    rc2 = 0
    for j in range(m):
        for p in range(P):
            base_rows.append(rc2)
            base_cols.append(zcol(p, j))
            base_vals.append(1.0)
        base_b.append(caps[j])
        rc2 += 1
    for p in range(P):
        u = family.utilities[pairs[p]]
        if isinstance(u, ConcavePwl):
            for a_, b_ in u.pieces():
                base_rows.extend([rc2, rc2])
                base_cols.extend([ucol(p), tcol(p)])
                base_vals.extend([1.0, -b_])
                base_b.append(a_)
                rc2 += 1

    frozen: dict[int, float] = {}
    demands = np.zeros(P)
    for _round in range(P + 1):
        if len(frozen) == P:
            break
        rows = list(base_rows)
        cols = list(base_cols)
        vals = list(base_vals)
        bub = list(base_b)
        rc3 = rc2
        for p in range(P):
            if p in frozen:
                # u_p >= level  ->  -u_p <= -level
                rows.append(rc3)
                cols.append(ucol(p))
                vals.append(-1.0)
                bub.append(-frozen[p])
            else:
                # lam <= u_p
                rows.extend([rc3, rc3])
                cols.extend([lam_col, ucol(p)])
                vals.extend([1.0, -1.0])
                bub.append(0.0)
            rc3 += 1
        A_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(rc3, nvars))
        b_ub = np.array(bub)

        c = np.zeros(nvars)
        c[lam_col] = -1.0
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=[(0, None)] * nvars, method="highs")
        if res.status != 0:
            raise SolverError(f"oracle level LP failed: {res.message}")
        lam = float(-res.fun)

        # freeze test: a free pair freezes if it cannot exceed the level
        newly = []
        bounds_fixed = [(0, None)] * (nvars - 1) + [(lam, lam)]
        for p in range(P):
            if p in frozen:
                continue
            c2 = np.zeros(nvars)
            c2[ucol(p)] = -1.0
            res2 = linprog(c2, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                           bounds=bounds_fixed, method="highs")
            if res2.status != 0:
                raise SolverError(f"oracle freeze LP failed: {res2.message}")
            best = float(-res2.fun)
            if best <= lam * (1 + 1e-7) + 1e-12:
                newly.append(p)
                demands[p] = float(res2.x[tcol(p)])
        if not newly:
            raise SolverError("oracle made no progress; degenerate instance")
        for p in newly:
            frozen[p] = lam
    return {pairs[p]: (float(demands[p]), float(frozen[p])) for p in range(P)}


# ---------------------------------------------------------------------------
# result serialization


def save_flows(flows: DestinationFlowMatrix, path) -> None:
    """One line per positive entry: `flow <dest-k> <edge-j> <Mbps>`
    (1-based indices)."""
    with open(path, "w", encoding="utf-8") as fh:
        n, m = flows.entries.shape
        for k in range(n):
            for j in range(m):
                v = flows.entries[k, j]
                if v > 0:
                    fh.write(f"flow {k + 1} {j + 1} {v:.17g}\n")


def load_flows(path, n: int, m: int) -> DestinationFlowMatrix:
    from .errors import ParseError
    out = np.zeros((n, m))
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] != "flow" or len(parts) != 4:
                raise ParseError(path, line_no, "expected `flow <k> <j> <Mbps>`")
            try:
                k, j, v = int(parts[1]) - 1, int(parts[2]) - 1, float(parts[3])
            except ValueError:
                raise ParseError(path, line_no, "malformed flow line")
            if not (0 <= k < n and 0 <= j < m):
                raise ParseError(path, line_no, "flow indices out of range")
            out[k, j] = v
    return DestinationFlowMatrix(out)


def save_allocation_summary(result: AllocationResult, path) -> None:
    """CSV: pair,k,l,T_star,phi,U (1-based indices)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pair,k,l,T_star,phi,U\n")
        for i, (k, l) in enumerate(result.problem.pairs):
            phi, u = result.pair_values[(k, l)]
            t = result.demands.entries[k, l]
            fh.write(f"{i},{k + 1},{l + 1},{t:.9g},{phi:.9g},{u:.9g}\n")
