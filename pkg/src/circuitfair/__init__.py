"""circuitfair: alpha-fair optical circuit allocation and evaluation.

Pipeline: load a topology and traffic (netmodel), build per-pair utilities
from live rates or historical CDFs (utility), solve the destination-based
multicommodity flow program (allocator), disaggregate the solution into
per-pair circuits (circuits), and compare against shortest-path packet
routing in a fluid simulator (simulator).
"""

from .allocator import (
    AllocationProblem,
    AllocationResult,
    build_problem,
    cancel_cycles,
    maxmin_oracle,
    residual_report,
    solve,
)
from .circuits import (
    CircuitConfig,
    DetailedFlowSet,
    build_circuit_config,
    disaggregate_greedy,
    disaggregate_proportional,
    paths_from_detailed,
)
from .errors import ConfigurationError, ParseError, SolverError, ValidationError
from .netmodel import (
    DestinationFlowMatrix,
    Edge,
    FeasibilityResult,
    Topology,
    TrafficDemandMatrix,
    TrafficSeries,
    build_incidence,
    check_feasible,
    complete_demand_matrix,
    load_topology,
    load_traffic_series,
    merge_nodes,
)
from .simulator import (
    GREEDYRR,
    NORR,
    OPTRR,
    OSPF,
    Scenario,
    SimulationMetrics,
    SimulationReport,
    StrategySpec,
    normalize_load,
    shortest_path_tables,
    simulate,
    sweep,
)
from .utility import (
    ConcavePwl,
    EmpiricalCdf,
    LinearUtility,
    UtilityFamily,
    alpha_utility,
    empirical_cdf,
    evaluate_utility,
    fit_concave_pwl,
    realtime_utilities,
)

__version__ = "0.1.0"
