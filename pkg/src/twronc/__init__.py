"""Throughput-optimal opportunistic network coding for a buffered two-way relay.

The package splits into five pieces: ``model`` (queue-state Markov chain and
analytic metrics), ``lp`` (the occupancy-variable linear program and policy
recovery), ``power`` (fading thresholds and expected transmit power),
``sim`` (slot-based Monte Carlo of the optimized scheme and two baselines),
and ``cli``/``config``/``policyfile`` (the command-line harness and its file
formats).
"""

from .model import (
    A_ALONE,
    B_ALONE,
    BOTH,
    IDLE,
    AnalyticMetrics,
    ArrivalProbs,
    ChainError,
    Policy,
    PolicyError,
    QueueState,
    StateSpace,
    StationaryDistribution,
    SystemParams,
    TransitionMatrix,
    allowed_actions,
    analytic_metrics,
    arrival_probs,
    build_transition_matrix,
    combined_ma_policy,
    drain_policy,
    state_space,
    stationary_distribution,
    validate_policy,
)
from .lp import (
    LPProblem,
    LPSolution,
    VarIndex,
    assemble_lp,
    optimize,
    parse_lp_text,
    recover_policy,
    solve_lp,
    verify_solution,
    write_lp_text,
)
from .power import (
    PowerProfile,
    SnrTargets,
    ThresholdTable,
    average_power,
    erfc,
    gaussian_tail_integral,
    policy_from_thresholds,
    power_profile,
    snr_targets,
    state_power,
    threshold_driven_average,
    threshold_from_marginal,
    thresholds_from_policy,
)
from .sim import (
    SimConfig,
    SimReport,
    SimulationError,
    simulate,
    simulate_combined_ma,
    simulate_random_ma,
)

__version__ = "0.1.0"
