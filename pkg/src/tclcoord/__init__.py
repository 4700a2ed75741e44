"""Coordination of thermostatically controlled load (TCL) fleets.

Pipeline: discretize the population dynamics into a controlled Markov
chain (grid, generator, markov), augment it with the compressor-lockout
counter (expanded), co-design an achievable aggregate power reference and
per-step randomized switching policies with a sparse QP (synthesis), and
evaluate the broadcast policies on a Monte Carlo fleet with QoS audits
(fleet).  The cli module wires these into scenario-driven subcommands.
"""

from .errors import (AssumptionViolationError, CflViolationError, ConfigError,
                     ConstraintResidualError, FactorizationError,
                     InvalidParameterError, PolicyStructureError,
                     SolverCapError, TclCoordError)
from .grid import GridSpec, OFF, ON, bin_temperature, build_grid
from .generator import (RateMatrix, TclParams, baseline_power,
                        build_rate_matrix, drift, fleet_baseline,
                        fleet_max_power, gamma_for_timestep)
from .markov import (PolicyPair, TransitionFactors, TransitionMatrix,
                     apply_policy, factorize, thermostat_policy,
                     transition_matrix)
from .expanded import (ExpandedModel, expand_dynamics, expand_policy,
                       flat_index, lockout_matrices, models_for_trajectory,
                       thermostat_stationary)
from .synthesis import (PlanProblem, PlanSolution, assemble, extract_policies,
                        plan, solve, verify_equivalence)
from .fleet import (FleetState, QosAudit, SimResult, audit, excursion_bound,
                    init_fleet, sample_states, simulate, simulate_chain,
                    tv_distance)

__version__ = "0.1.0"
