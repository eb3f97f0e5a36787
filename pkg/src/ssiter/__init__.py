"""Self-stabilizing Jacobi-style solver for W u = v under changing inputs.

Synchronous and asynchronous (shared-register) simulators, the convergence
envelopes they are checked against, and output-distribution laws for
Gaussian inputs.
"""
from ssiter.analysis import (BoundParams, BoundReport, DistributionSpec, ErrorTrace, async_envelope,
                             check_bound, closed_form_error, closed_form_errors, default_burn_in,
                             error_trace, estimate_output_distribution, per_round_distribution,
                             relative_frobenius, stationary_output_distribution, sync_envelope,
                             theoretical_output_distribution)
from ssiter.async_engine import (AsyncLayout, AsyncState, AsyncTrace, Schedule, async_step,
                                 detect_rounds, initial_errors, initial_state, run_async,
                                 run_async_rounds, staleness_violations)
from ssiter.errors import (BadCovariance, ConfigError, DimensionMismatch, DominanceViolated,
                           NotContractive, ParseError, Singular, SSIterError, TooFewSamples,
                           ZeroDiagonal)
from ssiter.inputs import InputModel, InputSequence, adversarial_box_sequence, gen_sequence
from ssiter.linalg import (JacobiSplit, inf_norm_mat, inf_norm_vec, is_normalized_diag_dominant,
                           jacobi_split, mat_inverse, solve_exact)
from ssiter.sync_engine import Configuration, RunTrace, run_sync, sync_round
from ssiter.topology import (NodeWeights, WeightedGraph, build_circle, build_unit_disc,
                             graph_from_matrix, load_graph, node_weights)

__version__ = "0.1.0"
