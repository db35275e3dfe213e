"""State estimation for two-subsystem interconnected linear systems.

Each subsystem measures its own state in real time; the measurement it
shares with the other subsystem arrives late with some probability and is
then discarded.  The package provides the trace-optimal estimator under
that asymmetric information pattern, the boundedness analysis of the
expected error covariance, Monte-Carlo experiment drivers, and a
config-driven CLI (``netkalman``).
"""

from .model import (
    BlockDims,
    DelayModel,
    DelayOutcome,
    SelectorSet,
    SystemModel,
    ValidationReport,
    close_loop,
    detectable_full,
    discretize,
    fixture,
    selectors,
    validate_model,
)
from .gains import (
    GainSet,
    InnovationBlocks,
    StructuredMask,
    gain_set,
    innovation_blocks,
    kalman_factorization_check,
    mask_for_outcome,
    mask_pattern,
    optimal_gain,
    oracle_structured_gain,
    posterior_cov,
)
from .filtering import (
    EstimatorState,
    TrajectoryRecord,
    initial_state,
    make_rng,
    predict,
    run_filter,
    simulate_plant,
    stream_seed,
    subsystem_updates,
    update,
)
from .analysis import (
    BoundednessReport,
    CovBoundSequence,
    CriticalBounds,
    EmpiricalCritical,
    InapplicableError,
    MinimalityViolationError,
    NormMinima,
    SolverOptions,
    boundedness_test,
    cov_bound_sequence,
    critical_bounds,
    divergence_witness,
    empirical_critical,
    expected_next_cov,
    kron_update_radius,
    masked_norm_minima,
    min_structured_norm,
    one_step_cov,
    residual_gram,
    residual_gram_floor,
)
from .montecarlo import EecEstimate, SweepResult, estimate_eec, kalman_baseline, sweep
from .config import ConfigError, RunConfig, dump_normalized, parse_config

__version__ = "0.1.0"
