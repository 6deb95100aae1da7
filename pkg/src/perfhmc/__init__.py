"""Perfect simulation of continuous distributions with coupled HMC."""

from .dynamics import (
    KineticEnergy,
    PhaseState,
    TimeStepConfig,
    kinetic_energy,
    kinetic_gradient,
    leapfrog_half_kick,
    leapfrog_step,
    log_gamma,
    sample_momentum,
    time_step,
    time_step_for,
)
from .coupling import (
    BlockResult,
    ChainBlockState,
    calibrate_block_length,
    cftp,
    hmc_round,
    rocftp,
    run_coupled_pair,
    run_sample_set,
    sample_chain_starts,
    string_estimate,
    unbiased_perfect,
    unbiased_string,
)
from .metrics import EvalMetrics, merge, report
from .randomness import (
    RandomBlock,
    block_uniforms,
    clamp_diagnostics,
    stream_prefix,
    uniform_at,
    uniform_to_normal,
    uniforms,
)
from .targets import (
    CorrelatedNormalSpec,
    MixtureSpec,
    StartPointSet,
    TargetDistribution,
    cftp_start_points,
    lasso_S,
    lasso_T,
    load_diabetes,
    make_correlated_normal,
    make_lasso,
    make_normal_mixture,
    make_standard_normal,
    make_t_distribution,
    scale_transform,
)
from .trajectories import (
    FrutsSampler,
    RowLayout,
    TrajectoryBuffer,
    TrajectoryResult,
    d_R_for,
    direction_vector,
    fruts_limited_select,
    fruts_selection_probabilities,
    fruts_trajectory,
    get_sampler,
    nuts4_trajectory,
    nuts_trajectory,
    raw_trajectory,
)

__version__ = "0.1.0"
