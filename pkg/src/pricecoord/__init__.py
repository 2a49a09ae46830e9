"""Price-based coordination of selfish linear-dynamics agents.

A coordinator poses small games (prices, frozen coupling slices, proximal
probes) to N agents that each maximize a private utility, learns what it
needs from their responses, and steers the joint action to the social
optimum. See model for the world model and sign conventions, agents for
best responses, equilibrium and mechanism for the play modes and polling
loop, parametric and geometry for the two learning paths, oracle for
independent reference optimizers, and cli for the end-to-end driver.
"""

from .errors import (
    BestResponseError,
    ConfigError,
    CoordinationError,
    NonConvergenceError,
    RankDeficiencyError,
)
from .model import (
    CouplingFunction,
    LinearDynamics,
    QuadraticUtility,
    SmoothUtility,
    SystemInstance,
    coupling_gradient_error,
    cross_term_utility,
    decomposable_utility,
    eval_quadratic,
    grad_u_quadratic,
    joint_action,
    joint_next_state,
    pairwise_quadratic_coupling,
    replace_states,
    step,
    utility_gradient_error,
    zero_coupling,
)
from .agents import BestResponseConfig, CouplingSlice, GameSpec, best_response
from .oracle import OracleResult, fd_gradient, joint_welfare, joint_welfare_opt
from .equilibrium import (
    CoCoercivityEstimate,
    OperatorField,
    SingleStageUpdate,
    StepSchedule,
    TwoStageUpdate,
    coupling_slice,
    default_schedule,
    estimate_cocoercivity,
    flat_reward_field,
    grid_gradient_bound,
    play_sequential,
    play_simultaneous,
    play_single_stage,
    play_tikhonov,
    play_two_stage,
    probe_utility_gradient,
    reward_field,
    single_stage_update,
    stage2_probe_target,
    tracking_error_bound,
    two_stage_update,
    uniform_box,
    vi_project_iterate,
)
from .mechanism import (
    PLAY_MODES,
    PollingConfig,
    StageTrace,
    WeakCouplingReport,
    message_space_dimension,
    price_from_target,
    run_stage,
    social_welfare,
    weak_coupling_diagnostic,
)
from .parametric import (
    EstimatedQuadraticModel,
    ObservationLog,
    estimated_gradient,
    identify,
    load_log,
    optimal_price,
    price_to_action_map,
    save_log,
)
from .geometry import (
    ConnectionModel,
    KernelFieldModel,
    TrajectorySample,
    fit_connection,
    fit_decomposable,
    gaussian_kernel,
    kernel_fit_residual,
    load_samples,
    median_pairwise,
    predict_delta,
    predict_field,
    save_samples,
    sliding_connection,
    transport,
)
from .scenario import (
    COUPLING_SPECS,
    UTILITY_SPECS,
    ScenarioConfig,
    config_from_dict,
    generate,
    load_config,
    noise_streams,
    polling_config,
    save_config,
    separation_barrier_coupling,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
