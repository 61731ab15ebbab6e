"""Learning MPC with convex safe sets in lifted output space."""

from .closed_loop import (
    CampaignResult,
    IterationFailure,
    IterationRecord,
    RunConfig,
    run_campaign,
    run_iteration,
    write_campaign,
)
from .controller import (
    LmpcConfig,
    StepResult,
    WarmStart,
    enumerate_pwa_modes,
    in_region_of_attraction,
    initial_warm_start,
    solve_step,
    warm_start_from_previous,
)
from .examples import ConfigError, build, register_example
from .qp import QpSolution, QuadraticProgram, solve_qp
from .safe_set import OutputSafeSet, SafeSetPoint, TrajectoryRejected
from .sqp import ConstraintBlock, NonlinearProgram, solve_nlp
from .systems import (
    Box,
    LiftedSystem,
    MapDomainError,
    augment,
    backward_shift,
    box_membership,
    check_monotone_on_lines,
    forward_shift,
    lifted_from_rollout,
    reconstruct_input,
    reconstruct_state,
    window_from_rollout,
)

__version__ = "0.1.0"
