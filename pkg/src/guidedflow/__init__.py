"""Guided flow-matching sampling for action-chunked control.

A small numpy library in three layers: flow-matching primitives over
analytic Gaussian-mixture chunk priors (`flow`), guided denoising with
prior-corrected weights and an orthogonal trust region (`guidance`,
`chunking`), and a closed-loop synthetic benchmark with paired-seed
experiment orchestration (`envs`, `metrics`, `harness`).
"""

from .chunking import (
    BoundaryEvent,
    ChunkExecutor,
    ChunkScheduleState,
    EpisodeTrace,
    build_inpaint_target,
    build_soft_mask,
)
from .envs import (
    ConditionalGMField,
    Observation,
    Obstacle,
    OraclePolicyParams,
    PointMassEnv,
    TaskVariant,
    conditional_field,
    default_variants,
    make_env,
    make_field,
)
from .errors import ConfigError, DomainError, NumericError, ScheduleOverrun, StructuralError
from .flow import (
    FlowState,
    GaussianMixtureField,
    GaussianMixtureFieldParams,
    VelocityField,
    estimate_vjp,
    euler_step,
    gm_velocity,
    gm_velocity_batch,
    gm_velocity_vjp,
    mixture_component_params,
    one_step_estimate,
    sample_unguided,
    sample_unguided_batch,
)
from .guidance import (
    GuidanceConfig,
    GuidanceMethod,
    InpaintTarget,
    guided_denoise,
    otr_project,
    pc_weight,
    pseudoinverse_correction,
    r_tau_sq,
    rtc_weight,
)
from .harness import (
    ExperimentConfig,
    ResultRow,
    SweepResult,
    grid_search_rho,
    grid_search_sigma,
    load_config,
    read_rows,
    run_cell_episode,
    run_sweep,
    summarize,
    write_rows,
)
from .metrics import (
    EpisodeMetrics,
    aggregate_weighted,
    chunk_switch_l2,
    episode_metrics,
    max_acc_jerk,
    worst_case,
)

__version__ = "0.1.0"
