"""Group-relative policy optimization for two-role agent teams on grid games.

Train small menu-softmax policies with turn-wise comparison groups (tree
branching at every agent/turn decision), mixed team/local rewards, and
strictly on-policy per-policy updates, over three deterministic
environments: Sudoku, Plan-Path, and Sokoban.
"""

from .core import (
    ConfigError,
    ContractError,
    GameConfig,
    MacroAction,
    MixerConfig,
    Observation,
    RoleMapping,
    TerminationFlag,
    map_role,
    validate_config,
)
from .envs import ENVIRONMENTS, generate, get_env
from .grouping import (
    AdvantageConfig,
    Group,
    GroupKey,
    assert_group_valid,
    compute_advantages,
    group_key,
)
from .policy import (
    PerPolicyBatch,
    PolicyParams,
    SampleResult,
    init_params,
    load_checkpoint,
    logprob,
    loss,
    sample_k,
    save_checkpoint,
    scripted_policy,
    update,
)
from .rewards import (
    LocalComponents,
    PRESETS,
    RewardSchedule,
    combine_local,
    component_scores,
    mix,
    schedule_for,
    team_reward,
)
from .runconfig import RunConfig
from .trainer import (
    EvalRecord,
    StepMetrics,
    TrainResult,
    ablation_parallel_sampling,
    evaluate,
    route,
    swap_policies,
    train,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AdvantageConfig",
    "ConfigError",
    "ContractError",
    "ENVIRONMENTS",
    "EvalRecord",
    "GameConfig",
    "Group",
    "GroupKey",
    "LocalComponents",
    "MacroAction",
    "MixerConfig",
    "Observation",
    "PRESETS",
    "PerPolicyBatch",
    "PolicyParams",
    "RewardSchedule",
    "RoleMapping",
    "RunConfig",
    "SampleResult",
    "StepMetrics",
    "TerminationFlag",
    "TrainResult",
    "ablation_parallel_sampling",
    "assert_group_valid",
    "combine_local",
    "component_scores",
    "compute_advantages",
    "evaluate",
    "generate",
    "get_env",
    "group_key",
    "init_params",
    "load_checkpoint",
    "logprob",
    "loss",
    "map_role",
    "mix",
    "route",
    "sample_k",
    "save_checkpoint",
    "schedule_for",
    "scripted_policy",
    "swap_policies",
    "team_reward",
    "train",
    "train_step",
    "update",
    "validate_config",
]
