"""Group keys, group assembly and validity, and group-relative advantages.

A group is the unit of learning: K candidate actions sampled by one agent at
one turn against a byte-identical observation. Advantages are mean-centered
and divided by the sample standard deviation (ddof=1 by default, so the
advantage vector of a non-degenerate group has sample std exactly 1).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

from .core import ContractError, GameConfig, MacroAction, Observation


class GroupError(ContractError):
    """A group violates assembly invariants (mixed prompts, wrong size)."""


@dataclass(frozen=True)
class GroupKey:
    """Injective encoding of (environment, agent, turn, training step)."""

    env_id: int
    agent: int
    turn: int
    run_step: int


def group_key(
    e: int,
    i: int,
    t: int,
    s: int,
    cfg: GameConfig | None = None,
    n_envs: int | None = None,
) -> GroupKey:
    """Build a group key, bounds-checked against ``cfg`` when provided.

    ``n_envs`` overrides the config's environment bound (the parallel-sampling
    ablation files per-trajectory groups under a virtual env-id namespace).
    """
    if cfg is not None:
        env_bound = n_envs if n_envs is not None else cfg.n_envs
        if not 0 <= e < env_bound:
            raise ContractError(f"env index {e} out of range 0..{env_bound - 1}")
        if not 0 <= i < cfg.n_agents:
            raise ContractError(f"agent index {i} out of range 0..{cfg.n_agents - 1}")
        if not 0 <= t < cfg.turn_horizon:
            raise ContractError(f"turn index {t} out of range 0..{cfg.turn_horizon - 1}")
        if not 0 <= s < cfg.total_steps:
            raise ContractError(f"step index {s} out of range 0..{cfg.total_steps - 1}")
    elif min(e, i, t, s) < 0:
        raise ContractError("group key indices must be non-negative")
    return GroupKey(env_id=e, agent=i, turn=t, run_step=s)


def observation_digest(observation: Observation) -> str:
    """Short stable digest of the observation bytes (prompt identity)."""
    return hashlib.sha256(observation.state_encoding).hexdigest()[:16]


@dataclass(frozen=True)
class GroupCandidate:
    action: MacroAction
    reward: float
    logprob: float
    sampled_version: int
    obs_digest: str


@dataclass(frozen=True)
class Group:
    """K candidates sampled against one observation, with their advantages.

    ``branches`` records the sampling width the group was built under;
    ``degenerate`` marks groups excluded from training (single candidates,
    or zero-variance groups under the drop-group policy). ``menu_features``
    keeps the full menu's feature rows so the policy loss can recompute
    log-probabilities under current parameters.
    """

    key: GroupKey
    observation: Observation
    candidates: tuple[GroupCandidate, ...]
    advantages: tuple[float, ...]
    branches: int
    menu_features: object = field(default=None, compare=False)
    degenerate: bool = False

    @property
    def size(self) -> int:
        return len(self.candidates)

    @property
    def rewards(self) -> tuple[float, ...]:
        return tuple(c.reward for c in self.candidates)


def assert_group_valid(group: Group) -> Group:
    """Pass the group through iff its assembly invariants hold.

    Candidates must all carry the observation's byte digest (prompt identity)
    and the candidate count must equal the group's sampling width.
    """
    expected = observation_digest(group.observation)
    for cand in group.candidates:
        if cand.obs_digest != expected:
            raise GroupError("mixed-prompt group")
    if group.size != group.branches:
        raise GroupError(
            f"incomplete group: {group.size} candidates, expected {group.branches}"
        )
    if len(group.advantages) != group.size:
        raise GroupError("advantage count does not match candidate count")
    return group


@dataclass(frozen=True)
class AdvantageConfig:
    """Normalization settings for group-relative advantages.

    ``ddof=1`` is the sample standard deviation; ``ddof=0`` is selectable for
    sensitivity runs. ``degenerate_policy`` decides what happens to groups
    whose rewards cannot be normalized (K = 1 or std <= norm_epsilon):
    ``zero-advantages`` keeps them with all-zero advantages (zero gradient),
    ``drop-group`` excludes them from training batches.
    """

    norm_epsilon: float = 1e-8
    degenerate_policy: str = "zero-advantages"
    ddof: int = 1

    def __post_init__(self) -> None:
        if self.norm_epsilon <= 0:
            raise ContractError("norm_epsilon must be positive")
        if self.degenerate_policy not in ("zero-advantages", "drop-group"):
            raise ContractError(
                f"unknown degenerate policy {self.degenerate_policy!r}"
            )
        if self.ddof not in (0, 1):
            raise ContractError("ddof must be 0 or 1")


def _reward_std(rewards: list[float], ddof: int) -> float:
    k = len(rewards)
    if k <= ddof:
        return 0.0
    mean = sum(rewards) / k
    var = sum((r - mean) ** 2 for r in rewards) / (k - ddof)
    return math.sqrt(var)


def is_degenerate(rewards, cfg: AdvantageConfig) -> bool:
    """True when the reward vector cannot be mean/std normalized."""
    rewards = list(rewards)
    if len(rewards) <= 1:
        return True
    return _reward_std(rewards, cfg.ddof) <= cfg.norm_epsilon


def compute_advantages(rewards, cfg: AdvantageConfig = AdvantageConfig()) -> list[float]:
    """Mean-centered, std-normalized advantages for one group's rewards.

    Degenerate inputs yield all zeros (under both degenerate policies the
    numbers are zeros; drop-group additionally excludes the group from
    training, which the trainer enforces via ``is_degenerate``).
    """
    rewards = [float(r) for r in rewards]
    if not rewards:
        raise ContractError("advantage computation needs at least one reward")
    for r in rewards:
        if not math.isfinite(r):
            raise ContractError(f"non-finite reward {r!r}")
    if is_degenerate(rewards, cfg):
        return [0.0] * len(rewards)
    mean = sum(rewards) / len(rewards)
    std = _reward_std(rewards, cfg.ddof)
    return [(r - mean) / std for r in rewards]


def finalize_group(group: Group, cfg: AdvantageConfig) -> Group:
    """Fill advantages and the degeneracy flag for an assembled group."""
    advantages = tuple(compute_advantages(group.rewards, cfg))
    degenerate = group.size < 2 or (
        cfg.degenerate_policy == "drop-group" and is_degenerate(group.rewards, cfg)
    )
    return replace(group, advantages=advantages, degenerate=degenerate)


def group_record(group: Group) -> dict:
    """One line-delimited record for debugging and oracle replay."""
    return {
        "env_id": group.key.env_id,
        "agent": group.key.agent,
        "turn": group.key.turn,
        "step": group.key.run_step,
        "obs_digest": observation_digest(group.observation),
        "rewards": list(group.rewards),
        "advantages": list(group.advantages),
    }


def dump_groups(groups) -> str:
    """Line-delimited structured text for a sequence of groups."""
    return "".join(json.dumps(group_record(g), sort_keys=False) + "\n" for g in groups)
