"""Shared abstractions: run configuration, role mapping, observations, actions.

Everything in this module is an immutable value; all operations are pure.
Agent and policy indices are 0-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

MAX_SEED = 2**64 - 1

TERMINATION_CAUSES = ("solved", "horizon", "dead-end")


class ConfigError(ValueError):
    """A configuration value violates an invariant. Message names the field."""


class ContractError(RuntimeError):
    """A runtime contract between modules was violated (caller bug)."""


@dataclass(frozen=True)
class MixerConfig:
    """Selects how team and local rewards are combined.

    ``"appendix"`` uses the per-environment lambda weight and ignores alpha;
    ``"main-text"`` uses ``alpha * team + mask * local`` and ignores lambda.
    """

    form: str = "appendix"
    alpha: float = 1.0


@dataclass(frozen=True)
class GameConfig:
    """All run hyperparameters for a training run."""

    n_agents: int
    n_policies: int
    turn_horizon: int
    branches: int
    n_envs: int
    total_steps: int
    sample_temperature: float = 1.0
    mixer: MixerConfig = field(default_factory=MixerConfig)
    seed: int = 1
    eval_seeds: tuple[int, ...] = ()


@dataclass(frozen=True)
class RoleMapping:
    """Total map from agent index to policy index (``assignment[agent]``)."""

    assignment: tuple[int, ...]

    @classmethod
    def shared(cls, n_agents: int) -> "RoleMapping":
        """All agents share policy 0."""
        return cls(tuple(0 for _ in range(n_agents)))

    @classmethod
    def specialized(cls, n_agents: int) -> "RoleMapping":
        """One policy per agent (identity map)."""
        return cls(tuple(range(n_agents)))

    @property
    def n_agents(self) -> int:
        return len(self.assignment)


def map_role(mapping: RoleMapping, agent: int) -> int:
    """Return the policy index serving ``agent``. Pure and total on 0..N-1."""
    if not 0 <= agent < mapping.n_agents:
        raise ConfigError(
            f"agent index {agent} out of range 0..{mapping.n_agents - 1}"
        )
    return mapping.assignment[agent]


def validate_config(cfg: GameConfig, mapping: RoleMapping) -> GameConfig:
    """Check every invariant; return the config unchanged if all hold.

    Raises ConfigError naming the first violated field, e.g. a config with
    zero branches fails with a message containing "branches".
    """
    if cfg.n_agents < 1:
        raise ConfigError(f"n_agents must be >= 1 (got {cfg.n_agents})")
    if cfg.n_policies < 1:
        raise ConfigError(f"n_policies must be >= 1 (got {cfg.n_policies})")
    if cfg.n_policies > cfg.n_agents:
        raise ConfigError(
            f"n_policies exceeds n_agents ({cfg.n_policies} > {cfg.n_agents})"
        )
    if cfg.turn_horizon < 1:
        raise ConfigError(f"turn_horizon must be >= 1 (got {cfg.turn_horizon})")
    if cfg.branches < 1:
        raise ConfigError(f"branches must be >= 1 (got {cfg.branches})")
    if cfg.n_envs < 1:
        raise ConfigError(f"n_envs must be >= 1 (got {cfg.n_envs})")
    if cfg.total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1 (got {cfg.total_steps})")
    if cfg.sample_temperature < 0:
        raise ConfigError(
            f"sample_temperature must be >= 0 (got {cfg.sample_temperature})"
        )
    if cfg.mixer.form not in ("appendix", "main-text"):
        raise ConfigError(f"mixer form must be appendix or main-text (got {cfg.mixer.form!r})")
    if cfg.mixer.alpha < 0:
        raise ConfigError(f"mixer alpha must be >= 0 (got {cfg.mixer.alpha})")
    if not 0 <= cfg.seed <= MAX_SEED:
        raise ConfigError(f"seed must be a 64-bit unsigned integer (got {cfg.seed})")
    for s in cfg.eval_seeds:
        if not 0 <= s <= MAX_SEED:
            raise ConfigError(f"eval_seeds entry must be a 64-bit unsigned integer (got {s})")

    if mapping.n_agents != cfg.n_agents:
        raise ConfigError(
            f"role mapping covers {mapping.n_agents} agents, expected {cfg.n_agents}"
        )
    for agent, policy in enumerate(mapping.assignment):
        if not 0 <= policy < cfg.n_policies:
            raise ConfigError(
                f"agent {agent} mapped to policy {policy}, outside 0..{cfg.n_policies - 1}"
            )
    assigned = set(mapping.assignment)
    for policy in range(cfg.n_policies):
        if policy not in assigned:
            raise ConfigError(f"policy {policy} has no agents")
    return cfg


@dataclass(frozen=True)
class Observation:
    """One agent's view of the environment at a turn.

    ``state_encoding`` is canonical: two observations are the same prompt
    iff their byte sequences are identical. This byte-equality predicate is
    what group-validity checks rely on downstream.
    """

    role_tag: str
    state_encoding: bytes
    turn: int
    feature_vector: tuple[float, ...]


@dataclass(frozen=True)
class MacroAction:
    """A single policy output executed as one atomic action for a turn.

    ``menu_index`` points into the candidate menu offered at sampling time;
    ``payload`` is the environment-specific content (a move symbol, a tuple
    of fill steps, or a submit marker).
    """

    menu_index: int
    payload: object


@dataclass(frozen=True)
class TerminationFlag:
    done: bool
    cause: str | None = None

    def __post_init__(self) -> None:
        if self.done and self.cause not in TERMINATION_CAUSES:
            raise ContractError(f"termination cause must be one of {TERMINATION_CAUSES}")
        if not self.done and self.cause is not None:
            raise ContractError("cause must be None when not done")
