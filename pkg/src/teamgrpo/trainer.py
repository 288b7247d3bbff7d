"""End-to-end training loop: rollouts, grouping, routing, per-policy updates.

One training step resamples E environment instances, rolls each out under the
current immutable policy snapshots, routes every group to the policy serving
its producing agent, and updates each policy exactly once on its own batch.
Buffers never outlive the step (strict on-policy; version stamps enforce it).

Candidate scoring is speculative: each sampled candidate is applied to the
staged state in a one-step simulation (environments are cheap, deterministic
values), its mixed reward computed on that transition, and only the
highest-reward candidate is actually executed (ties to the smallest index).

Determinism contract: (seed, config) fully determines rollouts, batches,
updates, and metrics, independent of the worker count. Per-environment rng
streams are derived from the master seed with disjoint spawn namespaces,
never shared across rollouts; workers only change scheduling, not values.

Two sampling modes exist. ``tree`` branches K candidates at every
(agent, turn), so every visited node yields a full-size comparison group.
``parallel`` samples K independent full trajectories per environment; only
the first agent's opening decision shares a prompt across trajectories, so
exactly one usable group per environment exists (turn 0) and every later
decision files a degenerate single-candidate group, excluded from training.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    ConfigError,
    ContractError,
    GameConfig,
    RoleMapping,
    TerminationFlag,
    map_role,
    validate_config,
)
from .envs import DEFAULT_DIFFICULTY, Environment, get_env
from .grouping import (
    AdvantageConfig,
    Group,
    GroupCandidate,
    assert_group_valid,
    finalize_group,
    group_key,
    observation_digest,
)
from .policy import (
    PerPolicyBatch,
    PolicyParams,
    init_params,
    policy_sample_k,
    update,
)
from .rewards import (
    RewardSchedule,
    combine_local,
    component_scores,
    mix,
    schedule_for,
    team_reward,
)

MODES = ("tree", "parallel")


@dataclass(frozen=True)
class AgentTurnRecord:
    agent: int
    obs_digest: str
    rewards: tuple[float, ...]
    chosen_index: int


@dataclass(frozen=True)
class RolloutRecord:
    """One executed turn of one environment (or trajectory) instance."""

    env_id: int
    turn: int
    agents: tuple[AgentTurnRecord, ...]
    termination: TerminationFlag


@dataclass(frozen=True)
class EnvRollout:
    env_id: int
    groups_by_agent: tuple[tuple[Group, ...], ...]
    records: tuple[RolloutRecord, ...]
    solved: bool
    turns_used: int


@dataclass(frozen=True)
class StepMetrics:
    """Per-policy training-step statistics.

    ``wall_ms`` is measured and reported but kept out of the canonical
    metrics log, whose bytes must be reproducible from (seed, config).
    """

    step: int
    policy_id: int
    mean_reward: float
    mean_abs_advantage: float
    success_rate: float
    avg_turns: float
    usable_groups: int
    usable_groups_by_turn: tuple[int, ...]
    wall_ms: float


@dataclass(frozen=True)
class EvalRecord:
    step: int
    success_rate: float
    avg_turns: float
    n_seeds: int


@dataclass(frozen=True)
class TrainSetup:
    """Validated bundle of everything one run needs."""

    cfg: GameConfig
    mapping: RoleMapping
    env: Environment
    schedule: RewardSchedule
    adv_cfg: AdvantageConfig
    difficulty: int
    learning_rate: float
    eval_every: int
    mode: str
    workers: int


@dataclass
class TrainResult:
    policies: list[PolicyParams]
    metrics: list[StepMetrics]
    eval_records: list[EvalRecord]
    log_lines: list[str]
    rollout_records: list[RolloutRecord] = field(default_factory=list)


def _instance_seed(seed: int, step: int, env_id: int) -> int:
    return int(
        np.random.SeedSequence([seed, 0, step, env_id]).generate_state(1, np.uint64)[0]
    )


def _rollout_rng(seed: int, step: int, env_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, step, env_id]))


def derive_eval_seeds(seed: int, count: int) -> tuple[int, ...]:
    """Instance seeds for held-out evaluation, disjoint from training seeds."""
    ss = np.random.SeedSequence([seed, 2])
    return tuple(int(x) for x in ss.generate_state(count, np.uint64))


def training_instance_seeds(cfg: GameConfig) -> set[int]:
    return {
        _instance_seed(cfg.seed, s, e)
        for s in range(cfg.total_steps)
        for e in range(cfg.n_envs)
    }


def rollout_env(
    env: Environment,
    env_id: int,
    state0,
    policies_by_agent,
    cfg: GameConfig,
    schedule: RewardSchedule,
    adv_cfg: AdvantageConfig,
    step: int,
    rng: np.random.Generator,
    branches: int | None = None,
    key_env_id: int | None = None,
    env_id_bound: int | None = None,
) -> EnvRollout:
    """Roll one environment instance to termination or the turn horizon.

    Agents act sequentially within a turn, each sampling ``branches``
    candidates from the staged state; the reward-greedy candidate advances
    the stage. Agents after a mid-turn termination do not act. Every acting
    (agent, turn) yields exactly one group.
    """
    if env.is_terminal(state0):
        raise ContractError("rollout started from a terminal state")
    branches = cfg.branches if branches is None else branches
    key_env_id = env_id if key_env_id is None else key_env_id
    state = state0
    groups_by_agent: list[list[Group]] = [[] for _ in range(cfg.n_agents)]
    records: list[RolloutRecord] = []
    flag = TerminationFlag(False)
    turns_used = 0
    for t in range(cfg.turn_horizon):
        staged = state
        agent_records = []
        for i, role in enumerate(env.roles):
            if env.is_terminal(staged):
                break
            obs = env.observe(staged, role)
            menu = env.legal_menu(staged, role)
            digest = observation_digest(obs)
            results = policy_sample_k(
                policies_by_agent[i], obs, menu, cfg.sample_temperature, branches, rng
            )
            candidates = []
            next_states = []
            rewards = []
            for res in results:
                nxt = env.apply_agent(staged, role, res.action)
                term = env.termination(nxt)
                team = team_reward(env.kind, staged, nxt, term)
                comps = component_scores(env.kind, role, staged, res.action, nxt)
                local = combine_local(comps, schedule.role_coefficients(role))
                reward = mix(team, local, comps.mask, cfg.mixer, schedule)
                candidates.append(
                    GroupCandidate(res.action, reward, res.logprob, res.sampled_version, digest)
                )
                next_states.append(nxt)
                rewards.append(reward)
            group = Group(
                key=group_key(key_env_id, i, t, step, cfg=cfg, n_envs=env_id_bound),
                observation=obs,
                candidates=tuple(candidates),
                advantages=(),
                branches=branches,
                menu_features=menu.features,
            )
            group = assert_group_valid(finalize_group(group, adv_cfg))
            groups_by_agent[i].append(group)
            chosen = int(np.argmax(rewards))
            agent_records.append(AgentTurnRecord(i, digest, tuple(rewards), chosen))
            staged = next_states[chosen]
        state = env.advance_turn(staged)
        turns_used = t + 1
        flag = env.termination(state, cfg.turn_horizon)
        records.append(
            RolloutRecord(env_id=env_id, turn=t, agents=tuple(agent_records), termination=flag)
        )
        if flag.done:
            break
    return EnvRollout(
        env_id=env_id,
        groups_by_agent=tuple(tuple(gs) for gs in groups_by_agent),
        records=tuple(records),
        solved=flag.cause == "solved",
        turns_used=turns_used,
    )


def _parallel_env_id(cfg: GameConfig, env_id: int, trajectory: int) -> int:
    """Virtual env-id namespace keeping per-trajectory group keys injective."""
    return cfg.n_envs * (trajectory + 1) + env_id


def _rollout_parallel(
    env: Environment,
    env_id: int,
    state0,
    policies_by_agent,
    cfg: GameConfig,
    schedule: RewardSchedule,
    adv_cfg: AdvantageConfig,
    step: int,
) -> tuple[list[list[Group]], list[EnvRollout]]:
    """K independent single-sample trajectories from one initial state.

    The K opening decisions of the first agent share the instance's initial
    observation, so they pool into the env's one full-size group (filed under
    the real env id). Every other decision stays a single-candidate group
    under a virtual env id; those are degenerate and never train.
    """
    bound = cfg.n_envs * (cfg.branches + 1)
    trajectories = []
    for c in range(cfg.branches):
        vid = _parallel_env_id(cfg, env_id, c)
        rng = _rollout_rng(cfg.seed, step, vid)
        trajectories.append(
            rollout_env(
                env,
                vid,
                state0,
                policies_by_agent,
                cfg,
                schedule,
                adv_cfg,
                step,
                rng,
                branches=1,
                env_id_bound=bound,
            )
        )
    groups_by_agent: list[list[Group]] = [[] for _ in range(cfg.n_agents)]
    opening_candidates = []
    opening_template = None
    for ro in trajectories:
        per_agent = [list(gs) for gs in ro.groups_by_agent]
        first = per_agent[0][0]
        if first.key.turn != 0:
            raise ContractError("parallel trajectory lost its opening group")
        opening_candidates.extend(first.candidates)
        if opening_template is None:
            opening_template = first
        per_agent[0] = per_agent[0][1:]
        for i in range(cfg.n_agents):
            groups_by_agent[i].extend(per_agent[i])
    pooled = Group(
        key=group_key(env_id, 0, 0, step, cfg=cfg),
        observation=opening_template.observation,
        candidates=tuple(opening_candidates),
        advantages=(),
        branches=cfg.branches,
        menu_features=opening_template.menu_features,
    )
    pooled = assert_group_valid(finalize_group(pooled, adv_cfg))
    groups_by_agent[0].insert(0, pooled)
    return groups_by_agent, trajectories


def route(
    groups_by_agent,
    mapping: RoleMapping,
    policies: list[PolicyParams],
    sample_temperature: float,
) -> list[PerPolicyBatch]:
    """Pool each agent's dataset into the batch of its assigned policy.

    Every group lands in exactly one batch; version stamps must agree with
    the producing policy's current version (the on-policy invariant).
    """
    grouped: list[list[Group]] = [[] for _ in policies]
    for agent, groups in enumerate(groups_by_agent):
        policy_id = map_role(mapping, agent)
        grouped[policy_id].extend(groups)
    batches = []
    for policy_id, groups in enumerate(grouped):
        version = policies[policy_id].version
        for g in groups:
            stamps = {c.sampled_version for c in g.candidates}
            if stamps != {version}:
                raise ContractError(
                    f"stale sample: group {g.key} carries versions {sorted(stamps)}, "
                    f"policy {policy_id} is at version {version}"
                )
        batches.append(
            PerPolicyBatch(
                policy_id=policy_id,
                groups=tuple(groups),
                version=version,
                sample_temperature=sample_temperature,
            )
        )
    return batches


def verify_routing(batches, groups_by_agent, mapping: RoleMapping) -> None:
    """Conservation check: every produced group in exactly one right batch."""
    produced = {}
    for agent, groups in enumerate(groups_by_agent):
        for g in groups:
            if g.key in produced:
                raise ContractError(f"duplicate group key {g.key}")
            produced[g.key] = agent
    routed = set()
    for batch in batches:
        for g in batch.groups:
            if g.key in routed:
                raise ContractError(f"group {g.key} routed twice")
            routed.add(g.key)
            agent = produced.get(g.key)
            if agent is None:
                raise ContractError(f"routing violation: unknown group {g.key}")
            expected = map_role(mapping, agent)
            if batch.policy_id != expected:
                raise ContractError(
                    f"routing violation: group {g.key} from agent {agent} "
                    f"belongs to policy {expected}, found in batch {batch.policy_id}"
                )
    if routed != set(produced):
        raise ContractError("routing violation: dropped groups")


def _pmap(fn: Callable, items, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def train_step(
    policies: list[PolicyParams],
    setup: TrainSetup,
    step: int,
) -> tuple[list[PolicyParams], list[StepMetrics], list[EnvRollout]]:
    """Phase 1 rollouts + phase 2 per-policy updates for one step."""
    t0 = time.perf_counter()
    cfg = setup.cfg
    env = setup.env
    policies_by_agent = [policies[map_role(setup.mapping, i)] for i in range(cfg.n_agents)]

    def run_env(e: int):
        state0 = env.generate(_instance_seed(cfg.seed, step, e), setup.difficulty)
        if setup.mode == "tree":
            ro = rollout_env(
                env,
                e,
                state0,
                policies_by_agent,
                cfg,
                setup.schedule,
                setup.adv_cfg,
                step,
                _rollout_rng(cfg.seed, step, e),
            )
            return [list(gs) for gs in ro.groups_by_agent], [ro]
        return _rollout_parallel(
            env, e, state0, policies_by_agent, cfg, setup.schedule, setup.adv_cfg, step
        )

    outcomes = _pmap(run_env, range(cfg.n_envs), setup.workers)

    groups_by_agent: list[list[Group]] = [[] for _ in range(cfg.n_agents)]
    rollouts: list[EnvRollout] = []
    for per_agent, ros in outcomes:
        for i in range(cfg.n_agents):
            groups_by_agent[i].extend(per_agent[i])
        rollouts.extend(ros)

    batches = route(groups_by_agent, setup.mapping, policies, cfg.sample_temperature)
    verify_routing(batches, groups_by_agent, setup.mapping)
    new_policies = [
        update(policies[m], batches[m], setup.learning_rate) for m in range(len(policies))
    ]

    solved = sum(ro.solved for ro in rollouts)
    success_rate = solved / len(rollouts)
    avg_turns = sum(ro.turns_used for ro in rollouts) / len(rollouts)
    wall_ms = (time.perf_counter() - t0) * 1000.0

    metrics = []
    for batch in batches:
        all_rewards = [c.reward for g in batch.groups for c in g.candidates]
        all_abs_adv = [abs(a) for g in batch.groups for a in g.advantages]
        by_turn = [0] * cfg.turn_horizon
        usable = 0
        for g in batch.groups:
            if not g.degenerate:
                usable += 1
                by_turn[g.key.turn] += 1
        metrics.append(
            StepMetrics(
                step=step,
                policy_id=batch.policy_id,
                mean_reward=sum(all_rewards) / len(all_rewards) if all_rewards else 0.0,
                mean_abs_advantage=(
                    sum(all_abs_adv) / len(all_abs_adv) if all_abs_adv else 0.0
                ),
                success_rate=success_rate,
                avg_turns=avg_turns,
                usable_groups=usable,
                usable_groups_by_turn=tuple(by_turn),
                wall_ms=wall_ms,
            )
        )
    return new_policies, metrics, rollouts


def evaluate(
    policies,
    mapping: RoleMapping,
    env_kind: str,
    seeds,
    turn_horizon: int,
    difficulty: int | None = None,
) -> EvalRecord:
    """Greedy (temperature-0) evaluation: one trajectory per seed, no learning."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("evaluate needs at least one seed")
    env = get_env(env_kind)
    difficulty = DEFAULT_DIFFICULTY[env_kind] if difficulty is None else difficulty
    policies_by_agent = [policies[map_role(mapping, i)] for i in range(mapping.n_agents)]
    solved = 0
    total_turns = 0
    for seed in seeds:
        state = env.generate(seed, difficulty)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        flag = TerminationFlag(False)
        for t in range(turn_horizon):
            staged = state
            for i, role in enumerate(env.roles):
                if env.is_terminal(staged):
                    break
                obs = env.observe(staged, role)
                menu = env.legal_menu(staged, role)
                res = policy_sample_k(policies_by_agent[i], obs, menu, 0.0, 1, rng)[0]
                staged = env.apply_agent(staged, role, res.action)
            state = env.advance_turn(staged)
            total_turns += 1
            flag = env.termination(state, turn_horizon)
            if flag.done:
                break
        if flag.cause == "solved":
            solved += 1
    return EvalRecord(
        step=-1,
        success_rate=solved / len(seeds),
        avg_turns=total_turns / len(seeds),
        n_seeds=len(seeds),
    )


def swap_policies(policies, permutation) -> list:
    """Re-bind trained policies to roles for evaluation only."""
    if len(policies) < 2:
        raise ConfigError("swap is undefined for a role-sharing run (single policy)")
    if sorted(permutation) != list(range(len(policies))):
        raise ConfigError(f"{permutation!r} is not a permutation of policy indices")
    return [policies[permutation[i]] for i in range(len(policies))]


def metrics_line(m: StepMetrics) -> str:
    """Canonical metrics-log line (deterministic fields only)."""
    return json.dumps(
        {
            "kind": "train",
            "step": m.step,
            "policy_id": m.policy_id,
            "mean_reward": m.mean_reward,
            "mean_abs_advantage": m.mean_abs_advantage,
            "success_rate": m.success_rate,
            "avg_turns": m.avg_turns,
            "usable_groups": m.usable_groups,
            "usable_groups_by_turn": list(m.usable_groups_by_turn),
        }
    )


def eval_line(rec: EvalRecord) -> str:
    return json.dumps(
        {
            "kind": "eval",
            "step": rec.step,
            "success_rate": rec.success_rate,
            "avg_turns": rec.avg_turns,
            "n_seeds": rec.n_seeds,
        }
    )


def make_setup(
    cfg: GameConfig,
    mapping: RoleMapping,
    env_kind: str,
    *,
    difficulty: int | None = None,
    learning_rate: float = 0.05,
    eval_every: int = 10,
    adv_cfg: AdvantageConfig = AdvantageConfig(),
    mode: str = "tree",
    workers: int = 1,
    schedule: RewardSchedule | None = None,
) -> TrainSetup:
    validate_config(cfg, mapping)
    env = get_env(env_kind)
    if cfg.n_agents != env.n_roles:
        raise ConfigError(
            f"n_agents must equal the number of {env_kind} roles ({env.n_roles})"
        )
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES} (got {mode!r})")
    if learning_rate <= 0:
        raise ConfigError(f"learning_rate must be > 0 (got {learning_rate})")
    if eval_every < 1:
        raise ConfigError(f"eval_every must be >= 1 (got {eval_every})")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1 (got {workers})")
    if cfg.sample_temperature == 0:
        raise ConfigError("training requires sample_temperature > 0")
    return TrainSetup(
        cfg=cfg,
        mapping=mapping,
        env=env,
        schedule=schedule if schedule is not None else schedule_for(env_kind),
        adv_cfg=adv_cfg,
        difficulty=DEFAULT_DIFFICULTY[env_kind] if difficulty is None else difficulty,
        learning_rate=learning_rate,
        eval_every=eval_every,
        mode=mode,
        workers=workers,
    )


def train(
    cfg: GameConfig,
    mapping: RoleMapping,
    env_kind: str,
    *,
    collect_rollouts: bool = False,
    stop_condition: Callable[[EvalRecord], bool] | None = None,
    progress: Callable[[str], None] | None = None,
    **setup_kwargs,
) -> TrainResult:
    """Run S training steps with periodic greedy evaluation.

    ``stop_condition`` (optional) inspects each evaluation record and may end
    the run early; by default exactly ``cfg.total_steps`` steps execute.
    """
    setup = make_setup(cfg, mapping, env_kind, **setup_kwargs)
    if cfg.eval_seeds:
        overlap = set(cfg.eval_seeds) & training_instance_seeds(cfg)
        if overlap:
            raise ConfigError(f"eval_seeds overlap training instance seeds: {overlap}")
    policies = [init_params(m, setup.env.feature_dim) for m in range(cfg.n_policies)]
    result = TrainResult(policies=policies, metrics=[], eval_records=[], log_lines=[])

    def run_eval(step: int) -> EvalRecord:
        rec = evaluate(
            result.policies,
            mapping,
            env_kind,
            cfg.eval_seeds,
            cfg.turn_horizon,
            setup.difficulty,
        )
        rec = EvalRecord(step, rec.success_rate, rec.avg_turns, rec.n_seeds)
        result.eval_records.append(rec)
        result.log_lines.append(eval_line(rec))
        if progress is not None:
            progress(f"eval step={step} success={rec.success_rate:.3f} turns={rec.avg_turns:.2f}")
        return rec

    if cfg.eval_seeds:
        rec = run_eval(0)
        if stop_condition is not None and stop_condition(rec):
            return result
    last_eval_step = 0
    for s in range(cfg.total_steps):
        policies, step_metrics, rollouts = train_step(result.policies, setup, s)
        result.policies = policies
        result.metrics.extend(step_metrics)
        result.log_lines.extend(metrics_line(m) for m in step_metrics)
        if collect_rollouts:
            for ro in rollouts:
                result.rollout_records.extend(ro.records)
        if progress is not None and step_metrics:
            m = step_metrics[0]
            progress(
                f"step={s} success={m.success_rate:.3f} turns={m.avg_turns:.2f} "
                f"wall_ms={m.wall_ms:.0f}"
            )
        if cfg.eval_seeds and (s + 1) % setup.eval_every == 0:
            last_eval_step = s + 1
            rec = run_eval(s + 1)
            if stop_condition is not None and stop_condition(rec):
                return result
    if cfg.eval_seeds and last_eval_step != cfg.total_steps:
        run_eval(cfg.total_steps)
    return result


def ablation_parallel_sampling(
    cfg: GameConfig, mapping: RoleMapping, env_kind: str, **kwargs
) -> TrainResult:
    """Training with parallel trajectory sampling instead of tree branching."""
    kwargs["mode"] = "parallel"
    return train(cfg, mapping, env_kind, **kwargs)


def rollout_record_line(rec: RolloutRecord) -> str:
    return json.dumps(
        {
            "env_id": rec.env_id,
            "turn": rec.turn,
            "agents": [
                {
                    "agent": a.agent,
                    "obs_digest": a.obs_digest,
                    "rewards": list(a.rewards),
                    "chosen_index": a.chosen_index,
                }
                for a in rec.agents
            ],
            "done": rec.termination.done,
            "cause": rec.termination.cause,
        }
    )
