"""Team rewards, per-role component scores, and the team/local mixing rules.

Component scores are pure recomputations from (previous state, action, next
state) using the environment oracles; none of them read bookkeeping flags, so
a logged transition can always be re-scored to the same values.

Two mixing forms exist because the two reward statements differ: the
``main-text`` form is ``alpha * team + mask * local`` (range [0, alpha + 1]);
the ``appendix`` form is ``lambda * team + (1 - lambda) * mask * local``
(range [0, 1]). Environment presets default to the appendix form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .core import MixerConfig, TerminationFlag
from .envs import get_env
from .envs.base import MOVE_DELTAS
from .envs.planpath import PlanPathState, _distance_field, _passable
from .envs.sokoban import SokobanState, _move_outcome, corner_deadlock_free
from .envs.sudoku import SUBMIT, SudokuState, has_duplicates, placement_legal

COEFFICIENT_TOLERANCE = 1e-12


class ScheduleError(ValueError):
    """A reward schedule or component bundle violates its invariants."""


@dataclass(frozen=True)
class LocalComponents:
    """Named component scores in [0, 1] plus the verifiability mask."""

    scores: tuple[tuple[str, float], ...]
    mask: int = 1

    def __post_init__(self) -> None:
        for name, value in self.scores:
            if not 0.0 <= value <= 1.0:
                raise ScheduleError(f"component {name!r} out of [0, 1]: {value}")
        if self.mask not in (0, 1):
            raise ScheduleError(f"mask must be 0 or 1 (got {self.mask})")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.scores)


@dataclass(frozen=True)
class RewardSchedule:
    """Per-environment mixing weight and per-role coefficient tables."""

    env: str
    lam: float
    coefficients: tuple[tuple[str, tuple[tuple[str, float], ...]], ...]

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ScheduleError(f"lambda must be in [0, 1] (got {self.lam})")
        for role, table in self.coefficients:
            validate_coefficients(table, role)

    def role_coefficients(self, role: str) -> tuple[tuple[str, float], ...]:
        for name, table in self.coefficients:
            if name == role:
                return table
        raise ScheduleError(f"schedule for {self.env!r} has no role {role!r}")

    def with_lambda(self, lam: float) -> "RewardSchedule":
        return RewardSchedule(self.env, lam, self.coefficients)


def validate_coefficients(table: tuple[tuple[str, float], ...], role: str) -> None:
    total = 0.0
    for name, weight in table:
        if weight < 0:
            raise ScheduleError(f"{role} coefficient {name!r} is negative")
        total += weight
    if abs(total - 1.0) > COEFFICIENT_TOLERANCE:
        raise ScheduleError(
            f"{role} coefficients sum to {total!r}, expected 1 within {COEFFICIENT_TOLERANCE}"
        )


def _load_presets() -> dict[str, RewardSchedule]:
    raw = json.loads(
        resources.files("teamgrpo.data").joinpath("schedules.json").read_text()
    )
    presets = {}
    for env, block in raw.items():
        coefficients = tuple(
            (role, tuple((name, float(w)) for name, w in table))
            for role, table in block["coefficients"].items()
        )
        presets[env] = RewardSchedule(env=env, lam=float(block["lambda"]), coefficients=coefficients)
    return presets


PRESETS: dict[str, RewardSchedule] = _load_presets()


def schedule_for(env: str) -> RewardSchedule:
    try:
        return PRESETS[env]
    except KeyError:
        raise ScheduleError(f"no reward schedule preset for {env!r}") from None


def team_reward(env: str, prev, next_state, term: TerminationFlag) -> float:
    """Global task-level reward in [0, 1] for the transition prev -> next."""
    if env == "plan-path":
        assert isinstance(next_state, PlanPathState)
        if next_state.position == next_state.goal:
            return 1.0
        return max(0.0, (prev.d_now - next_state.d_now) / prev.d_init)
    if env == "sokoban":
        assert isinstance(next_state, SokobanState)
        if next_state.n_boxes == 0:
            raise ScheduleError("sokoban team reward undefined with zero boxes")
        if next_state.boxes <= next_state.goals:
            return 1.0
        return next_state.boxes_on_goal / next_state.n_boxes
    if env == "sudoku":
        assert isinstance(next_state, SudokuState)
        return 1.0 if term.done and term.cause == "solved" else 0.0
    raise ScheduleError(f"no team reward for environment {env!r}")


def component_scores(env, role: str, prev, action, next_state) -> LocalComponents:
    """Per-role component scores for one agent's transition.

    ``env`` may be an environment kind string or an Environment instance.
    The verifiability mask is 1 for all three environments (every oracle is
    always computable here); the mask path stays exercised via tests that
    build LocalComponents with mask 0 directly.
    """
    kind = env if isinstance(env, str) else env.kind
    environment = get_env(kind)
    idx = environment.role_index(role)
    if kind == "plan-path":
        scores = _plan_path_scores(idx, prev, action.payload, next_state)
    elif kind == "sokoban":
        scores = _sokoban_scores(idx, prev, action.payload, next_state)
    else:
        scores = _sudoku_scores(idx, prev, action.payload, next_state)
    return LocalComponents(scores=scores, mask=1)


def _plan_path_scores(role_idx: int, prev: PlanPathState, payload, next_state) -> tuple:
    fmt = payload in MOVE_DELTAS
    if fmt:
        dr, dc = MOVE_DELTAS[payload]
        nxt = (prev.position[0] + dr, prev.position[1] + dc)
        legal = _passable(prev.grid, nxt)
    else:
        legal = False
    if role_idx == 0:  # Planner: fmt, leg, sp
        sp = 0.0
        if legal:
            dist = _distance_field(prev.grid, prev.goal)
            sp = float(dist[nxt[0]][nxt[1]] == prev.d_now - 1)
        return (("fmt", float(fmt)), ("leg", float(legal)), ("sp", sp))
    # Tool: fmt, exec, shape (potential did not decrease across the transition)
    assert isinstance(next_state, PlanPathState)
    shape = float(next_state.potential >= prev.potential)
    return (("fmt", float(fmt)), ("exec", float(legal)), ("shape", shape))


def _sokoban_scores(role_idx: int, prev: SokobanState, payload, next_state) -> tuple:
    fmt = payload in MOVE_DELTAS
    legal = False
    if fmt:
        legal, _, _ = _move_outcome(prev, payload)
    if role_idx == 0:  # Planner: fmt, leg, dlk
        dlk = float(corner_deadlock_free(prev, payload)) if fmt else 0.0
        return (("fmt", float(fmt)), ("leg", float(legal)), ("dlk", dlk))
    # Tool: fmt, exec, pot (potential did not decrease across the transition)
    assert isinstance(next_state, SokobanState)
    pot = float(next_state.potential >= prev.potential)
    return (("fmt", float(fmt)), ("exec", float(legal)), ("pot", pot))


def _sudoku_scores(role_idx: int, prev: SudokuState, payload, next_state) -> tuple:
    assert isinstance(next_state, SudokuState)
    size, subgrid = prev.size, prev.subgrid
    is_submit = payload == SUBMIT
    steps: tuple = ()
    fmt = True
    if not is_submit:
        if isinstance(payload, tuple) and all(
            isinstance(s, tuple)
            and len(s) == 3
            and all(isinstance(x, int) for x in s)
            and 0 <= s[0] < size
            and 0 <= s[1] < size
            and 1 <= s[2] <= size
            for s in payload
        ):
            steps = payload
        else:
            fmt = False
    if role_idx == 0:  # Reasoner: fmt, legal, prog
        legal = float(not has_duplicates(next_state.grid_now, size, subgrid))
        newly = sum(
            1
            for r in range(size)
            for c in range(size)
            if prev.grid_now[r][c] == 0 and next_state.grid_now[r][c] != 0
        )
        return (
            ("fmt", float(fmt)),
            ("legal", legal),
            ("prog", newly / (size * size)),
        )
    # Tool: fmt, exec, san
    grid = [list(row) for row in prev.grid_now]
    execute = fmt
    sane = fmt
    for r, c, v in steps:
        if grid[r][c] != 0:
            execute = False
            sane = False
            continue
        snapshot = tuple(tuple(row) for row in grid)
        if placement_legal(snapshot, size, subgrid, r, c, v):
            grid[r][c] = v
        else:
            sane = False
    return (("fmt", float(fmt)), ("exec", float(execute)), ("san", float(sane)))


def combine_local(components: LocalComponents, coefficients: tuple[tuple[str, float], ...]) -> float:
    """Convex combination of component scores; result stays in [0, 1]."""
    validate_coefficients(coefficients, role="local")
    names = tuple(name for name, _ in coefficients)
    if components.names != names:
        raise ScheduleError(
            f"component names {components.names} do not match coefficients {names}"
        )
    return sum(w * dict(components.scores)[name] for name, w in coefficients)


def mix(
    team: float,
    local: float,
    mask: int,
    mixer: MixerConfig,
    schedule: RewardSchedule,
) -> float:
    """Combine team and local rewards under the configured mixing form."""
    if not 0.0 <= team <= 1.0:
        raise ScheduleError(f"team reward out of [0, 1]: {team}")
    if not 0.0 <= local <= 1.0:
        raise ScheduleError(f"local reward out of [0, 1]: {local}")
    if mask not in (0, 1):
        raise ScheduleError(f"mask must be 0 or 1 (got {mask})")
    if mixer.form == "main-text":
        return mixer.alpha * team + mask * local
    if mixer.form == "appendix":
        return schedule.lam * team + (1.0 - schedule.lam) * mask * local
    raise ScheduleError(f"unknown mixer form {mixer.form!r}")
