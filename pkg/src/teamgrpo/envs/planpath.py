"""Grid path-finding environment: reach the goal cell under a turn budget.

Distances are shortest-path lengths on the 4-neighborhood graph of passable
cells (computed by BFS), so the distance-improvement reward stays meaningful
on maps with walls.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ..core import ContractError, MacroAction, Observation
from .base import (
    CandidateMenu,
    EmptyMenuError,
    Environment,
    GENERATION_ATTEMPTS,
    GenerationError,
    MOVE_DELTAS,
    MOVE_SYMBOLS,
    gate_features,
)

Cell = tuple[int, int]
Grid = tuple[tuple[int, ...], ...]  # 1 = wall, 0 = passable

# difficulty -> (height, width, wall probability, min distance, max distance)
DIFFICULTIES = {
    1: (5, 5, 0.15, 2, 8),
    2: (10, 10, 0.18, 4, 8),
    3: (10, 10, 0.25, 6, 14),
}


@dataclass(frozen=True)
class PlanPathState:
    grid: Grid
    position: Cell
    goal: Cell
    d_now: int
    d_init: int
    last_action_legal: bool = True
    turn: int = 0

    @property
    def potential(self) -> float:
        return float(-self.d_now)

    @property
    def height(self) -> int:
        return len(self.grid)

    @property
    def width(self) -> int:
        return len(self.grid[0])


def _in_bounds(grid: Grid, cell: Cell) -> bool:
    r, c = cell
    return 0 <= r < len(grid) and 0 <= c < len(grid[0])


def _passable(grid: Grid, cell: Cell) -> bool:
    return _in_bounds(grid, cell) and grid[cell[0]][cell[1]] == 0


@lru_cache(maxsize=8192)
def _distance_field(grid: Grid, source: Cell) -> tuple[tuple[int, ...], ...]:
    """BFS distances from ``source`` to every cell (-1 where unreachable)."""
    dist = [[-1] * len(grid[0]) for _ in grid]
    dist[source[0]][source[1]] = 0
    queue = collections.deque([source])
    while queue:
        r, c = queue.popleft()
        for dr, dc in MOVE_DELTAS.values():
            nxt = (r + dr, c + dc)
            if _passable(grid, nxt) and dist[nxt[0]][nxt[1]] < 0:
                dist[nxt[0]][nxt[1]] = dist[r][c] + 1
                queue.append(nxt)
    return tuple(tuple(row) for row in dist)


def bfs_distance(grid: Grid, frm: Cell, to: Cell) -> int | None:
    """Exact shortest-path length under 4-neighborhood moves, or None.

    Raises ValueError for endpoints that are out of bounds or walls.
    """
    for name, cell in (("from", frm), ("to", to)):
        if not _passable(grid, cell):
            raise ValueError(f"{name} cell {cell} is impassable")
    d = _distance_field(grid, to)[frm[0]][frm[1]]
    return None if d < 0 else d


def sp_next(grid: Grid, position: Cell, goal: Cell, action: str) -> int:
    """1 iff ``action`` is a legal move lying on a shortest path to the goal."""
    if action not in MOVE_DELTAS:
        return 0
    base = bfs_distance(grid, position, goal)
    if base is None:
        raise ValueError("goal unreachable from position")
    dr, dc = MOVE_DELTAS[action]
    nxt = (position[0] + dr, position[1] + dc)
    if not _passable(grid, nxt):
        return 0
    return int(_distance_field(grid, goal)[nxt[0]][nxt[1]] == base - 1)


def _manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


class PlanPathEnv(Environment):
    kind = "plan-path"
    roles = ("Planner", "Tool")
    feature_names = ("legal", "shortest_path", "toward_goal")

    def generate(self, seed: int, difficulty: int) -> PlanPathState:
        if difficulty not in DIFFICULTIES:
            raise ValueError(f"plan-path difficulty must be in {sorted(DIFFICULTIES)}")
        height, width, wall_p, d_min, d_max = DIFFICULTIES[difficulty]
        rng = np.random.default_rng(
            np.random.SeedSequence([0x504C, seed, difficulty])
        )
        for _ in range(GENERATION_ATTEMPTS):
            grid = tuple(
                tuple(int(rng.random() < wall_p) for _ in range(width))
                for _ in range(height)
            )
            open_cells = [
                (r, c) for r in range(height) for c in range(width) if grid[r][c] == 0
            ]
            if len(open_cells) < 2:
                continue
            pos, goal = (
                open_cells[i]
                for i in rng.choice(len(open_cells), size=2, replace=False)
            )
            d = bfs_distance(grid, pos, goal)
            if d is None or not d_min <= d <= d_max:
                continue
            return PlanPathState(grid=grid, position=pos, goal=goal, d_now=d, d_init=max(1, d))
        raise GenerationError(
            f"plan-path generation failed for seed={seed} difficulty={difficulty}"
        )

    def observe(self, state: PlanPathState, role: str) -> Observation:
        self.role_index(role)
        rows = "/".join(
            "".join("#" if v else "." for v in row) for row in state.grid
        )
        encoding = (
            f"plan-path|role={role}|turn={state.turn}"
            f"|pos={state.position[0]},{state.position[1]}"
            f"|goal={state.goal[0]},{state.goal[1]}"
            f"|d={state.d_now}|leg={int(state.last_action_legal)}|grid={rows}"
        ).encode()
        features = (
            state.d_now / (state.height + state.width),
            (state.goal[0] - state.position[0]) / state.height,
            (state.goal[1] - state.position[1]) / state.width,
            float(state.last_action_legal),
        )
        return Observation(role, encoding, state.turn, features)

    def legal_menu(self, state: PlanPathState, role: str) -> CandidateMenu:
        idx = self.role_index(role)
        if self.is_terminal(state):
            raise EmptyMenuError("plan-path state is terminal; no menu")
        dist = _distance_field(state.grid, state.goal)
        rows = []
        for sym in MOVE_SYMBOLS:
            dr, dc = MOVE_DELTAS[sym]
            nxt = (state.position[0] + dr, state.position[1] + dc)
            legal = _passable(state.grid, nxt)
            sp = float(legal and dist[nxt[0]][nxt[1]] == state.d_now - 1)
            toward = float(_manhattan(nxt, state.goal) < _manhattan(state.position, state.goal))
            rows.append((float(legal), sp, toward))
        features = gate_features(np.array(rows), idx, self.n_roles)
        return CandidateMenu(tuple(MOVE_SYMBOLS), features)

    def apply_agent(self, state: PlanPathState, role: str, action: MacroAction) -> PlanPathState:
        self.role_index(role)
        sym = action.payload
        if sym not in MOVE_DELTAS:
            raise ContractError(f"plan-path action {sym!r} was not offered by the menu")
        dr, dc = MOVE_DELTAS[sym]
        nxt = (state.position[0] + dr, state.position[1] + dc)
        if _passable(state.grid, nxt):
            d = _distance_field(state.grid, state.goal)[nxt[0]][nxt[1]]
            return replace(state, position=nxt, d_now=d, last_action_legal=True)
        return replace(state, last_action_legal=False)

    def is_solved(self, state: PlanPathState) -> bool:
        return state.position == state.goal

    def advance_turn(self, state: PlanPathState) -> PlanPathState:
        return replace(state, turn=state.turn + 1)

    def dump_instance(self, state: PlanPathState) -> str:
        if state.position == state.goal:
            raise ValueError("cannot dump a solved plan-path state (P and G coincide)")
        lines = []
        for r, row in enumerate(state.grid):
            chars = []
            for c, v in enumerate(row):
                if (r, c) == state.position:
                    chars.append("P")
                elif (r, c) == state.goal:
                    chars.append("G")
                else:
                    chars.append("#" if v else ".")
            lines.append("".join(chars))
        return "\n".join(lines) + "\n"

    def load_instance(self, text: str) -> PlanPathState:
        lines = [line for line in text.splitlines() if line]
        if not lines or any(len(line) != len(lines[0]) for line in lines):
            raise ValueError("plan-path instance must be a non-empty rectangle")
        grid: list[tuple[int, ...]] = []
        positions: list[Cell] = []
        goals: list[Cell] = []
        for r, line in enumerate(lines):
            row = []
            for c, ch in enumerate(line):
                if ch == "#":
                    row.append(1)
                    continue
                if ch == "P":
                    positions.append((r, c))
                elif ch == "G":
                    goals.append((r, c))
                elif ch != ".":
                    raise ValueError(f"unknown plan-path glyph {ch!r}")
                row.append(0)
            grid.append(tuple(row))
        if len(positions) != 1 or len(goals) != 1:
            raise ValueError("plan-path instance needs exactly one P and one G")
        position, goal = positions[0], goals[0]
        grid = tuple(grid)
        d = bfs_distance(grid, position, goal)
        if d is None:
            raise ValueError("goal is unreachable in loaded instance")
        return PlanPathState(grid=grid, position=position, goal=goal, d_now=d, d_init=max(1, d))


PLAN_PATH = PlanPathEnv()
