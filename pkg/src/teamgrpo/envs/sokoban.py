"""Box-pushing environment on a 6x6 grid with static corner-deadlock detection.

The box-to-goal potential is the negated sum over boxes of the Manhattan
distance to the nearest goal; pushes that raise it are rewarded. An episode
dead-ends early when every box still off a goal sits in a non-goal corner
(two orthogonally adjacent walls), which no push can ever recover.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, replace

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
Walls = tuple[tuple[bool, ...], ...]

# difficulty -> (number of boxes options, extra interior walls, max solution moves)
DIFFICULTIES = {
    1: ((1, 2), 0, 8),
    2: ((2,), 2, 16),
}
SIZE = 6
SEARCH_DEPTH_LIMIT = 30


@dataclass(frozen=True)
class SokobanState:
    walls: Walls
    goals: frozenset[Cell]
    player: Cell
    boxes: frozenset[Cell]
    last_action_legal: bool = True
    turn: int = 0

    @property
    def n_boxes(self) -> int:
        return len(self.boxes)

    @property
    def boxes_on_goal(self) -> int:
        return len(self.boxes & self.goals)

    @property
    def potential(self) -> float:
        return box_goal_potential(self)


def _is_wall(walls: Walls, cell: Cell) -> bool:
    r, c = cell
    if not (0 <= r < len(walls) and 0 <= c < len(walls[0])):
        return True  # out of bounds behaves as wall
    return walls[r][c]


def box_goal_potential(state: SokobanState) -> float:
    """Negated sum over boxes of the min Manhattan distance to any goal."""
    if not state.boxes:
        raise ValueError("sokoban state has no boxes")
    if not state.goals:
        raise ValueError("sokoban state has no goals")
    total = 0
    for br, bc in state.boxes:
        total += min(abs(br - gr) + abs(bc - gc) for gr, gc in state.goals)
    return float(-total)


def _move_outcome(state: SokobanState, sym: str) -> tuple[bool, Cell | None, Cell | None]:
    """(legal, pushed_box_from, pushed_box_to) for attempting ``sym``."""
    dr, dc = MOVE_DELTAS[sym]
    target = (state.player[0] + dr, state.player[1] + dc)
    if _is_wall(state.walls, target):
        return False, None, None
    if target in state.boxes:
        beyond = (target[0] + dr, target[1] + dc)
        if _is_wall(state.walls, beyond) or beyond in state.boxes:
            return False, None, None
        return True, target, beyond
    return True, None, None


def _in_non_goal_corner(walls: Walls, goals: frozenset[Cell], cell: Cell) -> bool:
    if cell in goals:
        return False
    r, c = cell
    up = _is_wall(walls, (r - 1, c))
    down = _is_wall(walls, (r + 1, c))
    left = _is_wall(walls, (r, c - 1))
    right = _is_wall(walls, (r, c + 1))
    return (up or down) and (left or right)


def corner_deadlock_free(state: SokobanState, action: str) -> int:
    """0 iff ``action`` pushes a box into a non-goal corner, 1 otherwise."""
    if action not in MOVE_DELTAS:
        return 1
    legal, _, box_to = _move_outcome(state, action)
    if not legal or box_to is None:
        return 1
    return int(not _in_non_goal_corner(state.walls, state.goals, box_to))


def solve_bounded(state: SokobanState, depth_limit: int = SEARCH_DEPTH_LIMIT) -> int | None:
    """Minimum number of moves to put every box on a goal, or None.

    Breadth-first search over (player, boxes) states up to ``depth_limit``
    moves; used both to certify generated instances and as a test oracle.
    """
    start = (state.player, state.boxes)
    if state.boxes <= state.goals:
        return 0
    seen = {start}
    queue = collections.deque([(start, 0)])
    while queue:
        (player, boxes), depth = queue.popleft()
        if depth >= depth_limit:
            continue
        for sym, (dr, dc) in MOVE_DELTAS.items():
            target = (player[0] + dr, player[1] + dc)
            if _is_wall(state.walls, target):
                continue
            new_boxes = boxes
            if target in boxes:
                beyond = (target[0] + dr, target[1] + dc)
                if _is_wall(state.walls, beyond) or beyond in boxes:
                    continue
                if _in_non_goal_corner(state.walls, state.goals, beyond):
                    continue
                new_boxes = (boxes - {target}) | {beyond}
            if new_boxes <= state.goals:
                return depth + 1
            key = (target, new_boxes)
            if key not in seen:
                seen.add(key)
                queue.append((key, depth + 1))
    return None


class SokobanEnv(Environment):
    kind = "sokoban"
    roles = ("Planner", "Tool")
    feature_names = ("legal", "push", "deadlock_free", "potential_kept", "potential_gain")

    def generate(self, seed: int, difficulty: int) -> SokobanState:
        if difficulty not in DIFFICULTIES:
            raise ValueError(f"sokoban difficulty must be in {sorted(DIFFICULTIES)}")
        box_options, extra_walls, max_moves = DIFFICULTIES[difficulty]
        rng = np.random.default_rng(np.random.SeedSequence([0x534B, seed, difficulty]))
        border = tuple(
            tuple(r in (0, SIZE - 1) or c in (0, SIZE - 1) for c in range(SIZE))
            for r in range(SIZE)
        )
        interior = [(r, c) for r in range(1, SIZE - 1) for c in range(1, SIZE - 1)]
        for _ in range(GENERATION_ATTEMPTS):
            n_boxes = int(rng.choice(box_options))
            walls = [list(row) for row in border]
            cells = list(interior)
            for i in rng.choice(len(cells), size=extra_walls, replace=False) if extra_walls else []:
                walls[cells[i][0]][cells[i][1]] = True
            frozen_walls: Walls = tuple(tuple(row) for row in walls)
            free = [c for c in interior if not frozen_walls[c[0]][c[1]]]
            needed = 2 * n_boxes + 1
            if len(free) < needed:
                continue
            picks = [free[i] for i in rng.choice(len(free), size=needed, replace=False)]
            goals = frozenset(picks[:n_boxes])
            boxes = frozenset(picks[n_boxes : 2 * n_boxes])
            player = picks[2 * n_boxes]
            if boxes & goals:
                continue
            if any(_in_non_goal_corner(frozen_walls, goals, b) for b in boxes):
                continue
            state = SokobanState(walls=frozen_walls, goals=goals, player=player, boxes=boxes)
            moves = solve_bounded(state)
            if moves is None or not 1 <= moves <= max_moves:
                continue
            return state
        raise GenerationError(
            f"sokoban generation failed for seed={seed} difficulty={difficulty}"
        )

    def observe(self, state: SokobanState, role: str) -> Observation:
        self.role_index(role)
        rows = "/".join(
            "".join(self._glyph(state, (r, c)) for c in range(len(state.walls[0])))
            for r in range(len(state.walls))
        )
        encoding = (
            f"sokoban|role={role}|turn={state.turn}"
            f"|leg={int(state.last_action_legal)}|grid={rows}"
        ).encode()
        features = (
            state.boxes_on_goal / state.n_boxes,
            state.potential / (SIZE * SIZE),
            float(state.last_action_legal),
        )
        return Observation(role, encoding, state.turn, features)

    @staticmethod
    def _glyph(state: SokobanState, cell: Cell) -> str:
        if state.walls[cell[0]][cell[1]]:
            return "#"
        if cell in state.boxes:
            return "*" if cell in state.goals else "B"
        if cell == state.player:
            return "+" if cell in state.goals else "P"
        if cell in state.goals:
            return "G"
        return "."

    def legal_menu(self, state: SokobanState, role: str) -> CandidateMenu:
        idx = self.role_index(role)
        if self.is_terminal(state):
            raise EmptyMenuError("sokoban state is terminal; no menu")
        pot = state.potential
        rows = []
        for sym in MOVE_SYMBOLS:
            legal, box_from, box_to = _move_outcome(state, sym)
            push = legal and box_to is not None
            dlk = corner_deadlock_free(state, sym)
            if push:
                nxt = replace(state, boxes=(state.boxes - {box_from}) | {box_to})
                new_pot = nxt.potential
            else:
                new_pot = pot
            rows.append(
                (
                    float(legal),
                    float(push),
                    float(dlk),
                    float(new_pot >= pot),
                    float(new_pot > pot),
                )
            )
        features = gate_features(np.array(rows), idx, self.n_roles)
        return CandidateMenu(tuple(MOVE_SYMBOLS), features)

    def apply_agent(self, state: SokobanState, role: str, action: MacroAction) -> SokobanState:
        self.role_index(role)
        sym = action.payload
        if sym not in MOVE_DELTAS:
            raise ContractError(f"sokoban action {sym!r} was not offered by the menu")
        legal, box_from, box_to = _move_outcome(state, sym)
        if not legal:
            return replace(state, last_action_legal=False)
        dr, dc = MOVE_DELTAS[sym]
        target = (state.player[0] + dr, state.player[1] + dc)
        boxes = state.boxes
        if box_from is not None:
            boxes = (boxes - {box_from}) | {box_to}
        return replace(state, player=target, boxes=boxes, last_action_legal=True)

    def is_solved(self, state: SokobanState) -> bool:
        return state.boxes <= state.goals

    def is_dead_end(self, state: SokobanState) -> bool:
        stranded = state.boxes - state.goals
        if not stranded:
            return False
        return all(
            _in_non_goal_corner(state.walls, state.goals, b) for b in stranded
        )

    def advance_turn(self, state: SokobanState) -> SokobanState:
        return replace(state, turn=state.turn + 1)

    def dump_instance(self, state: SokobanState) -> str:
        lines = []
        for r in range(len(state.walls)):
            lines.append(
                "".join(self._glyph(state, (r, c)) for c in range(len(state.walls[0])))
            )
        return "\n".join(lines) + "\n"

    def load_instance(self, text: str) -> SokobanState:
        lines = [line for line in text.splitlines() if line]
        if not lines or any(len(line) != len(lines[0]) for line in lines):
            raise ValueError("sokoban instance must be a non-empty rectangle")
        walls, goals, boxes, players = [], set(), set(), []
        for r, line in enumerate(lines):
            row = []
            for c, ch in enumerate(line):
                row.append(ch == "#")
                if ch == "#" or ch == ".":
                    pass
                elif ch == "G":
                    goals.add((r, c))
                elif ch == "B":
                    boxes.add((r, c))
                elif ch == "*":
                    boxes.add((r, c))
                    goals.add((r, c))
                elif ch == "P":
                    players.append((r, c))
                elif ch == "+":
                    players.append((r, c))
                    goals.add((r, c))
                else:
                    raise ValueError(f"unknown sokoban glyph {ch!r}")
            walls.append(tuple(row))
        if len(players) != 1:
            raise ValueError("sokoban instance needs exactly one player")
        if not boxes or not goals:
            raise ValueError("sokoban instance needs at least one box and one goal")
        return SokobanState(
            walls=tuple(walls),
            goals=frozenset(goals),
            player=players[0],
            boxes=frozenset(boxes),
        )


SOKOBAN = SokobanEnv()
