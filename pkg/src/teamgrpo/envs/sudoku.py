"""4x4 Sudoku environment driven by single-cell fill steps plus a submit entry.

Fill steps that would break a row/column/subgrid constraint (or touch a given
or filled cell) leave the grid unchanged with the legality flag lowered, so
the grid never contains duplicates and a completed grid is always solved.
``submit`` declares the current grid final: it ends the episode, solved if
the grid passes the checker and as a dead end otherwise.
"""

from __future__ import annotations

import math
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
    gate_features,
)

Grid = tuple[tuple[int, ...], ...]
FillStep = tuple[int, int, int]  # (row, col, value), 0-based cells, values 1..N

SUBMIT = "submit"

# difficulty -> number of empty cells on the 4x4 board
DIFFICULTIES = {1: 8, 2: 10}
SIZE = 4


@dataclass(frozen=True)
class SudokuState:
    size: int
    subgrid: int
    grid_prev: Grid
    grid_now: Grid
    givens: frozenset[tuple[int, int]]
    declared_done: bool = False
    last_action_legal: bool = True
    turn: int = 0


def placement_legal(grid: Grid, size: int, subgrid: int, r: int, c: int, v: int) -> bool:
    """True iff writing ``v`` at empty cell (r, c) keeps the grid duplicate-free."""
    if not (0 <= r < size and 0 <= c < size and 1 <= v <= size):
        return False
    if grid[r][c] != 0:
        return False
    if v in grid[r]:
        return False
    if any(grid[i][c] == v for i in range(size)):
        return False
    br, bc = (r // subgrid) * subgrid, (c // subgrid) * subgrid
    return all(
        grid[i][j] != v
        for i in range(br, br + subgrid)
        for j in range(bc, bc + subgrid)
    )


def has_duplicates(grid: Grid, size: int, subgrid: int) -> bool:
    """Any repeated non-zero value in a row, column, or subgrid."""
    units = []
    units.extend(grid)
    units.extend(tuple(grid[r][c] for r in range(size)) for c in range(size))
    for br in range(0, size, subgrid):
        for bc in range(0, size, subgrid):
            units.append(
                tuple(
                    grid[r][c]
                    for r in range(br, br + subgrid)
                    for c in range(bc, bc + subgrid)
                )
            )
    for unit in units:
        filled = [v for v in unit if v != 0]
        if len(filled) != len(set(filled)):
            return True
    return False


def grid_solved(grid: Grid, size: int, subgrid: int) -> bool:
    if any(v == 0 for row in grid for v in row):
        return False
    return not has_duplicates(grid, size, subgrid)


@lru_cache(maxsize=16384)
def solve_grid(grid: Grid, size: int, subgrid: int) -> Grid | None:
    """Canonical completion via deterministic backtracking (first in
    row-major/value-ascending order), or None when no completion exists."""
    board = [list(row) for row in grid]

    def backtrack(pos: int) -> bool:
        if pos == size * size:
            return True
        r, c = divmod(pos, size)
        if board[r][c] != 0:
            return backtrack(pos + 1)
        for v in range(1, size + 1):
            if placement_legal(tuple(tuple(row) for row in board), size, subgrid, r, c, v):
                board[r][c] = v
                if backtrack(pos + 1):
                    return True
                board[r][c] = 0
        return False

    if has_duplicates(grid, size, subgrid):
        return None
    if backtrack(0):
        return tuple(tuple(row) for row in board)
    return None


class SudokuEnv(Environment):
    kind = "sudoku"
    roles = ("Reasoner", "Tool")
    feature_names = ("fill_legal", "solver_match", "is_submit")

    def generate(self, seed: int, difficulty: int) -> SudokuState:
        if difficulty not in DIFFICULTIES:
            raise ValueError(f"sudoku difficulty must be in {sorted(DIFFICULTIES)}")
        empties = DIFFICULTIES[difficulty]
        subgrid = int(math.isqrt(SIZE))
        rng = np.random.default_rng(np.random.SeedSequence([0x5344, seed, difficulty]))
        for _ in range(GENERATION_ATTEMPTS):
            solution = self._random_solution(rng, SIZE, subgrid)
            if solution is None:
                continue
            cells = [(r, c) for r in range(SIZE) for c in range(SIZE)]
            holes = [cells[i] for i in rng.choice(len(cells), size=empties, replace=False)]
            grid = tuple(
                tuple(0 if (r, c) in holes else solution[r][c] for c in range(SIZE))
                for r in range(SIZE)
            )
            if solve_grid(grid, SIZE, subgrid) is None:
                continue
            givens = frozenset(
                (r, c) for r in range(SIZE) for c in range(SIZE) if grid[r][c] != 0
            )
            return SudokuState(
                size=SIZE,
                subgrid=subgrid,
                grid_prev=grid,
                grid_now=grid,
                givens=givens,
            )
        raise GenerationError(
            f"sudoku generation failed for seed={seed} difficulty={difficulty}"
        )

    @staticmethod
    def _random_solution(rng: np.random.Generator, size: int, subgrid: int) -> Grid | None:
        """Complete board by randomized backtracking."""
        board = [[0] * size for _ in range(size)]

        def backtrack(pos: int) -> bool:
            if pos == size * size:
                return True
            r, c = divmod(pos, size)
            values = list(range(1, size + 1))
            rng.shuffle(values)
            snapshot = tuple(tuple(row) for row in board)
            for v in values:
                if placement_legal(snapshot, size, subgrid, r, c, v):
                    board[r][c] = v
                    if backtrack(pos + 1):
                        return True
                    board[r][c] = 0
                    snapshot = tuple(tuple(row) for row in board)
            return False

        return tuple(tuple(row) for row in board) if backtrack(0) else None

    def observe(self, state: SudokuState, role: str) -> Observation:
        self.role_index(role)
        rows = "/".join(
            "".join(str(v) if v else "." for v in row) for row in state.grid_now
        )
        prev = "/".join(
            "".join(str(v) if v else "." for v in row) for row in state.grid_prev
        )
        encoding = (
            f"sudoku|role={role}|turn={state.turn}|leg={int(state.last_action_legal)}"
            f"|done={int(state.declared_done)}|grid={rows}|prev={prev}"
        ).encode()
        total = state.size * state.size
        filled = sum(1 for row in state.grid_now for v in row if v != 0)
        features = (
            filled / total,
            (total - filled) / total,
            float(state.last_action_legal),
        )
        return Observation(role, encoding, state.turn, features)

    def legal_menu(self, state: SudokuState, role: str) -> CandidateMenu:
        idx = self.role_index(role)
        if self.is_terminal(state):
            raise EmptyMenuError("sudoku state is terminal; no menu")
        completion = solve_grid(state.grid_now, state.size, state.subgrid)
        entries: list[object] = []
        rows = []
        for r in range(state.size):
            for c in range(state.size):
                if state.grid_now[r][c] != 0:
                    continue
                for v in range(1, state.size + 1):
                    entries.append(((r, c, v),))
                    legal = placement_legal(
                        state.grid_now, state.size, state.subgrid, r, c, v
                    )
                    match = completion is not None and completion[r][c] == v
                    rows.append((float(legal), float(match), 0.0))
        entries.append(SUBMIT)
        rows.append((0.0, 0.0, 1.0))
        features = gate_features(np.array(rows), idx, self.n_roles)
        return CandidateMenu(tuple(entries), features)

    def apply_agent(self, state: SudokuState, role: str, action: MacroAction) -> SudokuState:
        self.role_index(role)
        payload = action.payload
        if payload == SUBMIT:
            return replace(
                state,
                grid_prev=state.grid_now,
                declared_done=True,
                last_action_legal=grid_solved(state.grid_now, state.size, state.subgrid),
            )
        steps = self._parse_steps(payload, state.size)
        grid = [list(row) for row in state.grid_now]
        all_legal = True
        for r, c, v in steps:
            if (r, c) in state.givens:
                raise ContractError(f"fill step targets given cell {(r, c)}")
            snapshot = tuple(tuple(row) for row in grid)
            if placement_legal(snapshot, state.size, state.subgrid, r, c, v):
                grid[r][c] = v
            else:
                all_legal = False
        return replace(
            state,
            grid_prev=state.grid_now,
            grid_now=tuple(tuple(row) for row in grid),
            last_action_legal=all_legal,
        )

    def _parse_steps(self, payload: object, size: int) -> tuple[FillStep, ...]:
        if not isinstance(payload, tuple):
            raise ContractError(f"sudoku action payload {payload!r} was not offered by the menu")
        steps = []
        for step in payload:
            if (
                not isinstance(step, tuple)
                or len(step) != 3
                or not all(isinstance(x, int) for x in step)
            ):
                raise ContractError(f"malformed sudoku fill step {step!r}")
            r, c, v = step
            if not (0 <= r < size and 0 <= c < size and 1 <= v <= size):
                raise ContractError(f"sudoku fill step {step!r} out of bounds")
            steps.append(step)
        return tuple(steps)

    def is_solved(self, state: SudokuState) -> bool:
        return grid_solved(state.grid_now, state.size, state.subgrid)

    def is_dead_end(self, state: SudokuState) -> bool:
        return state.declared_done and not self.is_solved(state)

    def advance_turn(self, state: SudokuState) -> SudokuState:
        return replace(state, turn=state.turn + 1)

    def dump_instance(self, state: SudokuState) -> str:
        lines = [
            "".join(str(v) if v else "." for v in row) for row in state.grid_now
        ]
        return "\n".join(lines) + "\n"

    def load_instance(self, text: str) -> SudokuState:
        lines = [line for line in text.splitlines() if line]
        size = len(lines)
        if size == 0 or any(len(line) != size for line in lines):
            raise ValueError("sudoku instance must be a square of digits and dots")
        subgrid = int(math.isqrt(size))
        if subgrid * subgrid != size:
            raise ValueError(f"sudoku size {size} is not a perfect square")
        grid = []
        for line in lines:
            row = []
            for ch in line:
                if ch == ".":
                    row.append(0)
                elif ch.isdigit() and 1 <= int(ch) <= size:
                    row.append(int(ch))
                else:
                    raise ValueError(f"unknown sudoku glyph {ch!r}")
            grid.append(tuple(row))
        frozen: Grid = tuple(grid)
        if has_duplicates(frozen, size, subgrid):
            raise ValueError("loaded sudoku grid contains duplicates")
        givens = frozenset(
            (r, c) for r in range(size) for c in range(size) if frozen[r][c] != 0
        )
        return SudokuState(
            size=size, subgrid=subgrid, grid_prev=frozen, grid_now=frozen, givens=givens
        )


SUDOKU = SudokuEnv()
