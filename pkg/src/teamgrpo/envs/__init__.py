"""Environment registry and the seeded instance constructor."""

from __future__ import annotations

from .base import (
    CandidateMenu,
    EmptyMenuError,
    Environment,
    GenerationError,
    MOVE_SYMBOLS,
    gate_features,
)
from .planpath import PLAN_PATH, PlanPathEnv, PlanPathState, bfs_distance, sp_next
from .sokoban import (
    SOKOBAN,
    SokobanEnv,
    SokobanState,
    box_goal_potential,
    corner_deadlock_free,
    solve_bounded,
)
from .sudoku import SUBMIT, SUDOKU, SudokuEnv, SudokuState, solve_grid

ENVIRONMENTS: dict[str, Environment] = {
    env.kind: env for env in (SUDOKU, PLAN_PATH, SOKOBAN)
}

DEFAULT_DIFFICULTY = {"sudoku": 1, "plan-path": 2, "sokoban": 1}


def get_env(kind: str) -> Environment:
    try:
        return ENVIRONMENTS[kind]
    except KeyError:
        raise ValueError(
            f"unknown environment {kind!r}; expected one of {sorted(ENVIRONMENTS)}"
        ) from None


def generate(kind: str, seed: int, difficulty: int):
    """Deterministic, solvable instance of ``kind`` from (seed, difficulty)."""
    return get_env(kind).generate(seed, difficulty)


__all__ = [
    "CandidateMenu",
    "DEFAULT_DIFFICULTY",
    "EmptyMenuError",
    "Environment",
    "ENVIRONMENTS",
    "GenerationError",
    "MOVE_SYMBOLS",
    "PLAN_PATH",
    "PlanPathEnv",
    "PlanPathState",
    "SOKOBAN",
    "SUBMIT",
    "SUDOKU",
    "SokobanEnv",
    "SokobanState",
    "SudokuEnv",
    "SudokuState",
    "bfs_distance",
    "box_goal_potential",
    "corner_deadlock_free",
    "gate_features",
    "generate",
    "get_env",
    "solve_bounded",
    "solve_grid",
    "sp_next",
]
