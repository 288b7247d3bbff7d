"""Environment protocol shared by the three grid games.

Environments are stateless singletons operating on immutable state values.
A *turn* applies one macro-action per agent, in fixed role order; each
single-agent application is exposed separately (``apply_agent``) because
rollouts interleave sampling with the staged intra-turn state.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from ..core import ContractError, MacroAction, Observation, TerminationFlag

GENERATION_ATTEMPTS = 10_000

MOVES: tuple[tuple[str, tuple[int, int]], ...] = (
    ("U", (-1, 0)),
    ("D", (1, 0)),
    ("L", (0, -1)),
    ("R", (0, 1)),
)
MOVE_SYMBOLS = tuple(sym for sym, _ in MOVES)
MOVE_DELTAS = dict(MOVES)


class GenerationError(RuntimeError):
    """Instance generation exhausted its retry budget."""


class EmptyMenuError(ContractError):
    """legal_menu was called on a terminal state."""


class CandidateMenu:
    """Ordered finite list of action payloads legal to propose at (state, role).

    ``features`` has one row per entry. Rows are already gated into the
    acting role's block (zeros elsewhere), so a linear policy conditions on
    the role without knowing environment internals.
    """

    __slots__ = ("entries", "features")

    def __init__(self, entries: tuple[object, ...], features: np.ndarray):
        if len(entries) != features.shape[0]:
            raise ContractError("menu feature matrix row count must match entries")
        features = np.ascontiguousarray(features, dtype=np.float64)
        features.flags.writeable = False
        self.entries = entries
        self.features = features

    def __len__(self) -> int:
        return len(self.entries)

    def action(self, index: int) -> MacroAction:
        return MacroAction(menu_index=index, payload=self.entries[index])


def gate_features(rows: np.ndarray, role_index: int, n_roles: int) -> np.ndarray:
    """Place per-entry feature rows into the role's block of a wider matrix."""
    n, width = rows.shape
    gated = np.zeros((n, width * n_roles), dtype=np.float64)
    gated[:, role_index * width : (role_index + 1) * width] = rows
    return gated


class Environment(ABC):
    """Deterministic two-role environment over immutable state values."""

    kind: str
    roles: tuple[str, ...]
    feature_names: tuple[str, ...]

    @property
    def n_roles(self) -> int:
        return len(self.roles)

    @property
    def feature_dim(self) -> int:
        """Width of menu feature rows (role blocks included)."""
        return len(self.feature_names) * self.n_roles

    def role_index(self, role: str) -> int:
        try:
            return self.roles.index(role)
        except ValueError:
            raise ContractError(f"{self.kind} has no role {role!r}") from None

    @abstractmethod
    def generate(self, seed: int, difficulty: int):
        """Deterministically build a solvable instance from (seed, difficulty)."""

    @abstractmethod
    def observe(self, state, role: str) -> Observation:
        ...

    @abstractmethod
    def legal_menu(self, state, role: str) -> CandidateMenu:
        ...

    @abstractmethod
    def apply_agent(self, state, role: str, action: MacroAction):
        """Apply a single agent's macro-action; returns the next state.

        Ineffective actions (wall moves, blocked pushes, constraint-breaking
        fills) leave the affected state unchanged and lower the legality flag
        consumed by the reward components. Actions not offered by the menu
        raise ContractError.
        """

    @abstractmethod
    def is_solved(self, state) -> bool:
        ...

    def is_dead_end(self, state) -> bool:
        return False

    def is_terminal(self, state) -> bool:
        return self.is_solved(state) or self.is_dead_end(state)

    @abstractmethod
    def advance_turn(self, state):
        """Return the state with its turn counter incremented."""

    def termination(self, state, horizon: int | None = None) -> TerminationFlag:
        """Flag for a state reached after applying actions.

        ``horizon`` (when given) is the turn budget T; a state whose turn
        counter has reached it terminates with cause ``horizon`` unless a
        stronger cause applies.
        """
        if self.is_solved(state):
            return TerminationFlag(True, "solved")
        if self.is_dead_end(state):
            return TerminationFlag(True, "dead-end")
        if horizon is not None and state.turn >= horizon:
            return TerminationFlag(True, "horizon")
        return TerminationFlag(False)

    def apply(self, state, actions, horizon: int | None = None):
        """Advance one full turn: fold every agent's action in role order.

        Returns ``(next_state, TerminationFlag)``. If an action makes the
        state terminal mid-turn, the remaining agents' actions are not
        applied (there is no meaningful state for them to act on).
        """
        if len(actions) != self.n_roles:
            raise ContractError(
                f"expected one action per agent ({self.n_roles}), got {len(actions)}"
            )
        staged = state
        for role, action in zip(self.roles, actions):
            if self.is_terminal(staged):
                break
            staged = self.apply_agent(staged, role, action)
        staged = self.advance_turn(staged)
        return staged, self.termination(staged, horizon)

    @abstractmethod
    def dump_instance(self, state) -> str:
        """Plain-text matrix form of the instance (see README for glyphs)."""

    @abstractmethod
    def load_instance(self, text: str):
        ...
