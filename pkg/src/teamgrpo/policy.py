"""Menu-softmax policies: sampling, exact log-probabilities, loss, updates.

A policy is a flat weight vector over the environment's role-gated menu
features. The sampling distribution over a menu is softmax(F @ w / T); at
temperature 0 it degenerates to argmax with smallest-index tie-break. The
training loss is the group-relative objective

    L = -mean over groups of (1/K) * sum_c logpi(a_c | o_g) * A_c

whose gradient has the closed softmax form; updates are plain gradient
descent with a fixed learning rate. Parameters are immutable snapshots: an
update returns a new snapshot with the version counter advanced by one, and
the version stamps enforce the on-policy invariant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import ContractError, MacroAction, Observation
from .envs.base import CandidateMenu
from .grouping import Group

CHECKPOINT_MAGIC = b"MSP1"


class OnPolicyError(ContractError):
    """A batch was produced under a different parameter version."""


class CheckpointError(ValueError):
    """A checkpoint file is missing, truncated, or not ours."""


@dataclass(frozen=True)
class PolicyParams:
    """Versioned weight vector of one menu-softmax policy."""

    policy_id: int
    version: int
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if not all(np.isfinite(self.weights)):
            raise ContractError("policy weights must be finite")

    @property
    def dim(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


def init_params(policy_id: int, dim: int) -> PolicyParams:
    """Zero weights: the uniform policy over any menu."""
    return PolicyParams(policy_id=policy_id, version=0, weights=(0.0,) * dim)


@dataclass(frozen=True)
class SampleResult:
    action: MacroAction
    logprob: float
    sampled_version: int


@dataclass(frozen=True)
class PerPolicyBatch:
    """Union of the groups routed to one policy, consumed by one update."""

    policy_id: int
    groups: tuple[Group, ...]
    version: int
    sample_temperature: float


@dataclass(frozen=True)
class LossReport:
    loss: float
    gradient: np.ndarray
    n_groups: int


def _log_softmax(menu: CandidateMenu, weights: np.ndarray, temperature: float) -> np.ndarray:
    logits = menu.features @ weights
    if temperature != 1.0:
        logits = logits / temperature
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _check_dim(params: PolicyParams, menu: CandidateMenu) -> None:
    if menu.features.shape[1] != params.dim:
        raise ContractError(
            f"menu feature width {menu.features.shape[1]} != policy dim {params.dim}"
        )


def sample_k(
    params: PolicyParams,
    obs: Observation,
    menu: CandidateMenu,
    temperature: float,
    k: int,
    rng: np.random.Generator,
) -> list[SampleResult]:
    """Draw k independent actions from the tempered softmax over the menu.

    Temperature 0 is deterministic argmax (ties to the smallest index) with
    logprob 0, matching the greedy evaluation mode. ``obs`` is carried for
    the caller's group bookkeeping; the distribution itself is determined by
    the menu's (already role-gated) feature rows.
    """
    del obs  # sampling depends on the menu features; kept for call symmetry
    if len(menu) == 0:
        raise ContractError("cannot sample from an empty menu")
    if temperature < 0:
        raise ContractError(f"temperature must be >= 0 (got {temperature})")
    if k < 1:
        raise ContractError("k must be >= 1")
    _check_dim(params, menu)
    w = params.as_array()
    if temperature == 0.0:
        idx = int(np.argmax(menu.features @ w))
        return [
            SampleResult(menu.action(idx), 0.0, params.version) for _ in range(k)
        ]
    logp = _log_softmax(menu, w, temperature)
    probs = np.exp(logp)
    probs = probs / probs.sum()
    draws = rng.choice(len(menu), size=k, p=probs)
    return [
        SampleResult(menu.action(int(j)), float(logp[int(j)]), params.version)
        for j in draws
    ]


def logprob(
    params: PolicyParams,
    obs: Observation,
    menu: CandidateMenu,
    action: MacroAction,
    temperature: float,
) -> float:
    """Exact log-softmax value of ``action`` under the menu distribution."""
    del obs
    if not 0 <= action.menu_index < len(menu):
        raise ContractError(f"action index {action.menu_index} not in menu")
    if menu.entries[action.menu_index] != action.payload:
        raise ContractError("action payload does not match the menu entry")
    _check_dim(params, menu)
    w = params.as_array()
    if temperature == 0.0:
        return 0.0 if action.menu_index == int(np.argmax(menu.features @ w)) else -np.inf
    return float(_log_softmax(menu, w, temperature)[action.menu_index])


def _batch_terms(params: PolicyParams, batch: PerPolicyBatch):
    """Yield (group, logp vector, prob vector) for trainable groups."""
    w = params.as_array()
    for group in batch.groups:
        if group.degenerate:
            continue
        features = group.menu_features
        if features is None:
            raise ContractError("group lacks menu features; cannot recompute loss")
        if features.shape[1] != params.dim:
            raise ContractError("group menu feature width does not match policy dim")
        logits = features @ w / batch.sample_temperature
        shifted = logits - logits.max()
        logp = shifted - np.log(np.exp(shifted).sum())
        yield group, features, logp, np.exp(logp)


def loss(params: PolicyParams, batch: PerPolicyBatch) -> LossReport:
    """Group-relative loss and its exact gradient at the current parameters."""
    if batch.version != params.version:
        raise OnPolicyError(
            f"batch version {batch.version} != params version {params.version} "
            f"(policy {params.policy_id})"
        )
    if batch.sample_temperature <= 0:
        raise ContractError("loss needs the positive sampling temperature")
    total = 0.0
    grad = np.zeros(params.dim)
    n = 0
    for group, features, logp, probs in _batch_terms(params, batch):
        k = group.size
        inner = 0.0
        ginner = np.zeros(params.dim)
        expected = probs @ features
        for cand, adv in zip(group.candidates, group.advantages):
            idx = cand.action.menu_index
            inner += adv * logp[idx]
            ginner += adv * (features[idx] - expected)
        total += inner / k
        grad += ginner / (k * batch.sample_temperature)
        n += 1
    if n == 0:
        return LossReport(loss=0.0, gradient=np.zeros(params.dim), n_groups=0)
    return LossReport(loss=-total / n, gradient=-grad / n, n_groups=n)


def update(params: PolicyParams, batch: PerPolicyBatch, learning_rate: float) -> PolicyParams:
    """One gradient-descent step; returns a new snapshot, version + 1."""
    report = loss(params, batch)
    if not np.all(np.isfinite(report.gradient)):
        raise ContractError("non-finite gradient")
    new_weights = params.as_array() - learning_rate * report.gradient
    return PolicyParams(
        policy_id=params.policy_id,
        version=params.version + 1,
        weights=tuple(float(x) for x in new_weights),
    )


# --- scripted baselines ------------------------------------------------------

SCRIPTED_KINDS = ("random", "plan-path-optimal", "sokoban-greedy", "sudoku-backtrack")

# feature columns each scripted rule needs, by environment feature name
_SCRIPTED_REQUIRES = {
    "plan-path-optimal": ("legal", "shortest_path"),
    "sokoban-greedy": ("legal", "deadlock_free", "potential_kept", "potential_gain"),
    "sudoku-backtrack": ("fill_legal", "solver_match", "is_submit"),
}


@dataclass(frozen=True)
class ScriptedPolicy:
    """Deterministic baseline selecting menu entries by their feature rows.

    Offered with the same sampling surface as trainable parameters so the
    trainer and evaluator can use either interchangeably.
    """

    kind: str
    feature_names: tuple[str, ...]
    version: int = 0
    policy_id: int = -1

    def __post_init__(self) -> None:
        if self.kind not in SCRIPTED_KINDS:
            raise ValueError(f"unknown scripted policy kind {self.kind!r}")
        for needed in _SCRIPTED_REQUIRES.get(self.kind, ()):
            if needed not in self.feature_names:
                raise ValueError(
                    f"scripted policy {self.kind!r} does not fit an environment "
                    f"with features {self.feature_names}"
                )

    def _col(self, rows: np.ndarray, name: str) -> np.ndarray:
        return rows[:, self.feature_names.index(name)]

    def _select(self, menu: CandidateMenu, rng: np.random.Generator) -> tuple[int, float]:
        n_roles = menu.features.shape[1] // len(self.feature_names)
        rows = menu.features.reshape(len(menu), n_roles, len(self.feature_names)).sum(axis=1)
        if self.kind == "random":
            return int(rng.integers(len(menu))), float(np.log(1.0 / len(menu)))
        if self.kind == "plan-path-optimal":
            order = (self._col(rows, "shortest_path"), self._col(rows, "legal"))
        elif self.kind == "sokoban-greedy":
            legal = self._col(rows, "legal")
            safe = legal * self._col(rows, "deadlock_free")
            order = (
                safe * self._col(rows, "potential_gain"),
                safe * self._col(rows, "potential_kept"),
                legal,
            )
        else:  # sudoku-backtrack
            order = (
                self._col(rows, "solver_match"),
                self._col(rows, "fill_legal"),
                self._col(rows, "is_submit"),
            )
        for scores in order:
            if scores.max() > 0:
                return int(np.argmax(scores)), 0.0
        return 0, 0.0

    def sample_k(
        self,
        obs: Observation,
        menu: CandidateMenu,
        temperature: float,
        k: int,
        rng: np.random.Generator,
    ) -> list[SampleResult]:
        del obs, temperature
        if len(menu) == 0:
            raise ContractError("cannot sample from an empty menu")
        results = []
        for _ in range(k):
            idx, lp = self._select(menu, rng)
            results.append(SampleResult(menu.action(idx), lp, self.version))
        return results


def scripted_policy(kind: str, env) -> ScriptedPolicy:
    """Baseline policy of the given kind for an environment instance."""
    return ScriptedPolicy(kind=kind, feature_names=tuple(env.feature_names))


def policy_sample_k(policy, obs, menu, temperature, k, rng) -> list[SampleResult]:
    """Sample from trainable parameters or a scripted baseline uniformly."""
    if isinstance(policy, PolicyParams):
        return sample_k(policy, obs, menu, temperature, k, rng)
    return policy.sample_k(obs, menu, temperature, k, rng)


# --- checkpoint format --------------------------------------------------------
# magic "MSP1" | policy_id u32 LE | version u64 LE | dim u32 LE | dim * f64 LE

_HEADER = struct.Struct("<4sIQI")


def save_checkpoint(params: PolicyParams, path) -> None:
    blob = _HEADER.pack(CHECKPOINT_MAGIC, params.policy_id, params.version, params.dim)
    blob += struct.pack(f"<{params.dim}d", *params.weights)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> PolicyParams:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"checkpoint {path} is truncated")
    magic, policy_id, version, dim = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"checkpoint {path} has bad magic bytes {magic!r}")
    expected = _HEADER.size + 8 * dim
    if len(blob) != expected:
        raise CheckpointError(
            f"checkpoint {path} has {len(blob)} bytes, expected {expected}"
        )
    weights = struct.unpack_from(f"<{dim}d", blob, _HEADER.size)
    return PolicyParams(policy_id=policy_id, version=version, weights=tuple(weights))


def export_text(params: PolicyParams) -> str:
    """Plain-text form for diffing checkpoints."""
    lines = [
        f"policy_id: {params.policy_id}",
        f"version: {params.version}",
        f"dim: {params.dim}",
    ]
    lines += [repr(w) for w in params.weights]
    return "\n".join(lines) + "\n"
