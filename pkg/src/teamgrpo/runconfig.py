"""Run configuration: file schema, flag overrides, and the resolved echo.

The config file is JSON with the exact keys below (unknown keys are
rejected by name). Flag overrides always win over file values. The resolved
echo written next to every run contains every effective value, including the
derived evaluation seed list, and re-ingesting it reproduces the identical
run byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .core import ConfigError, GameConfig, MixerConfig, RoleMapping
from .envs import DEFAULT_DIFFICULTY, ENVIRONMENTS
from .grouping import AdvantageConfig
from .rewards import RewardSchedule, schedule_for
from .trainer import derive_eval_seeds

ROLE_MODES = ("shared", "specialized")


@dataclass
class RunConfig:
    env: str = "plan-path"
    role_mode: str = "specialized"
    difficulty: int | None = None
    turns: int = 4
    branches: int = 4
    n_envs: int = 16
    steps: int = 50
    temperature: float = 1.0
    mixer: str = "appendix"
    alpha: float = 1.0
    lam: float | None = None
    learning_rate: float = 0.05
    eval_every: int = 10
    n_eval_seeds: int = 50
    eval_seeds: list[int] | None = None
    seed: int = 1
    workers: int = 1
    degenerate_policy: str = "zero-advantages"
    dump_rollouts: bool = False
    coefficients: dict | None = None  # role -> [[component, weight], ...] override

    FIELD_NAMES = ()  # filled in below

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls().with_overrides(raw)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        values = dataclasses.asdict(self)
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in values:
                raise ConfigError(f"unknown config field {key!r}")
            values[key] = value
        return RunConfig(**values)

    def resolved_eval_seeds(self) -> tuple[int, ...]:
        if self.eval_seeds is not None:
            return tuple(int(s) for s in self.eval_seeds)
        if self.n_eval_seeds == 0:
            return ()
        return derive_eval_seeds(self.seed, self.n_eval_seeds)

    def resolved_difficulty(self) -> int:
        if self.difficulty is not None:
            return self.difficulty
        if self.env not in DEFAULT_DIFFICULTY:
            raise ConfigError(f"env must be one of {sorted(ENVIRONMENTS)} (got {self.env!r})")
        return DEFAULT_DIFFICULTY[self.env]

    def validate(self) -> "RunConfig":
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"env must be one of {sorted(ENVIRONMENTS)} (got {self.env!r})")
        if self.role_mode not in ROLE_MODES:
            raise ConfigError(f"role_mode must be one of {ROLE_MODES} (got {self.role_mode!r})")
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must be in [0, 1] (got {self.lam})")
        if self.n_eval_seeds < 0:
            raise ConfigError(f"n_eval_seeds must be >= 0 (got {self.n_eval_seeds})")
        # difficulty bounds are environment-specific; probe the generator's table
        from .envs import planpath, sokoban, sudoku

        tables = {
            "plan-path": planpath.DIFFICULTIES,
            "sokoban": sokoban.DIFFICULTIES,
            "sudoku": sudoku.DIFFICULTIES,
        }
        difficulty = self.resolved_difficulty()
        if difficulty not in tables[self.env]:
            raise ConfigError(
                f"difficulty {difficulty} unsupported for {self.env}; "
                f"expected one of {sorted(tables[self.env])}"
            )
        # remaining invariants (branches, turns, ...) delegate to validate_config
        from .core import validate_config

        cfg, mapping = self.game_config(), self.role_mapping()
        validate_config(cfg, mapping)
        self.reward_schedule()  # surfaces bad lambda/coefficient overrides
        AdvantageConfig(degenerate_policy=self.degenerate_policy)
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0 (got {self.learning_rate})")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1 (got {self.eval_every})")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1 (got {self.workers})")
        return self

    def n_agents(self) -> int:
        return ENVIRONMENTS[self.env].n_roles

    def game_config(self) -> GameConfig:
        n = self.n_agents()
        return GameConfig(
            n_agents=n,
            n_policies=1 if self.role_mode == "shared" else n,
            turn_horizon=self.turns,
            branches=self.branches,
            n_envs=self.n_envs,
            total_steps=self.steps,
            sample_temperature=self.temperature,
            mixer=MixerConfig(form=self.mixer, alpha=self.alpha),
            seed=self.seed,
            eval_seeds=self.resolved_eval_seeds(),
        )

    def role_mapping(self) -> RoleMapping:
        n = self.n_agents()
        return RoleMapping.shared(n) if self.role_mode == "shared" else RoleMapping.specialized(n)

    def reward_schedule(self) -> RewardSchedule:
        schedule = schedule_for(self.env)
        if self.lam is not None:
            schedule = schedule.with_lambda(self.lam)
        if self.coefficients:
            tables = dict(schedule.coefficients)
            for role, table in self.coefficients.items():
                if role not in tables:
                    raise ConfigError(
                        f"coefficients override names unknown role {role!r} for {self.env}"
                    )
                tables[role] = tuple((str(n), float(w)) for n, w in table)
            schedule = RewardSchedule(
                env=schedule.env, lam=schedule.lam, coefficients=tuple(tables.items())
            )
        return schedule

    def advantage_config(self) -> AdvantageConfig:
        return AdvantageConfig(degenerate_policy=self.degenerate_policy)

    def echo_dict(self) -> dict:
        """Every effective value, with derived defaults materialized."""
        values = dataclasses.asdict(self)
        values["difficulty"] = self.resolved_difficulty()
        values["eval_seeds"] = list(self.resolved_eval_seeds())
        return values

    def echo_json(self) -> str:
        return json.dumps(self.echo_dict(), indent=2) + "\n"


RunConfig.FIELD_NAMES = tuple(f.name for f in dataclasses.fields(RunConfig))


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
