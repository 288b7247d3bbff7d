"""Command-line entry points: train, eval, ablate, plus inspection flags.

Exit codes: 0 success, 2 configuration error (message names the offending
field), 3 runtime contract violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .core import ConfigError, ContractError
from .envs import ENVIRONMENTS, get_env
from .policy import (
    CheckpointError,
    SCRIPTED_KINDS,
    export_text,
    load_checkpoint,
    save_checkpoint,
    scripted_policy,
)
from .runconfig import RunConfig, default_workers
from .trainer import (
    evaluate,
    rollout_record_line,
    swap_policies,
    train,
)
from .core import RoleMapping

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONTRACT = 3


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--env", choices=sorted(ENVIRONMENTS))
    parser.add_argument("--steps", type=int, help="training steps (S)")
    parser.add_argument("--k", type=int, dest="branches", help="candidate branches (K)")
    parser.add_argument("--turns", type=int, help="turn horizon (T)")
    parser.add_argument("--n-envs", type=int, help="parallel env instances per step (E)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--difficulty", type=int)
    parser.add_argument("--role-mode", choices=("shared", "specialized"))
    parser.add_argument("--mixer", choices=("appendix", "main-text"))
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--lam", type=float, help="override the schedule's lambda")
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--lr", type=float, dest="learning_rate")
    parser.add_argument("--eval-every", type=int)
    parser.add_argument("--n-eval-seeds", type=int)
    parser.add_argument("--workers", type=int, help="rollout workers (default: all cores)")
    parser.add_argument("--out", help="output directory for run artifacts")
    parser.add_argument("--dump-rollouts", action="store_true", default=None)
    parser.add_argument(
        "--dump-instance",
        action="store_true",
        help="print the first training instance as text and exit",
    )
    parser.add_argument(
        "--print-schedule",
        action="store_true",
        help="print the active reward schedule and exit",
    )


def _collect_overrides(args: argparse.Namespace) -> dict:
    keys = (
        "env",
        "steps",
        "branches",
        "turns",
        "n_envs",
        "seed",
        "difficulty",
        "role_mode",
        "mixer",
        "alpha",
        "lam",
        "temperature",
        "learning_rate",
        "eval_every",
        "n_eval_seeds",
        "workers",
        "dump_rollouts",
    )
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(_collect_overrides(args))
    if args.workers is None and cfg.workers == 1 and args.config is None:
        cfg = cfg.with_overrides({"workers": default_workers()})
    return cfg.validate()


def _print_schedule(cfg: RunConfig) -> None:
    schedule = cfg.reward_schedule()
    print(f"env: {schedule.env}")
    print(f"lambda: {schedule.lam}")
    print(f"mixer: {cfg.mixer} (alpha={cfg.alpha})")
    for role, table in schedule.coefficients:
        parts = ", ".join(f"{name}={weight}" for name, weight in table)
        print(f"{role}: {parts}")


def _print_instance(cfg: RunConfig) -> None:
    from .trainer import _instance_seed

    env = get_env(cfg.env)
    state = env.generate(_instance_seed(cfg.seed, 0, 0), cfg.resolved_difficulty())
    sys.stdout.write(env.dump_instance(state))


def _run_training(args: argparse.Namespace, mode: str, extra_overrides: dict | None = None) -> int:
    cfg = _load_run_config(args)
    if extra_overrides:
        cfg = cfg.with_overrides(extra_overrides).validate()
    if args.print_schedule:
        _print_schedule(cfg)
        return EXIT_OK
    if args.dump_instance:
        _print_instance(cfg)
        return EXIT_OK
    out_dir = Path(args.out) if args.out else Path("runs") / f"{cfg.env}-seed{cfg.seed}"
    out_dir.mkdir(parents=True, exist_ok=True)

    result = train(
        cfg.game_config(),
        cfg.role_mapping(),
        cfg.env,
        difficulty=cfg.resolved_difficulty(),
        learning_rate=cfg.learning_rate,
        eval_every=cfg.eval_every,
        adv_cfg=cfg.advantage_config(),
        mode=mode,
        workers=cfg.workers,
        schedule=cfg.reward_schedule(),
        collect_rollouts=cfg.dump_rollouts,
        progress=lambda line: print(line, file=sys.stderr),
    )

    (out_dir / "metrics.jsonl").write_text("\n".join(result.log_lines) + "\n")
    (out_dir / "resolved_config.json").write_text(cfg.echo_json())
    for params in result.policies:
        stem = out_dir / f"policy_{params.policy_id}"
        save_checkpoint(params, stem.with_suffix(".ckpt"))
        stem.with_suffix(".txt").write_text(export_text(params))
    if cfg.dump_rollouts:
        (out_dir / "rollouts.jsonl").write_text(
            "\n".join(rollout_record_line(r) for r in result.rollout_records) + "\n"
        )
    wall = sum(m.wall_ms for m in result.metrics)
    (out_dir / "timing.txt").write_text(f"total_step_wall_ms: {wall:.3f}\n")
    if result.eval_records:
        final = result.eval_records[-1]
        print(
            f"final eval: success_rate={final.success_rate} avg_turns={final.avg_turns}"
        )
    print(f"artifacts written to {out_dir}")
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    return _run_training(args, mode="tree")


def _cmd_ablate(args: argparse.Namespace) -> int:
    if args.mode == "parallel-sampling":
        return _run_training(args, mode="parallel")
    # drop-degenerate: tree sampling, but degenerate groups leave the batches
    return _run_training(args, mode="tree", extra_overrides={"degenerate_policy": "drop-group"})


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(chunk) for chunk in text.split(",") if chunk.strip()]
    except ValueError as exc:
        raise ConfigError(f"seeds must be comma-separated integers: {exc}") from exc


def _cmd_eval(args: argparse.Namespace) -> int:
    if not args.scripted and not args.checkpoint:
        raise ConfigError("eval needs --checkpoint files or --scripted kind")
    env = get_env(args.env)
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise ConfigError("seeds list is empty")
    if args.scripted:
        policies = [scripted_policy(args.scripted, env)]
        mapping = RoleMapping.shared(env.n_roles)
        if args.swap:
            raise ConfigError("--swap needs role-specialized checkpoints, not --scripted")
    else:
        policies = [load_checkpoint(path) for path in args.checkpoint]
        if len(policies) == 1:
            mapping = RoleMapping.shared(env.n_roles)
        elif len(policies) == env.n_roles:
            mapping = RoleMapping.specialized(env.n_roles)
        else:
            raise ConfigError(
                f"expected 1 or {env.n_roles} checkpoints for {args.env}, got {len(policies)}"
            )
        if args.swap:
            if len(policies) < 2:
                raise ConfigError("--swap is undefined for a shared-policy checkpoint")
            permutation = list(range(len(policies)))
            permutation[0], permutation[1] = permutation[1], permutation[0]
            policies = swap_policies(policies, permutation)
    record = evaluate(policies, mapping, args.env, seeds, args.turns, args.difficulty)
    line = f"success_rate={record.success_rate} avg_turns={record.avg_turns} n_seeds={record.n_seeds}"
    print(line)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "a") as fh:
            fh.write(line + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teamgrpo",
        description="Train and evaluate two-role agent teams with group-relative updates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training session")
    _add_run_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_ablate = sub.add_parser("ablate", help="run a training ablation")
    p_ablate.add_argument(
        "--mode", required=True, choices=("parallel-sampling", "drop-degenerate")
    )
    _add_run_flags(p_ablate)
    p_ablate.set_defaults(func=_cmd_ablate)

    p_eval = sub.add_parser("eval", help="greedy evaluation of checkpoints")
    p_eval.add_argument("--checkpoint", action="append", default=[])
    p_eval.add_argument("--scripted", choices=SCRIPTED_KINDS)
    p_eval.add_argument("--env", required=True, choices=sorted(ENVIRONMENTS))
    p_eval.add_argument("--seeds", required=True, help="comma-separated instance seeds")
    p_eval.add_argument("--turns", type=int, default=4)
    p_eval.add_argument("--difficulty", type=int)
    p_eval.add_argument("--swap", action="store_true", help="transpose the two role policies")
    p_eval.add_argument("--out", help="append the printed result to this file")
    p_eval.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
