"""Command-line entry point: ``chartgrpo <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from chartgrpo import dsl
from chartgrpo.config import ConfigError, RunConfig, dump_config, load_config
from chartgrpo.evaluation import (
    AblationSpec,
    ReportError,
    evaluate,
    format_eval_table,
    report,
    run_ablation,
)
from chartgrpo.experiments import standard_split
from chartgrpo.policy import SamplerConfig, greedy_decode, load_checkpoint
from chartgrpo.rewards import RewardEngine, format_check
from chartgrpo.sandbox import execute
from chartgrpo.tasks import DatasetFormatError, generate_dataset, read_dataset, write_dataset
from chartgrpo.trainer import base_policy, train_grpo, train_sft


class CliError(Exception):
    pass


def _load_run(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _tasks(path):
    if path is None:
        return None
    if not Path(path).exists():
        raise CliError(f"{path}: dataset not found")
    tasks = read_dataset(path)
    if not tasks:
        raise CliError(f"{path}: dataset is empty")
    return tasks


def _init(args, cfg):
    return load_checkpoint(args.init) if getattr(args, "init", None) else base_policy(cfg)


def cmd_gen_tasks(args) -> int:
    write_dataset(generate_dataset(args.seed, args.count, start_id=args.start_id), args.out)
    print(f"wrote {args.count} tasks to {args.out}")
    return 0


def cmd_train(args) -> int:
    run = _load_run(args)
    tasks = _tasks(args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(run))
    engine = RewardEngine(run.trainer.reward_weights, limits=run.limits, enabled=run.enabled_rewards)
    state, history = train_grpo(run.trainer, tasks, engine, run.sampler, out_dir=out,
                                init=_init(args, run.trainer))
    last = history[-1]
    print(f"trained {len(history)} steps; final mean reward {last.mean_reward:.4f}; "
          f"checkpoint {out / 'policy.ckpt'}")
    return 0


def cmd_train_sft(args) -> int:
    run = _load_run(args)
    tasks = _tasks(args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(run))
    _, losses = train_sft(run.trainer, tasks, out_dir=out, init=_init(args, run.trainer))
    print(f"trained {len(losses)} SFT steps; final NLL {losses[-1]:.4f}; checkpoint {out / 'policy.ckpt'}")
    return 0


def _eval_sampler(args, run: RunConfig) -> SamplerConfig:
    if args.sampled:
        return SamplerConfig(run.sampler.temperature, run.sampler.top_p, run.sampler.max_len,
                             rng_seed=args.seed, greedy=False)
    return SamplerConfig(max_len=run.sampler.max_len, greedy=True)


def cmd_eval(args) -> int:
    run = _load_run(args)
    policy = load_checkpoint(args.checkpoint)
    metrics = evaluate(policy, _tasks(args.data), _eval_sampler(args, run), limits=run.limits)
    text = json.dumps(metrics.as_dict(), indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def _read_variants(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise CliError(f"{path}: cannot read variants ({e})") from e
    budget = None
    if isinstance(data, dict):
        budget = data.get("budget")
        data = data.get("variants", [])
    try:
        return [AblationSpec(v["variant_id"], v.get("enabled_rewards", ("format", "text", "code", "vis")),
                             int(v.get("group_size", 8))) for v in data], budget
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(f"{path}: malformed variant ({e})") from e


def cmd_ablate(args) -> int:
    run = _load_run(args)
    variants, budget = _read_variants(args.variants)
    train, held = _tasks(args.data), _tasks(args.eval_data)
    if train is None or held is None:
        std_train, std_held = standard_split(run.trainer.seed)
        train = train or std_train
        held = held or std_held
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(run))
    table = run_ablation(run.trainer, variants, train, held, budget=budget,
                         init=base_policy(run.trainer), sampler=run.sampler, limits=run.limits,
                         out_dir=out)
    print(format_eval_table(table))
    return 0


def cmd_render(args) -> int:
    policy = load_checkpoint(args.checkpoint)
    if args.data:
        tasks = _tasks(args.data)
    else:
        train, held = standard_split()
        tasks = train + held
    by_id = {t.task_id: t for t in tasks}
    if args.task_id not in by_id:
        raise CliError(f"task id {args.task_id} not in dataset")
    task = by_id[args.task_id]
    tokens = greedy_decode(policy, task)
    print(dsl.decode(tokens))
    out = format_check(tokens)
    if out is None:
        raise CliError("completion fails the format check; nothing to render")
    result = execute(out.program_tokens, task.table)
    if not result.ok:
        raise CliError(f"program failed: {result.error.cls.value}: {result.error.message}")
    Path(args.out).write_text(dsl.render_svg(result.spec))
    print(f"wrote {args.out}")
    return 0


def cmd_report(args) -> int:
    print(report(args.run_dir), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chartgrpo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-tasks", help="generate a task dataset")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--start-id", type=int, default=0)
    g.set_defaults(func=cmd_gen_tasks)

    for name, func, help_ in (("train", cmd_train, "GRPO training"),
                              ("train-sft", cmd_train_sft, "SFT baseline")):
        t = sub.add_parser(name, help=help_)
        t.add_argument("--config")
        t.add_argument("--data", required=True)
        t.add_argument("--out-dir", required=True)
        t.add_argument("--init", help="start from this checkpoint instead of the configured base")
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config")
    e.add_argument("--sampled", action="store_true", help="seeded sampling instead of greedy")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="reward-component / group-size sweep")
    a.add_argument("--config")
    a.add_argument("--variants", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--data")
    a.add_argument("--eval-data")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("render", help="render the policy's chart for one task")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--task-id", type=int, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--data")
    r.set_defaults(func=cmd_render)

    rp = sub.add_parser("report", help="summary and training-dynamics plots")
    rp.add_argument("--run-dir", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, ReportError, DatasetFormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
