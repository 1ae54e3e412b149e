"""Seeded toy-scale experiments shared by the CLI, scripts and acceptance tests."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from chartgrpo.evaluation import AblationSpec, EvalMetrics, evaluate, run_ablation
from chartgrpo.policy import PolicyParams, SamplerConfig
from chartgrpo.sandbox import ExecLimits
from chartgrpo.tasks import TaskInstance, generate_dataset
from chartgrpo.trainer import TrainerConfig, base_policy, train_sft

EVAL_ID_OFFSET = 10_000


def standard_split(seed: int = 42, n_train: int = 200, n_eval: int = 50
                   ) -> tuple[list[TaskInstance], list[TaskInstance]]:
    """Training tasks and a held-out set drawn from an unrelated seed stream."""
    train = generate_dataset(seed, n_train)
    held = generate_dataset(seed + 4200, n_eval, start_id=EVAL_ID_OFFSET)
    return train, held


def acceptance_config(seed: int = 42) -> TrainerConfig:
    """Frozen reference configuration for the learning-effect experiments.

    Pretraining gives a base policy that emits well-formed outputs most of the
    time but picks the intended chart for only some queries, which is the
    regime the zero-shot baselines sit in.
    """
    return TrainerConfig(seed=seed, group_size=8, total_steps=300, prompts_per_batch=8,
                         pretrain_steps=600, pretrain_on_task_fraction=0.3)


# variants trained for the ablation and group-size comparisons
ACCEPTANCE_VARIANTS = (
    AblationSpec("full"),
    AblationSpec("code_only", {"format", "code"}),
    AblationSpec("vis_only", {"format", "vis"}),
    AblationSpec("full_g4", group_size=4),
)


@dataclass
class ExperimentResults:
    random_init: EvalMetrics
    base: EvalMetrics
    sft: EvalMetrics
    variants: dict = field(default_factory=dict)
    seconds: float = 0.0

    def table(self) -> dict:
        return {"random_init": self.random_init, "base": self.base, "sft": self.sft, **self.variants}


def run_reference_experiments(config: Optional[TrainerConfig] = None,
                              sampler: SamplerConfig = SamplerConfig(),
                              limits: ExecLimits = ExecLimits(), out_dir=None) -> ExperimentResults:
    """Random init, pretrained base, SFT and the GRPO variants on one split."""
    t0 = time.perf_counter()
    config = config or acceptance_config()
    train, held = standard_split(config.seed)
    random_init = PolicyParams.init(config.seed, config.hidden)
    base = base_policy(config)
    sft_state, _ = train_sft(config, train, init=base,
                             out_dir=None if out_dir is None else f"{out_dir}/sft")
    variants = run_ablation(config, ACCEPTANCE_VARIANTS, train, held, init=base,
                            sampler=sampler, limits=limits, out_dir=out_dir)
    return ExperimentResults(
        random_init=evaluate(random_init, held, limits=limits),
        base=evaluate(base, held, limits=limits),
        sft=evaluate(sft_state.params, held, limits=limits),
        variants=variants,
        seconds=time.perf_counter() - t0,
    )

