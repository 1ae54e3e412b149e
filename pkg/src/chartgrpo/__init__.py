"""Group-relative policy optimization for a toy text-to-chart task.

A closed-vocabulary chart DSL, a sandboxed interpreter, a two-stage
post-execution reward, a small numpy policy and a GRPO trainer with an SFT
baseline and an evaluation harness.
"""
from chartgrpo.dsl import ChartSpec, DslError, ErrorClass, Program, interpret, parse, render_svg
from chartgrpo.evaluation import AblationSpec, EvalMetrics, evaluate, run_ablation
from chartgrpo.policy import PolicyParams, SamplerConfig, sample_sequence, snapshot
from chartgrpo.rewards import RewardBreakdown, RewardEngine, RewardWeights
from chartgrpo.sandbox import ExecLimits, execute
from chartgrpo.tasks import TaskInstance, generate_dataset, generate_task
from chartgrpo.trainer import TrainerConfig, train_grpo, train_sft

__all__ = [
    "AblationSpec", "ChartSpec", "DslError", "ErrorClass", "EvalMetrics", "ExecLimits",
    "PolicyParams", "Program", "RewardBreakdown", "RewardEngine", "RewardWeights",
    "SamplerConfig", "TaskInstance", "TrainerConfig", "evaluate", "execute", "generate_dataset",
    "generate_task", "interpret", "parse", "render_svg", "run_ablation", "sample_sequence",
    "snapshot", "train_grpo", "train_sft",
]
