"""Evaluation protocol, reward/group-size ablations and run reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from chartgrpo.policy import PolicyParams, SamplerConfig, sample_batch
from chartgrpo.rewards import REWARD_COMPONENTS, RewardBreakdown, RewardEngine
from chartgrpo.sandbox import ExecLimits
from chartgrpo.tasks import TaskInstance
from chartgrpo.trainer import StepMetrics, TrainerConfig, train_grpo

PASS_THRESHOLD = 3.5  # on the 5-point scale


@dataclass(frozen=True)
class SampleResult:
    task_id: int
    tokens: tuple
    breakdown: RewardBreakdown

    @property
    def exec_ok(self) -> bool:
        return bool(self.breakdown.i_exec)

    @property
    def answer_match(self) -> bool:
        return self.breakdown.r_text == 1.0

    @property
    def readability_5(self) -> float:
        return 5.0 * self.breakdown.readability

    @property
    def correctness_5(self) -> float:
        return 5.0 * self.breakdown.chart_correctness

    @property
    def passed(self) -> bool:
        return sample_passes(self.exec_ok, self.answer_match,
                             self.breakdown.readability, self.breakdown.chart_correctness)


def sample_passes(exec_ok: bool, answer_match: bool, readability: float, correctness: float) -> bool:
    """Pass rule on normalized [0, 1] subscores; 3.5 of 5 is exactly 0.7."""
    thr = PASS_THRESHOLD / 5.0 - 1e-12
    return bool(exec_ok and answer_match and readability >= thr and correctness >= thr)


@dataclass(frozen=True)
class EvalMetrics:
    n_samples: int
    exec_success_pct: float
    answer_match_pct: float
    readability_1to5: float
    chart_correctness_1to5: float
    final_pass_rate_pct: float

    def __post_init__(self):
        if self.n_samples and self.final_pass_rate_pct > min(self.exec_success_pct,
                                                             self.answer_match_pct) + 1e-9:
            raise AssertionError(f"pass rate exceeds a component rate: {self}")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def aggregate(results: Sequence[SampleResult]) -> EvalMetrics:
    n = len(results)
    if n == 0:
        return EvalMetrics(0, 0.0, 0.0, 0.0, 0.0, 0.0)
    return EvalMetrics(
        n_samples=n,
        exec_success_pct=100.0 * sum(r.exec_ok for r in results) / n,
        answer_match_pct=100.0 * sum(r.answer_match for r in results) / n,
        readability_1to5=math.fsum(r.readability_5 for r in results) / n,
        chart_correctness_1to5=math.fsum(r.correctness_5 for r in results) / n,
        final_pass_rate_pct=100.0 * sum(r.passed for r in results) / n,
    )


def evaluate_samples(policy: PolicyParams, dataset: Sequence[TaskInstance],
                     sampler: SamplerConfig = SamplerConfig(greedy=True), judges=None,
                     limits: ExecLimits = ExecLimits()) -> list[SampleResult]:
    """One completion per task: greedy by default, else seeded per task."""
    if not dataset:
        raise ValueError("evaluation dataset is empty")
    engine = RewardEngine(judges=judges, limits=limits)
    out = []
    for task in dataset:
        rng = np.random.default_rng(np.random.SeedSequence([sampler.rng_seed, task.task_id]))
        seqs, _ = sample_batch(policy, task, 1, sampler, rng)
        out.append(SampleResult(task.task_id, tuple(seqs[0]), engine.score(seqs[0], task)))
    return out


def evaluate(policy: PolicyParams, dataset: Sequence[TaskInstance],
             sampler: SamplerConfig = SamplerConfig(greedy=True), judges=None,
             limits: ExecLimits = ExecLimits()) -> EvalMetrics:
    return aggregate(evaluate_samples(policy, dataset, sampler, judges, limits))


# --- ablations -------------------------------------------------------------

@dataclass(frozen=True)
class AblationSpec:
    variant_id: str
    enabled_rewards: frozenset = frozenset(REWARD_COMPONENTS)
    group_size: int = 8

    def __post_init__(self):
        object.__setattr__(self, "enabled_rewards", frozenset(self.enabled_rewards))
        unknown = self.enabled_rewards - set(REWARD_COMPONENTS)
        if unknown:
            raise ValueError(f"{self.variant_id}: unknown reward components {sorted(unknown)}")
        if self.group_size < 2:
            raise ValueError(f"{self.variant_id}: group_size must be at least 2")


# the reward-component rows of the ablation table
STANDARD_REWARD_VARIANTS = [
    AblationSpec("full", REWARD_COMPONENTS),
    AblationSpec("no_format", {"text", "code", "vis"}),
    AblationSpec("no_answer", {"format", "code", "vis"}),
    AblationSpec("no_code_vis", {"format", "text"}),
    AblationSpec("format_only", {"format"}),
    AblationSpec("answer_only", {"format", "text"}),
    AblationSpec("code_only", {"format", "code"}),
    AblationSpec("vis_only", {"format", "vis"}),
]


def run_ablation(base_config: TrainerConfig, variants: Sequence[AblationSpec],
                 train_tasks: Sequence[TaskInstance], eval_tasks: Sequence[TaskInstance],
                 budget: Optional[int] = None, init: Optional[PolicyParams] = None,
                 sampler: SamplerConfig = SamplerConfig(), limits: ExecLimits = ExecLimits(),
                 out_dir=None) -> dict[str, EvalMetrics]:
    """Train each variant from the same init and evaluate on the same tasks.

    `budget` is the total number of sampled completions per run; group-size
    variants trade prompts per batch against completions per prompt.
    """
    if not variants:
        return {}
    if budget is None:
        budget = base_config.total_steps * base_config.prompts_per_batch * base_config.group_size
    results = {}
    for v in variants:
        prompts = max(1, budget // (base_config.total_steps * v.group_size))
        cfg = dataclasses.replace(base_config, group_size=v.group_size, prompts_per_batch=prompts)
        engine = RewardEngine(cfg.reward_weights, limits=limits, enabled=v.enabled_rewards)
        run_dir = None if out_dir is None else Path(out_dir) / v.variant_id
        state, _ = train_grpo(cfg, train_tasks, engine, sampler, out_dir=run_dir, init=init)
        results[v.variant_id] = evaluate(state.params, eval_tasks, limits=limits)
    if out_dir is not None:
        write_eval_table(results, Path(out_dir) / "ablation.json")
    return results


def write_eval_table(table: dict, path) -> None:
    Path(path).write_text(json.dumps({k: v.as_dict() for k, v in table.items()}, indent=2) + "\n")


def format_eval_table(table: dict, one_to_five: bool = False) -> str:
    """Fixed-width comparison table; `one_to_five` labels the score columns 1-5."""
    scale = "1-5" if one_to_five else "0-5"
    head = (f"{'variant':<16}{'n':>5}{'exec%':>8}{'ans%':>8}"
            f"{'read(' + scale + ')':>12}{'corr(' + scale + ')':>12}{'pass%':>8}")
    lines = [head, "-" * len(head)]
    for name, m in table.items():
        lines.append(f"{name:<16}{m.n_samples:>5}{m.exec_success_pct:>8.1f}{m.answer_match_pct:>8.1f}"
                     f"{m.readability_1to5:>12.2f}{m.chart_correctness_1to5:>12.2f}"
                     f"{m.final_pass_rate_pct:>8.1f}")
    return "\n".join(lines)


# --- reports -------------------------------------------------------------

PLOT_SERIES = [
    ("reward", ["mean_reward", "reward_std"]),
    ("kl", ["mean_kl"]),
    ("grad_norm", ["grad_norm"]),
    ("completion_length", ["mean_completion_length"]),
    ("format_rate", ["format_reward_rate"]),
    ("loss_lr", ["loss", "learning_rate"]),
]


class ReportError(RuntimeError):
    pass


def read_metrics_csv(path) -> list[StepMetrics]:
    path = Path(path)
    if not path.exists():
        raise ReportError(f"{path}: metrics log not found")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != StepMetrics.field_names():
            raise ReportError(f"{path}: unexpected header {header}")
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            try:
                rows.append(StepMetrics(int(rec[0]), *(float(v) for v in rec[1:])))
            except (ValueError, TypeError, IndexError) as e:
                raise ReportError(f"{path}:{line_no}: corrupt row ({e})") from e
            if len(rec) != len(header):
                raise ReportError(f"{path}:{line_no}: expected {len(header)} fields")
    if not rows:
        raise ReportError(f"{path}: metrics log is empty")
    return rows


def _plot(rows: Sequence[StepMetrics], names: Sequence[str], title: str) -> str:
    import io

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [r.step for r in rows]
    with matplotlib.rc_context({"svg.hashsalt": "chartgrpo", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        axes = [ax]
        for i, name in enumerate(names):
            a = ax if i == 0 else ax.twinx()
            if i:
                axes.append(a)
            a.plot(steps, [getattr(r, name) for r in rows], color=f"C{i}", label=name)
            a.set_ylabel(name)
        ax.set_xlabel("step")
        ax.set_title(title)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def report(run_dir) -> str:
    """Write summary.md and one SVG per tracked series into `run_dir`."""
    run_dir = Path(run_dir)
    rows = read_metrics_csv(run_dir / "metrics.csv")
    evals = {}
    for p in sorted(run_dir.glob("*.json")):
        if p.name == "trainer_state.json":
            continue
        try:
            data = json.loads(p.read_text())
            if all(isinstance(v, dict) for v in data.values()):
                evals[p.stem] = {k: EvalMetrics(**v) for k, v in data.items()}
            else:
                evals[p.stem] = {p.stem: EvalMetrics(**data)}
        except (ValueError, TypeError) as e:
            raise ReportError(f"{p}: corrupt evaluation table ({e})") from e
    svgs = {f"plot_{key}.svg": _plot(rows, names, key.replace("_", " ")) for key, names in PLOT_SERIES}

    lines = [f"# Run summary: {run_dir.name}", "", f"steps logged: {len(rows)}", "",
             "| series | first | last | min | max | mean |", "|---|---|---|---|---|---|"]
    for name in StepMetrics.field_names()[1:]:
        vals = np.array([getattr(r, name) for r in rows])
        lines.append(f"| {name} | {vals[0]:.4g} | {vals[-1]:.4g} | {vals.min():.4g} | "
                     f"{vals.max():.4g} | {vals.mean():.4g} |")
    for name, table in evals.items():
        lines += ["", f"## {name}", "", "```", format_eval_table(table), "```"]
    summary = "\n".join(lines) + "\n"
    for fname, text in svgs.items():
        (run_dir / fname).write_text(text)
    (run_dir / "summary.md").write_text(summary)
    return summary
