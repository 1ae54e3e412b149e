"""GRPO training loop, SFT baseline and the shared AdamW optimizer."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from chartgrpo import dsl
from chartgrpo.policy import (
    PolicyParams,
    SamplerConfig,
    backward,
    context_matrix,
    forward,
    log_softmax,
    sample_batch,
    save_checkpoint,
    snapshot,
)
from chartgrpo.rewards import RewardBreakdown, RewardEngine, RewardWeights
from chartgrpo.tasks import TaskInstance, generate_dataset

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    kl_beta: float = 0.04
    learning_rate: float = 0.01
    weight_decay: float = 0.1
    adam_eps: float = 1e-4
    warmup_fraction: float = 0.05
    grad_norm_clip: float = 0.1
    inner_epochs: int = 1
    total_steps: int = 300
    prompts_per_batch: int = 8
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    mask_format_failures_from_loss: bool = False
    bessel_std: bool = False
    hidden: int = 64
    pretrain_steps: int = 0
    pretrain_on_task_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be positive")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be non-negative")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be at least 1")
        if self.total_steps < 1 or self.prompts_per_batch < 1:
            raise ValueError("total_steps and prompts_per_batch must be positive")


@dataclass(frozen=True)
class StepMetrics:
    step: int
    mean_reward: float
    reward_std: float
    format_reward_rate: float
    mean_kl: float
    grad_norm: float
    loss: float
    mean_completion_length: float
    learning_rate: float

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Group:
    task_id: int
    completions: list
    old_logprobs: list
    rewards: np.ndarray
    breakdowns: list
    format_mask: np.ndarray  # True where the format gate failed


# --- advantages and loss ---------------------------------------------------

def normalize_advantages(rewards: Sequence[float], bessel: bool = False) -> np.ndarray:
    """(r - mean) / std within the group; all zeros when std < 1e-8."""
    r = np.asarray(rewards, dtype=np.float64)
    if len(r) < 2:
        raise ValueError("need at least two rewards")
    centered = r - r.mean()
    sigma = float(np.sqrt(np.sum(centered ** 2) / (len(r) - 1 if bessel else len(r))))
    if sigma < 1e-8:
        return np.zeros_like(r)
    return centered / sigma


def clipped_surrogate(ratio, adv, eps):
    """Elementwise min(ratio*A, clip(ratio)*A) and its derivative w.r.t. ratio."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    surr = np.minimum(unclipped, clipped)
    # the unclipped branch is selected (and carries gradient) unless the clip binds
    active = np.where(adv >= 0, ratio <= 1.0 + eps, ratio >= 1.0 - eps)
    return surr, np.where(active, adv, 0.0)


@dataclass
class _Batch:
    phi: np.ndarray
    tokens: np.ndarray
    seq_index: np.ndarray
    weight: np.ndarray  # per-token averaging weight: 1/(n_groups * G * |o_i|)
    adv: np.ndarray


def _assemble(groups: Sequence[Group], tasks: dict, advantages: Sequence[np.ndarray],
              mask_failures: bool) -> _Batch:
    phis, toks, seq_idx, weights, advs = [], [], [], [], []
    n_groups = len(groups)
    s = 0
    for g, adv in zip(groups, advantages):
        task = tasks[g.task_id]
        G = len(g.completions)
        for i, seq in enumerate(g.completions):
            if len(seq) == 0:
                continue
            w = 0.0 if (mask_failures and g.format_mask[i]) else 1.0 / (n_groups * G * len(seq))
            phis.append(context_matrix(task, seq))
            toks.append(np.asarray(seq))
            seq_idx.append(np.full(len(seq), s))
            weights.append(np.full(len(seq), w))
            advs.append(np.full(len(seq), adv[i]))
            s += 1
    return _Batch(np.vstack(phis), np.concatenate(toks), np.concatenate(seq_idx),
                  np.concatenate(weights), np.concatenate(advs))


def grpo_loss_and_grad(params: PolicyParams, old: PolicyParams, ref: PolicyParams,
                       groups: Sequence[Group], advantages: Sequence[np.ndarray],
                       tasks: dict, eps: float = 0.2, beta: float = 0.04,
                       mask_format_failures: bool = False, _batch: Optional[_Batch] = None
                       ) -> tuple[float, np.ndarray, float]:
    """Negative clipped surrogate plus beta * exact per-token KL(pi || ref).

    Tokens are averaged within a sequence, sequences within a group and
    groups within the batch. Returns (loss, gradient, mean KL).
    """
    b = _batch or _assemble(groups, tasks, advantages, mask_format_failures)
    rows = np.arange(len(b.tokens))
    h, z = forward(params, b.phi)
    lp = log_softmax(z)
    p = np.exp(lp)
    lp_old = log_softmax(forward(old, b.phi)[1])[rows, b.tokens]
    lq = log_softmax(forward(ref, b.phi)[1])
    lp_tok = lp[rows, b.tokens]
    ratio = np.exp(lp_tok - lp_old)
    surr, dsurr_dratio = clipped_surrogate(ratio, b.adv, eps)
    diff = lp - lq
    kl = np.sum(p * diff, axis=-1)
    objective = float(np.sum(b.weight * (surr - beta * kl)))
    # d objective / d logits, then negate for the loss
    coef = b.weight * dsurr_dratio * ratio
    dz = -p * coef[:, None]
    dz[rows, b.tokens] += coef
    dz -= (beta * b.weight)[:, None] * p * (diff - kl[:, None])
    grad = backward(params, b.phi, h, -dz)
    wsum = float(b.weight.sum())
    mean_kl = float(np.sum(b.weight * kl) / wsum) if wsum > 0 else 0.0
    return -objective, grad, mean_kl


def sft_loss_and_grad(params: PolicyParams, sequences: Sequence[Sequence[int]],
                      tasks: Sequence[TaskInstance]) -> tuple[float, np.ndarray]:
    """Mean per-token negative log-likelihood over all reference tokens."""
    phi = np.vstack([context_matrix(t, s) for t, s in zip(tasks, sequences)])
    y = np.concatenate([np.asarray(s) for s in sequences])
    rows = np.arange(len(y))
    h, z = forward(params, phi)
    lp = log_softmax(z)
    n = len(y)
    dz = np.exp(lp)
    dz[rows, y] -= 1.0
    return float(-lp[rows, y].sum() / n), backward(params, phi, h, dz / n)


# --- optimizer -------------------------------------------------------------

def learning_rate_at(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear warm-up then cosine decay to zero."""
    warm = int(math.ceil(warmup_fraction * total_steps))
    if step < warm:
        return base_lr * (step + 1) / warm
    span = max(total_steps - warm, 1)
    progress = min((step - warm) / span, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, n: int, weight_decay: float = 0.1, betas=(0.9, 0.999), eps: float = 1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> None:
        # an exactly-zero gradient carries no signal; leave params and moments alone
        if not np.any(grad):
            return
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        theta -= lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * theta)

    def state_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t}

    def load_state_dict(self, state: dict) -> None:
        self.m, self.v, self.t = np.array(state["m"]), np.array(state["v"]), int(state["t"])


# --- rollouts and training state -------------------------------------------

def group_rng(seed: int, step: int, task_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, task_id]))


def rollout_group(old: PolicyParams, task: TaskInstance, G: int, sampler: SamplerConfig,
                  engine: RewardEngine, rng: np.random.Generator) -> Group:
    if G < 2:
        raise ValueError("group size must be at least 2")
    seqs, lps = sample_batch(old, task, G, sampler, rng)
    breakdowns = [engine.score(s, task) for s in seqs]
    return Group(
        task_id=task.task_id,
        completions=seqs,
        old_logprobs=lps,
        rewards=np.array([b.total for b in breakdowns]),
        breakdowns=breakdowns,
        format_mask=np.array([not b.format_ok for b in breakdowns]),
    )


@dataclass
class TrainState:
    params: PolicyParams
    ref: PolicyParams
    optimizer: AdamW
    config: TrainerConfig
    step: int = 0

    @classmethod
    def fresh(cls, config: TrainerConfig, params: Optional[PolicyParams] = None) -> "TrainState":
        params = params.copy() if params is not None else PolicyParams.init(config.seed, config.hidden)
        return cls(params=params, ref=snapshot(params),
                   optimizer=AdamW(params.theta.size, config.weight_decay, eps=config.adam_eps),
                   config=config)

    def lr(self) -> float:
        c = self.config
        return learning_rate_at(self.step, c.total_steps, c.learning_rate, c.warmup_fraction)

    def apply(self, grad: np.ndarray) -> tuple[float, float]:
        if not np.all(np.isfinite(grad)):
            raise TrainingDiverged(f"non-finite gradient at step {self.step}")
        clipped, norm = clip_grad_norm(grad, self.config.grad_norm_clip)
        lr = self.lr()
        self.optimizer.step(self.params.theta, clipped, lr)
        return norm, lr


def train_step(state: TrainState, batch: Sequence[TaskInstance], engine: RewardEngine,
               sampler: SamplerConfig = SamplerConfig()) -> StepMetrics:
    """One GRPO iteration over `batch`; mutates `state` and returns metrics."""
    c = state.config
    old = snapshot(state.params)
    ordered = sorted(batch, key=lambda t: t.task_id)
    tasks = {t.task_id: t for t in ordered}
    groups = [rollout_group(old, t, c.group_size, sampler, engine, group_rng(c.seed, state.step, t.task_id))
              for t in ordered]
    advs = [normalize_advantages(g.rewards, c.bessel_std) for g in groups]
    b = _assemble(groups, tasks, advs, c.mask_format_failures_from_loss)
    loss = kl = norm = lr = 0.0
    for _ in range(c.inner_epochs):
        loss, grad, kl = grpo_loss_and_grad(state.params, old, state.ref, groups, advs, tasks,
                                            c.clip_eps, c.kl_beta, _batch=b)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {state.step}")
        norm, lr = state.apply(grad)
    rewards = np.concatenate([g.rewards for g in groups])
    metrics = StepMetrics(
        step=state.step,
        mean_reward=float(rewards.mean()),
        reward_std=float(np.mean([g.rewards.std() for g in groups])),
        format_reward_rate=float(np.mean([not m for g in groups for m in g.format_mask])),
        mean_kl=kl,
        grad_norm=norm,
        loss=loss,
        mean_completion_length=float(np.mean([len(s) for g in groups for s in g.completions])),
        learning_rate=lr,
    )
    state.step += 1
    return metrics


def sft_step(state: TrainState, batch: Sequence[TaskInstance],
             sequences: Optional[Sequence[Sequence[int]]] = None) -> float:
    """One optimizer step on the mean token NLL of reference outputs."""
    seqs = sequences if sequences is not None else [t.reference_output() for t in batch]
    loss, grad = sft_loss_and_grad(state.params, seqs, batch)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite SFT loss at step {state.step}")
    state.apply(grad)
    state.step += 1
    return loss


# --- base-policy pretraining ------------------------------------------------------

def _random_answer(rng: np.random.Generator) -> list[int]:
    tid = dsl.TOKEN_ID
    if rng.random() < 0.5:
        return [tid[f"CAT{int(rng.integers(0, 8))}"]]
    answer = [tid[f"D{int(d)}"] for d in rng.integers(0, 10, size=int(rng.integers(1, 4)))]
    if rng.random() < 0.5:
        answer += [tid["DOT"], tid[f"D{int(rng.integers(0, 10))}"]]
    return answer


def random_emission(task: TaskInstance, rng: np.random.Generator,
                    on_task: bool = False) -> list[int]:
    """A well-formed emission with a random answer.

    With `on_task` the chart encodes the query's intended chart type, columns
    and aggregation; otherwise those are drawn at random following generic
    charting habits (numeric y axis, aggregation on grouped charts). Title and
    axis labels are decorated at random either way.
    """
    tid = dsl.TOKEN_ID
    width = len(task.table.columns)
    numeric = task.table.indices("numeric")

    def col() -> int:
        return int(rng.integers(0, width))

    if on_task:
        chart, x, y, agg = task.gold_intent
        agg = None if agg == "NONE" else agg
    else:
        chart = dsl.CHART_TYPES[int(rng.integers(0, 4))]
        x = col()
        y = numeric[int(rng.integers(0, len(numeric)))] if rng.random() < 0.85 else col()
        grouped = chart in ("BAR", "PIE")
        agg = (dsl.AGGREGATIONS[int(rng.integers(0, 5))]
               if rng.random() < (0.8 if grouped else 0.2) else None)
    prog = dsl.Program(
        chart_type=chart,
        x_col=x,
        y_col=y,
        aggregation=agg,
        title=int(rng.integers(0, 8)) if rng.random() < 0.7 else None,
        xlabel=(x if rng.random() < 0.8 else col()) if rng.random() < 0.7 else None,
        ylabel=(y if rng.random() < 0.8 else col()) if rng.random() < 0.7 else None,
    )
    return ([tid["BEGIN"], tid["ANSWER"]] + _random_answer(rng) + [tid["CODE"]]
            + prog.to_tokens() + [tid["END"]])


def pretrain_corpus(seed: int, n_tasks: int = 400) -> list[TaskInstance]:
    """Pretraining tables and queries, disjoint from any RL or eval split."""
    return generate_dataset(seed ^ 0x5A5A5A, n_tasks, start_id=-n_tasks)


def pretrain_base(params: PolicyParams, steps: int, seed: int = 0, on_task_fraction: float = 0.0,
                  batch_size: int = 16, lr: float = 0.01) -> PolicyParams:
    """Stand-in for a pretrained base model: SFT on random well-formed
    emissions over a separate task corpus. A fraction of the emissions chart
    the intended columns; answers are always random."""
    if steps <= 0:
        return params.copy()
    corpus = pretrain_corpus(seed)
    # dense supervised signal: plain Adam epsilon, unlike the RL default
    cfg = TrainerConfig(learning_rate=lr, total_steps=steps, grad_norm_clip=1.0, adam_eps=1e-8,
                        seed=seed)
    state = TrainState.fresh(cfg, params)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    for _ in range(steps):
        idx = rng.integers(0, len(corpus), size=batch_size)
        batch = [corpus[i] for i in idx]
        seqs = [random_emission(t, rng, on_task=rng.random() < on_task_fraction) for t in batch]
        sft_step(state, batch, seqs)
    return state.params


def batch_schedule(n_tasks: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices for `step`: epochs of seeded permutations, read in order."""
    start = step * batch_size
    out = []
    while len(out) < batch_size:
        epoch, offset = divmod(start + len(out), n_tasks)
        perm = np.random.default_rng(np.random.SeedSequence([seed, 0xE90C, epoch])).permutation(n_tasks)
        take = min(batch_size - len(out), n_tasks - offset)
        out.extend(perm[offset:offset + take].tolist())
    return np.asarray(out)


def base_policy(config: TrainerConfig) -> PolicyParams:
    """Seeded random init, followed by base pretraining when configured."""
    params = PolicyParams.init(config.seed, config.hidden)
    return pretrain_base(params, config.pretrain_steps, seed=config.seed,
                         on_task_fraction=config.pretrain_on_task_fraction)


def write_metrics_header(path) -> None:
    with open(path, "w", newline="") as f:
        csv.writer(f).writerow(StepMetrics.field_names())


def append_metrics(path, m: StepMetrics) -> None:
    with open(path, "a", newline="") as f:
        csv.writer(f).writerow([repr(v) if isinstance(v, float) else v for v in asdict(m).values()])


def save_trainer_state(state: TrainState, out_dir) -> None:
    out_dir = Path(out_dir)
    save_checkpoint(state.params, out_dir / "policy.ckpt")
    save_checkpoint(state.ref, out_dir / "reference.ckpt")
    np.savez(out_dir / "optimizer.npz", m=state.optimizer.m, v=state.optimizer.v)
    (out_dir / "trainer_state.json").write_text(json.dumps(
        {"step": state.step, "adam_t": state.optimizer.t, "total_steps": state.config.total_steps,
         "learning_rate": state.lr()}, indent=2) + "\n")


def train_grpo(config: TrainerConfig, tasks: Sequence[TaskInstance], engine: RewardEngine,
               sampler: SamplerConfig = SamplerConfig(), out_dir=None,
               init: Optional[PolicyParams] = None) -> tuple[TrainState, list[StepMetrics]]:
    params = init if init is not None else base_policy(config)
    state = TrainState.fresh(config, params)
    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(params, out_dir / "initial.ckpt")
        metrics_path = out_dir / "metrics.csv"
        write_metrics_header(metrics_path)
    history = []
    for step in range(config.total_steps):
        batch = [tasks[i] for i in batch_schedule(len(tasks), config.prompts_per_batch, config.seed, step)]
        m = train_step(state, batch, engine, sampler)
        history.append(m)
        if metrics_path is not None:
            append_metrics(metrics_path, m)
        if step % 50 == 0:
            log.info("step %d reward %.3f format %.2f kl %.4f", step, m.mean_reward,
                     m.format_reward_rate, m.mean_kl)
    if out_dir is not None:
        save_trainer_state(state, out_dir)
    return state, history


def train_sft(config: TrainerConfig, tasks: Sequence[TaskInstance], out_dir=None,
              init: Optional[PolicyParams] = None) -> tuple[TrainState, list[float]]:
    """SFT baseline with the same optimizer, schedule and batch budget as GRPO."""
    params = init if init is not None else base_policy(config)
    state = TrainState.fresh(config, params)
    losses = []
    for step in range(config.total_steps):
        batch = [tasks[i] for i in batch_schedule(len(tasks), config.prompts_per_batch, config.seed, step)]
        losses.append(sft_step(state, batch))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "sft_loss.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "nll"])
            w.writerows([i, repr(l)] for i, l in enumerate(losses))
        save_trainer_state(state, out_dir)
    return state, losses
