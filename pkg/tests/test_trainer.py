import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chartgrpo import dsl
from chartgrpo.policy import PolicyParams, SamplerConfig, sample_batch, sequence_logprob_and_grad
from chartgrpo.rewards import RewardEngine
from chartgrpo.trainer import (
    AdamW,
    Group,
    TrainerConfig,
    TrainState,
    batch_schedule,
    clip_grad_norm,
    clipped_surrogate,
    grpo_loss_and_grad,
    learning_rate_at,
    normalize_advantages,
    random_emission,
    sft_step,
    train_grpo,
    train_sft,
)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=16))
def test_advantages_standardized(r):
    a = normalize_advantages(r)
    if np.std(r) >= 1e-8:
        assert abs(a.mean()) < 1e-9 and abs(a.std() - 1) < 1e-9
    else:
        assert np.all(a == 0)


def test_bessel_option():
    a = normalize_advantages([0.0, 1.0], bessel=True)
    assert np.allclose(a, [-1 / np.sqrt(2), 1 / np.sqrt(2)])
    with pytest.raises(ValueError):
        normalize_advantages([1.0])


def test_clip_multiplier():
    s, d = clipped_surrogate([1.5, 0.5, 1.1], [1.0, -1.0, 1.0], 0.2)
    assert np.allclose(s, [1.2, -0.8, 1.1]) and np.allclose(d, [0.0, 0.0, 1.0])


def _groups(params, tasks, rng, G=4):
    groups, advs = [], []
    for t in tasks:
        seqs, lps = sample_batch(params, t, G, SamplerConfig(1.0, 1.0, 10), rng)
        r = rng.random(G)
        groups.append(Group(t.task_id, seqs, lps, r, [None] * G, np.array([True] + [False] * (G - 1))))
        advs.append(normalize_advantages(r))
    return groups, advs, {t.task_id: t for t in tasks}


def test_grpo_loss_at_ratio_one_is_negative_mean_advantage(small_dataset, rng):
    params = PolicyParams.init(0, hidden=6, scale=0.3)
    groups, advs, tasks = _groups(params, small_dataset[:3], rng)
    loss, _, kl = grpo_loss_and_grad(params, params, params, groups, advs, tasks)
    # ratio = 1 and KL = 0; per-sequence token means of a constant advantage
    expected = -np.mean([np.mean(a) for a in advs])
    assert loss == pytest.approx(expected, abs=1e-12) and kl == pytest.approx(0.0, abs=1e-15)


def test_grpo_gradient_matches_reinforce_at_ratio_one(small_dataset, rng):
    """With old = params and beta = 0 the gradient is the REINFORCE estimator."""
    params = PolicyParams.init(1, hidden=6, scale=0.3)
    groups, advs, tasks = _groups(params, small_dataset[:2], rng)
    _, grad, _ = grpo_loss_and_grad(params, params, params, groups, advs, tasks, beta=0.0)
    expected = np.zeros_like(params.theta)
    for g, a in zip(groups, advs):
        for seq, ai in zip(g.completions, a):
            grad_lp = sequence_logprob_and_grad(params, seq, tasks[g.task_id])[1]
            expected -= ai * grad_lp / len(seq) / len(g.completions) / len(groups)
    assert np.allclose(grad, expected, atol=1e-12)


def test_mask_format_failures_drops_those_sequences(small_dataset, rng):
    params = PolicyParams.init(2, hidden=6, scale=0.3)
    groups, advs, tasks = _groups(params, small_dataset[:2], rng)
    _, g_all, _ = grpo_loss_and_grad(params, params, params, groups, advs, tasks)
    _, g_mask, _ = grpo_loss_and_grad(params, params, params, groups, advs, tasks,
                                      mask_format_failures=True)
    assert not np.allclose(g_all, g_mask)


def test_zero_gradient_is_a_no_op():
    opt = AdamW(5, weight_decay=0.1)
    theta = np.ones(5)
    opt.step(theta, np.zeros(5), lr=0.1)
    assert np.array_equal(theta, np.ones(5))


def test_adamw_first_step_moves_by_lr():
    opt = AdamW(3, weight_decay=0.0)
    theta = np.zeros(3)
    opt.step(theta, np.array([2.0, -3.0, 0.5]), lr=0.01)
    assert np.allclose(theta, [-0.01, 0.01, -0.01], atol=1e-9)


def test_grad_clip():
    g, norm = clip_grad_norm(np.array([0.3, 0.4]), 0.1)
    assert norm == pytest.approx(0.5) and np.allclose(g, [0.06, 0.08])
    g2, _ = clip_grad_norm(np.array([0.03, 0.04]), 0.1)
    assert np.array_equal(g2, [0.03, 0.04])


def test_schedule_warmup_then_cosine():
    lrs = [learning_rate_at(s, 100, 1.0, 0.05) for s in range(100)]
    assert lrs[0] == pytest.approx(0.2) and lrs[4] == pytest.approx(1.0)
    assert all(a >= b for a, b in zip(lrs[4:], lrs[5:]))
    assert lrs[-1] < 0.01


def test_batch_schedule_covers_epochs():
    seen = np.concatenate([batch_schedule(10, 4, 0, s) for s in range(5)])
    assert sorted(seen[:10]) == list(range(10)) and sorted(seen[10:20]) == list(range(10))


def test_random_emission_is_well_formed(small_dataset, rng):
    from chartgrpo.rewards import format_check
    for t in small_dataset:
        assert format_check(random_emission(t, rng)) is not None
        on = format_check(random_emission(t, rng, on_task=True))
        assert dsl.parse(on.program_tokens).intent == t.gold_intent


def test_sft_reduces_nll(small_dataset):
    cfg = TrainerConfig(learning_rate=0.01, total_steps=100, grad_norm_clip=1.0, adam_eps=1e-8, hidden=16)
    state = TrainState.fresh(cfg)
    batch = small_dataset[:10]
    losses = [sft_step(state, batch) for _ in range(100)]
    assert losses[-1] < 0.5 * losses[0]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(group_size=1)
    with pytest.raises(ValueError):
        TrainerConfig(clip_eps=0.0)


def _tiny():
    return TrainerConfig(seed=5, group_size=4, total_steps=3, prompts_per_batch=2, hidden=8)


def test_grpo_training_is_deterministic_and_keeps_reference(small_dataset, tmp_path):
    cfg = _tiny()
    init = PolicyParams.init(5, hidden=8, scale=0.3)
    s1, h1 = train_grpo(cfg, small_dataset, RewardEngine(), out_dir=tmp_path / "a", init=init)
    s2, h2 = train_grpo(cfg, small_dataset, RewardEngine(), out_dir=tmp_path / "b", init=init)
    assert h1 == h2 and s1.params == s2.params and len(h1) == 3
    assert s1.ref == init and s1.ref.frozen
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "initial.ckpt").exists()


def test_sft_training_writes_losses(small_dataset, tmp_path):
    cfg = dataclasses.replace(_tiny(), total_steps=4)
    state, losses = train_sft(cfg, small_dataset, out_dir=tmp_path)
    assert len(losses) == 4 and (tmp_path / "sft_loss.csv").exists()
