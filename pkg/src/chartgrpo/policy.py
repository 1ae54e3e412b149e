"""Autoregressive categorical policy over the DSL vocabulary.

logits = W2 @ tanh(W1 @ phi + b1) + b2, where phi encodes the query template,
the table schema (per-slot kinds plus the positions of the leading
categorical and numeric columns), the last K emitted tokens and a coarse position bucket.
Everything is float64 numpy with hand-written backprop.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from chartgrpo import dsl
from chartgrpo.tasks import TEMPLATES, TaskInstance

V = dsl.V
K_LAST = 3
N_SLOTS = 6
N_BUCKETS = 8
END_ID = dsl.TOKEN_ID["END"]

_OFF_SCHEMA = len(TEMPLATES)
_OFF_ROLES = _OFF_SCHEMA + 3 * N_SLOTS
N_ROLES = 3  # first categorical, first numeric, second numeric
_OFF_LAST = _OFF_ROLES + N_ROLES * N_SLOTS
_OFF_POS = _OFF_LAST + K_LAST * V
D = _OFF_POS + N_BUCKETS


def position_bucket(pos: int) -> int:
    return min(pos // 3, N_BUCKETS - 1)


def static_features(task: TaskInstance) -> np.ndarray:
    """Template one-hot, per-slot (categorical, numeric, absent) flags and
    one-hot positions of the leading categorical and numeric columns."""
    phi = np.zeros(D)
    phi[TEMPLATES.index(task.template_id)] = 1.0
    cols = task.table.columns
    for j in range(N_SLOTS):
        kind = 2 if j >= len(cols) else (0 if cols[j].kind == "categorical" else 1)
        phi[_OFF_SCHEMA + 3 * j + kind] = 1.0
    cats, nums = task.table.indices("categorical"), task.table.indices("numeric")
    for r, idx in enumerate((cats[:1], nums[:1], nums[1:2])):
        if idx:
            phi[_OFF_ROLES + r * N_SLOTS + idx[0]] = 1.0
    return phi


def context_matrix(task: TaskInstance, tokens: Sequence[int], static: Optional[np.ndarray] = None
                   ) -> np.ndarray:
    """Feature rows for predicting each token of `tokens` from its prefix."""
    n = len(tokens)
    base = static_features(task) if static is None else static
    phi = np.tile(base, (n, 1))
    rows = np.arange(n)
    for k in range(1, K_LAST + 1):
        valid = rows >= k
        prev = np.asarray(tokens, dtype=np.int64)[rows[valid] - k]
        phi[rows[valid], _OFF_LAST + (k - 1) * V + prev] = 1.0
    buckets = np.minimum(rows // 3, N_BUCKETS - 1)
    phi[rows, _OFF_POS + buckets] = 1.0
    return phi


class PolicyParams:
    """Flat float64 parameter vector with named views W1, b1, W2, b2."""

    def __init__(self, hidden: int = 64, theta: Optional[np.ndarray] = None, seed: int = 0):
        self.hidden = hidden
        self.seed = seed
        n = hidden * D + hidden + V * hidden + V
        if theta is None:
            theta = np.zeros(n)
        if theta.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {theta.shape}")
        self.theta = theta
        H = hidden
        i = 0
        self.W1 = theta[i:i + H * D].reshape(H, D); i += H * D
        self.b1 = theta[i:i + H]; i += H
        self.W2 = theta[i:i + V * H].reshape(V, H); i += V * H
        self.b2 = theta[i:i + V]

    @classmethod
    def init(cls, seed: int = 0, hidden: int = 64, scale: float = 0.05) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        n = hidden * D + hidden + V * hidden + V
        return cls(hidden, rng.uniform(-scale, scale, size=n), seed=seed)

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(self.hidden, np.zeros_like(self.theta), seed=self.seed)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.hidden, self.theta.copy(), seed=self.seed)

    @property
    def frozen(self) -> bool:
        return not self.theta.flags.writeable

    def __eq__(self, other) -> bool:
        return (isinstance(other, PolicyParams) and self.hidden == other.hidden
                and np.array_equal(self.theta, other.theta))


def snapshot(params: PolicyParams) -> PolicyParams:
    """Deep read-only copy."""
    out = params.copy()
    out.theta.flags.writeable = False
    return out


# --- forward / backward ----------------------------------------------------

def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def logits(params: PolicyParams, phi: np.ndarray) -> np.ndarray:
    return np.tanh(phi @ params.W1.T + params.b1) @ params.W2.T + params.b2


def forward(params: PolicyParams, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (hidden activations, logits) for a (T, D) feature matrix."""
    h = np.tanh(phi @ params.W1.T + params.b1)
    return h, h @ params.W2.T + params.b2


def backward(params: PolicyParams, phi: np.ndarray, h: np.ndarray, dz: np.ndarray) -> np.ndarray:
    """Gradient of a scalar w.r.t. the flat parameters given dScalar/dlogits."""
    g = params.zeros_like()
    g.W2[...] = dz.T @ h
    g.b2[...] = dz.sum(axis=0)
    da = (dz @ params.W2) * (1.0 - h * h)
    g.W1[...] = da.T @ phi
    g.b1[...] = da.sum(axis=0)
    return g.theta


def token_logprobs(params: PolicyParams, task: TaskInstance, tokens: Sequence[int]) -> np.ndarray:
    if len(tokens) == 0:
        return np.zeros(0)
    phi = context_matrix(task, tokens)
    lp = log_softmax(logits(params, phi))
    return lp[np.arange(len(tokens)), np.asarray(tokens)]


def sequence_logprob_and_grad(params: PolicyParams, tokens: Sequence[int], task: TaskInstance
                              ) -> tuple[float, np.ndarray]:
    if len(tokens) == 0:
        return 0.0, np.zeros_like(params.theta)
    y = np.asarray(tokens)
    phi = context_matrix(task, tokens)
    h, z = forward(params, phi)
    lp = log_softmax(z)
    rows = np.arange(len(y))
    dz = -np.exp(lp)
    dz[rows, y] += 1.0
    return float(lp[rows, y].sum()), backward(params, phi, h, dz)


# --- sampling --------------------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 0.7
    top_p: float = 0.9
    max_len: int = 64
    rng_seed: int = 0
    greedy: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")


def nucleus_probs(z: np.ndarray, temperature: float, top_p: float) -> np.ndarray:
    """Tempered probabilities restricted to the top-p nucleus, renormalized."""
    q = np.exp(log_softmax(z / temperature))
    if top_p >= 1.0:
        return q
    order = np.argsort(-q, axis=-1, kind="stable")
    sq = np.take_along_axis(q, order, axis=-1)
    before = np.cumsum(sq, axis=-1) - sq
    keep_sorted = before < top_p
    keep = np.zeros_like(keep_sorted)
    np.put_along_axis(keep, order, keep_sorted, axis=-1)
    q = np.where(keep, q, 0.0)
    return q / q.sum(axis=-1, keepdims=True)


def sample_batch(params: PolicyParams, task: TaskInstance, n: int, config: SamplerConfig,
                 rng: np.random.Generator) -> tuple[list[list[int]], list[np.ndarray]]:
    """Draw `n` sequences for one task. Logprobs are untempered model logprobs."""
    static = static_features(task)
    seqs: list[list[int]] = [[] for _ in range(n)]
    lps: list[list[float]] = [[] for _ in range(n)]
    active = list(range(n))
    pos = 0
    while active and pos < config.max_len:
        phi = np.tile(static, (len(active), 1))
        for k in range(1, K_LAST + 1):
            if pos >= k:
                prev = [seqs[i][pos - k] for i in active]
                phi[np.arange(len(active)), _OFF_LAST + (k - 1) * V + np.asarray(prev)] = 1.0
        phi[:, _OFF_POS + position_bucket(pos)] = 1.0
        z = logits(params, phi)
        lp = log_softmax(z)
        if config.greedy:
            choice = np.argmax(z, axis=-1)
        else:
            p = nucleus_probs(z, config.temperature, config.top_p)
            u = rng.random(len(active))
            cdf = np.cumsum(p, axis=-1)
            choice = np.minimum((cdf < u[:, None] * cdf[:, -1:]).sum(axis=-1), V - 1)
            # never land on a truncated token through float round-off
            bad = p[np.arange(len(active)), choice] == 0.0
            if bad.any():
                choice[bad] = np.argmax(p[bad], axis=-1)
        still = []
        for j, i in enumerate(active):
            tok = int(choice[j])
            seqs[i].append(tok)
            lps[i].append(float(lp[j, tok]))
            if tok != END_ID:
                still.append(i)
        active = still
        pos += 1
    return seqs, [np.asarray(x) for x in lps]


def sample_sequence(params: PolicyParams, task: TaskInstance, config: SamplerConfig,
                    rng: Optional[np.random.Generator] = None) -> tuple[list[int], np.ndarray]:
    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    seqs, lps = sample_batch(params, task, 1, config, rng)
    return seqs[0], lps[0]


def greedy_decode(params: PolicyParams, task: TaskInstance, max_len: int = 64) -> list[int]:
    return sample_sequence(params, task, SamplerConfig(greedy=True, max_len=max_len))[0]


# --- checkpoints -----------------------------------------------------------

_MAGIC = b"CGPOLICY"
_HEADER = struct.Struct("<8s5q")


def save_checkpoint(params: PolicyParams, path) -> None:
    """Header (magic, vocab size, D, H, K, seed) then W1, b1, W2, b2 as
    row-major little-endian float64."""
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, V, D, params.hidden, K_LAST, params.seed))
        f.write(params.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> PolicyParams:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, vocab, dim, hidden, k, seed = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint")
    if (vocab, dim, k) != (V, D, K_LAST):
        raise ValueError(f"{path}: checkpoint shape (V={vocab}, D={dim}, K={k}) "
                         f"does not match this build (V={V}, D={D}, K={K_LAST})")
    theta = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return PolicyParams(hidden, theta.copy(), seed=seed)
