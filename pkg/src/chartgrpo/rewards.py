"""Two-stage reward: a structural format gate, then a weighted composite of
answer, code and chart rewards computed after executing the program."""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import Optional, Protocol, Sequence

from chartgrpo import dsl
from chartgrpo.sandbox import ExecLimits, ExecOutcome, execute
from chartgrpo.tasks import SUITABLE_CHARTS, TaskInstance

REWARD_COMPONENTS = ("format", "text", "code", "vis")

_BEGIN, _ANSWER, _CODE, _END, _SHOW = (dsl.TOKEN_ID[t] for t in ("BEGIN", "ANSWER", "CODE", "END", "SHOW"))
_ANSWER_IDS = frozenset(dsl.TOKEN_ID[t] for t in dsl.ANSWER_TOKENS)


@dataclass(frozen=True)
class StructuredOutput:
    answer_tokens: tuple
    program_tokens: tuple

    @property
    def answer(self) -> str:
        return dsl.tokens_to_answer(self.answer_tokens)


def format_check(tokens: Sequence[int]) -> Optional[StructuredOutput]:
    """``BEGIN ANSWER <answer tokens>+ CODE <program> SHOW END`` or None."""
    toks = list(tokens)
    if len(toks) < 6 or toks[0] != _BEGIN or toks[1] != _ANSWER or toks[-1] != _END:
        return None
    try:
        code_at = toks.index(_CODE, 2)
    except ValueError:
        return None
    answer = toks[2:code_at]
    program = toks[code_at + 1:-1]
    if not answer or any(t not in _ANSWER_IDS for t in answer):
        return None
    if not program or program[-1] != _SHOW:
        return None
    return StructuredOutput(tuple(answer), tuple(program))


def lenient_extract(tokens: Sequence[int]) -> Optional[StructuredOutput]:
    """Best-effort split used only when the format gate is switched off."""
    toks = list(tokens)
    if _ANSWER not in toks:
        return None
    start = toks.index(_ANSWER) + 1
    code_at = toks.index(_CODE, start) if _CODE in toks[start:] else len(toks)
    answer = [t for t in toks[start:code_at] if t in _ANSWER_IDS]
    rest = toks[code_at + 1:]
    program = rest[:rest.index(_END)] if _END in rest else rest
    return StructuredOutput(tuple(answer), tuple(program))


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 0.50
    beta: float = 0.25
    gamma: float = 0.25

    def __post_init__(self):
        for w in (self.alpha, self.beta, self.gamma):
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"reward weights must lie in [0, 1], got {self}")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-12:
            raise ValueError(f"reward weights must sum to 1, got {self}")


@dataclass(frozen=True)
class RewardBreakdown:
    format_ok: bool = False
    r_text: float = 0.0
    i_exec: int = 0
    i_intent: int = 0
    r_code: float = 0.0
    readability: float = 0.0
    chart_correctness: float = 0.0
    r_vis: float = 0.0
    total: float = 0.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_record(self) -> list:
        return list(astuple(self))


def _parse_number(s: str) -> Optional[float]:
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def text_reward(answer: str, gold: str, answer_kind: str) -> float:
    """1.0 within 1% relative error, 0.5 within 5%, else 0; categorical answers
    must match exactly up to case."""
    if answer_kind == "categorical":
        return 1.0 if answer.strip().lower() == gold.strip().lower() else 0.0
    a, g = _parse_number(answer), _parse_number(gold)
    if a is None or g is None:
        return 0.0
    if g == 0.0:
        return 1.0 if a == 0.0 else 0.0
    rel = abs(a - g) / abs(g)
    if rel <= 0.01:
        return 1.0
    if rel <= 0.05:
        return 0.5
    return 0.0


def intent_match(program_tokens: Sequence[int], gold_intent: tuple) -> int:
    prog = dsl.parse(program_tokens)
    if isinstance(prog, dsl.DslError):
        return 0
    return int(prog.intent == tuple(gold_intent))


def code_reward(outcome: ExecOutcome, program_tokens: Sequence[int], gold_intent: tuple,
                intent_judge=intent_match) -> tuple[int, int, float]:
    i_exec = int(outcome.ok)
    i_intent = int(intent_judge(program_tokens, gold_intent))
    return i_exec, i_intent, (i_exec + i_intent) / 2


def oracle_points(task: TaskInstance) -> list[tuple]:
    """Gold chart points recomputed from the raw rows, without the interpreter."""
    chart, x, y, agg = task.gold_intent
    rows = task.table.rows
    if chart in ("LINE", "SCATTER") or agg == "NONE":
        return [(r[x], float(r[y])) for r in rows]
    keys, buckets = [], {}
    for r in rows:
        if r[x] not in buckets:
            keys.append(r[x])
            buckets[r[x]] = []
        buckets[r[x]].append(r[y])
    out = []
    for k in keys:
        vals = buckets[k]
        if agg == "COUNT":
            v = float(len(vals))
        elif agg == "SUM":
            v = math.fsum(vals)
        elif agg == "MEAN":
            v = math.fsum(vals) / len(vals)
        elif agg == "MAX":
            v = max(vals)
        else:
            v = min(vals)
        out.append((k, float(v)))
    return out


def _close(a: float, b: float, rel: float = 1e-9) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b)) or a == b


def _match_points(plotted: Sequence[tuple], gold: Sequence[tuple]) -> tuple[bool, bool]:
    """(every plotted point is a gold point, every gold point is plotted)."""
    unused = list(gold)
    integrity = bool(plotted)
    for px, py in plotted:
        for j, (gx, gy) in enumerate(unused):
            if gx == px and isinstance(py, float) and _close(py, gy):
                del unused[j]
                break
        else:
            integrity = False
    return integrity, not unused


def vis_scores(spec: Optional[dsl.ChartSpec], task: TaskInstance) -> tuple[float, float]:
    """Rule-based readability and chart-correctness, each normalized to [0, 1]."""
    if spec is None:
        return 0.0, 0.0
    readability_checks = [
        spec.title is not None,
        spec.xlabel is not None and spec.ylabel is not None,
        spec.xlabel == spec.x_field and spec.ylabel == spec.y_field,
        len(spec.points) <= 8,
        spec.chart_type in SUITABLE_CHARTS[task.template_id],
    ]
    cols = task.table.columns
    chart, gx, gy, gagg = task.gold_intent
    gold_names = (chart, cols[gx].name, cols[gy].name, gagg)
    integrity, complete = _match_points(spec.points, oracle_points(task))
    correctness_checks = [spec.intent_names == gold_names, integrity, complete]
    return (sum(readability_checks) / len(readability_checks),
            sum(correctness_checks) / len(correctness_checks))


def vis_reward(spec: Optional[dsl.ChartSpec], task: TaskInstance) -> tuple[float, float, float]:
    readability, correctness = vis_scores(spec, task)
    return readability, correctness, (readability + correctness) / 2


def composite(breakdown: RewardBreakdown, weights: RewardWeights) -> float:
    return (weights.alpha * breakdown.r_text + weights.beta * breakdown.r_code
            + weights.gamma * breakdown.r_vis)


class Judges(Protocol):
    def text_judge(self, answer: str, gold: str, answer_kind: str) -> float: ...

    def intent_judge(self, program_tokens: Sequence[int], gold_intent: tuple) -> int: ...

    def vis_judge(self, spec: Optional[dsl.ChartSpec], task: TaskInstance) -> tuple[float, float]: ...


class RuleJudges:
    """Deterministic stand-ins for the LLM/VLM judges."""

    def text_judge(self, answer, gold, answer_kind):
        return text_reward(answer, gold, answer_kind)

    def intent_judge(self, program_tokens, gold_intent):
        return intent_match(program_tokens, gold_intent)

    def vis_judge(self, spec, task):
        return vis_scores(spec, task)


class RewardEngine:
    """Scores full emissions. `enabled` selects reward components; weights of
    enabled text/code/vis components are renormalized to sum to one."""

    def __init__(self, weights: RewardWeights = RewardWeights(), judges: Judges = None,
                 limits: ExecLimits = ExecLimits(), enabled=REWARD_COMPONENTS):
        self.weights = weights
        self.judges = judges or RuleJudges()
        self.limits = limits
        self.enabled = frozenset(enabled)
        unknown = self.enabled - set(REWARD_COMPONENTS)
        if unknown:
            raise ValueError(f"unknown reward components {sorted(unknown)}")
        raw = {"text": weights.alpha, "code": weights.beta, "vis": weights.gamma}
        active = {k: w for k, w in raw.items() if k in self.enabled}
        norm = sum(active.values())
        self.effective = {k: (active.get(k, 0.0) / norm if norm > 0 else 0.0) for k in raw}

    @property
    def gated(self) -> bool:
        return "format" in self.enabled

    def score(self, tokens: Sequence[int], task: TaskInstance) -> RewardBreakdown:
        out = format_check(tokens)
        format_ok = out is not None
        if not format_ok:
            if self.gated:
                return RewardBreakdown()
            out = lenient_extract(tokens)
            if out is None:
                return RewardBreakdown()
        answer = dsl.tokens_to_answer(out.answer_tokens)
        r_text = float(self.judges.text_judge(answer, task.gold_answer, task.answer_kind)) if answer else 0.0
        outcome = execute(out.program_tokens, task.table, self.limits)
        i_exec, i_intent, r_code = code_reward(outcome, out.program_tokens, task.gold_intent,
                                               self.judges.intent_judge)
        readability, correctness = self.judges.vis_judge(outcome.spec, task) if outcome.ok else (0.0, 0.0)
        r_vis = (readability + correctness) / 2
        if self.enabled <= {"format"}:
            total = float(format_ok) if self.gated else 0.0
        else:
            e = self.effective
            total = e["text"] * r_text + e["code"] * r_code + e["vis"] * r_vis
        return RewardBreakdown(format_ok, r_text, i_exec, i_intent, r_code,
                               readability, correctness, r_vis, total)
