"""Resource-limited execution of candidate chart programs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from chartgrpo import dsl
from chartgrpo.tasks import Table


@dataclass(frozen=True)
class ExecLimits:
    max_tokens: int = 64
    max_interpreter_steps: int = 10_000
    max_points: int = 1_024

    def __post_init__(self):
        for name in ("max_tokens", "max_interpreter_steps", "max_points"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ExecOutcome:
    status: str  # "OK" | "FAILED"
    spec: Optional[dsl.ChartSpec] = None
    error: Optional[dsl.DslError] = None
    steps_used: int = 0
    program: Optional[dsl.Program] = None

    @property
    def ok(self) -> bool:
        return self.status == "OK"


def execute(tokens: Sequence[int], table: Table, limits: ExecLimits = ExecLimits()) -> ExecOutcome:
    """Parse and interpret `tokens`. All failures come back as FAILED outcomes."""
    if len(tokens) > limits.max_tokens:
        err = dsl.DslError(dsl.ErrorClass.LIMIT_EXCEEDED,
                           f"{len(tokens)} tokens exceeds limit {limits.max_tokens}",
                           limits.max_tokens)
        return ExecOutcome("FAILED", error=err)
    budget = dsl.StepBudget(limits.max_interpreter_steps)
    if not budget.tick(len(tokens)):
        return ExecOutcome("FAILED", steps_used=budget.used,
                           error=dsl.DslError(dsl.ErrorClass.LIMIT_EXCEEDED, "step limit exceeded"))
    try:
        prog = dsl.parse(tokens)
        if isinstance(prog, dsl.DslError):
            return ExecOutcome("FAILED", error=prog, steps_used=budget.used)
        res = dsl.interpret(prog, table, budget=budget, max_points=limits.max_points)
    except Exception as e:  # interpreter bug must not escape the sandbox
        err = dsl.DslError(dsl.ErrorClass.VALUE_ERROR, f"internal error: {e!r}")
        return ExecOutcome("FAILED", error=err, steps_used=budget.used)
    if isinstance(res, dsl.DslError):
        return ExecOutcome("FAILED", error=res, steps_used=budget.used, program=prog)
    return ExecOutcome("OK", spec=res, steps_used=budget.used, program=prog)
