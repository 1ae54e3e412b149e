"""Chart DSL: closed token vocabulary, parser, interpreter and SVG renderer.

A program looks like::

    CHART BAR X COL0 Y COL1 AGG SUM TITLE T3 XLABEL COL0 YLABEL COL1 SHOW

Statements after ``CHART <type>`` may come in any order, each at most once,
and the program must end with ``SHOW``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence, Union
from xml.sax.saxutils import escape

if TYPE_CHECKING:
    from chartgrpo.tasks import Table

STRUCTURAL = ["BEGIN", "ANSWER", "CODE", "END", "SHOW"]
STATEMENTS = ["CHART", "X", "Y", "AGG", "TITLE", "XLABEL", "YLABEL"]
CHART_TYPES = ["LINE", "BAR", "SCATTER", "PIE"]
AGGREGATIONS = ["SUM", "MEAN", "MAX", "MIN", "COUNT"]
COLUMNS = [f"COL{i}" for i in range(6)]
TITLE_SLOTS = [f"T{i}" for i in range(8)]
DIGITS = [f"D{i}" for i in range(10)]
CATEGORIES = [f"CAT{i}" for i in range(8)]

VOCAB: list[str] = (
    STRUCTURAL + STATEMENTS + CHART_TYPES + AGGREGATIONS + COLUMNS + TITLE_SLOTS
    + DIGITS + ["DOT", "MINUS"] + CATEGORIES
)
TOKEN_ID: dict[str, int] = {tok: i for i, tok in enumerate(VOCAB)}
V = len(VOCAB)

_DIGIT_SET = frozenset(DIGITS)
ANSWER_TOKENS = frozenset(DIGITS + ["DOT", "MINUS"] + CATEGORIES)
CATEGORY_LABELS = "ABCDEFGH"

# title phrasebook, one slot per query family plus two generic slots
TITLE_PHRASES = [
    "Summary of values",
    "Total by category",
    "Lowest average by category",
    "Record count by category",
    "Trend over range",
    "Share of total",
    "Data overview",
    "Chart",
]


def encode(text: str) -> list[int]:
    """Space-separated token names to ids."""
    return [TOKEN_ID[t] for t in text.split()]


def decode(ids: Sequence[int]) -> str:
    return " ".join(VOCAB[i] for i in ids)


def answer_to_tokens(answer: str) -> list[int]:
    out = []
    for ch in answer:
        if ch.isdigit():
            out.append(TOKEN_ID[f"D{ch}"])
        elif ch == ".":
            out.append(TOKEN_ID["DOT"])
        elif ch == "-":
            out.append(TOKEN_ID["MINUS"])
        elif ch.upper() in CATEGORY_LABELS:
            out.append(TOKEN_ID[f"CAT{CATEGORY_LABELS.index(ch.upper())}"])
        else:
            raise ValueError(f"character {ch!r} has no answer token")
    return out


def tokens_to_answer(ids: Sequence[int]) -> str:
    parts = []
    for i in ids:
        tok = VOCAB[i]
        if tok == "DOT":
            parts.append(".")
        elif tok in _DIGIT_SET:
            parts.append(tok[1:])
        elif tok == "MINUS":
            parts.append("-")
        elif tok.startswith("CAT"):
            parts.append(CATEGORY_LABELS[int(tok[3:])])
        else:
            raise ValueError(f"{tok} is not an answer token")
    return "".join(parts)


class ErrorClass(str, enum.Enum):
    SYNTAX = "SYNTAX"
    UNKNOWN_COLUMN = "UNKNOWN_COLUMN"
    TYPE_MISMATCH = "TYPE_MISMATCH"
    SHAPE_MISMATCH = "SHAPE_MISMATCH"
    VALUE_ERROR = "VALUE_ERROR"
    LIMIT_EXCEEDED = "LIMIT_EXCEEDED"


@dataclass(frozen=True)
class DslError:
    cls: ErrorClass
    message: str
    token_position: Optional[int] = None


@dataclass(frozen=True)
class Program:
    chart_type: str
    x_col: int
    y_col: int
    aggregation: Optional[str] = None
    title: Optional[int] = None
    xlabel: Optional[int] = None
    ylabel: Optional[int] = None
    terminated: bool = True

    @property
    def intent(self) -> tuple:
        return (self.chart_type, self.x_col, self.y_col, self.aggregation or "NONE")

    def to_tokens(self) -> list[int]:
        """Canonical order: each axis label directly follows its encoding."""
        toks = ["CHART", self.chart_type, "X", f"COL{self.x_col}"]
        if self.xlabel is not None:
            toks += ["XLABEL", f"COL{self.xlabel}"]
        toks += ["Y", f"COL{self.y_col}"]
        if self.ylabel is not None:
            toks += ["YLABEL", f"COL{self.ylabel}"]
        if self.aggregation:
            toks += ["AGG", self.aggregation]
        if self.title is not None:
            toks += ["TITLE", f"T{self.title}"]
        toks.append("SHOW")
        return [TOKEN_ID[t] for t in toks]


@dataclass(frozen=True)
class ChartSpec:
    chart_type: str
    x_field: str
    y_field: str
    aggregation: Optional[str]
    title: Optional[str]
    xlabel: Optional[str]
    ylabel: Optional[str]
    points: tuple = field(default_factory=tuple)

    @property
    def intent_names(self) -> tuple:
        return (self.chart_type, self.x_field, self.y_field, self.aggregation or "NONE")


_STMT_ARG = {
    "X": COLUMNS,
    "Y": COLUMNS,
    "AGG": AGGREGATIONS,
    "TITLE": TITLE_SLOTS,
    "XLABEL": COLUMNS,
    "YLABEL": COLUMNS,
}


def parse(ids: Sequence[int]) -> Union[Program, DslError]:
    """Parse a program token sequence. Never raises for in-vocabulary ids."""

    def syntax(msg: str, pos: int) -> DslError:
        return DslError(ErrorClass.SYNTAX, msg, pos)

    toks = [VOCAB[i] for i in ids]
    n = len(toks)
    if n == 0:
        return syntax("empty program", 0)
    if toks[0] != "CHART":
        return syntax("program must start with CHART", 0)
    if n < 2 or toks[1] not in CHART_TYPES:
        return syntax("CHART must be followed by a chart type", 1)
    seen: dict[str, str] = {}
    pos = 2
    while pos < n:
        tok = toks[pos]
        if tok == "SHOW":
            if pos != n - 1:
                return syntax("tokens after SHOW", pos + 1)
            break
        if tok not in _STMT_ARG:
            return syntax(f"unexpected token {tok}", pos)
        if tok in seen:
            return syntax(f"duplicate {tok} statement", pos)
        if pos + 1 >= n:
            return syntax(f"{tok} is missing its argument", pos + 1)
        arg = toks[pos + 1]
        if arg not in _STMT_ARG[tok]:
            return syntax(f"bad argument {arg} for {tok}", pos + 1)
        seen[tok] = arg
        pos += 2
    else:
        return syntax("missing SHOW", n)
    for required in ("X", "Y"):
        if required not in seen:
            return syntax(f"missing {required} statement", n - 1)

    def col(key: str) -> Optional[int]:
        return int(seen[key][3:]) if key in seen else None

    return Program(
        chart_type=toks[1],
        x_col=col("X"),
        y_col=col("Y"),
        aggregation=seen.get("AGG"),
        title=int(seen["TITLE"][1:]) if "TITLE" in seen else None,
        xlabel=col("XLABEL"),
        ylabel=col("YLABEL"),
    )


def aggregate(values: Sequence, agg: str) -> float:
    if agg == "COUNT":
        return float(len(values))
    if agg == "SUM":
        return float(math.fsum(values))
    if agg == "MEAN":
        return float(math.fsum(values) / len(values))
    if agg == "MAX":
        return float(max(values))
    if agg == "MIN":
        return float(min(values))
    raise ValueError(agg)


class StepBudget:
    """Counts interpreter work; `tick` returns False once the budget is spent."""

    def __init__(self, limit: Optional[int] = None):
        self.limit = limit
        self.used = 0

    def tick(self, n: int = 1) -> bool:
        self.used += n
        return self.limit is None or self.used <= self.limit


def interpret(program: Program, table: "Table", budget: Optional[StepBudget] = None,
              max_points: Optional[int] = None) -> Union[ChartSpec, DslError]:
    """Execute a parsed program against a table.

    Checks run in a fixed order so each failure maps to one class:
    unknown columns, raw-chart shape, aggregation type, pie values.
    """
    budget = budget or StepBudget()
    width = len(table.columns)
    for name, idx in (("X", program.x_col), ("Y", program.y_col),
                      ("XLABEL", program.xlabel), ("YLABEL", program.ylabel)):
        if idx is not None and idx >= width:
            return DslError(ErrorClass.UNKNOWN_COLUMN,
                            f"{name} refers to COL{idx} but table has {width} columns")
    xcol, ycol = table.columns[program.x_col], table.columns[program.y_col]
    raw = program.chart_type in ("LINE", "SCATTER")
    agg = program.aggregation
    if raw and ycol.kind != "numeric":
        return DslError(ErrorClass.SHAPE_MISMATCH,
                        f"{program.chart_type} needs a numeric y column, got {ycol.name}")
    if not raw and ycol.kind != "numeric" and agg != "COUNT":
        what = f"aggregation {agg}" if agg else "bar heights"
        return DslError(ErrorClass.TYPE_MISMATCH,
                        f"{what} cannot use categorical column {ycol.name}")

    xs = table.column_values(program.x_col)
    ys = table.column_values(program.y_col)
    if raw or agg is None:
        pairs = list(zip(xs, ys))
        if not budget.tick(len(pairs)):
            return DslError(ErrorClass.LIMIT_EXCEEDED, "interpreter step limit exceeded")
        points = [(x, float(y)) for x, y in pairs]
    else:
        groups: dict = {}
        for x, y in zip(xs, ys):
            if not budget.tick():
                return DslError(ErrorClass.LIMIT_EXCEEDED, "interpreter step limit exceeded")
            groups.setdefault(x, []).append(y)
        points = [(k, aggregate(v, agg)) for k, v in groups.items()]
    # categorical x keeps first-appearance order; numeric x ascends (stable)
    if xcol.kind == "numeric":
        points.sort(key=lambda p: p[0])
    points = tuple(points)
    if max_points is not None and len(points) > max_points:
        return DslError(ErrorClass.LIMIT_EXCEEDED, f"{len(points)} points exceeds {max_points}")
    if program.chart_type == "PIE" and any(y < 0 for _, y in points):
        return DslError(ErrorClass.VALUE_ERROR, "pie chart received a negative value")

    def label(idx: Optional[int]) -> Optional[str]:
        return None if idx is None else table.columns[idx].name

    return ChartSpec(
        chart_type=program.chart_type,
        x_field=xcol.name,
        y_field=ycol.name,
        aggregation=agg,
        title=None if program.title is None else TITLE_PHRASES[program.title],
        xlabel=label(program.xlabel),
        ylabel=label(program.ylabel),
        points=points,
    )


# --- SVG rendering ---------------------------------------------------------

_W, _H = 480, 320
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 60, 20, 40, 50


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(spec: ChartSpec) -> str:
    """Standalone SVG 1.1 document. Output depends only on `spec`."""
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
    ]
    x0, x1 = _PAD_L, _W - _PAD_R
    y0, y1 = _H - _PAD_B, _PAD_T
    pw, ph = x1 - x0, y0 - y1
    out.append(f'<g class="plot-area" data-chart="{spec.chart_type}">')
    pts = list(spec.points)
    if pts and spec.chart_type == "PIE":
        out.extend(_pie(pts, (x0 + x1) / 2, (y0 + y1) / 2, min(pw, ph) / 2))
    elif pts:
        ys = [p[1] for p in pts]
        lo, hi = min(0.0, min(ys)), max(0.0, max(ys))
        span = (hi - lo) or 1.0

        def sy(v: float) -> float:
            return y0 - (v - lo) / span * ph

        numeric_x = spec.chart_type in ("LINE", "SCATTER") and all(
            isinstance(p[0], (int, float)) for p in pts)
        if numeric_x:
            xv = [float(p[0]) for p in pts]
            xlo, xspan = min(xv), (max(xv) - min(xv)) or 1.0
            sx = [x0 + (v - xlo) / xspan * pw for v in xv]
        else:
            step = pw / len(pts)
            sx = [x0 + step * (i + 0.5) for i in range(len(pts))]
        if spec.chart_type == "BAR":
            bw = pw / len(pts) * 0.7
            for cx, y in zip(sx, ys):
                top, bot = sorted((sy(y), sy(0.0)))
                out.append(f'<rect x="{_fmt(cx - bw / 2)}" y="{_fmt(top)}" width="{_fmt(bw)}" '
                           f'height="{_fmt(bot - top)}" fill="#4878a8"/>')
        elif spec.chart_type == "LINE":
            path = " ".join(f"{_fmt(cx)},{_fmt(sy(y))}" for cx, y in zip(sx, ys))
            out.append(f'<polyline points="{path}" fill="none" stroke="#4878a8" stroke-width="2"/>')
        else:
            for cx, y in zip(sx, ys):
                out.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(sy(y))}" r="3" fill="#4878a8"/>')
        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    out.append("</g>")
    if spec.title is not None:
        out.append(f'<text class="title" x="{_W / 2}" y="24" text-anchor="middle" '
                   f'font-size="16">{escape(spec.title)}</text>')
    if spec.xlabel is not None:
        out.append(f'<text class="xlabel" x="{(x0 + x1) / 2}" y="{_H - 12}" '
                   f'text-anchor="middle" font-size="12">{escape(spec.xlabel)}</text>')
    if spec.ylabel is not None:
        out.append(f'<text class="ylabel" x="16" y="{(y0 + y1) / 2}" text-anchor="middle" '
                   f'font-size="12" transform="rotate(-90 16 {(y0 + y1) / 2})">'
                   f'{escape(spec.ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _pie(pts, cx: float, cy: float, r: float) -> list[str]:
    total = sum(p[1] for p in pts)
    if total <= 0:
        return [f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" fill="none" stroke="gray"/>']
    shades = ["#4878a8", "#e49444", "#6a9f58", "#d1605e", "#85b6b2", "#e7ca60", "#a87c9f", "#967662"]
    out, angle = [], -math.pi / 2
    for i, (_, v) in enumerate(pts):
        frac = v / total
        if frac <= 0:
            continue
        end = angle + 2 * math.pi * frac
        if frac >= 1.0:
            out.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" fill="{shades[i % 8]}"/>')
        else:
            large = 1 if frac > 0.5 else 0
            sx, sy_ = cx + r * math.cos(angle), cy + r * math.sin(angle)
            ex, ey = cx + r * math.cos(end), cy + r * math.sin(end)
            out.append(f'<path d="M {_fmt(cx)} {_fmt(cy)} L {_fmt(sx)} {_fmt(sy_)} '
                       f'A {_fmt(r)} {_fmt(r)} 0 {large} 1 {_fmt(ex)} {_fmt(ey)} Z" '
                       f'fill="{shades[i % 8]}"/>')
        angle = end
    return out
