"""Synthetic tables, templated queries, gold answers and reference programs."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from chartgrpo import dsl

TEMPLATES = ["AGG_SCALAR", "ARGMAX_CAT", "ARGMIN_CAT", "GROUP_BAR", "TREND_LINE", "SHARE_PIE"]
SCALAR_AGGS = ["SUM", "MEAN", "MAX", "MIN", "COUNT"]

_CAT_NAMES = ["region", "product", "segment", "channel", "team", "tier"]
_NUM_NAMES = ["sales", "profit", "units", "cost", "score", "growth", "margin", "visits"]


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # "categorical" | "numeric"
    cardinality: Optional[int] = None
    value_range: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "categorical":
            if self.cardinality is None or not 2 <= self.cardinality <= 8:
                raise ValueError(f"categorical column {self.name} needs cardinality in [2, 8]")
        elif self.kind == "numeric":
            lo, hi = self.value_range
            if not lo < hi:
                raise ValueError(f"numeric column {self.name} needs low < high")
        else:
            raise ValueError(f"unknown column kind {self.kind!r}")


@dataclass(frozen=True)
class Table:
    columns: tuple
    rows: tuple

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError("row width does not match column count")

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def column_values(self, idx: int) -> list:
        return [r[idx] for r in self.rows]

    def indices(self, kind: str) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind == kind]


@dataclass(frozen=True)
class QueryTemplate:
    template_id: str
    text_pattern: str
    answer_kind: str
    chart_type: str
    aggregation: Optional[str]
    title_slot: int


QUERY_TEMPLATES: dict[str, QueryTemplate] = {
    t.template_id: t for t in [
        QueryTemplate("AGG_SCALAR", "What is the {agg} of {y}? Plot {y} against {x}.",
                      "numeric", "SCATTER", None, 0),
        QueryTemplate("ARGMAX_CAT", "Which {x} has the highest total {y}?",
                      "categorical", "BAR", "SUM", 1),
        QueryTemplate("ARGMIN_CAT", "Which {x} has the lowest average {y}?",
                      "categorical", "BAR", "MEAN", 2),
        QueryTemplate("GROUP_BAR", "How many records fall in each {x}, and which {x} is most common?",
                      "categorical", "BAR", "COUNT", 3),
        QueryTemplate("TREND_LINE", "How does {y} change with {x}, and at which {x} does it peak?",
                      "numeric", "LINE", None, 4),
        QueryTemplate("SHARE_PIE", "Which {x} holds the largest share of total {y}?",
                      "categorical", "PIE", "SUM", 5),
    ]
}

# template family used by the chart-suitability readability check
SUITABLE_CHARTS = {
    "AGG_SCALAR": {"SCATTER"},
    "ARGMAX_CAT": {"BAR", "PIE"},
    "ARGMIN_CAT": {"BAR", "PIE"},
    "GROUP_BAR": {"BAR", "PIE"},
    "TREND_LINE": {"LINE"},
    "SHARE_PIE": {"BAR", "PIE"},
}


@dataclass(frozen=True)
class TaskInstance:
    task_id: int
    template_id: str
    table: Table
    query: str
    gold_answer: str
    gold_intent: tuple  # (chart_type, x_col, y_col, aggregation or "NONE")
    reference_program: tuple  # token ids
    scalar_agg: Optional[str] = None

    @property
    def answer_kind(self) -> str:
        return QUERY_TEMPLATES[self.template_id].answer_kind

    def reference_output(self) -> list[int]:
        """Full structured reference emission: BEGIN ANSWER ... CODE ... END."""
        return ([dsl.TOKEN_ID["BEGIN"], dsl.TOKEN_ID["ANSWER"]]
                + dsl.answer_to_tokens(self.gold_answer)
                + [dsl.TOKEN_ID["CODE"]] + list(self.reference_program)
                + [dsl.TOKEN_ID["END"]])


def format_number(x: float) -> str:
    """Up to 4 significant digits, never in exponent notation."""
    if x == 0:
        return "0"
    s = np.format_float_positional(float(x), precision=4, unique=False, fractional=False, trim="-")
    return "0" if s in ("-0", "0") else s


def generate_table(seed: int, schema_bounds: Sequence[int] = (3, 6)) -> Table:
    rng = np.random.default_rng(np.random.SeedSequence([0x7AB1E, int(seed) & (2**64 - 1)]))
    lo = min(max(int(schema_bounds[0]), 3), 6)
    hi = min(max(int(schema_bounds[1]), lo), 6)
    n_cols = int(rng.integers(lo, hi + 1))
    n_cat = int(rng.integers(1, n_cols - 1))
    kinds = ["categorical"] * n_cat + ["numeric"] * (n_cols - n_cat)
    kinds = [kinds[i] for i in rng.permutation(n_cols)]
    cat_names = list(rng.permutation(_CAT_NAMES))
    num_names = list(rng.permutation(_NUM_NAMES))
    columns = []
    n_num_seen = 0
    for kind in kinds:
        if kind == "categorical":
            columns.append(ColumnSpec(str(cat_names.pop()), kind,
                                      cardinality=int(rng.integers(2, 9))))
        else:
            # first numeric column is non-negative so pie charts over it are valid
            if n_num_seen == 0:
                low = float(rng.integers(0, 50))
            else:
                low = float(rng.integers(-60, 50))
            high = low + float(rng.integers(10, 200))
            columns.append(ColumnSpec(str(num_names.pop()), kind, value_range=(low, high)))
            n_num_seen += 1
    n_rows = int(rng.integers(5, 21))
    rows = []
    for _ in range(n_rows):
        row = []
        for c in columns:
            if c.kind == "categorical":
                row.append(dsl.CATEGORY_LABELS[int(rng.integers(0, c.cardinality))])
            else:
                row.append(round(float(rng.uniform(*c.value_range)), 1))
        rows.append(tuple(row))
    return Table(columns=tuple(columns), rows=tuple(rows))


def intent_columns(table: Table, template_id: str) -> tuple[int, int]:
    """Column roles fixed per template: first categorical / first two numerics."""
    cats, nums = table.indices("categorical"), table.indices("numeric")
    if template_id in ("AGG_SCALAR", "TREND_LINE"):
        return nums[0], nums[1]
    return cats[0], nums[0]


def _first_best(keys: list, values: list, better) -> str:
    best_k, best_v = keys[0], values[0]
    for k, v in zip(keys[1:], values[1:]):
        if better(v, best_v):
            best_k, best_v = k, v
    return best_k


def brute_force_answer(table: Table, template_id: str, scalar_agg: Optional[str] = None) -> str:
    """Gold answer computed by direct loops over the rows."""
    x, y = intent_columns(table, template_id)
    if template_id == "AGG_SCALAR":
        vals = [r[y] for r in table.rows]
        if scalar_agg == "COUNT":
            result = float(len(vals))
        elif scalar_agg == "SUM":
            result = math.fsum(vals)
        elif scalar_agg == "MEAN":
            result = math.fsum(vals) / len(vals)
        elif scalar_agg == "MAX":
            result = max(vals)
        elif scalar_agg == "MIN":
            result = min(vals)
        else:
            raise ValueError(f"bad scalar aggregation {scalar_agg!r}")
        return format_number(result)
    if template_id == "TREND_LINE":
        best_row = table.rows[0]
        for r in table.rows[1:]:
            if r[y] > best_row[y]:
                best_row = r
        return format_number(best_row[x])
    order, sums, counts = [], {}, {}
    for r in table.rows:
        k = r[x]
        if k not in sums:
            order.append(k)
            sums[k], counts[k] = 0.0, 0
        sums[k] += r[y]
        counts[k] += 1
    if template_id in ("ARGMAX_CAT", "SHARE_PIE"):
        return _first_best(order, [sums[k] for k in order], lambda a, b: a > b)
    if template_id == "ARGMIN_CAT":
        return _first_best(order, [sums[k] / counts[k] for k in order], lambda a, b: a < b)
    if template_id == "GROUP_BAR":
        return _first_best(order, [counts[k] for k in order], lambda a, b: a > b)
    raise ValueError(f"unknown template {template_id!r}")


def reference_program(table: Table, template_id: str) -> dsl.Program:
    tpl = QUERY_TEMPLATES[template_id]
    x, y = intent_columns(table, template_id)
    return dsl.Program(chart_type=tpl.chart_type, x_col=x, y_col=y, aggregation=tpl.aggregation,
                       title=tpl.title_slot, xlabel=x, ylabel=y)


def generate_task(seed: int, template: Union[str, QueryTemplate], task_id: Optional[int] = None,
                  schema_bounds: Sequence[int] = (3, 6)) -> TaskInstance:
    tpl = template if isinstance(template, QueryTemplate) else QUERY_TEMPLATES[template]
    table = generate_table(seed, schema_bounds)
    rng = np.random.default_rng(np.random.SeedSequence([0x7A5C, int(seed) & (2**64 - 1)]))
    scalar_agg = SCALAR_AGGS[int(rng.integers(0, 5))] if tpl.template_id == "AGG_SCALAR" else None
    x, y = intent_columns(table, tpl.template_id)
    agg_word = {"SUM": "total", "MEAN": "average", "MAX": "maximum", "MIN": "minimum",
                "COUNT": "count"}.get(scalar_agg or "", "")
    query = tpl.text_pattern.format(x=table.columns[x].name, y=table.columns[y].name, agg=agg_word)
    prog = reference_program(table, tpl.template_id)
    return TaskInstance(
        task_id=int(seed) if task_id is None else int(task_id),
        template_id=tpl.template_id,
        table=table,
        query=query,
        gold_answer=brute_force_answer(table, tpl.template_id, scalar_agg),
        gold_intent=prog.intent,
        reference_program=tuple(prog.to_tokens()),
        scalar_agg=scalar_agg,
    )


def generate_dataset(seed: int, count: int, weights: Optional[Sequence[float]] = None,
                     start_id: int = 0) -> list[TaskInstance]:
    """`count` tasks with template mixing `weights` (uniform by default)."""
    rng = np.random.default_rng(np.random.SeedSequence([0xDA7A, int(seed)]))
    p = None if weights is None else np.asarray(weights, float) / np.sum(weights)
    tasks = []
    for i in range(count):
        tpl = TEMPLATES[int(rng.choice(len(TEMPLATES), p=p))]
        task_seed = int(rng.integers(0, 2**63 - 1))
        tasks.append(generate_task(task_seed, tpl, task_id=start_id + i))
    return tasks


# --- dataset files ---------------------------------------------------------

class DatasetFormatError(ValueError):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


def task_to_record(task: TaskInstance) -> dict:
    cols = []
    for c in task.table.columns:
        if c.kind == "categorical":
            cols.append({"name": c.name, "kind": c.kind, "cardinality": c.cardinality})
        else:
            cols.append({"name": c.name, "kind": c.kind, "value_range": list(c.value_range)})
    return {
        "task_id": task.task_id,
        "template_id": task.template_id,
        "scalar_agg": task.scalar_agg,
        "columns": cols,
        "rows": [list(r) for r in task.table.rows],
        "query": task.query,
        "gold_answer": task.gold_answer,
        "gold_intent": list(task.gold_intent),
        "reference_program": dsl.decode(task.reference_program),
    }


def record_to_task(rec: dict) -> TaskInstance:
    cols = []
    for c in rec["columns"]:
        if c["kind"] == "categorical":
            cols.append(ColumnSpec(c["name"], "categorical", cardinality=int(c["cardinality"])))
        else:
            cols.append(ColumnSpec(c["name"], "numeric",
                                   value_range=tuple(float(v) for v in c["value_range"])))
    rows = []
    for r in rec["rows"]:
        rows.append(tuple(v if cols[i].kind == "categorical" else float(v) for i, v in enumerate(r)))
    gi = rec["gold_intent"]
    return TaskInstance(
        task_id=int(rec["task_id"]),
        template_id=rec["template_id"],
        table=Table(columns=tuple(cols), rows=tuple(rows)),
        query=rec["query"],
        gold_answer=rec["gold_answer"],
        gold_intent=(gi[0], int(gi[1]), int(gi[2]), gi[3]),
        reference_program=tuple(dsl.encode(rec["reference_program"])),
        scalar_agg=rec["scalar_agg"],
    )


def write_dataset(tasks: Sequence[TaskInstance], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in tasks:
            # json emits floats via repr, the shortest round-trip form
            f.write(json.dumps(task_to_record(t), separators=(",", ":")) + "\n")


def read_dataset(path) -> list[TaskInstance]:
    tasks = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                tasks.append(record_to_task(json.loads(line)))
            except (ValueError, KeyError, TypeError, IndexError) as e:
                raise DatasetFormatError(Path(path), line_no, f"malformed record ({e})") from e
    return tasks
