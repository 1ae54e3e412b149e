import math
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chartgrpo import dsl
from chartgrpo.dsl import ChartSpec, DslError, ErrorClass, Program, interpret, parse, render_svg
from chartgrpo.tasks import ColumnSpec, Table, generate_table

E = dsl.encode


def table_abc():
    cols = (ColumnSpec("region", "categorical", 2), ColumnSpec("sales", "numeric", None, (0.0, 10.0)),
            ColumnSpec("profit", "numeric", None, (-5.0, 5.0)), ColumnSpec("tier", "categorical", 3))
    rows = (("A", 1.0, -1.0, "A"), ("A", 2.0, 2.0, "B"), ("B", 3.0, -4.0, "C"))
    return Table(cols, rows)


def test_vocabulary_is_closed_and_unique():
    assert len(set(dsl.VOCAB)) == len(dsl.VOCAB) == dsl.V
    assert all(dsl.VOCAB[dsl.TOKEN_ID[t]] == t for t in dsl.VOCAB)


@given(st.lists(st.sampled_from(dsl.VOCAB), max_size=30))
def test_encode_decode_roundtrip(names):
    text = " ".join(names)
    assert dsl.decode(E(text)) == text


@given(st.one_of(st.from_regex(r"-?[0-9]{1,5}(\.[0-9]{1,3})?", fullmatch=True),
                 st.sampled_from(list(dsl.CATEGORY_LABELS))))
def test_answer_tokens_roundtrip(answer):
    assert dsl.tokens_to_answer(dsl.answer_to_tokens(answer)) == answer


def test_dot_is_not_a_digit():
    assert dsl.tokens_to_answer(E("D4 D8 DOT D7 D7")) == "48.77"


def test_parse_example_program():
    prog = parse(E("CHART BAR X COL0 Y COL1 AGG SUM TITLE T3 SHOW"))
    assert prog == Program("BAR", 0, 1, "SUM", 3, None, None)


def test_missing_show_is_syntax_error():
    err = parse(E("CHART BAR X COL0 Y COL1"))
    assert isinstance(err, DslError) and err.cls is ErrorClass.SYNTAX
    assert "missing SHOW" in err.message


def test_duplicate_statement_is_syntax_error():
    err = parse(E("CHART BAR X COL0 X COL1 SHOW"))
    assert err.cls is ErrorClass.SYNTAX and err.token_position == 4


@pytest.mark.parametrize("text", [
    "", "SHOW", "CHART SHOW", "CHART BAR SHOW", "CHART BAR X COL0 SHOW",
    "CHART BAR X COL0 Y COL1 SHOW SHOW", "CHART BAR X Y COL1 SHOW", "CHART BAR X COL0 Y T1 SHOW",
    "CHART BAR X COL0 Y COL1 AGG COL2 SHOW", "CHART BAR X COL0 Y COL1 END SHOW",
])
def test_malformed_programs_are_syntax_errors(text):
    err = parse(E(text))
    assert isinstance(err, DslError) and err.cls is ErrorClass.SYNTAX


def test_statement_order_is_free():
    a = parse(E("CHART PIE YLABEL COL1 Y COL1 TITLE T0 X COL0 AGG MEAN XLABEL COL0 SHOW"))
    b = parse(E("CHART PIE X COL0 Y COL1 AGG MEAN TITLE T0 XLABEL COL0 YLABEL COL1 SHOW"))
    assert a == b


programs = st.builds(
    Program,
    chart_type=st.sampled_from(dsl.CHART_TYPES),
    x_col=st.integers(0, 5), y_col=st.integers(0, 5),
    aggregation=st.one_of(st.none(), st.sampled_from(dsl.AGGREGATIONS)),
    title=st.one_of(st.none(), st.integers(0, 7)),
    xlabel=st.one_of(st.none(), st.integers(0, 5)),
    ylabel=st.one_of(st.none(), st.integers(0, 5)),
)


@given(programs)
def test_canonical_tokens_parse_back(prog):
    assert parse(prog.to_tokens()) == prog


def test_sum_by_group():
    t = Table((ColumnSpec("g", "categorical", 2), ColumnSpec("v", "numeric", None, (0.0, 5.0))),
              (("A", 1.0), ("A", 2.0), ("B", 3.0)))
    spec = interpret(parse(E("CHART BAR X COL0 Y COL1 AGG SUM SHOW")), t)
    assert spec.points == (("A", 3.0), ("B", 3.0))


def test_line_with_categorical_y_is_shape_mismatch():
    err = interpret(parse(E("CHART LINE X COL1 Y COL0 SHOW")), table_abc())
    assert err.cls is ErrorClass.SHAPE_MISMATCH


def test_unknown_column():
    err = interpret(parse(E("CHART BAR X COL5 Y COL1 SHOW")), table_abc())
    assert err.cls is ErrorClass.UNKNOWN_COLUMN


def test_label_out_of_range_is_unknown_column():
    err = interpret(parse(E("CHART BAR X COL0 Y COL1 XLABEL COL4 SHOW")), table_abc())
    assert err.cls is ErrorClass.UNKNOWN_COLUMN


@pytest.mark.parametrize("agg", ["SUM", "MEAN", "MAX", "MIN"])
def test_numeric_aggregation_of_categorical_is_type_mismatch(agg):
    err = interpret(parse(E(f"CHART BAR X COL0 Y COL3 AGG {agg} SHOW")), table_abc())
    assert err.cls is ErrorClass.TYPE_MISMATCH


def test_count_accepts_categorical_y():
    spec = interpret(parse(E("CHART BAR X COL0 Y COL3 AGG COUNT SHOW")), table_abc())
    assert spec.points == (("A", 2.0), ("B", 1.0))


def test_pie_with_negative_value_is_value_error():
    err = interpret(parse(E("CHART PIE X COL0 Y COL2 AGG SUM SHOW")), table_abc())
    assert err.cls is ErrorClass.VALUE_ERROR


def test_single_group_pie_executes():
    t = Table((ColumnSpec("g", "categorical", 2), ColumnSpec("v", "numeric", None, (0.0, 5.0))),
              (("A", 1.0), ("A", 2.0)))
    spec = interpret(parse(E("CHART PIE X COL0 Y COL1 AGG SUM SHOW")), t)
    assert spec.points == (("A", 3.0),)


def test_numeric_x_points_ascend():
    spec = interpret(parse(E("CHART SCATTER X COL2 Y COL1 SHOW")), table_abc())
    xs = [p[0] for p in spec.points]
    assert xs == sorted(xs)


def test_labels_and_title_resolve():
    spec = interpret(parse(E("CHART BAR X COL0 Y COL1 AGG MEAN TITLE T2 XLABEL COL0 YLABEL COL1 SHOW")),
                     table_abc())
    assert (spec.title, spec.xlabel, spec.ylabel) == (dsl.TITLE_PHRASES[2], "region", "sales")


def test_step_budget_limits_work():
    err = interpret(parse(E("CHART BAR X COL0 Y COL1 AGG SUM SHOW")), table_abc(), dsl.StepBudget(2))
    assert err.cls is ErrorClass.LIMIT_EXCEEDED


@given(st.integers(0, 10_000), st.sampled_from(["SUM", "MEAN", "MAX", "MIN", "COUNT"]))
def test_grouped_aggregates_match_brute_force(seed, agg):
    table = generate_table(seed)
    x = table.indices("categorical")[0]
    y = table.indices("numeric")[-1]
    spec = interpret(Program("BAR", x, y, agg), table)
    expected = {}
    for row in table.rows:
        expected.setdefault(row[x], []).append(row[y])
    assert [k for k, _ in spec.points] == list(expected)
    for k, v in spec.points:
        vals = expected[k]
        want = {"SUM": math.fsum(vals), "MEAN": math.fsum(vals) / len(vals), "MAX": max(vals),
                "MIN": min(vals), "COUNT": float(len(vals))}[agg]
        assert v == pytest.approx(want, rel=1e-12, abs=1e-12)


@given(programs, st.integers(0, 500))
def test_interpret_is_pure(prog, seed):
    table = generate_table(seed)
    assert interpret(prog, table) == interpret(prog, table)


def _spec(**kw):
    base = dict(chart_type="BAR", x_field="region", y_field="sales", aggregation="SUM",
                title="Total by category", xlabel="region", ylabel="sales",
                points=(("A", 3.0), ("B", 1.5)))
    base.update(kw)
    return ChartSpec(**base)


def test_svg_has_one_title_element():
    svg = render_svg(_spec())
    assert len(re.findall(r'class="title"', svg)) == 1
    assert svg.startswith("<?xml") or svg.startswith("<svg")


def test_svg_without_title_or_labels():
    svg = render_svg(_spec(title=None, xlabel=None, ylabel=None))
    assert 'class="title"' not in svg and 'class="xlabel"' not in svg


@pytest.mark.parametrize("chart", dsl.CHART_TYPES)
def test_svg_is_deterministic_and_handles_empty(chart):
    spec = _spec(chart_type=chart)
    assert render_svg(spec) == render_svg(_spec(chart_type=chart))
    empty = render_svg(_spec(chart_type=chart, points=()))
    assert "</svg>" in empty
