"""Expression language: parsing, canonical printing, VM compilation."""

import math

import pytest
from hypothesis import given, strategies as st

from phasefork.errors import ExprError
from phasefork.rewards import expr as ex

FEATS = ("pos", "vel", "dist_center", "success")


def ev(src, **vals):
    e = ex.parse(src)
    prog = ex.compile_expr(e, FEATS)
    vec = [vals.get(n, 0.0) for n in FEATS]
    return ex.evaluate(prog, vec)


def test_precedence():
    assert ev("1 + 2 * 3") == 7.0
    assert ev("(1 + 2) * 3") == 9.0
    assert ev("2 - 3 - 4") == -5.0  # left associative
    assert ev("-2 * 3") == -6.0


def test_unary_functions():
    assert ev("abs(-3.5)") == 3.5
    assert ev("exp(0)") == 1.0
    assert ev("tanh(0)") == 0.0
    assert ev("tanh(100)") == pytest.approx(1.0)


def test_binary_functions():
    assert ev("min(2, 3)") == 2.0
    assert ev("max(2, 3)") == 3.0
    assert ev("min(1 + 1, max(0, 5))") == 2.0


def test_comparisons_are_indicators():
    assert ev("pos < 1", pos=0.5) == 1.0
    assert ev("pos < 1", pos=1.5) == 0.0
    assert ev("pos >= 0.5", pos=0.5) == 1.0
    assert ev("pos == 0", pos=0.0) == 1.0
    assert ev("pos != 0", pos=0.0) == 0.0
    # indicators may feed arithmetic
    assert ev("(pos > 0) * 2 + 1", pos=3.0) == 3.0


def test_feature_lookup():
    assert ev("pos + 2 * vel", pos=1.0, vel=0.25) == 1.5


def test_unknown_feature_rejected_at_compile():
    e = ex.parse("wheels + 1")
    with pytest.raises(ExprError):
        ex.compile_expr(e, FEATS)


def test_scientific_notation():
    assert ev("1e2 + 2.5e-1") == 100.25


@pytest.mark.parametrize("src,pos", [
    ("1 +", 3),
    ("(1 + 2", 6),
    ("foo(1)", 0),
    ("1 < 2 < 3", 6),
    ("1 / 2", 2),
    ("$", 0),
])
def test_errors_carry_position(src, pos):
    with pytest.raises(ExprError) as ei:
        ex.parse(src)
    assert ei.value.pos == pos
    assert "column %d" % (pos + 1) in str(ei.value)


def test_comparisons_do_not_chain():
    with pytest.raises(ExprError):
        ex.parse("a < b <= c")


def test_depth_cap():
    src = "abs(" * (ex.MAX_DEPTH + 1) + "1" + ")" * (ex.MAX_DEPTH + 1)
    with pytest.raises(ExprError):
        ex.parse(src)


def test_show_minimal_parens():
    assert ex.show(ex.parse("(1.0 + 2.0) * 3.0")) == "(1.0 + 2.0) * 3.0"
    assert ex.show(ex.parse("1.0 + (2.0 * 3.0)")) == "1.0 + 2.0 * 3.0"
    assert ex.show(ex.parse("-(pos)")) == "-pos"


def test_negative_literal_folds_to_constant():
    assert ex.parse("-2.5") == ex.Const(-2.5)
    assert ex.parse("--2.5") == ex.Const(2.5)
    assert ex.parse("-pos") == ex.Unary("neg", ex.Feat("pos"))
    assert ex.show(ex.Const(-2.5)) == "-2.5"
    # binds tighter than *: -2 * 3 is (-2) * 3 either way
    assert ev("-2 * 3") == -6.0


# ---------------------------------------------------------------------------
# random expression trees for the round-trip property

_leaf = st.one_of(
    st.sampled_from([ex.Feat(n) for n in FEATS]),
    st.floats(min_value=-100, max_value=100,
              allow_nan=False, allow_infinity=False).map(ex.Const),
    st.integers(min_value=0, max_value=50).map(lambda n: ex.Const(float(n))),
)


def _make_unary(op, arg):
    # mirror the parser: neg of a literal is a negative constant, never a node
    if op == "neg" and isinstance(arg, ex.Const):
        return ex.Const(-arg.value)
    return ex.Unary(op, arg)


def _node(children):
    unary = st.builds(_make_unary, st.sampled_from(("neg", "abs", "exp", "tanh")),
                      children)
    binary = st.builds(ex.Binary, st.sampled_from(("+", "-", "*", "min", "max")),
                       children, children)
    cmp_ = st.builds(ex.Cmp, st.sampled_from(("<", "<=", ">", ">=", "==", "!=")),
                     children, children)
    return st.one_of(unary, binary, cmp_)


_expr = st.recursive(_leaf, _node, max_leaves=25)


@given(_expr)
def test_show_parse_round_trip(e):
    text = ex.show(e)
    again = ex.parse(text)
    assert again == e
    assert ex.show(again) == text


@given(_expr)
def test_compile_never_raises_on_finite_inputs(e):
    # totality: evaluation returns a float, it never throws or hangs
    # (inf/nan are representable outcomes, e.g. via exp saturation)
    prog = ex.compile_expr(e, FEATS)
    val = ex.evaluate(prog, [0.3, -0.7, 0.0, 1.0])
    assert isinstance(val, float)


def test_pool_round_trip():
    text = "a := pos + 1\n# comment\nb := min(vel, 0.5)  # trailing\n"
    entries = ex.parse_pool(text)
    assert [i for i, _ in entries] == ["a", "b"]
    canon = ex.format_pool(entries)
    assert ex.format_pool(ex.parse_pool(canon)) == canon


@pytest.mark.parametrize("text", [
    "a = pos\n",            # missing :=
    "1bad := pos\n",        # id starts with digit
    "a := pos\na := vel\n", # duplicate
    "a := pos +\n",         # bad expression
])
def test_pool_rejects_malformed(text):
    with pytest.raises(ExprError):
        ex.parse_pool(text)
