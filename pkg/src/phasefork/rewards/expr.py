"""Reward expression language.

Expression trees over named features and constants with unary {-, abs, exp,
tanh}, binary {+, -, *, min, max} and comparisons that produce 0/1
indicators.  No division, no control flow; every expression is total over
finite inputs and tree depth is capped so candidate rewards cannot crash or
hang a fork.

print() emits a canonical form with minimal parentheses and parse(print(e))
reconstructs e exactly; pool files are stored canonically so the round trip
is also a string identity there.  Unary minus on a numeric literal folds
into a negative constant at parse time (the canonical form for -2.0 is the
constant, not a negation node).
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass

from .._backend import pyref
from ..errors import ExprError

MAX_DEPTH = 32

_UNARY_FUNCS = ("abs", "exp", "tanh")
_BINARY_FUNCS = ("min", "max")
_CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Feat:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # neg | abs | exp | tanh
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # + | - | * | min | max
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Cmp:
    op: str  # < | <= | > | >= | == | !=
    lhs: "Expr"
    rhs: "Expr"


Expr = Const | Feat | Unary | Binary | Cmp


# ---------------------------------------------------------------------------
# tokenizer


_PUNCT = ("<=", ">=", "==", "!=", "<", ">", "+", "-", "*", "(", ")", ",")


def _tokenize(src: str):
    toks = []
    i = 0
    n = len(src)
    while i < n:
        ch = src[i]
        if ch in " \t":
            i += 1
            continue
        if ch == "/":
            raise ExprError("division is not part of this language", i, src)
        two = src[i : i + 2]
        if two in _PUNCT:
            toks.append((two, i))
            i += 2
            continue
        if ch in _PUNCT:
            toks.append((ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_dot = False
            seen_exp = False
            while j < n:
                c = src[j]
                if c.isdigit():
                    j += 1
                elif c == "." and not seen_dot and not seen_exp:
                    seen_dot = True
                    j += 1
                elif c in "eE" and not seen_exp and j > i:
                    seen_exp = True
                    j += 1
                    if j < n and src[j] in "+-":
                        j += 1
                else:
                    break
            text = src[i:j]
            try:
                val = float(text)
            except ValueError:
                raise ExprError("bad number %r" % text, i, src) from None
            toks.append((("num", val), i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            toks.append((("name", src[i:j]), i))
            i = j
            continue
        raise ExprError("unexpected character %r" % ch, i, src)
    toks.append(("end", n))
    return toks


# ---------------------------------------------------------------------------
# parser (precedence climbing; comparison lowest and non-associative)


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind):
        tok, pos = self.take()
        if tok != kind:
            raise ExprError("expected %r" % kind, pos, self.src)
        return pos

    def parse(self) -> Expr:
        e = self.cmp()
        tok, pos = self.peek()
        if tok != "end":
            raise ExprError("trailing input", pos, self.src)
        return e

    def cmp(self) -> Expr:
        lhs = self.sum_()
        tok, pos = self.peek()
        if isinstance(tok, str) and tok in _CMP_OPS:
            self.take()
            rhs = self.sum_()
            tok2, pos2 = self.peek()
            if isinstance(tok2, str) and tok2 in _CMP_OPS:
                raise ExprError("comparisons do not chain", pos2, self.src)
            return Cmp(tok, lhs, rhs)
        return lhs

    def sum_(self) -> Expr:
        e = self.term()
        while True:
            tok, _pos = self.peek()
            if tok == "+" or tok == "-":
                self.take()
                e = Binary(tok, e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            tok, _pos = self.peek()
            if tok == "*":
                self.take()
                e = Binary("*", e, self.unary())
            else:
                return e

    def unary(self) -> Expr:
        tok, pos = self.peek()
        if tok == "-":
            self.take()
            inner = self.unary()
            # fold into the literal: the grammar has no negative number
            # tokens, so this is what makes parse(show(e)) exact on consts
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Unary("neg", inner)
        return self.atom()

    def atom(self) -> Expr:
        tok, pos = self.take()
        if tok == "(":
            e = self.cmp()
            self.expect(")")
            return e
        if isinstance(tok, tuple) and tok[0] == "num":
            return Const(tok[1])
        if isinstance(tok, tuple) and tok[0] == "name":
            name = tok[1]
            nxt, _ = self.peek()
            if nxt == "(":
                if name in _UNARY_FUNCS:
                    self.take()
                    arg = self.cmp()
                    self.expect(")")
                    return Unary(name, arg)
                if name in _BINARY_FUNCS:
                    self.take()
                    a = self.cmp()
                    self.expect(",")
                    b = self.cmp()
                    self.expect(")")
                    return Binary(name, a, b)
                raise ExprError("unknown function %r" % name, pos, self.src)
            return Feat(name)
        raise ExprError("expected a value", pos, self.src)


def parse(src: str) -> Expr:
    e = _Parser(src).parse()
    d = depth(e)
    if d > MAX_DEPTH:
        raise ExprError("expression depth %d exceeds cap %d" % (d, MAX_DEPTH))
    return e


# ---------------------------------------------------------------------------
# printing


def _prec(e: Expr) -> int:
    if isinstance(e, Cmp):
        return 1
    if isinstance(e, Binary) and e.op in ("+", "-"):
        return 2
    if isinstance(e, Binary) and e.op == "*":
        return 3
    if isinstance(e, Unary) and e.op == "neg":
        return 4
    return 5


def _show(e: Expr, ctx: int) -> str:
    p = _prec(e)
    if isinstance(e, Const):
        s = repr(e.value)
    elif isinstance(e, Feat):
        s = e.name
    elif isinstance(e, Unary):
        if e.op == "neg":
            s = "-" + _show(e.arg, 4)
        else:
            s = "%s(%s)" % (e.op, _show(e.arg, 0))
    elif isinstance(e, Binary):
        if e.op in ("min", "max"):
            s = "%s(%s, %s)" % (e.op, _show(e.lhs, 0), _show(e.rhs, 0))
        else:
            s = "%s %s %s" % (_show(e.lhs, p), e.op, _show(e.rhs, p + 1))
    else:
        s = "%s %s %s" % (_show(e.lhs, 2), e.op, _show(e.rhs, 2))
    if p < ctx:
        return "(" + s + ")"
    return s


def show(e: Expr) -> str:
    """Canonical text form; parse(show(e)) == e."""
    return _show(e, 0)


def depth(e: Expr) -> int:
    if isinstance(e, (Const, Feat)):
        return 1
    if isinstance(e, Unary):
        return 1 + depth(e.arg)
    return 1 + max(depth(e.lhs), depth(e.rhs))


def features_used(e: Expr) -> set:
    if isinstance(e, Const):
        return set()
    if isinstance(e, Feat):
        return {e.name}
    if isinstance(e, Unary):
        return features_used(e.arg)
    return features_used(e.lhs) | features_used(e.rhs)


# ---------------------------------------------------------------------------
# compilation to the backend VM


_UNARY_OPS = {"neg": pyref.OP_NEG, "abs": pyref.OP_ABS, "exp": pyref.OP_EXP,
              "tanh": pyref.OP_TANH}
_BINARY_OPS = {"+": pyref.OP_ADD, "-": pyref.OP_SUB, "*": pyref.OP_MUL,
               "min": pyref.OP_MIN, "max": pyref.OP_MAX}
_CMP_OPS_VM = {"<": pyref.OP_LT, "<=": pyref.OP_LE, ">": pyref.OP_GT,
               ">=": pyref.OP_GE, "==": pyref.OP_EQ, "!=": pyref.OP_NE}


@dataclass(frozen=True)
class Program:
    """Flat postfix form ready for either backend."""

    ops: array
    consts: array
    source: str


def compile_expr(e: Expr, feature_names) -> Program:
    """Lower a tree to the VM; unknown features are a validation error."""
    index = {n: i for i, n in enumerate(feature_names)}
    ops: list[int] = []
    consts: list[float] = []

    def emit(node: Expr):
        if isinstance(node, Const):
            ops.append(pyref.OP_CONST)
            ops.append(len(consts))
            consts.append(float(node.value))
        elif isinstance(node, Feat):
            if node.name not in index:
                raise ExprError(
                    "unknown feature %r (have: %s)"
                    % (node.name, ", ".join(feature_names))
                )
            ops.append(pyref.OP_FEAT)
            ops.append(index[node.name])
        elif isinstance(node, Unary):
            emit(node.arg)
            ops.append(_UNARY_OPS[node.op])
            ops.append(0)
        elif isinstance(node, Binary):
            emit(node.lhs)
            emit(node.rhs)
            ops.append(_BINARY_OPS[node.op])
            ops.append(0)
        else:
            emit(node.lhs)
            emit(node.rhs)
            ops.append(_CMP_OPS_VM[node.op])
            ops.append(0)

    if depth(e) > MAX_DEPTH:
        raise ExprError("expression depth exceeds cap %d" % MAX_DEPTH)
    emit(e)
    return Program(array("q", ops), array("d", consts), show(e))


def evaluate(program: Program, feats) -> float:
    """Single VM evaluation (reference backend; fine for tests and tooling)."""
    return pyref.eval_program(program.ops, program.consts, feats)


# ---------------------------------------------------------------------------
# pool files: `id := expression` lines, '#' comments


def parse_pool(text: str) -> list:
    """Returns [(id, Expr)] in file order."""
    out = []
    seen = set()
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if ":=" not in stripped:
            raise ExprError("pool line %d: expected `id := expression`" % ln)
        ident, src = stripped.split(":=", 1)
        ident = ident.strip()
        if not ident or not (ident[0].isalpha() or ident[0] == "_"):
            raise ExprError("pool line %d: bad id %r" % (ln, ident))
        if any(not (c.isalnum() or c in "_.-") for c in ident):
            raise ExprError("pool line %d: bad id %r" % (ln, ident))
        if ident in seen:
            raise ExprError("pool line %d: duplicate id %r" % (ln, ident))
        seen.add(ident)
        try:
            e = parse(src.strip())
        except ExprError as exc:
            raise ExprError("pool line %d: %s" % (ln, exc)) from None
        out.append((ident, e))
    return out


def format_pool(entries) -> str:
    return "".join("%s := %s\n" % (ident, show(e)) for ident, e in entries)
