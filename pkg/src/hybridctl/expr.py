"""Arithmetic expression mini-language.

Every scenario-defined function (dynamics, impulse maps, costs, interpolation
bases) is written in this language.  Grammar::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" ["-"] INTEGER)*
    atom    := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

``^`` binds tighter than unary minus, so ``-x1^2`` is ``-(x1^2)``.  All binary
operators are left associative.  Functions: sin, cos, exp, log, sqrt, abs,
min, max (two arguments), plus ``sign`` and ``step`` which appear in
derivatives of abs/min/max (``step(v)`` is 1 for v >= 0, else 0).

Evaluation works on floats and on numpy arrays (elementwise, broadcasting).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

import numpy as np

__all__ = [
    "Expression",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Pow",
    "Call",
    "ExprError",
    "ExprSyntaxError",
    "UndeclaredVariableError",
    "EvaluationError",
    "DomainError",
    "parse",
    "evaluate",
    "differentiate",
    "to_string",
    "variables",
    "compile_expr",
    "uses_kinks",
    "substitute",
    "kink_arguments",
    "FUNCTIONS",
]


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"syntax error at offset {position}: {message}")


class UndeclaredVariableError(ExprError):
    def __init__(self, name: str, position: int = -1):
        self.name = name
        self.position = position
        where = f" at offset {position}" if position >= 0 else ""
        super().__init__(f"undeclared variable {name!r}{where}")


class EvaluationError(ExprError):
    """Missing binding or division by zero."""


class DomainError(EvaluationError):
    """log/sqrt outside their real domain."""


# -- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Pow:
    base: "Expression"
    exponent: int


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Expression = Union[Num, Var, Neg, BinOp, Pow, Call]

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
    "sign": 1,
    "step": 1,
}

# -- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, name, op, end
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, declared: frozenset | None):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.declared = declared

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _fail(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"{msg}, got {what}", tok.pos, self.text)

    def _accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def _expect(self, text: str):
        if not self._accept(text):
            self._fail(f"expected {text!r}")

    def parse(self) -> Expression:
        e = self.expr()
        if self.tok.kind != "end":
            self._fail("unexpected token")
        return e

    def expr(self) -> Expression:
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expression:
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expression:
        if self._accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expression:
        e = self.atom()
        while self._accept("^"):
            sign = -1 if self._accept("-") else 1
            tok = self.tok
            if tok.kind != "num" or not tok.text.isdigit():
                self._fail("exponent must be an integer literal")
            self.i += 1
            e = Pow(e, sign * int(tok.text))
        return e

    def atom(self) -> Expression:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "name":
            self.i += 1
            if self._accept("("):
                if tok.text not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {tok.text!r}", tok.pos, self.text)
                args = [self.expr()]
                while self._accept(","):
                    args.append(self.expr())
                self._expect(")")
                if len(args) != FUNCTIONS[tok.text]:
                    raise ExprSyntaxError(
                        f"{tok.text} takes {FUNCTIONS[tok.text]} argument(s), got {len(args)}",
                        tok.pos,
                        self.text,
                    )
                return Call(tok.text, tuple(args))
            if tok.text in FUNCTIONS:
                raise ExprSyntaxError(f"function {tok.text!r} needs arguments", tok.pos, self.text)
            if self.declared is not None and tok.text not in self.declared:
                raise UndeclaredVariableError(tok.text, tok.pos)
            return Var(tok.text)
        if self._accept("("):
            e = self.expr()
            self._expect(")")
            return e
        self._fail("expected a number, name or '('")


def parse(text: str, declared_vars: Iterable[str] | None = None) -> Expression:
    """Parse ``text``; ``declared_vars=None`` accepts any variable name."""
    declared = None if declared_vars is None else frozenset(declared_vars)
    return _Parser(text, declared).parse()


# -- evaluation --------------------------------------------------------------


def _is_array(v) -> bool:
    return isinstance(v, np.ndarray)


def _div(a, b):
    if _is_array(b):
        if np.any(b == 0):
            raise EvaluationError("division by zero")
    elif b == 0:
        raise EvaluationError("division by zero")
    return a / b


def _log(v):
    if _is_array(v):
        if np.any(v <= 0):
            raise DomainError("log of a non-positive argument")
        return np.log(v)
    if v <= 0:
        raise DomainError(f"log of non-positive argument {v}")
    return math.log(v)


def _sqrt(v):
    if _is_array(v):
        if np.any(v < 0):
            raise DomainError("sqrt of a negative argument")
        return np.sqrt(v)
    if v < 0:
        raise DomainError(f"sqrt of negative argument {v}")
    return math.sqrt(v)


def _ipow(base, k: int):
    if k < 0:
        return _div(1.0, base ** (-k))
    return base**k


def _step(v):
    if _is_array(v):
        return np.where(v >= 0, 1.0, 0.0)
    return 1.0 if v >= 0 else 0.0


def _sign(v):
    if _is_array(v):
        return np.sign(v).astype(float)
    return float((v > 0) - (v < 0))


def _min(a, b):
    if _is_array(a) or _is_array(b):
        return np.where(a <= b, a, b)
    return a if a <= b else b


def _max(a, b):
    if _is_array(a) or _is_array(b):
        return np.where(a >= b, a, b)
    return a if a >= b else b


def _unary(np_fn, math_fn):
    def f(v):
        return np_fn(v) if _is_array(v) else math_fn(v)

    return f


_FN_IMPL: dict[str, Callable] = {
    "sin": _unary(np.sin, math.sin),
    "cos": _unary(np.cos, math.cos),
    "exp": _unary(np.exp, math.exp),
    "log": _log,
    "sqrt": _sqrt,
    "abs": _unary(np.abs, abs),
    "min": _min,
    "max": _max,
    "sign": _sign,
    "step": _step,
}


def evaluate(e: Expression, env: Mapping[str, object]):
    """Evaluate by walking the tree.  Values may be floats or numpy arrays."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise EvaluationError(f"no binding for variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, BinOp):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return _div(a, b)
    if isinstance(e, Pow):
        return _ipow(evaluate(e.base, env), e.exponent)
    if isinstance(e, Call):
        return _FN_IMPL[e.fn](*(evaluate(a, env) for a in e.args))
    raise TypeError(f"not an expression node: {e!r}")


def variables(e: Expression) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return variables(e.arg)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Pow):
        return variables(e.base)
    return set().union(*(variables(a) for a in e.args))


def uses_kinks(e: Expression) -> bool:
    """True if ``e`` contains abs/min/max/sign/step."""
    if isinstance(e, Call):
        return e.fn in ("abs", "min", "max", "sign", "step") or any(uses_kinks(a) for a in e.args)
    if isinstance(e, Neg):
        return uses_kinks(e.arg)
    if isinstance(e, BinOp):
        return uses_kinks(e.left) or uses_kinks(e.right)
    if isinstance(e, Pow):
        return uses_kinks(e.base)
    return False


# -- printing ----------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_num(v: float) -> str:
    if math.isinf(v):
        return "1e999"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def to_string(e: Expression) -> str:
    """Render with minimal parentheses; re-parsing evaluates identically."""
    return _render(e)[0]


def _render(e: Expression) -> tuple[str, int]:
    # returns (text, precedence); atoms 5, power 4, unary 3
    if isinstance(e, Num):
        if e.value < 0 or math.copysign(1.0, e.value) < 0:
            return f"(-{_fmt_num(-e.value)})", 5
        return _fmt_num(e.value), 5
    if isinstance(e, Var):
        return e.name, 5
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(to_string(a) for a in e.args)})", 5
    if isinstance(e, Pow):
        s, p = _render(e.base)
        if p < 5:
            s = f"({s})"
        return f"{s}^{e.exponent}", 4
    if isinstance(e, Neg):
        s, p = _render(e.arg)
        if p < 3:
            s = f"({s})"
        return f"-{s}", 3
    prec = _PREC[e.op]
    ls, lp = _render(e.left)
    rs, rp = _render(e.right)
    if lp < prec:
        ls = f"({ls})"
    if rp <= prec:
        rs = f"({rs})"
    return f"{ls} {e.op} {rs}", prec


# -- compilation -------------------------------------------------------------


def _py(e: Expression) -> str:
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"_v[{e.name!r}]"
    if isinstance(e, Neg):
        return f"(-{_py(e.arg)})"
    if isinstance(e, BinOp):
        if e.op == "/":
            return f"_div({_py(e.left)}, {_py(e.right)})"
        return f"({_py(e.left)} {e.op} {_py(e.right)})"
    if isinstance(e, Pow):
        if e.exponent >= 0:
            return f"({_py(e.base)} ** {e.exponent})"
        return f"_ipow({_py(e.base)}, {e.exponent})"
    return f"_fn_{e.fn}({', '.join(_py(a) for a in e.args)})"


_COMPILE_NS = {"_div": _div, "_ipow": _ipow, **{f"_fn_{k}": v for k, v in _FN_IMPL.items()}}


def compile_expr(e: Expression) -> Callable[[Mapping[str, object]], object]:
    """Compile to a Python function of an environment mapping.

    Same semantics and error behaviour as :func:`evaluate`, without the
    per-node dispatch cost.  Used in the solvers' inner loops.
    """
    src = f"def _f(_v):\n    return {_py(e)}\n"
    ns = dict(_COMPILE_NS)
    exec(compile(src, "<expr>", "exec"), ns)
    fn = ns["_f"]

    def run(env):
        try:
            return fn(env)
        except KeyError as exc:
            raise EvaluationError(f"no binding for variable {exc.args[0]!r}") from None

    run.__doc__ = to_string(e)
    return run


# -- differentiation ---------------------------------------------------------

ZERO = Num(0.0)
ONE = Num(1.0)


def _is_num(e, v=None) -> bool:
    return isinstance(e, Num) and (v is None or e.value == v)


def _add(a, b):
    if _is_num(a, 0):
        return b
    if _is_num(b, 0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a, b):
    if _is_num(b, 0):
        return a
    if _is_num(a, 0):
        return _neg(b)
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _mul(a, b):
    if _is_num(a, 0) or _is_num(b, 0):
        return ZERO
    if _is_num(a, 1):
        return b
    if _is_num(b, 1):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _divide(a, b):
    if _is_num(a, 0):
        return ZERO
    if _is_num(b, 1):
        return a
    return BinOp("/", a, b)


def _neg(a):
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def differentiate(e: Expression, var: str) -> Expression:
    """Symbolic partial derivative with light constant folding.

    Kinks: d|v| = sign(v) dv with sign(0) = 0; min/max follow the active
    argument and the first argument wins ties.
    """
    d = differentiate
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return _neg(d(e.arg, var))
    if isinstance(e, BinOp):
        da, db = d(e.left, var), d(e.right, var)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, e.right), _mul(e.left, db))
        # quotient rule
        num = _sub(_mul(da, e.right), _mul(e.left, db))
        if _is_num(num, 0):
            return ZERO
        return _divide(num, Pow(e.right, 2))
    if isinstance(e, Pow):
        k = e.exponent
        db = d(e.base, var)
        if k == 0 or _is_num(db, 0):
            return ZERO
        if k == 1:
            return db
        inner = e.base if k == 2 else Pow(e.base, k - 1)
        return _mul(_mul(Num(float(k)), inner), db)
    # Call
    args = e.args
    if e.fn in ("min", "max"):
        f, g = args
        df, dg = d(f, var), d(g, var)
        if _is_num(df, 0) and _is_num(dg, 0):
            return ZERO
        sel = Call("step", (_sub(g, f) if e.fn == "min" else _sub(f, g),))
        return _add(_mul(sel, df), _mul(_sub(ONE, sel), dg))
    (u,) = args
    du = d(u, var)
    if _is_num(du, 0):
        return ZERO
    if e.fn == "sin":
        outer = Call("cos", (u,))
    elif e.fn == "cos":
        outer = _neg(Call("sin", (u,)))
    elif e.fn == "exp":
        outer = e
    elif e.fn == "log":
        return _divide(du, u)
    elif e.fn == "sqrt":
        return _divide(du, _mul(Num(2.0), e))
    elif e.fn == "abs":
        outer = Call("sign", (u,))
    else:  # sign, step: piecewise constant
        return ZERO
    return _mul(outer, du)


def substitute(e: Expression, mapping: Mapping[str, Expression]) -> Expression:
    """Replace variables by expressions."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), e.exponent)
    return Call(e.fn, tuple(substitute(a, mapping) for a in e.args))


def kink_arguments(e: Expression) -> list[Expression]:
    """Expressions whose zeros are kinks of ``e`` (abs argument, min/max gap)."""
    out = []
    if isinstance(e, Call):
        if e.fn in ("abs", "sign", "step"):
            out.append(e.args[0])
        elif e.fn in ("min", "max"):
            out.append(BinOp("-", e.args[0], e.args[1]))
        for a in e.args:
            out.extend(kink_arguments(a))
    elif isinstance(e, Neg):
        out.extend(kink_arguments(e.arg))
    elif isinstance(e, BinOp):
        out.extend(kink_arguments(e.left))
        out.extend(kink_arguments(e.right))
    elif isinstance(e, Pow):
        out.extend(kink_arguments(e.base))
    return out
