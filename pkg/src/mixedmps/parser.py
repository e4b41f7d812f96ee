"""Text parser for operator expressions.

Grammar (EBNF, whitespace-insensitive; ASCII only)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ["*" | "/"] unary } ;      (* adjacency multiplies *)
    unary   = "-" unary | postfix ;
    postfix = primary { "(" scalar { "," scalar } ")" } ;   (* site indexing *)
    primary = NUMBER | NAME | "(" expr ")" | call ;
    call    = ("sum" | "prod") "(" NAME "=" scalar ".." scalar "," expr ")"
            | ("dag" | "exp" | "controlled" | "Dissipator" | "Gate" | "sqrt")
              "(" expr ")"
            | "tensor" "(" expr { "," expr } ")" ;
    NUMBER  = decimal float, optional trailing "i" for an imaginary literal ;

Scalar subexpressions are folded eagerly, `sum`/`prod` ranges are expanded at
parse time, and names resolve through a caller-supplied context of operator
definitions, previously parsed expressions, or plain numbers.  Inside index
argument lists an integer literal with an ``i`` suffix (as in ``2i-1``) is
read as ``2*i`` when a loop variable ``i`` is in scope, since an imaginary
site index is meaningless; elsewhere it stays an imaginary literal.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .ops import (
    Dissipator,
    ExprError,
    Gate,
    Indexed,
    NamedOp,
    OpExpr,
    add_exprs,
    dag,
    mul_exprs,
    scale_expr,
    tensor_exprs,
)
from .ops import Controlled, ExpOp
from .sites import OperatorDef


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


# note: floats require digits after the decimal point so that "1..3" splits
# into "1", "..", "3"
_TOKEN_RE = re.compile(
    r"""
    (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?i?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\.\.|[-+*/(),=])
  | (?P<ws>\s+)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        s = m.group()
        if kind == "bad":
            raise ParseError(f"unexpected character {s!r}", line, col)
        if kind != "ws":
            tokens.append(_Token(kind, s, line, col))
        newlines = s.count("\n")
        if newlines:
            line += newlines
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
    tokens.append(_Token("end", "", line, col))
    return tokens


_KEYWORDS = {"sum", "prod", "dag", "exp", "controlled", "Dissipator", "Gate", "sqrt", "tensor"}

# values flowing through the parser: complex scalars or operator expressions
_Value = object


class _Parser:
    def __init__(self, text: str, context: Mapping[str, object]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.context = dict(context)
        self.loop_vars: dict[str, int] = {}

    # -- token helpers ---------------------------------------------------
    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def expect(self, text: str) -> _Token:
        t = self.next()
        if t.text != text:
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}", t.line, t.col)
        return t

    def error(self, msg: str) -> ParseError:
        t = self.peek()
        return ParseError(msg, t.line, t.col)

    # -- value algebra ---------------------------------------------------
    @staticmethod
    def _is_scalar(v: _Value) -> bool:
        return isinstance(v, complex)

    def _add(self, a: _Value, b: _Value, sign: int) -> _Value:
        if self._is_scalar(a) and self._is_scalar(b):
            return a + sign * b
        if self._is_scalar(a) or self._is_scalar(b):
            raise self.error("cannot add a scalar to an operator; multiply Id instead")
        return add_exprs(a, scale_expr(sign, b) if sign < 0 else b)

    def _mul(self, a: _Value, b: _Value) -> _Value:
        if self._is_scalar(a) and self._is_scalar(b):
            return a * b
        if self._is_scalar(a):
            return scale_expr(a, b)
        if self._is_scalar(b):
            return scale_expr(b, a)
        return mul_exprs(a, b)

    def _div(self, a: _Value, b: _Value) -> _Value:
        if not self._is_scalar(b):
            raise self.error("division by an operator is not defined")
        if b == 0:
            raise self.error("division by zero")
        if self._is_scalar(a):
            return a / b
        return scale_expr(1 / b, a)

    # -- grammar ---------------------------------------------------------
    def parse(self) -> _Value:
        v = self.expr()
        t = self.peek()
        if t.kind != "end":
            raise ParseError(f"unexpected {t.text!r}", t.line, t.col)
        return v

    def expr(self) -> _Value:
        v = self.term()
        while self.peek().text in ("+", "-"):
            sign = 1 if self.next().text == "+" else -1
            v = self._add(v, self.term(), sign)
        return v

    def _starts_unary(self) -> bool:
        t = self.peek()
        return t.kind in ("num", "name") or t.text == "("

    def term(self) -> _Value:
        v = self.unary()
        while True:
            t = self.peek()
            if t.text == "*":
                self.next()
                v = self._mul(v, self.unary())
            elif t.text == "/":
                self.next()
                v = self._div(v, self.unary())
            elif self._starts_unary():
                v = self._mul(v, self.unary())
            else:
                return v

    def unary(self) -> _Value:
        if self.peek().text == "-":
            self.next()
            v = self.unary()
            return -v if self._is_scalar(v) else scale_expr(-1, v)
        return self.postfix()

    def postfix(self) -> _Value:
        v = self.primary()
        while self.peek().text == "(":
            if self._is_scalar(v):
                raise self.error("cannot index a scalar")
            v = self._index(v)
        return v

    def _index(self, base: OpExpr) -> OpExpr:
        open_tok = self.expect("(")
        sites = [self._site_index()]
        while self.peek().text == ",":
            self.next()
            sites.append(self._site_index())
        self.expect(")")
        try:
            return Indexed(base, tuple(sites))
        except ExprError as exc:
            raise ParseError(str(exc), open_tok.line, open_tok.col) from None

    def _site_index(self) -> int:
        v = self.expr_in_index()
        if not self._is_scalar(v):
            raise self.error("site index must be a number")
        if abs(v.imag) > 1e-12 or abs(v.real - round(v.real)) > 1e-9:
            raise self.error(f"site index must be an integer, got {v}")
        return int(round(v.real))

    def expr_in_index(self) -> _Value:
        # identical grammar, but "2i" means 2*i when i is a loop variable
        prev = getattr(self, "_index_mode", False)
        self._index_mode = True
        try:
            return self.expr()
        finally:
            self._index_mode = prev

    def _number(self, t: _Token) -> complex:
        text = t.text
        imag = text.endswith("i")
        if imag:
            text = text[:-1]
        value = float(text)
        if imag and getattr(self, "_index_mode", False) and "i" in self.loop_vars:
            if value != round(value):
                raise ParseError(
                    "imaginary literal in an index position", t.line, t.col
                )
            return complex(value * self.loop_vars["i"])
        return complex(0, value) if imag else complex(value)

    def _resolve_name(self, t: _Token) -> _Value:
        name = t.text
        if name in self.loop_vars:
            return complex(self.loop_vars[name])
        if name in self.context:
            v = self.context[name]
            if isinstance(v, OperatorDef):
                return NamedOp(v)
            if isinstance(v, OpExpr):
                return v
            if isinstance(v, (int, float, complex)):
                return complex(v)
            raise ParseError(f"definition {name!r} has unsupported type", t.line, t.col)
        raise ParseError(f"unknown operator or name {name!r}", t.line, t.col)

    def primary(self) -> _Value:
        t = self.next()
        if t.kind == "num":
            return self._number(t)
        if t.text == "(":
            v = self.expr()
            self.expect(")")
            return v
        if t.kind != "name":
            raise ParseError(f"unexpected {t.text or 'end of input'!r}", t.line, t.col)
        if t.text in ("sum", "prod"):
            return self._reduction(t.text)
        if t.text in ("dag", "exp", "controlled", "Dissipator", "Gate", "sqrt"):
            return self._unary_call(t.text)
        if t.text == "tensor":
            return self._tensor_call()
        return self._resolve_name(t)

    def _unary_call(self, fn: str) -> _Value:
        self.expect("(")
        v = self.expr()
        close = self.peek()
        self.expect(")")
        if fn == "sqrt":
            if not self._is_scalar(v):
                raise ParseError("sqrt takes a scalar", close.line, close.col)
            return complex(np.sqrt(v))
        if self._is_scalar(v):
            raise ParseError(f"{fn} takes an operator expression", close.line, close.col)
        if fn == "dag":
            try:
                return dag(v)
            except ExprError as exc:
                raise ParseError(str(exc), close.line, close.col) from None
        if fn == "exp":
            return ExpOp(v)
        if fn == "controlled":
            return Controlled(v)
        if fn == "Dissipator":
            return Dissipator(v)
        return Gate(v)

    def _tensor_call(self) -> _Value:
        self.expect("(")
        factors = [self.expr()]
        while self.peek().text == ",":
            self.next()
            factors.append(self.expr())
        close = self.peek()
        self.expect(")")
        if any(self._is_scalar(f) for f in factors):
            raise ParseError("tensor takes operator expressions", close.line, close.col)
        return tensor_exprs(*factors)

    def _reduction(self, kind: str) -> _Value:
        self.expect("(")
        var_tok = self.next()
        if var_tok.kind != "name":
            raise ParseError("expected a loop variable name", var_tok.line, var_tok.col)
        var = var_tok.text
        self.expect("=")
        lo = self._bound()
        self.expect("..")
        hi = self._bound()
        self.expect(",")
        body_start = self.pos
        values: list[_Value] = []
        outer = self.loop_vars.get(var)
        end_pos = None
        if hi < lo:
            raise ParseError(f"empty range {lo}..{hi}", var_tok.line, var_tok.col)
        for i in range(lo, hi + 1):
            self.pos = body_start
            self.loop_vars[var] = i
            values.append(self.expr())
            end_pos = self.pos
        if outer is None:
            del self.loop_vars[var]
        else:
            self.loop_vars[var] = outer
        self.pos = end_pos
        self.expect(")")
        if all(self._is_scalar(v) for v in values):
            if kind == "sum":
                return sum(values, complex(0))
            out = complex(1)
            for v in values:
                out *= v
            return out
        if any(self._is_scalar(v) for v in values):
            raise ParseError(
                f"{kind} mixes scalar and operator iterations", var_tok.line, var_tok.col
            )
        if kind == "sum":
            return add_exprs(*values)
        return mul_exprs(*values)

    def _bound(self) -> int:
        v = self.expr()  # stops at ".." and ","; allows arithmetic like n-1
        if not self._is_scalar(v):
            raise self.error("range bound must be a number")
        if abs(v.imag) > 1e-12 or abs(v.real - round(v.real)) > 1e-9:
            raise self.error(f"range bound must be an integer, got {v}")
        return int(round(v.real))


def parse(text: str, context: Mapping[str, object] | None = None):
    """Parse a DSL string into an operator expression or a complex scalar.

    ``context`` maps names to :class:`OperatorDef`, previously parsed
    expressions, or numbers.
    """
    return _Parser(text, context or {}).parse()


def parse_operator(text: str, context: Mapping[str, object] | None = None) -> OpExpr:
    v = parse(text, context)
    if not isinstance(v, OpExpr):
        raise ParseError(f"expected an operator expression, got the number {v}", 1, 1)
    return v
