"""Minimal arithmetic expression grammar for coefficient and initial-state strings.

Grammar (used by config files and the coefficient serialization):

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := ('-' | '+') factor | power
    power   := atom ('^' factor)?          # right associative
    atom    := NUMBER | 'x' | 'pi' | FUNC '(' expr ')' | '(' expr ')'
    FUNC    := sin | cos | exp | log | abs

Expressions compile to vectorized numpy callables of one variable ``x``.
"""

from __future__ import annotations

import math
import re
from typing import Callable

import numpy as np

from .errors import SchemaError

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            raise SchemaError(f"unexpected character {text[pos:pos + 1]!r} in expression {text!r}")
        if match.lastgroup == "num":
            tokens.append(("num", float(match.group("num"))))
        elif match.lastgroup == "name":
            tokens.append(("name", match.group("name")))
        else:
            tokens.append(("op", match.group("op")))
        pos = match.end()
    tokens.append(("end", None))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, value = self.next()
        if kind != "op" or value != op:
            raise SchemaError(f"expected {op!r} in expression {self.text!r}")

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise SchemaError(f"trailing input in expression {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.next()
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.next()
            node = (op, node, self.factor())
        return node

    def factor(self):
        if self.peek() == ("op", "-"):
            self.next()
            return ("neg", self.factor())
        if self.peek() == ("op", "+"):
            self.next()
            return self.factor()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.next()
            return ("^", base, self.factor())
        return base

    def atom(self):
        kind, value = self.next()
        if kind == "num":
            return ("const", value)
        if kind == "name":
            if value == "x":
                return ("var",)
            if value == "pi":
                return ("const", math.pi)
            if value in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return ("call", value, arg)
            raise SchemaError(f"unknown identifier {value!r} in expression {self.text!r}")
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise SchemaError(f"unexpected token in expression {self.text!r}")


def _evaluate(node, x):
    op = node[0]
    if op == "const":
        return np.full_like(x, node[1], dtype=float) if np.ndim(x) else node[1]
    if op == "var":
        return x
    if op == "neg":
        return -_evaluate(node[1], x)
    if op == "call":
        return _FUNCTIONS[node[1]](_evaluate(node[2], x))
    a = _evaluate(node[1], x)
    b = _evaluate(node[2], x)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    if op == "^":
        return np.power(a, b)
    raise AssertionError(op)


def compile_expression(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """Compile an expression string into a vectorized callable of x.

    Raises SchemaError on any syntax problem. The returned callable accepts
    scalars or numpy arrays and returns matching float output.
    """
    tree = _Parser(text.strip()).parse()

    def fn(x):
        x = np.asarray(x, dtype=float)
        out = _evaluate(tree, x)
        return np.asarray(out, dtype=float) + np.zeros_like(x)

    fn.expression = text.strip()
    return fn
