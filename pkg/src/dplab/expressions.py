"""Tiny arithmetic expression language for field definitions.

Configs describe exponents, coefficients and data as closed-form
expressions in the variables ``x``, ``y`` (2D only) and ``t``.  The
grammar is deliberately small:

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | power
    power  := atom ("^" factor)?          right-associative
    atom   := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Functions: ``min``, ``max`` (two or more arguments), ``abs``, ``sin``,
``cos``, ``exp``.  The constant ``pi`` is predefined.  Evaluation
broadcasts over numpy arrays.  There is no symbolic differentiation.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import ExpressionError

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

_UNARY_FUNCS = {
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
}

_NARY_FUNCS = {
    "min": np.minimum,
    "max": np.maximum,
}

_CONSTANTS = {"pi": np.pi}

_VARIABLES = ("x", "y", "t")


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            rest = source[pos:].strip()
            if not rest:
                break
            raise ExpressionError(f"unexpected character in expression: {rest[0]!r}")
        pos = match.end()
        if match.lastgroup == "number":
            tokens.append(("num", float(match.group("number"))))
        elif match.lastgroup == "name":
            tokens.append(("name", match.group("name")))
        else:
            tokens.append(("op", match.group("op")))
    tokens.append(("end", None))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, value = self.next()
        if kind != "op" or value != op:
            raise ExpressionError(f"expected {op!r}, found {value!r}")

    def parse(self):
        node = self.expr()
        kind, value = self.peek()
        if kind != "end":
            raise ExpressionError(f"trailing input at {value!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.next()
            rhs = self.term()
            node = ("+" if op == "+" else "-", node, rhs)
        return node

    def term(self):
        node = self.factor()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.next()
            rhs = self.factor()
            node = (op, node, rhs)
        return node

    def factor(self):
        if self.peek() == ("op", "-"):
            self.next()
            return ("neg", self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.next()
            exponent = self.factor()
            return ("^", base, exponent)
        return base

    def atom(self):
        kind, value = self.next()
        if kind == "num":
            return ("num", value)
        if kind == "name":
            if self.peek() == ("op", "("):
                self.next()
                args = [self.expr()]
                while self.peek() == ("op", ","):
                    self.next()
                    args.append(self.expr())
                self.expect_op(")")
                return ("call", value, args)
            return ("var", value)
        if (kind, value) == ("op", "("):
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError(f"unexpected token {value!r}")


def _collect_names(node, out):
    tag = node[0]
    if tag == "var":
        out.add(node[1])
    elif tag == "call":
        out.add(node[1] + "()")
        for arg in node[2]:
            _collect_names(arg, out)
    elif tag in ("+", "-", "*", "/", "^"):
        _collect_names(node[1], out)
        _collect_names(node[2], out)
    elif tag == "neg":
        _collect_names(node[1], out)


def _evaluate(node, env):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "var":
        name = node[1]
        if name in _CONSTANTS:
            return _CONSTANTS[name]
        try:
            return env[name]
        except KeyError:
            raise ExpressionError(f"unknown variable {name!r}") from None
    if tag == "neg":
        return -_evaluate(node[1], env)
    if tag == "call":
        name, args = node[1], node[2]
        values = [_evaluate(arg, env) for arg in args]
        if name in _UNARY_FUNCS:
            if len(values) != 1:
                raise ExpressionError(f"{name}() takes exactly one argument")
            return _UNARY_FUNCS[name](values[0])
        if name in _NARY_FUNCS:
            if len(values) < 2:
                raise ExpressionError(f"{name}() takes at least two arguments")
            result = values[0]
            for value in values[1:]:
                result = _NARY_FUNCS[name](result, value)
            return result
        raise ExpressionError(f"unknown function {name!r}")
    lhs = _evaluate(node[1], env)
    rhs = _evaluate(node[2], env)
    if tag == "+":
        return lhs + rhs
    if tag == "-":
        return lhs - rhs
    if tag == "*":
        return lhs * rhs
    if tag == "/":
        return lhs / rhs
    if tag == "^":
        return np.power(lhs, rhs)
    raise ExpressionError(f"corrupt expression node {tag!r}")


class Expression:
    """Compiled expression; call with keyword arrays x, y, t."""

    def __init__(self, source: str):
        self.source = source.strip()
        if not self.source:
            raise ExpressionError("empty expression")
        self._ast = _Parser(_tokenize(self.source)).parse()
        names = set()
        _collect_names(self._ast, names)
        self.variables = frozenset(
            n for n in names if n in _VARIABLES and n not in _CONSTANTS
        )

    def __call__(self, x=None, y=None, t=None):
        env = {}
        if x is not None:
            env["x"] = x
        if y is not None:
            env["y"] = y
        if t is not None:
            env["t"] = t
        missing = self.variables - set(env)
        if missing:
            raise ExpressionError(f"missing values for {sorted(missing)}")
        with np.errstate(divide="ignore", invalid="ignore"):
            value = _evaluate(self._ast, env)
        return value

    def __repr__(self):
        return f"Expression({self.source!r})"


def parse_expression(source: str) -> Expression:
    return Expression(source)
