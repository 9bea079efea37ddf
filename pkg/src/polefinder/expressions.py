"""Closed-form expression grammar with forward-mode differentiation.

Grammar: real literals, named variables, ``+ - * / ^``, unary minus,
``sin cos exp log sqrt`` and parentheses.  Expressions evaluate on plain
floats or on :class:`Dual` numbers, so first derivatives come out exact
(no finite differencing of user-supplied profiles or metrics).
"""

from __future__ import annotations

import math
import re

from .errors import ExpressionError

_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class Dual:
    """First-order dual number ``val + der * eps`` for one seed variable."""

    __slots__ = ("val", "der")

    def __init__(self, val, der=0.0):
        self.val = float(val)
        self.der = float(der)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        return Dual(self.val + other, self.der)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.der - other.der)
        return Dual(self.val - other, self.der)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.der)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.der * other.val + self.val * other.der)
        return Dual(self.val * other, self.der * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv,
                        (self.der - self.val * other.der * inv) * inv)
        inv = 1.0 / other
        return Dual(self.val * inv, self.der * inv)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        return Dual(other * inv, -other * self.der * inv * inv)

    def __pow__(self, other):
        if isinstance(other, Dual):
            # f^g = exp(g log f); requires f > 0 when g varies
            v = self.val ** other.val
            return Dual(v, v * (other.der * math.log(self.val)
                                + other.val * self.der / self.val))
        v = self.val ** other
        return Dual(v, other * self.val ** (other - 1) * self.der)

    def __rpow__(self, other):
        v = other ** self.val
        return Dual(v, v * math.log(other) * self.der)


def _sin(x):
    if isinstance(x, Dual):
        return Dual(math.sin(x.val), math.cos(x.val) * x.der)
    return math.sin(x)


def _cos(x):
    if isinstance(x, Dual):
        return Dual(math.cos(x.val), -math.sin(x.val) * x.der)
    return math.cos(x)


def _exp(x):
    if isinstance(x, Dual):
        v = math.exp(x.val)
        return Dual(v, v * x.der)
    return math.exp(x)


def _log(x):
    if isinstance(x, Dual):
        return Dual(math.log(x.val), x.der / x.val)
    return math.log(x)


def _sqrt(x):
    if isinstance(x, Dual):
        v = math.sqrt(x.val)
        return Dual(v, 0.5 * x.der / v)
    return math.sqrt(x)


_FUNC_IMPL = {"sin": _sin, "cos": _cos, "exp": _exp, "log": _log, "sqrt": _sqrt}

_TOKEN_RE = re.compile(r"""
    \s*(?:
        (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>[-+*/^()])
    )""", re.VERBOSE)


def _tokenize(src):
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character at position {pos}: {src[pos:]!r}")
        if m.lastgroup == "number":
            tokens.append(("num", float(m.group("number"))))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name")))
        else:
            tokens.append(("op", m.group("op")))
        pos = m.end()
    return tokens


class _Parser:
    """Recursive-descent parser producing a nested-tuple AST."""

    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def eat(self, kind=None, value=None):
        tok = self.peek()
        if tok is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            raise ExpressionError(f"unexpected token {tok!r}")
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek() is not None:
            raise ExpressionError(f"trailing input at token {self.peek()!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.eat("op")[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.eat("op")[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.eat("op")
            return ("neg", self.unary())
        if self.peek() == ("op", "+"):
            self.eat("op")
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.eat("op")
            # right associative; exponent may itself be signed
            return ("^", base, self.unary())
        return base

    def atom(self):
        tok = self.peek()
        if tok is None:
            raise ExpressionError("unexpected end of expression")
        if tok[0] == "num":
            self.eat()
            return ("num", tok[1])
        if tok[0] == "name":
            self.eat()
            name = tok[1]
            if name in _FUNCTIONS:
                self.eat("op", "(")
                arg = self.expr()
                self.eat("op", ")")
                return ("call", name, arg)
            if name == "pi":
                return ("num", math.pi)
            return ("var", name)
        if tok == ("op", "("):
            self.eat()
            node = self.expr()
            self.eat("op", ")")
            return node
        raise ExpressionError(f"unexpected token {tok!r}")


def _collect_vars(node, out):
    tag = node[0]
    if tag == "var":
        out.add(node[1])
    elif tag in ("+", "-", "*", "/", "^"):
        _collect_vars(node[1], out)
        _collect_vars(node[2], out)
    elif tag == "neg":
        _collect_vars(node[1], out)
    elif tag == "call":
        _collect_vars(node[2], out)


def _eval(node, env):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "var":
        try:
            return env[node[1]]
        except KeyError:
            raise ExpressionError(f"unbound variable {node[1]!r}") from None
    if tag == "neg":
        return -_eval(node[1], env)
    if tag == "call":
        return _FUNC_IMPL[node[1]](_eval(node[2], env))
    a = _eval(node[1], env)
    b = _eval(node[2], env)
    if tag == "+":
        return a + b
    if tag == "-":
        return a - b
    if tag == "*":
        return a * b
    if tag == "/":
        return a / b
    if tag == "^":
        return a ** b
    raise ExpressionError(f"corrupt AST node {node!r}")


class Expression:
    """Compiled closed-form expression.

    Call with keyword arguments binding every variable; values may be
    floats or :class:`Dual` numbers.  Instances are immutable and pickle
    via their source text.
    """

    def __init__(self, source, allowed_vars=None):
        self.source = source
        try:
            self._ast = _Parser(_tokenize(source)).parse()
        except ExpressionError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc}") from None
        vars_found = set()
        _collect_vars(self._ast, vars_found)
        if allowed_vars is not None:
            extra = vars_found - set(allowed_vars)
            if extra:
                raise ExpressionError(
                    f"expression {source!r} uses unknown variable(s) {sorted(extra)}")
        self.variables = frozenset(vars_found)

    def __call__(self, **env):
        return _eval(self._ast, env)

    def derivative(self, var, **env):
        """Value and d/d``var`` at the given binding, via dual numbers."""
        dual_env = dict(env)
        dual_env[var] = Dual(env[var], 1.0)
        out = _eval(self._ast, dual_env)
        if isinstance(out, Dual):
            return out.val, out.der
        return float(out), 0.0

    def __eq__(self, other):
        return isinstance(other, Expression) and other.source == self.source

    def __hash__(self):
        return hash(self.source)

    def __repr__(self):
        return f"Expression({self.source!r})"

    def __getstate__(self):
        return self.source

    def __setstate__(self, state):
        self.__init__(state)
