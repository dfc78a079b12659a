"""Arithmetic expressions over u1..uk, y1..ym, z1..zn.

Grammar (recursive descent)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' ['-'] INT)*
    atom   := NUMBER | IDENT | IDENT '(' args ')' | '(' expr ')'

Parsed trees are immutable dataclasses. For evaluation a tree is compiled
into a Python function over numpy arrays, so one compiled expression works
on a single point or on a batch of points (leading axes broadcast).
"""

import math
import re
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .errors import EvaluationError, SchemaError

MAX_DEPTH = 64
DIV_GUARD = 1e-300

UNARY_FUNCS = {"sin": "np.sin", "cos": "np.cos", "tanh": "np.tanh", "atan": "np.arctan", "abs": "np.abs"}
BINARY_FUNCS = {"min": "np.minimum", "max": "np.maximum"}
CONSTANTS = {"pi": math.pi}


class ExpressionError(SchemaError):
    """Parse failure; ``position`` is the character offset in the source."""

    def __init__(self, message, position):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class ExpressionSyntaxError(ExpressionError):
    pass


class UnknownIdentifier(ExpressionError):
    pass


class ArityMismatch(ExpressionError):
    pass


class IndexOutOfRange(ExpressionError):
    pass


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # 'u', 'y' or 'z'
    index: int  # 1-based, as written

    @property
    def name(self):
        return f"{self.kind}{self.index}"


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: Tuple["Node", ...]


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


Node = Union[Const, Var, Neg, Call, BinOp, Pow]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)
_VAR_RE = re.compile(r"([uyz])(\d+)$")


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", bad)
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, dims):
        self.text = text
        self.dims = dict(zip("uyz", dims))
        self.tokens = _tokenize(text)
        self.i = 0
        self.depth = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ExpressionSyntaxError(f"expected {value!r}, found {found}", pos)

    def enter(self, pos):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ExpressionSyntaxError(f"expression nested deeper than {MAX_DEPTH}", pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected {val!r}", pos)
        return node

    def expr(self):
        self.enter(self.peek()[2])
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        self.depth -= 1
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        kind, val, pos = self.peek()
        if kind == "op" and val == "-":
            self.take()
            self.enter(pos)
            node = Neg(self.factor())
            self.depth -= 1
            return node
        return self.power()

    def power(self):
        node = self.atom()
        while self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ExpressionSyntaxError("exponent must be an integer literal", pos)
            node = Pow(node, sign * int(val))
        return node

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            if self.peek()[1] == "(":
                return self.call(val, pos)
            return self.identifier(val, pos)
        found = "end of input" if kind == "end" else repr(val)
        raise ExpressionSyntaxError(f"unexpected {found}", pos)

    def call(self, name, pos):
        if name in UNARY_FUNCS:
            arity = 1
        elif name in BINARY_FUNCS:
            arity = 2
        else:
            raise UnknownIdentifier(f"unknown function {name!r}", pos)
        self.take()  # '('
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != arity:
            raise ArityMismatch(f"{name} takes {arity} argument(s), got {len(args)}", pos)
        return Call(name, tuple(args))

    def identifier(self, name, pos):
        if name in CONSTANTS:
            return Const(CONSTANTS[name])
        match = _VAR_RE.match(name)
        if match is None:
            raise UnknownIdentifier(f"unknown identifier {name!r}", pos)
        kind, index = match.group(1), int(match.group(2))
        if not 1 <= index <= self.dims[kind]:
            raise IndexOutOfRange(
                f"{name} out of range ({kind}1..{kind}{self.dims[kind]})", pos
            )
        return Var(kind, index)


def parse_dynamics(text, dims):
    """Parse ``text`` into an expression tree.

    Parameters
    ----------
    text : str
        Source, e.g. ``"sin(y1) - 0.1*tanh(z1)"``.
    dims : (k, m, n)
        Number of u, y and z variables in scope.
    """
    if not isinstance(text, str) or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    return _Parser(text, tuple(int(d) for d in dims)).parse()


def variables(node):
    """Set of variable names the tree depends on."""
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Const):
        return set()
    if isinstance(node, (Neg, Pow)):
        return variables(node.arg if isinstance(node, Neg) else node.base)
    if isinstance(node, Call):
        return set().union(*(variables(a) for a in node.args))
    return variables(node.left) | variables(node.right)


def to_source(node):
    """Print a tree back to parseable text (fully parenthesised)."""
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.arg)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, Pow):
        return f"({to_source(node.base)}^{node.exponent})"
    return f"({to_source(node.left)} {node.op} {to_source(node.right)})"


def _guarded_div(a, b):
    if np.any(np.abs(b) < DIV_GUARD):
        raise EvaluationError("division by (near) zero")
    return a / b


def _codegen(node):
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"{node.kind}[..., {node.index - 1}]"
    if isinstance(node, Neg):
        return f"(-{_codegen(node.arg)})"
    if isinstance(node, Call):
        fn = UNARY_FUNCS.get(node.func) or BINARY_FUNCS[node.func]
        return f"{fn}({', '.join(_codegen(a) for a in node.args)})"
    if isinstance(node, Pow):
        if node.exponent >= 0:
            return f"(({_codegen(node.base)}) ** {node.exponent})"
        return f"_div(1.0, ({_codegen(node.base)}) ** {-node.exponent})"
    if node.op == "/":
        return f"_div({_codegen(node.left)}, {_codegen(node.right)})"
    return f"({_codegen(node.left)} {node.op} {_codegen(node.right)})"


def compile_vector(nodes):
    """Compile expression trees into ``f(u, y, z) -> array (..., len(nodes))``.

    Inputs are arrays whose last axis indexes the variable; leading axes
    broadcast, so the same function evaluates one point or a batch.
    """
    body = ", ".join(_codegen(n) for n in nodes)
    src = (
        "def _f(u, y, z):\n"
        f"    return np.stack(np.broadcast_arrays({body}, _shape(u, y, z)), axis=-1)[..., :-1]\n"
    )
    namespace = {"np": np, "_div": _guarded_div, "_shape": _batch_zero}
    exec(compile(src, "<avgctl-expression>", "exec"), namespace)
    fn = namespace["_f"]

    def evaluate(u, y, z):
        with np.errstate(all="ignore"):
            out = fn(np.asarray(u, dtype=float), np.asarray(y, dtype=float), np.asarray(z, dtype=float))
        if not np.all(np.isfinite(out)):
            raise EvaluationError("expression produced a non-finite value")
        return out

    return evaluate


_MATH_UNARY = {"sin": "_m.sin", "cos": "_m.cos", "tanh": "_m.tanh", "atan": "_m.atan", "abs": "abs"}


def _codegen_point(node):
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"{node.kind}[{node.index - 1}]"
    if isinstance(node, Neg):
        return f"(-{_codegen_point(node.arg)})"
    if isinstance(node, Call):
        fn = _MATH_UNARY.get(node.func) or node.func
        return f"{fn}({', '.join(_codegen_point(a) for a in node.args)})"
    if isinstance(node, Pow):
        if node.exponent >= 0:
            return f"(({_codegen_point(node.base)}) ** {node.exponent})"
        return f"_div(1.0, ({_codegen_point(node.base)}) ** {-node.exponent})"
    if node.op == "/":
        return f"_div({_codegen_point(node.left)}, {_codegen_point(node.right)})"
    return f"({_codegen_point(node.left)} {node.op} {_codegen_point(node.right)})"


def _point_div(a, b):
    if abs(b) < DIV_GUARD:
        raise EvaluationError("division by (near) zero")
    return a / b


def compile_point(nodes):
    """Compile trees into a fast ``f(u, y, z) -> list of floats`` for one point.

    Same semantics as :func:`compile_vector` but scalar ``math`` calls; used
    inside integrator loops where per-call overhead dominates.
    """
    body = ", ".join(_codegen_point(n) for n in nodes)
    src = f"def _f(u, y, z):\n    return [{body}]\n"
    namespace = {"_m": math, "_div": _point_div}
    exec(compile(src, "<avgctl-expression>", "exec"), namespace)
    fn = namespace["_f"]

    def evaluate(u, y, z):
        try:
            out = fn(u, y, z)
        except (OverflowError, ValueError) as exc:
            raise EvaluationError(str(exc)) from exc
        if not all(map(math.isfinite, out)):
            raise EvaluationError("expression produced a non-finite value")
        return out

    return evaluate


def _batch_zero(u, y, z):
    # zero with the broadcast batch shape so constant expressions broadcast too
    shape = np.broadcast_shapes(u.shape[:-1], y.shape[:-1], z.shape[:-1])
    return np.zeros(shape)
