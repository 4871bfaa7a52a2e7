"""Tiny expression language for conformal-factor fields.

Configs describe conformal exponents as strings over the complex chart
coordinates; this module parses them with a hand-rolled recursive
descent parser (no ``eval``) and evaluates the resulting tree either on
plain complex arrays or inside the jet algebra, so one source string
yields both fast value sweeps and exact derivatives.

Grammar (whitespace-insensitive)::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := ('+' | '-') unary | power
    power    := atom ('^' exponent)?
    exponent := ('+' | '-')? INTEGER
    atom     := NUMBER | NAME '(' expr ')' | NAME | '(' expr ')'

Names: the variables ``z1 .. zn`` (complex coordinates of the chart)
and the function catalogue ``sin``, ``cos``, ``exp``, ``re``, ``im``,
``abs2``.  Powers take literal integer exponents only; a negative
exponent means the reciprocal.  Numbers are decimal floats (optionally
with a scientific exponent, e.g. ``2.5e-3``).
"""

from __future__ import annotations

import re as _re
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..core.jets import Jet, jcos, jexp, jsin
from ..errors import ConfigError

__all__ = [
    "FUNCTIONS",
    "Node",
    "parse",
    "eval_numeric",
    "eval_jet",
    "jet_closure",
    "imaginary_residue",
]

FUNCTIONS = ("sin", "cos", "exp", "re", "im", "abs2")

_TOKEN_RE = _re.compile(
    r"""\s*(?:
        (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>[-+*/^()])
    )""",
    _re.VERBOSE,
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based: z1 .. zn


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # '+', '-', '*', '/'
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


Node = Union[Num, Var, Call, BinOp, Neg, Pow]


class _Tokens:
    """Token stream with positions for error messages."""

    def __init__(self, source: str):
        self.source = source
        self.items: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(source):
            m = _TOKEN_RE.match(source, pos)
            if m is None or m.end() == pos:
                rest = source[pos:].lstrip()
                if not rest:
                    break
                raise ConfigError(
                    f"expression: unexpected character {rest[0]!r} at "
                    f"position {pos} in {source!r}"
                )
            if m.lastgroup is not None:
                self.items.append((m.lastgroup, m.group(m.lastgroup), m.start()))
            pos = m.end()
        self.cursor = 0

    def peek(self) -> tuple[str, str, int] | None:
        if self.cursor < len(self.items):
            return self.items[self.cursor]
        return None

    def next(self) -> tuple[str, str, int]:
        item = self.peek()
        if item is None:
            raise ConfigError(
                f"expression: unexpected end of input in {self.source!r}"
            )
        self.cursor += 1
        return item

    def accept_op(self, *ops: str) -> str | None:
        item = self.peek()
        if item is not None and item[0] == "op" and item[1] in ops:
            self.cursor += 1
            return item[1]
        return None

    def expect_op(self, op: str) -> None:
        item = self.peek()
        if item is None or item[0] != "op" or item[1] != op:
            where = "end of input" if item is None else f"position {item[2]}"
            raise ConfigError(
                f"expression: expected {op!r} at {where} in {self.source!r}"
            )
        self.cursor += 1


def parse(source: str, n: int) -> Node:
    """Parse ``source`` into a tree, validating names against ``n``
    complex variables.  Raises :class:`ConfigError` on any problem."""
    if not isinstance(source, str) or not source.strip():
        raise ConfigError("expression: empty source")
    toks = _Tokens(source)
    node = _parse_expr(toks, n)
    left = toks.peek()
    if left is not None:
        raise ConfigError(
            f"expression: trailing input {left[1]!r} at position {left[2]} "
            f"in {source!r}"
        )
    return node


def _parse_expr(toks: _Tokens, n: int) -> Node:
    node = _parse_term(toks, n)
    while True:
        op = toks.accept_op("+", "-")
        if op is None:
            return node
        node = BinOp(op, node, _parse_term(toks, n))


def _parse_term(toks: _Tokens, n: int) -> Node:
    node = _parse_unary(toks, n)
    while True:
        op = toks.accept_op("*", "/")
        if op is None:
            return node
        node = BinOp(op, node, _parse_unary(toks, n))


def _parse_unary(toks: _Tokens, n: int) -> Node:
    if toks.accept_op("-"):
        return Neg(_parse_unary(toks, n))
    if toks.accept_op("+"):
        return _parse_unary(toks, n)
    return _parse_power(toks, n)


def _parse_power(toks: _Tokens, n: int) -> Node:
    base = _parse_atom(toks, n)
    if toks.accept_op("^"):
        return Pow(base, _parse_exponent(toks))
    return base


def _parse_exponent(toks: _Tokens) -> int:
    sign = 1
    if toks.accept_op("-"):
        sign = -1
    elif toks.accept_op("+"):
        pass
    kind, text, pos = toks.next()
    if kind != "number" or any(c in text for c in ".eE"):
        raise ConfigError(
            f"expression: power exponents must be literal integers, got "
            f"{text!r} at position {pos}"
        )
    return sign * int(text)


def _parse_atom(toks: _Tokens, n: int) -> Node:
    kind, text, pos = toks.next()
    if kind == "number":
        return Num(float(text))
    if kind == "name":
        if text in FUNCTIONS:
            toks.expect_op("(")
            arg = _parse_expr(toks, n)
            toks.expect_op(")")
            return Call(text, arg)
        m = _re.fullmatch(r"z(\d+)", text)
        if m is None:
            raise ConfigError(
                f"expression: unknown name {text!r} at position {pos}; "
                f"expected z1..z{n} or one of {', '.join(FUNCTIONS)}"
            )
        index = int(m.group(1))
        if not 1 <= index <= n:
            raise ConfigError(
                f"expression: variable {text!r} out of range for complex "
                f"dimension {n} (valid: z1..z{n})"
            )
        return Var(index)
    if kind == "op" and text == "(":
        node = _parse_expr(toks, n)
        toks.expect_op(")")
        return node
    raise ConfigError(
        f"expression: unexpected token {text!r} at position {pos}"
    )


# ---------------------------------------------------------------------------
# evaluation back-ends
# ---------------------------------------------------------------------------


def eval_numeric(node: Node, z: np.ndarray) -> np.ndarray:
    """Evaluate on complex coordinates ``z`` of shape ``(*batch, n)``;
    returns a complex array of shape ``(*batch,)``."""
    z = np.asarray(z, dtype=np.complex128)

    def ev(nd: Node) -> np.ndarray:
        if isinstance(nd, Num):
            return np.full(z.shape[:-1], nd.value, dtype=np.complex128)
        if isinstance(nd, Var):
            return z[..., nd.index - 1]
        if isinstance(nd, Neg):
            return -ev(nd.arg)
        if isinstance(nd, Pow):
            base = ev(nd.base)
            if nd.exponent < 0:
                return 1.0 / base ** (-nd.exponent)
            return base**nd.exponent
        if isinstance(nd, BinOp):
            a, b = ev(nd.left), ev(nd.right)
            if nd.op == "+":
                return a + b
            if nd.op == "-":
                return a - b
            if nd.op == "*":
                return a * b
            return a / b
        if isinstance(nd, Call):
            v = ev(nd.arg)
            if nd.fn == "sin":
                return np.sin(v)
            if nd.fn == "cos":
                return np.cos(v)
            if nd.fn == "exp":
                return np.exp(v)
            if nd.fn == "re":
                return v.real.astype(np.complex128)
            if nd.fn == "im":
                return v.imag.astype(np.complex128)
            return (v * np.conj(v)).real.astype(np.complex128)
        raise ConfigError(f"expression: unknown node {nd!r}")

    return ev(node)


def _jet_real(jet: Jet) -> Jet:
    return jet.real


def _jet_imag(jet: Jet) -> Jet:
    return jet.imag


_JET_FUNCTIONS = {
    "sin": jsin,
    "cos": jcos,
    "exp": jexp,
    "re": _jet_real,
    "im": _jet_imag,
    "abs2": lambda j: j.real * j.real + j.imag * j.imag,
}


def eval_jet(node: Node, zjets: list[Jet]) -> Jet:
    """Evaluate on complex coordinate jets ``zjets[k] = z_{k+1}``."""

    def ev(nd: Node) -> Jet:
        if isinstance(nd, Num):
            return zjets[0] * 0.0 + nd.value
        if isinstance(nd, Var):
            return zjets[nd.index - 1]
        if isinstance(nd, Neg):
            return -ev(nd.arg)
        if isinstance(nd, Pow):
            return ev(nd.base) ** nd.exponent
        if isinstance(nd, BinOp):
            a, b = ev(nd.left), ev(nd.right)
            if nd.op == "+":
                return a + b
            if nd.op == "-":
                return a - b
            if nd.op == "*":
                return a * b
            return a / b
        if isinstance(nd, Call):
            return _JET_FUNCTIONS[nd.fn](ev(nd.arg))
        raise ConfigError(f"expression: unknown node {nd!r}")

    return ev(node)


def jet_closure(node: Node, n: int):
    """Closure for :class:`~hermdeform.core.fields.JetFunctionField`:
    takes the ``2n`` real coordinate jets ``x_1..x_n, y_1..y_n``, forms
    the complex variables and evaluates the tree; the result is
    projected onto its real part (exact: differentiation commutes with
    taking real parts of real-variable jets), so validated real-valued
    expressions stay real to the last bit."""

    def fn(coords: list[Jet]) -> Jet:
        zjets = [coords[k] + coords[n + k] * 1j for k in range(n)]
        return eval_jet(node, zjets).real

    return fn


def imaginary_residue(node: Node, z_samples: np.ndarray) -> float:
    """Relative imaginary residue of the expression over a sample batch;
    used to reject non-real conformal exponents before any metric is
    built.  Raises :class:`ConfigError` when values are not finite."""
    vals = eval_numeric(node, z_samples)
    if not np.all(np.isfinite(vals)):
        raise ConfigError(
            "expression: values are not finite on the sample grid "
            "(division by zero or overflow)"
        )
    scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    resid = float(np.max(np.abs(vals.imag))) if vals.size else 0.0
    return resid / max(1.0, scale)
