"""Vector fields written as arithmetic expressions.

A field is one expression per state component, over state variables and
named control-parameter groups.  Parameter variables are the group name
followed by a 1-based index (``u1``, ``u2``); a one-dimensional group may
also be referenced by its bare name (``u``).

Grammar, loosest binding first::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom [('^' | '**') ['-'] INT]
    atom   := NUMBER | NAME | FUNC '(' expr (',' expr)* ')' | '(' expr ')'

with ``FUNC`` one of ``min``, ``max``, ``abs``.  Evaluation is vectorized
over leading array axes.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "FieldSignature",
    "VectorField",
    "ParseError",
    "FieldDomainError",
    "parse_expr",
    "parse_field",
    "eval_field",
    "jacobian_fd",
    "lie_bracket",
]

FUNCTIONS = {"min": (2, None), "max": (2, None), "abs": (1, 1)}


class ParseError(ValueError):
    def __init__(self, message: str, position: int, identifier: str | None = None):
        super().__init__(f"{message} at position {position}")
        self.position = position
        self.identifier = identifier


class FieldDomainError(ArithmeticError):
    """Raised when a component cannot be evaluated (e.g. division by zero)."""

    def __init__(self, message: str, component: int | None = None):
        if component is not None:
            message = f"component {component}: {message}"
        super().__init__(message)
        self.component = component


# ---------------------------------------------------------------------------
# expression trees


@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg:
    operand: "Node"

    def __str__(self):
        return f"(-{self.operand})"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int

    def __str__(self):
        return f"({self.base}^{self.exponent})"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    def __str__(self):
        return f"{self.func}({', '.join(str(a) for a in self.args)})"


Node = Num | Var | Neg | BinOp | Pow | Call


def variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, BinOp):
        return variables(node.left) | variables(node.right)
    if isinstance(node, Pow):
        return variables(node.base)
    out: set[str] = set()
    for a in node.args:
        out |= variables(a)
    return out


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, declared: frozenset[str] | None):
        self.tokens = _tokenize(text)
        self.i = 0
        self.declared = declared

    @property
    def tok(self):
        return self.tokens[self.i]

    def take(self, value: str | None = None):
        kind, val, pos = self.tok
        if value is not None and val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", pos)
        self.i += 1
        return kind, val, pos

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.tok
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            _, op, _ = self.take()
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            _, op, _ = self.take()
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok[0] == "op" and self.tok[1] in ("-", "+"):
            _, op, _ = self.take()
            operand = self.unary()
            return Neg(operand) if op == "-" else operand
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] in ("^", "**"):
            self.take()
            sign = 1
            if self.tok[1] == "-":
                self.take()
                sign = -1
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ParseError("exponent must be an integer literal", pos)
            return Pow(base, sign * int(val))
        return base

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS and self.tok[1] == "(":
                self.take("(")
                args = [self.expr()]
                while self.tok[1] == ",":
                    self.take(",")
                    args.append(self.expr())
                self.take(")")
                lo, hi = FUNCTIONS[val]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    raise ParseError(f"wrong number of arguments to {val}", pos)
                return Call(val, tuple(args))
            if self.declared is not None and val not in self.declared:
                raise ParseError(f"undeclared identifier {val}", pos, identifier=val)
            return Var(val)
        if val == "(":
            node = self.expr()
            self.take(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", pos)


def parse_expr(text: str, declared: Sequence[str] | None = None) -> Node:
    """Parse one expression; identifiers are checked against ``declared`` when given."""
    return _Parser(text, None if declared is None else frozenset(declared)).parse()


# ---------------------------------------------------------------------------
# compilation to vectorized closures


def _compile(node: Node, component: int) -> Callable[[Mapping[str, np.ndarray]], np.ndarray]:
    if isinstance(node, Num):
        v = float(node.value)
        return lambda env: v
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Neg):
        f = _compile(node.operand, component)
        return lambda env: -f(env)
    if isinstance(node, Pow):
        f = _compile(node.base, component)
        e = node.exponent

        def power(env):
            b = np.asarray(f(env), dtype=float)
            if e < 0 and np.any(b == 0):
                raise FieldDomainError("zero raised to a negative power", component)
            return b**e

        return power
    if isinstance(node, BinOp):
        lf = _compile(node.left, component)
        rf = _compile(node.right, component)
        if node.op == "+":
            return lambda env: lf(env) + rf(env)
        if node.op == "-":
            return lambda env: lf(env) - rf(env)
        if node.op == "*":
            return lambda env: lf(env) * rf(env)

        def divide(env):
            den = rf(env)
            if np.any(np.asarray(den) == 0):
                raise FieldDomainError("division by zero", component)
            return lf(env) / den

        return divide
    fs = [_compile(a, component) for a in node.args]
    if node.func == "abs":
        return lambda env: np.abs(fs[0](env))
    reduce = np.minimum if node.func == "min" else np.maximum

    def call(env):
        out = fs[0](env)
        for f in fs[1:]:
            out = reduce(out, f(env))
        return out

    return call


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class FieldSignature:
    state_dim: int
    param_groups: tuple[tuple[str, int], ...] = ()
    state_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        groups = tuple((str(g), int(d)) for g, d in self.param_groups)
        object.__setattr__(self, "param_groups", groups)
        names = [g for g, _ in groups]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter group in {names}")
        if any(d < 1 for _, d in groups):
            raise ValueError("parameter group dimensions must be >= 1")
        if self.state_names is None:
            object.__setattr__(
                self, "state_names", tuple(f"x{i + 1}" for i in range(self.state_dim))
            )
        else:
            object.__setattr__(self, "state_names", tuple(self.state_names))
            if len(self.state_names) != self.state_dim:
                raise ValueError("state_names length must equal state_dim")
        clash = set(self.state_names) & set(self.param_variables())
        if clash or len(set(self.state_names)) != self.state_dim:
            raise ValueError(f"ambiguous variable names {sorted(clash)}")

    def group_dim(self, group: str) -> int:
        for g, d in self.param_groups:
            if g == group:
                return d
        raise KeyError(group)

    def param_variables(self) -> dict[str, tuple[str, int]]:
        """Map each parameter variable name to its (group, index)."""
        out = {}
        for g, d in self.param_groups:
            for j in range(d):
                out[f"{g}{j + 1}"] = (g, j)
            if d == 1:
                out[g] = (g, 0)
        return out

    def declared(self) -> list[str]:
        return list(self.state_names) + list(self.param_variables())


@dataclass(frozen=True, eq=False)
class VectorField:
    signature: FieldSignature
    components: tuple
    _compiled: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.signature.state_dim:
            raise ValueError(
                f"expected {self.signature.state_dim} components, got {len(comps)}"
            )
        declared = set(self.signature.declared())
        for node in comps:
            missing = variables(node) - declared
            if missing:
                raise ValueError(f"undeclared identifier {sorted(missing)[0]}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(
            self, "_compiled", tuple(_compile(c, i) for i, c in enumerate(comps))
        )

    @property
    def state_dim(self) -> int:
        return self.signature.state_dim

    def sources(self) -> list[str]:
        return [str(c) for c in self.components]

    def __call__(self, x, **params) -> np.ndarray:
        return eval_field(self, x, params)


def parse_field(source: Sequence[str] | str, sig: FieldSignature) -> VectorField:
    if isinstance(source, str):
        source = [source]
    if len(source) != sig.state_dim:
        raise ValueError(f"expected {sig.state_dim} component expressions, got {len(source)}")
    declared = sig.declared()
    return VectorField(sig, tuple(parse_expr(s, declared) for s in source))


def eval_field(F: VectorField, x, params: Mapping[str, object] | None = None) -> np.ndarray:
    """Evaluate ``F`` at states ``x`` (shape ``(..., n)``) and parameter groups.

    Each group value has shape ``(..., dim)``; leading axes broadcast against
    those of ``x``.
    """
    sig = F.signature
    params = dict(params or {})
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (sig.state_dim,):
        raise ValueError(f"state must have trailing dimension {sig.state_dim}, got {x.shape}")
    env: dict[str, np.ndarray] = {}
    for i, name in enumerate(sig.state_names):
        env[name] = x[..., i]
    shapes = [x.shape[:-1]]
    for g, d in sig.param_groups:
        if g not in params:
            raise ValueError(f"missing parameter group {g!r}")
        p = np.asarray(params.pop(g), dtype=float)
        if p.ndim == 0:
            p = p[None]
        if p.shape[-1] != d:
            raise ValueError(f"group {g!r} expects dimension {d}, got {p.shape}")
        shapes.append(p.shape[:-1])
        for j in range(d):
            env[f"{g}{j + 1}"] = p[..., j]
        if d == 1:
            env[g] = p[..., 0]
    if params:
        raise ValueError(f"unknown parameter groups {sorted(params)}")
    shape = np.broadcast_shapes(*shapes)
    out = np.empty(shape + (sig.state_dim,))
    with np.errstate(all="ignore"):
        for i, fn in enumerate(F._compiled):
            out[..., i] = fn(env)
    return out


def jacobian_fd(F: VectorField, x, params=None, h_rel: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian dF/dx, shape ``(..., n, n)``."""
    x = np.asarray(x, dtype=float)
    n = F.state_dim
    h = h_rel * np.maximum(1.0, np.abs(x))
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        step = h[..., i : i + 1] * e
        xp, xm = x + step, x - step
        fp = eval_field(F, xp, params)
        fm = eval_field(F, xm, params)
        # divide by the step actually taken, not the nominal 2h
        cols.append((fp - fm) / (xp[..., i : i + 1] - xm[..., i : i + 1]))
    return np.stack(cols, axis=-1)


def lie_bracket(F: VectorField, G: VectorField, x, paramsF=None, paramsG=None,
                h_rel: float = 1e-6) -> np.ndarray:
    """[F, G](x) = DG(x) F(x) - DF(x) G(x)."""
    if F.state_dim != G.state_dim:
        raise ValueError("fields must share state_dim")
    x = np.asarray(x, dtype=float)
    f = eval_field(F, x, paramsF)
    g = eval_field(G, x, paramsG)
    dF = jacobian_fd(F, x, paramsF, h_rel)
    dG = jacobian_fd(G, x, paramsG, h_rel)
    return np.einsum("...ij,...j->...i", dG, f) - np.einsum("...ij,...j->...i", dF, g)
