"""Closed-form scalar expressions and vector fields.

Grammar (whitespace is ignored)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?          # right-associative
    atom    := NUMBER | VARIABLE | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := sin | cos | exp | log | sqrt | atan | abs | tanh
    VARIABLE:= x1 .. xd  (also "x" when d == 1, or a custom one-letter alias)
    NUMBER  := digits with optional fraction and exponent, e.g. 2, 0.5, 1e-3

Evaluation is vectorised over numpy arrays; every domain violation raises
:class:`EvalError` instead of producing NaN.  First derivatives are computed
with forward-mode dual numbers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DerivativeError, DimensionError, EvalError, ParseError

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "atan", "abs", "tanh")


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based
    name: str = field(default="x1", compare=False)


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


def _has_vars(node: Node) -> bool:
    if isinstance(node, Num):
        return False
    if isinstance(node, Var):
        return True
    if isinstance(node, (Neg, Call)):
        return _has_vars(node.arg)
    return _has_vars(node.left) or _has_vars(node.right)


def _max_var(node: Node) -> tuple[int, str, int | None]:
    """Largest variable index used, with its name (index -1 when none)."""
    if isinstance(node, Num):
        return -1, "", None
    if isinstance(node, Var):
        return node.index, node.name, None
    if isinstance(node, (Neg, Call)):
        return _max_var(node.arg)
    a = _max_var(node.left)
    b = _max_var(node.right)
    return a if a[0] >= b[0] else b


# --------------------------------------------------------------------------
# tokenizer + recursive descent parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass
class _Token:
    kind: str  # num, name, op, eof
    text: str
    pos: int


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(src)
    while True:
        while pos < n and src[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            raise ParseError(pos, "number, name, operator or parenthesis", src)
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, src: str, aliases: dict[str, int]):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.aliases = aliases
        self.dimension_problem: tuple[str, int] | None = None

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def _fail(self, expected: str):
        raise ParseError(self.tok.pos, expected, self.src)

    def _eat(self, text: str):
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return
        self._fail(repr(text))

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "eof":
            self._fail("operator or end of input")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.i += 1
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.i += 1
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            node = self.expr()
            self._eat(")")
            return node
        if tok.kind == "name":
            nxt = self.tokens[self.i + 1]
            if nxt.kind == "op" and nxt.text == "(":
                if tok.text not in FUNCTIONS:
                    self._fail("one of " + ", ".join(FUNCTIONS))
                self.i += 2
                arg = self.expr()
                self._eat(")")
                return Call(tok.text, arg)
            return self._variable(tok)
        self._fail("number, variable, function or '('")

    def _variable(self, tok: _Token) -> Var:
        name = tok.text
        self.i += 1
        if name in self.aliases:
            return Var(self.aliases[name], name)
        m = re.fullmatch(r"x([1-9]\d*)", name)
        if m:
            return Var(int(m.group(1)) - 1, name)
        if name == "x":
            # "x" is only an alias in one dimension; remember and report later
            if self.dimension_problem is None:
                self.dimension_problem = (name, tok.pos)
            return Var(0, name)
        raise ParseError(tok.pos, "variable x1..xd or a function name", self.src)


def parse_node(src: str, d: int, alias: str | None = "x") -> Node:
    if not src or not src.strip():
        raise ParseError(0, "non-empty expression", src or "")
    aliases = {alias: 0} if (alias and d == 1) else {}
    p = _Parser(src, aliases)
    root = p.parse()
    # dimension problems are reported only once the text is syntactically valid
    if p.dimension_problem is not None:
        name, pos = p.dimension_problem
        raise DimensionError(name, d, pos)
    idx, name, _ = _max_var(root)
    if idx >= d:
        raise DimensionError(name, d)
    return root


# --------------------------------------------------------------------------
# printing


def to_source(node: Node) -> str:
    return _fmt(node, 0)


def _fmt_num(v: float) -> str:
    s = repr(float(v))
    if v < 0 or s in ("inf", "nan", "-inf"):
        return f"({s})"
    return s


def _fmt(node: Node, ctx: int) -> str:
    # precedence levels: 1 additive, 2 multiplicative, 3 unary, 4 power, 5 atom
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Call):
        return f"{node.fn}({_fmt(node.arg, 0)})"
    if isinstance(node, Neg):
        s, prec = "-" + _fmt(node.arg, 3), 3
    elif node.op in "+-":
        s, prec = f"{_fmt(node.left, 1)} {node.op} {_fmt(node.right, 2)}", 1
    elif node.op in "*/":
        s, prec = f"{_fmt(node.left, 2)} {node.op} {_fmt(node.right, 3)}", 2
    else:
        s, prec = f"{_fmt(node.left, 5)}^{_fmt(node.right, 3)}", 4
    return f"({s})" if prec < ctx else s


# --------------------------------------------------------------------------
# evaluation


def _offending_point(env, mask) -> list[float]:
    mask = np.broadcast_to(mask, np.broadcast_shapes(*(np.shape(v) for v in env), np.shape(mask)))
    flat = np.flatnonzero(mask)
    k = int(flat[0]) if flat.size else 0
    pt = []
    for v in env:
        a = np.broadcast_to(v, mask.shape)
        pt.append(float(a.reshape(-1)[k]) if a.size else float("nan"))
    return pt


def _check(env, op: str, bad, detail: str = ""):
    if np.any(bad):
        raise EvalError(op, _offending_point(env, bad), detail)


def _is_integer(v) -> np.ndarray:
    return np.isfinite(v) & (np.floor(v) == v)


def _eval(node: Node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.index]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        op = node.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            _check(env, "/", np.asarray(b) == 0, "division by zero")
            return a / b
        if isinstance(node.right, Num) and float(node.right.value).is_integer() and node.right.value >= 0:
            return np.power(a, node.right.value)
        a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        _check(env, "^", (a_arr < 0) & ~_is_integer(b_arr), "negative base with non-integer exponent")
        _check(env, "^", (a_arr == 0) & (b_arr < 0), "zero to a negative power")
        return np.power(a_arr, b_arr)
    a = _eval(node.arg, env)
    fn = node.fn
    if fn == "log":
        _check(env, "log", np.asarray(a) <= 0, "non-positive argument")
        return np.log(a)
    if fn == "sqrt":
        _check(env, "sqrt", np.asarray(a) < 0, "negative argument")
        return np.sqrt(a)
    return _UNARY[fn](a)


_UNARY = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "atan": np.arctan,
    "abs": np.abs,
    "tanh": np.tanh,
}


def _eval_dual(node: Node, env, k: int):
    """Forward-mode propagation of (value, d/dx_k)."""
    if isinstance(node, Num):
        return node.value, 0.0
    if isinstance(node, Var):
        return env[node.index], (1.0 if node.index == k else 0.0)
    if isinstance(node, Neg):
        v, dv = _eval_dual(node.arg, env, k)
        return -v, -dv
    if isinstance(node, BinOp):
        a, da = _eval_dual(node.left, env, k)
        b, db = _eval_dual(node.right, env, k)
        op = node.op
        if op == "+":
            return a + b, da + db
        if op == "-":
            return a - b, da - db
        if op == "*":
            return a * b, da * b + a * db
        if op == "/":
            _check(env, "/", np.asarray(b) == 0, "division by zero")
            q = a / b
            return q, (da - q * db) / b
        val = _eval(node, env)
        if not _has_vars(node.right):
            p = float(b)
            if p == 0.0:
                return val, 0.0 * np.asarray(a, dtype=float)
            a_arr = np.asarray(a, dtype=float)
            if p < 1.0:
                _check(env, "^", (a_arr == 0) & (np.asarray(da) != 0), "power not differentiable at 0")
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.where(np.asarray(da) == 0, 0.0, p * np.power(a_arr, p - 1.0) * da)
            return val, d
        a_arr = np.asarray(a, dtype=float)
        if np.any(a_arr <= 0):
            raise DerivativeError("^", _offending_point(env, a_arr <= 0), "variable exponent needs a positive base")
        return val, val * (db * np.log(a_arr) + b * da / a_arr)
    a, da = _eval_dual(node.arg, env, k)
    fn = node.fn
    if fn == "sin":
        return np.sin(a), np.cos(a) * da
    if fn == "cos":
        return np.cos(a), -np.sin(a) * da
    if fn == "exp":
        e = np.exp(a)
        return e, e * da
    if fn == "log":
        _check(env, "log", np.asarray(a) <= 0, "non-positive argument")
        return np.log(a), da / a
    if fn == "sqrt":
        _check(env, "sqrt", np.asarray(a) < 0, "negative argument")
        bad = (np.asarray(a) == 0) & (np.asarray(da) != 0)
        if np.any(bad):
            raise DerivativeError("sqrt", _offending_point(env, bad), "not differentiable at 0")
        s = np.sqrt(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            return s, np.where(np.asarray(da) == 0, 0.0, da / (2.0 * s))
    if fn == "atan":
        return np.arctan(a), da / (1.0 + a * a)
    if fn == "tanh":
        t = np.tanh(a)
        return t, (1.0 - t * t) * da
    # abs
    bad = (np.asarray(a) == 0) & (np.asarray(da) != 0)
    if np.any(bad):
        raise DerivativeError("abs", _offending_point(env, bad), "kink at 0")
    return np.abs(a), np.sign(a) * da


def _split(point, dim: int):
    """Turn a point (d,) or a batch (N, d) into a list of d coordinate arrays."""
    arr = np.asarray(point, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != dim:
        if dim == 1 and arr.ndim == 1:
            return [arr], True
        raise ValueError(f"point has {arr.shape[-1]} coordinates, expected {dim}")
    if arr.ndim == 1:
        return [arr[i] for i in range(dim)], False
    return [arr[..., i] for i in range(dim)], True


def _finish(op_node: Node, env, val, batched: bool):
    val = np.asarray(val, dtype=float)
    nan = np.isnan(val)
    if nan.any():
        raise EvalError(type(op_node).__name__, _offending_point(env, nan), "NaN produced")
    if batched:
        shape = env[0].shape if len(env) == 1 else np.broadcast_shapes(*(np.shape(v) for v in env))
        return val if val.shape == shape else np.broadcast_to(val, shape).copy()
    return float(val)


@dataclass(frozen=True)
class Expr:
    """Parsed scalar expression over ``dim`` real variables."""

    root: Node
    dim: int = 1
    source: str | None = field(default=None, compare=False)

    def __call__(self, point):
        return evaluate(self, point)

    def __str__(self) -> str:
        return to_source(self.root)

    def derivative(self, point, direction_index: int = 1):
        return eval_with_derivative(self, point, direction_index)

    # algebra used to build derived integrands such as 1/b or -b
    def __neg__(self) -> "Expr":
        return Expr(Neg(self.root), self.dim)

    def __truediv__(self, other) -> "Expr":
        return Expr(BinOp("/", self.root, _as_node(other)), self.dim)

    def __rtruediv__(self, other) -> "Expr":
        return Expr(BinOp("/", _as_node(other), self.root), self.dim)

    def __mul__(self, other) -> "Expr":
        return Expr(BinOp("*", self.root, _as_node(other)), self.dim)

    __rmul__ = __mul__

    def has_variables(self) -> bool:
        return _has_vars(self.root)


def _as_node(x) -> Node:
    if isinstance(x, Expr):
        return x.root
    return Num(float(x))


def parse(src: str, d: int = 1, alias: str | None = "x") -> Expr:
    """Parse ``src`` into an :class:`Expr` over ``d`` variables.

    ``alias`` names the single variable when ``d == 1`` (``"x"`` by default,
    ``"r"`` for radial bounds); ``x1`` is always accepted too.
    """
    return Expr(parse_node(src, d, alias), d, src)


def evaluate(e: Expr, point):
    """Evaluate ``e`` at a point of shape (d,) or a batch of shape (N, d).

    For d == 1 a flat array of N abscissae is also accepted.
    """
    env, batched = _split(point, e.dim)
    with np.errstate(all="ignore"):
        val = _eval(e.root, env)
        return _finish(e.root, env, val, batched)


def eval_with_derivative(e: Expr, point, direction_index: int = 1):
    """Return ``(value, partial)`` with the partial along ``x_{direction_index}``."""
    if not 1 <= direction_index <= e.dim:
        raise DimensionError(f"x{direction_index}", e.dim)
    env, batched = _split(point, e.dim)
    with np.errstate(all="ignore"):
        v, dv = _eval_dual(e.root, env, direction_index - 1)
        v = _finish(e.root, env, v, batched)
        dv = _finish(e.root, env, dv, batched) if batched else float(np.asarray(dv, dtype=float))
    if not batched and math.isnan(dv):
        raise EvalError("derivative", [float(c) for c in env], "NaN produced")
    return v, dv


# --------------------------------------------------------------------------
# vector fields and radial bounds


@dataclass(frozen=True)
class VectorField:
    """A vector field b: R^d -> R^d given componentwise by expressions."""

    components: tuple[Expr, ...]
    lipschitz_claim: bool = True

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        d = len(comps)
        for c in comps:
            if c.dim != d:
                raise DimensionError(f"x{c.dim}", d)

    @property
    def dim(self) -> int:
        return len(self.components)

    @classmethod
    def from_strings(cls, sources: str | Sequence[str], lipschitz_claim: bool = True) -> "VectorField":
        if isinstance(sources, str):
            sources = [sources]
        d = len(sources)
        return cls(tuple(parse(s, d) for s in sources), lipschitz_claim)

    def __call__(self, X) -> np.ndarray:
        """Evaluate at points X of shape (N, d) (or (d,)); same shape returned."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Xb = X.reshape(1, -1) if single else X
        out = np.empty_like(Xb)
        for i, comp in enumerate(self.components):
            out[:, i] = evaluate(comp, Xb)
        return out[0] if single else out

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        d = self.dim
        J = np.empty((d, d))
        for i, comp in enumerate(self.components):
            for j in range(d):
                J[i, j] = eval_with_derivative(comp, x, j + 1)[1]
        return J

    def sources(self) -> list[str]:
        return [c.source if c.source is not None else str(c) for c in self.components]

    def scalar(self) -> Expr:
        if self.dim != 1:
            raise DimensionError(f"x{self.dim}", 1)
        return self.components[0]


@dataclass(frozen=True)
class RadialBound:
    """Radial bound beta(r) valid for |x| >= inner_radius."""

    beta: Expr
    inner_radius: float

    @classmethod
    def from_string(cls, src: str, inner_radius: float) -> "RadialBound":
        return cls(parse(src, 1, alias="r"), float(inner_radius))

    def __call__(self, r):
        """Evaluate beta, insisting on strict positivity wherever sampled."""
        r_arr = np.atleast_1d(np.asarray(r, dtype=float))
        vals = evaluate(self.beta, r_arr.reshape(-1, 1)).reshape(r_arr.shape)
        bad = ~(vals > 0)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise EvalError("beta", [float(r_arr[k])], f"radial bound must be > 0, got {float(vals[k])!r}")
        return vals if np.ndim(r) else float(vals[0])
