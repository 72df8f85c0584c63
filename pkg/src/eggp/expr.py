"""Expression trees: symbols, random generation, evaluation, editing.

The genotype is an ordered tree of :class:`Symbol` nodes.  Terminals are
feature references (``x0``, ``x1``, ...), fitting parameters (``t0``, ``t1``,
... bound positionally at evaluation time) and literal constants.  Constants
are never produced by random generation; they only appear through rewriting.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "Op",
    "Symbol",
    "Expr",
    "GenConfig",
    "ExprParseError",
    "ARITY",
    "BINARY_OPS",
    "UNARY_OPS",
    "DEFAULT_NONTERMINALS",
    "OP_NAMES",
    "NAME_TO_OP",
    "var",
    "param",
    "const",
    "add",
    "sub",
    "mul",
    "div",
    "powabs",
    "logabs",
    "exp",
    "sqrtabs",
    "size",
    "depth",
    "preorder",
    "subtree_at",
    "replace_at",
    "param_slots",
    "to_param_form",
    "substitute_params",
    "evaluate",
    "eval_rows",
    "to_string",
    "parse",
    "grow",
    "full",
    "ramped_half_and_half",
]


class Op(enum.IntEnum):
    """Node kinds.  Declaration order doubles as the tie-break ordinal."""

    VAR = 0
    PARAM = 1
    CONST = 2
    ADD = 3
    SUB = 4
    MUL = 5
    DIV = 6
    POWABS = 7
    LOGABS = 8
    EXP = 9
    SQRTABS = 10


ARITY: dict[Op, int] = {
    Op.VAR: 0,
    Op.PARAM: 0,
    Op.CONST: 0,
    Op.ADD: 2,
    Op.SUB: 2,
    Op.MUL: 2,
    Op.DIV: 2,
    Op.POWABS: 2,
    Op.LOGABS: 1,
    Op.EXP: 1,
    Op.SQRTABS: 1,
}

BINARY_OPS: tuple[Op, ...] = (Op.ADD, Op.SUB, Op.MUL, Op.DIV, Op.POWABS)
UNARY_OPS: tuple[Op, ...] = (Op.LOGABS, Op.EXP, Op.SQRTABS)

# Order matches the CLI's default non-terminal list.
DEFAULT_NONTERMINALS: tuple[Op, ...] = (
    Op.ADD,
    Op.SUB,
    Op.MUL,
    Op.DIV,
    Op.LOGABS,
    Op.EXP,
    Op.SQRTABS,
    Op.POWABS,
)

OP_NAMES: dict[Op, str] = {
    Op.VAR: "var",
    Op.PARAM: "param",
    Op.CONST: "const",
    Op.ADD: "add",
    Op.SUB: "sub",
    Op.MUL: "mul",
    Op.DIV: "div",
    Op.POWABS: "powabs",
    Op.LOGABS: "logabs",
    Op.EXP: "exp",
    Op.SQRTABS: "sqrtabs",
}

NAME_TO_OP: dict[str, Op] = {v: k for k, v in OP_NAMES.items()}


@dataclass(frozen=True)
class Symbol:
    """An operator or terminal.  ``index`` is used by VAR, ``value`` by CONST."""

    op: Op
    index: int = -1
    value: float = 0.0

    @property
    def arity(self) -> int:
        return ARITY[self.op]


PARAM_SYMBOL = Symbol(Op.PARAM)


def var_symbol(i: int) -> Symbol:
    return Symbol(Op.VAR, index=i)


def const_symbol(v: float) -> Symbol:
    return Symbol(Op.CONST, value=float(v))


@dataclass(frozen=True)
class Expr:
    """Immutable expression tree; ``len(args) == sym.arity``."""

    sym: Symbol
    args: tuple["Expr", ...] = ()


def var(i: int) -> Expr:
    return Expr(var_symbol(i))


def param() -> Expr:
    return Expr(PARAM_SYMBOL)


def const(v: float) -> Expr:
    return Expr(const_symbol(v))


def add(a: Expr, b: Expr) -> Expr:
    return Expr(Symbol(Op.ADD), (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    return Expr(Symbol(Op.SUB), (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    return Expr(Symbol(Op.MUL), (a, b))


def div(a: Expr, b: Expr) -> Expr:
    return Expr(Symbol(Op.DIV), (a, b))


def powabs(a: Expr, b: Expr) -> Expr:
    return Expr(Symbol(Op.POWABS), (a, b))


def logabs(a: Expr) -> Expr:
    return Expr(Symbol(Op.LOGABS), (a,))


def exp(a: Expr) -> Expr:
    return Expr(Symbol(Op.EXP), (a,))


def sqrtabs(a: Expr) -> Expr:
    return Expr(Symbol(Op.SQRTABS), (a,))


def preorder(e: Expr) -> Iterator[Expr]:
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.args))


def size(e: Expr) -> int:
    # memoized on the node; trees are immutable and heavily shared
    s = e.__dict__.get("_size")
    if s is None:
        s = 1 + sum(size(a) for a in e.args)
        object.__setattr__(e, "_size", s)
    return s


def depth(e: Expr) -> int:
    d = e.__dict__.get("_depth")
    if d is None:
        d = 1 + max((depth(a) for a in e.args), default=0)
        object.__setattr__(e, "_depth", d)
    return d


def subtree_at(e: Expr, i: int) -> Expr:
    """Subtree rooted at pre-order index ``i`` (0 is the root)."""
    for k, node in enumerate(preorder(e)):
        if k == i:
            return node
    raise IndexError(f"node index {i} out of range for expression of size {k + 1}")


def replace_at(e: Expr, i: int, s: Expr) -> Expr:
    """New expression with the subtree at pre-order index ``i`` replaced by ``s``."""
    n = size(e)
    if not 0 <= i < n:
        raise IndexError(f"node index {i} out of range for expression of size {n}")

    def go(node: Expr, k: int) -> Expr:
        if k == 0:
            return s
        k -= 1
        new_args = []
        for a in node.args:
            na = size(a)
            if 0 <= k < na:
                new_args.append(go(a, k))
            else:
                new_args.append(a)
            k -= na
        return Expr(node.sym, tuple(new_args))

    return go(e, i)


def param_slots(e: Expr) -> list[float | None]:
    """Seed values of the fitting slots in pre-order.

    Every PARAM and CONST occurrence takes one slot; CONST slots carry their
    literal value, PARAM slots carry ``None``.
    """
    out: list[float | None] = []
    for node in preorder(e):
        if node.sym.op is Op.PARAM:
            out.append(None)
        elif node.sym.op is Op.CONST:
            out.append(node.sym.value)
    return out


def to_param_form(e: Expr) -> tuple[Expr, list[float | None]]:
    """Replace every CONST node by PARAM, returning the new tree and the slot seeds."""
    seeds = param_slots(e)

    def go(node: Expr) -> Expr:
        if node.sym.op is Op.CONST:
            return Expr(PARAM_SYMBOL)
        if not node.args:
            return node
        return Expr(node.sym, tuple(go(a) for a in node.args))

    return go(e), seeds


def substitute_params(e: Expr, params: Sequence[float]) -> Expr:
    """Replace every PARAM/CONST slot with the literal from ``params`` (pre-order)."""
    cursor = [0]

    def go(node: Expr) -> Expr:
        if node.sym.op in (Op.PARAM, Op.CONST):
            v = float(params[cursor[0]])
            cursor[0] += 1
            return const(v)
        if not node.args:
            return node
        return Expr(node.sym, tuple(go(a) for a in node.args))

    out = go(e)
    if cursor[0] != len(params):
        raise ValueError(f"expression has {cursor[0]} slots, got {len(params)} values")
    return out


def eval_rows(
    e: Expr, X: np.ndarray, params: Sequence[float], check: bool = True
) -> np.ndarray:
    """Evaluate ``e`` over every row of ``X``.

    ``params`` binds the PARAM/CONST occurrences positionally (pre-order).
    Non-finite results are legal outputs and propagate; no warnings escape.
    """
    if not isinstance(X, np.ndarray) or X.dtype != np.float64:
        X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if check:
        need = len(param_slots(e))
        if need != len(params):
            raise ValueError(f"expression has {need} parameter slots, got {len(params)}")
    cursor = [0]

    def go(node: Expr) -> np.ndarray:
        op = node.sym.op
        if op is Op.VAR:
            return X[:, node.sym.index]
        if op is Op.PARAM or op is Op.CONST:
            v = float(params[cursor[0]])
            cursor[0] += 1
            return np.broadcast_to(v, n)
        if op is Op.ADD:
            return go(node.args[0]) + go(node.args[1])
        if op is Op.SUB:
            return go(node.args[0]) - go(node.args[1])
        if op is Op.MUL:
            return go(node.args[0]) * go(node.args[1])
        if op is Op.DIV:
            return go(node.args[0]) / go(node.args[1])
        if op is Op.POWABS:
            a = go(node.args[0])
            b = go(node.args[1])
            return np.power(np.abs(a), b)
        if op is Op.LOGABS:
            return np.log(np.abs(go(node.args[0])))
        if op is Op.EXP:
            return np.exp(go(node.args[0]))
        if op is Op.SQRTABS:
            return np.sqrt(np.abs(go(node.args[0])))
        raise AssertionError(f"unhandled op {op!r}")

    with np.errstate(all="ignore"):
        return go(e)


def evaluate(
    e: Expr,
    row: Sequence[float],
    params: Sequence[float] = (),
    param_cursor: list[int] | None = None,
) -> float:
    """Evaluate ``e`` at a single row; the k-th PARAM/CONST occurrence reads
    ``params[k]`` (pre-order).  ``param_cursor`` is the occurrence counter and
    may be shared across calls to evaluate a sequence of subtrees."""
    if param_cursor is None:
        param_cursor = [0]
        need = len(param_slots(e))
        if need > len(params):
            raise ValueError(f"expression has {need} parameter slots, got {len(params)}")
    row_arr = np.asarray(row, dtype=float)

    def go(node: Expr) -> np.float64:
        op = node.sym.op
        if op is Op.VAR:
            return row_arr[node.sym.index]
        if op is Op.PARAM or op is Op.CONST:
            v = np.float64(params[param_cursor[0]])
            param_cursor[0] += 1
            return v
        if op is Op.ADD:
            return go(node.args[0]) + go(node.args[1])
        if op is Op.SUB:
            return go(node.args[0]) - go(node.args[1])
        if op is Op.MUL:
            return go(node.args[0]) * go(node.args[1])
        if op is Op.DIV:
            return go(node.args[0]) / go(node.args[1])
        if op is Op.POWABS:
            a = go(node.args[0])
            b = go(node.args[1])
            return np.power(np.abs(a), b)
        if op is Op.LOGABS:
            return np.log(np.abs(go(node.args[0])))
        if op is Op.EXP:
            return np.exp(go(node.args[0]))
        if op is Op.SQRTABS:
            return np.sqrt(np.abs(go(node.args[0])))
        raise AssertionError(f"unhandled op {op!r}")

    with np.errstate(all="ignore"):
        return float(go(e))


# ---------------------------------------------------------------------------
# random generation


@dataclass
class GenConfig:
    """Limits and choice weights for random expression generation."""

    max_depth: int = 10
    max_size: int = 50
    feature_count: int = 1
    nonterminals: tuple[Op, ...] = DEFAULT_NONTERMINALS
    p_terminal: float = 0.5
    retries: int = 20

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.max_size < 1:
            raise ValueError("max_size must be >= 1")
        if self.feature_count < 1:
            raise ValueError("feature_count must be >= 1")
        for op in self.nonterminals:
            if ARITY[Op(op)] == 0:
                raise ValueError(f"{op!r} is not a non-terminal")


def _random_terminal(cfg: GenConfig, rng: np.random.Generator) -> Expr:
    # feature_count variables plus the fitting parameter, uniformly
    k = int(rng.integers(cfg.feature_count + 1))
    if k == cfg.feature_count:
        return param()
    return var(k)


def _random_nonterminal(cfg: GenConfig, rng: np.random.Generator) -> Op:
    return cfg.nonterminals[int(rng.integers(len(cfg.nonterminals)))]


def _gen(cfg: GenConfig, rng: np.random.Generator, depth_left: int, full_method: bool) -> Expr:
    if depth_left <= 1:
        return _random_terminal(cfg, rng)
    if not full_method and rng.random() < cfg.p_terminal:
        return _random_terminal(cfg, rng)
    op = _random_nonterminal(cfg, rng)
    args = tuple(_gen(cfg, rng, depth_left - 1, full_method) for _ in range(ARITY[op]))
    return Expr(Symbol(op), args)


def _bounded(cfg: GenConfig, rng: np.random.Generator, full_method: bool) -> Expr:
    # reject-and-retry on size overflow, then fall back to a terminal
    for _ in range(cfg.retries):
        e = _gen(cfg, rng, cfg.max_depth, full_method)
        if size(e) <= cfg.max_size:
            return e
    return _random_terminal(cfg, rng)


def grow(cfg: GenConfig, rng: np.random.Generator) -> Expr:
    """Random tree where any node may be a terminal (depth and size bounded)."""
    return _bounded(cfg, rng, full_method=False)


def full(cfg: GenConfig, rng: np.random.Generator) -> Expr:
    """Random tree with non-terminals at every level below ``max_depth``."""
    return _bounded(cfg, rng, full_method=True)


def ramped_half_and_half(n: int, cfg: GenConfig, rng: np.random.Generator) -> list[Expr]:
    """Classic initialization: depths ramp over [2, max_depth], half grow half full."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lo = min(2, cfg.max_depth)
    depths = list(range(lo, cfg.max_depth + 1))
    out = []
    for i in range(n):
        d = depths[(i // 2) % len(depths)]
        sub = replace(cfg, max_depth=d)
        gen = grow if i % 2 == 0 else full
        out.append(gen(sub, rng))
    return out


# ---------------------------------------------------------------------------
# text form


class ExprParseError(ValueError):
    """Raised on malformed expression text; carries the failing position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


_INFIX = {Op.ADD: "+", Op.SUB: "-", Op.MUL: "*", Op.DIV: "/"}


def to_string(e: Expr) -> str:
    """Render with full parenthesization: ``((x0 + t0) * log(abs(x1)))``."""
    counter = [0]

    def go(node: Expr) -> str:
        s = node.sym
        if s.op is Op.VAR:
            return f"x{s.index}"
        if s.op is Op.PARAM:
            k = counter[0]
            counter[0] += 1
            return f"t{k}"
        if s.op is Op.CONST:
            counter[0] += 1
            return repr(s.value)
        if s.op in _INFIX:
            return f"({go(node.args[0])} {_INFIX[s.op]} {go(node.args[1])})"
        if s.op is Op.POWABS:
            return f"(abs({go(node.args[0])}) ^ {go(node.args[1])})"
        if s.op is Op.LOGABS:
            return f"log(abs({go(node.args[0])}))"
        if s.op is Op.SQRTABS:
            return f"sqrt(abs({go(node.args[0])}))"
        if s.op is Op.EXP:
            return f"exp({go(node.args[0])})"
        raise AssertionError(f"unhandled op {s.op!r}")

    return go(e)


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[a-z]+\d*)
  | (?P<punct>[()^+\-*/])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def error(self, message: str) -> ExprParseError:
        pos = self.tokens[self.i][2] if self.i < len(self.tokens) else len(self.text)
        return ExprParseError(message, pos)

    def peek(self) -> tuple[str, str] | None:
        if self.i < len(self.tokens):
            kind, value, _ = self.tokens[self.i]
            return kind, value
        return None

    def take(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise self.error("unexpected end of input")
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        tok = self.peek()
        if tok is None or tok[1] != value:
            raise self.error(f"expected {value!r}")
        self.i += 1

    def parse(self) -> Expr:
        e = self.expr()
        if self.i != len(self.tokens):
            raise self.error("trailing input")
        return e

    def expr(self) -> Expr:
        tok = self.peek()
        if tok is None:
            raise self.error("unexpected end of input")
        kind, value = tok
        if value == "(":
            return self.binary()
        if kind == "name":
            return self.name_form(value)
        if kind == "number":
            self.take()
            return const(float(value))
        if value == "-":
            self.take()
            nxt = self.peek()
            if nxt is None or nxt[0] != "number":
                raise self.error("expected a number after '-'")
            self.take()
            return const(-float(nxt[1]))
        raise self.error(f"unexpected token {value!r}")

    def binary(self) -> Expr:
        self.expect("(")
        wrapped = False
        tok = self.peek()
        if tok is not None and tok[1] == "abs":
            # abs(...) on the left operand only occurs for the guarded power
            self.take()
            self.expect("(")
            left = self.expr()
            self.expect(")")
            wrapped = True
        else:
            left = self.expr()
        kind, opch = self.take()
        if kind != "punct" or opch not in "+-*/^":
            raise self.error(f"expected an operator, got {opch!r}")
        if wrapped and opch != "^":
            raise self.error("abs(...) operand is only valid for '^'")
        if opch == "^" and not wrapped:
            raise self.error("'^' requires an abs(...) left operand")
        right = self.expr()
        self.expect(")")
        ops = {"+": add, "-": sub, "*": mul, "/": div, "^": powabs}
        return ops[opch](left, right)

    def name_form(self, name: str) -> Expr:
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            self.take()
            return var(int(m.group(1)))
        m = re.fullmatch(r"t(\d+)", name)
        if m:
            self.take()
            return param()
        if name == "exp":
            self.take()
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return exp(e)
        if name in ("log", "sqrt"):
            self.take()
            self.expect("(")
            self.expect("abs")
            self.expect("(")
            e = self.expr()
            self.expect(")")
            self.expect(")")
            return logabs(e) if name == "log" else sqrtabs(e)
        raise self.error(f"unknown name {name!r}")


def parse(text: str) -> Expr:
    """Inverse of :func:`to_string` (structure only; parameter indices are positional)."""
    return _Parser(text).parse()
