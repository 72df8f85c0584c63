"""Fused value+Jacobian evaluation on a flat post-order tape.

The optimizer evaluates the same expression hundreds of times per fit; walking
the tree through Python and numpy dispatch per node dominates the run time.
Compiling the tree once into opcode/argument arrays and executing them in a
jitted stack machine removes that overhead.  Falls back to the tree-walking
reference implementation when numba is unavailable; both paths follow IEEE
semantics (non-finite values propagate, nothing raises).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .expr import Expr, Op

__all__ = ["compile_valgrad", "HAVE_NUMBA"]

_VAR, _SLOT, _ADD, _SUB, _MUL, _DIV, _POWABS, _LOGABS, _EXP, _SQRTABS = range(10)

_OPCODES = {
    Op.ADD: _ADD,
    Op.SUB: _SUB,
    Op.MUL: _MUL,
    Op.DIV: _DIV,
    Op.POWABS: _POWABS,
    Op.LOGABS: _LOGABS,
    Op.EXP: _EXP,
    Op.SQRTABS: _SQRTABS,
}

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        return wrap


def _compile(e: Expr) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Post-order opcode/arg arrays, slot count, and stack depth."""
    codes: list[int] = []
    args: list[int] = []
    slots = [0]

    def emit(node: Expr) -> int:
        d = 0
        for i, a in enumerate(node.args):
            # left subtree result stays on the stack while the right one runs
            d = max(d, i + emit(a))
        op = node.sym.op
        if op is Op.VAR:
            codes.append(_VAR)
            args.append(node.sym.index)
            return 1
        if op is Op.PARAM or op is Op.CONST:
            codes.append(_SLOT)
            args.append(slots[0])
            slots[0] += 1
            return 1
        codes.append(_OPCODES[op])
        args.append(0)
        return max(d, 1)

    depth = emit(e)
    return (
        np.asarray(codes, dtype=np.int64),
        np.asarray(args, dtype=np.int64),
        slots[0],
        depth,
    )


@njit(cache=True, error_model="numpy")
def _run(codes, args, X, params, depth):  # pragma: no cover - jitted
    n = X.shape[0]
    k = params.shape[0]
    vs = np.empty((depth, n))
    gs = np.empty((depth, n, k))
    sp = 0
    for t in range(codes.shape[0]):
        c = codes[t]
        a = args[t]
        if c == 0:  # variable
            for r in range(n):
                vs[sp, r] = X[r, a]
                for j in range(k):
                    gs[sp, r, j] = 0.0
            sp += 1
        elif c == 1:  # parameter slot
            p = params[a]
            for r in range(n):
                vs[sp, r] = p
                for j in range(k):
                    gs[sp, r, j] = 0.0
                gs[sp, r, a] = 1.0
            sp += 1
        elif c == 2:  # add
            for r in range(n):
                vs[sp - 2, r] = vs[sp - 2, r] + vs[sp - 1, r]
                for j in range(k):
                    gs[sp - 2, r, j] = gs[sp - 2, r, j] + gs[sp - 1, r, j]
            sp -= 1
        elif c == 3:  # sub
            for r in range(n):
                vs[sp - 2, r] = vs[sp - 2, r] - vs[sp - 1, r]
                for j in range(k):
                    gs[sp - 2, r, j] = gs[sp - 2, r, j] - gs[sp - 1, r, j]
            sp -= 1
        elif c == 4:  # mul
            for r in range(n):
                v1 = vs[sp - 2, r]
                v2 = vs[sp - 1, r]
                for j in range(k):
                    gs[sp - 2, r, j] = v2 * gs[sp - 2, r, j] + v1 * gs[sp - 1, r, j]
                vs[sp - 2, r] = v1 * v2
            sp -= 1
        elif c == 5:  # div
            for r in range(n):
                v1 = vs[sp - 2, r]
                v2 = vs[sp - 1, r]
                for j in range(k):
                    gs[sp - 2, r, j] = (
                        gs[sp - 2, r, j] * v2 - v1 * gs[sp - 1, r, j]
                    ) / (v2 * v2)
                vs[sp - 2, r] = v1 / v2
            sp -= 1
        elif c == 6:  # |u| ** v
            for r in range(n):
                v1 = vs[sp - 2, r]
                v2 = vs[sp - 1, r]
                a1 = abs(v1)
                s = 1.0 if v1 > 0.0 else (-1.0 if v1 < 0.0 else 0.0)
                w = a1 ** v2
                du = v2 * a1 ** (v2 - 1.0) * s
                dv = w * math.log(a1)
                for j in range(k):
                    gs[sp - 2, r, j] = gs[sp - 2, r, j] * du + gs[sp - 1, r, j] * dv
                vs[sp - 2, r] = w
            sp -= 1
        elif c == 7:  # log(|u|)
            for r in range(n):
                v1 = vs[sp - 1, r]
                for j in range(k):
                    gs[sp - 1, r, j] = gs[sp - 1, r, j] / v1
                vs[sp - 1, r] = math.log(abs(v1))
        elif c == 8:  # exp
            for r in range(n):
                w = math.exp(vs[sp - 1, r])
                for j in range(k):
                    gs[sp - 1, r, j] = gs[sp - 1, r, j] * w
                vs[sp - 1, r] = w
        else:  # sqrt(|u|)
            for r in range(n):
                v1 = vs[sp - 1, r]
                s = 1.0 if v1 > 0.0 else (-1.0 if v1 < 0.0 else 0.0)
                w = math.sqrt(abs(v1))
                for j in range(k):
                    gs[sp - 1, r, j] = gs[sp - 1, r, j] * (s / (2.0 * w))
                vs[sp - 1, r] = w
    out_v = np.empty(n)
    out_g = np.empty((n, k))
    for r in range(n):
        out_v[r] = vs[0, r]
        for j in range(k):
            out_g[r, j] = gs[0, r, j]
    return out_v, out_g


def compile_valgrad(
    e: Expr,
) -> Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Build ``f(X, params) -> (value, jacobian)`` for the expression."""
    if HAVE_NUMBA:
        codes, args, _, depth = _compile(e)

        def valgrad(X: np.ndarray, params: np.ndarray):
            return _run(codes, args, X, np.asarray(params, dtype=float), depth)

        return valgrad

    from .fitting import eval_with_grad

    def valgrad_py(X: np.ndarray, params: np.ndarray):
        return eval_with_grad(e, X, params)

    return valgrad_py
