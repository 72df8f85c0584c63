"""Subtree crossover and mutation, in history-aware and classic flavors.

The history-aware operators consult the e-graph (read-only) to keep only the
candidates that would produce an expression never visited before.  Both fall
back to the unmodified input when no candidate survives, so they are total.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .egraph import EGraph, SpineStep
from .expr import (
    ARITY,
    Expr,
    GenConfig,
    Op,
    PARAM_SYMBOL,
    Symbol,
    depth,
    full,
    grow,
    preorder,
    replace_at,
    size,
)

__all__ = [
    "VariationConfig",
    "host_spine",
    "egraph_crossover",
    "egraph_mutation",
    "subtree_crossover",
    "subtree_mutation",
]


@dataclass
class VariationConfig:
    gen: GenConfig
    pc: float = 0.9
    pm: float = 0.3

    def __post_init__(self) -> None:
        if not (0.0 <= self.pc <= 1.0 and 0.0 <= self.pm <= 1.0):
            raise ValueError("pc and pm must lie in [0, 1]")


def host_spine(g: EGraph, host: Expr, index: int) -> list[SpineStep]:
    """Root-to-hole path of ``host`` with off-path subtree class ids resolved
    by non-mutating lookups (``None`` where a subtree was never visited)."""
    classes = g.subtree_classes(host)
    steps: list[SpineStep] = []
    node = host
    pos = 0  # pre-order index of `node` within host
    i = index
    while i > 0:
        i -= 1
        child_pos = pos + 1
        for j, child in enumerate(node.args):
            ns = size(child)
            if i < ns:
                sibs = []
                sib_pos = pos + 1
                for k, other in enumerate(node.args):
                    if k == j:
                        sibs.append(None)
                    else:
                        sibs.append(classes[sib_pos])
                    sib_pos += size(other)
                steps.append(SpineStep(node.sym, j, tuple(sibs)))
                node = child
                pos = child_pos
                break
            i -= ns
            child_pos += ns
    return steps


def _budgets(cfg: GenConfig, host: Expr, index: int, spine_len: int) -> tuple[int, int]:
    """(max size, max depth) allowed for a subtree replacing the hole."""
    hole = _subtree_by_index(host, index)
    size_budget = cfg.max_size - (size(host) - size(hole))
    depth_budget = cfg.max_depth - spine_len
    return max(1, size_budget), max(1, depth_budget)


def _subtree_by_index(e: Expr, i: int) -> Expr:
    for k, node in enumerate(preorder(e)):
        if k == i:
            return node
    raise IndexError(i)


def egraph_crossover(
    p1: Expr,
    p2: Expr,
    cfg: VariationConfig,
    g: EGraph,
    rng: np.random.Generator,
) -> Expr:
    """Replace a random subtree of ``p1`` with a subtree of ``p2`` chosen
    uniformly among those that complete to an unvisited expression within the
    size/depth limits.  Returns ``p1`` unchanged when skipped by chance or when
    no candidate survives."""
    if rng.random() >= cfg.pc:
        return p1
    hole = int(rng.integers(size(p1)))
    spine = host_spine(g, p1, hole)
    size_budget, depth_budget = _budgets(cfg.gen, p1, hole, len(spine))
    p2_classes = g.subtree_classes(p2)
    candidates: list[Expr] = []
    for idx, s in enumerate(preorder(p2)):
        if size(s) > size_budget or depth(s) > depth_budget:
            continue
        cid = p2_classes[idx]
        if cid is None:
            novel = True  # unresolved subtree: the completed host cannot be present
        else:
            novel = not g.contains_with_context(spine, cid)
        if novel:
            candidates.append(s)
    if not candidates:
        return p1
    pick = candidates[int(rng.integers(len(candidates)))]
    return replace_at(p1, hole, pick)


def _arity_alternatives(cfg: GenConfig, sym: Symbol) -> list[Symbol]:
    arity = ARITY[sym.op]
    if arity == 0:
        alts = [Symbol(Op.VAR, index=i) for i in range(cfg.feature_count)]
        alts.append(PARAM_SYMBOL)
        return [s for s in alts if s != sym]
    return [Symbol(op) for op in cfg.nonterminals if ARITY[op] == arity and op != sym.op]


def egraph_mutation(
    e: Expr,
    cfg: VariationConfig,
    g: EGraph,
    rng: np.random.Generator,
) -> Expr:
    """Replace a random subtree with a fresh one; if the result was already
    visited, retry once by swapping the new subtree's root for a same-arity
    symbol that makes it unvisited.  Falls back to the first mutant."""
    if rng.random() >= cfg.pm:
        return e
    hole = int(rng.integers(size(e)))
    spine = host_spine(g, e, hole)
    size_budget, depth_budget = _budgets(cfg.gen, e, hole, len(spine))
    sub_cfg = replace(cfg.gen, max_size=size_budget, max_depth=depth_budget)
    gen = grow if rng.random() < 0.5 else full
    s = gen(sub_cfg, rng)
    mutated = replace_at(e, hole, s)
    if g.lookup_expr(mutated) is None:
        return mutated
    swaps: list[Expr] = []
    for sym in _arity_alternatives(cfg.gen, s.sym):
        s2 = Expr(sym, s.args)
        cid = g.lookup_expr(s2)
        if cid is None or not g.contains_with_context(spine, cid):
            swaps.append(s2)
    if not swaps:
        return mutated
    pick = swaps[int(rng.integers(len(swaps)))]
    return replace_at(e, hole, pick)


def subtree_crossover(
    p1: Expr,
    p2: Expr,
    cfg: VariationConfig,
    rng: np.random.Generator,
) -> Expr:
    """Classic subtree crossover: same pipeline, no novelty filtering."""
    if rng.random() >= cfg.pc:
        return p1
    hole = int(rng.integers(size(p1)))
    spine_len = _hole_depth(p1, hole) - 1
    size_budget, depth_budget = _budgets(cfg.gen, p1, hole, spine_len)
    candidates = [
        s
        for s in preorder(p2)
        if size(s) <= size_budget and depth(s) <= depth_budget
    ]
    if not candidates:
        return p1
    pick = candidates[int(rng.integers(len(candidates)))]
    return replace_at(p1, hole, pick)


def subtree_mutation(
    e: Expr,
    cfg: VariationConfig,
    rng: np.random.Generator,
) -> Expr:
    """Classic subtree mutation: replace a random subtree with a fresh one."""
    if rng.random() >= cfg.pm:
        return e
    hole = int(rng.integers(size(e)))
    spine_len = _hole_depth(e, hole) - 1
    size_budget, depth_budget = _budgets(cfg.gen, e, hole, spine_len)
    sub_cfg = replace(cfg.gen, max_size=size_budget, max_depth=depth_budget)
    gen = grow if rng.random() < 0.5 else full
    return replace_at(e, hole, gen(sub_cfg, rng))


def _hole_depth(e: Expr, index: int) -> int:
    """1-based depth of the node at pre-order ``index``."""
    node = e
    d = 1
    i = index
    while i > 0:
        i -= 1
        for child in node.args:
            ns = size(child)
            if i < ns:
                node = child
                d += 1
                break
            i -= ns
    return d
