"""Rewrite rules and the single-step saturation pass.

A rule's left side is a shallow pattern over e-nodes; matching binds pattern
variables to e-class ids (and constant captures to literal values).  Applying
a match instantiates the right side as e-nodes and merges the result with the
matched class.  One step collects every match against the nodes touched since
the previous step, applies them all, then rebuilds once.  Re-applying an old
match is a no-op, so matching only the touched frontier yields the same graph
as re-matching everything.

Rules flagged ``family`` identify parameterized function families rather than
pointwise-equal functions (every parameter occurrence is an independent fitted
value), so classes they touch are exempt from pointwise agreement checks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from .egraph import EGraph, ENode
from .expr import Op, Symbol, const_symbol, PARAM_SYMBOL

log = logging.getLogger(__name__)

__all__ = [
    "Pat",
    "RTpl",
    "Rule",
    "Env",
    "default_rules",
    "saturate_one_step",
    "MATCH_BUDGET",
]

MATCH_BUDGET = 10_000


@dataclass(frozen=True)
class Pat:
    """Pattern node: an op over sub-patterns, a class variable, a constant
    capture (optionally pinned to a value), or the shared parameter class."""

    op: Optional[Op] = None
    args: tuple["Pat", ...] = ()
    bind: str = ""
    const: bool = False
    value: Optional[float] = None
    theta: bool = False


def pv(name: str) -> Pat:
    return Pat(bind=name)


def pconst(name: str, value: Optional[float] = None) -> Pat:
    return Pat(bind=name, const=True, value=value)


def ptheta() -> Pat:
    return Pat(theta=True)


def pop(op: Op, *args: Pat) -> Pat:
    return Pat(op=op, args=args)


@dataclass(frozen=True)
class RTpl:
    """Right-side template: bound class reference, computed constant, the
    parameter node, or an op over sub-templates."""

    op: Optional[Op] = None
    args: tuple["RTpl", ...] = ()
    ref: str = ""
    const_of: Optional[Callable[["Env"], float]] = None
    theta: bool = False


def rv(name: str) -> RTpl:
    return RTpl(ref=name)


def rconst(fn: Callable[["Env"], float]) -> RTpl:
    return RTpl(const_of=fn)


def rtheta() -> RTpl:
    return RTpl(theta=True)


def rop(op: Op, *args: RTpl) -> RTpl:
    return RTpl(op=op, args=args)


@dataclass
class Env:
    classes: dict[str, int] = field(default_factory=dict)
    consts: dict[str, float] = field(default_factory=dict)

    def copy(self) -> "Env":
        return Env(dict(self.classes), dict(self.consts))


@dataclass(frozen=True)
class Rule:
    name: str
    lhs: Pat
    rhs: RTpl
    guard: Optional[Callable[[EGraph, Env], bool]] = None
    family: bool = False


def _match_child(g: EGraph, cid: int, pat: Pat, env: Env) -> Iterator[Env]:
    if pat.theta:
        if g.theta_class == cid:
            yield env
        return
    if pat.const:
        bound = env.classes.get(pat.bind)
        if bound is not None and bound != cid:
            return
        value = g.classes[cid].const_value
        if value is not None and (pat.value is None or value == pat.value):
            out = env.copy()
            out.classes[pat.bind] = cid
            out.consts[pat.bind] = value
            yield out
        return
    if pat.op is None:
        bound = env.classes.get(pat.bind)
        if bound is not None:
            if bound == cid:
                yield env
            return
        out = env.copy()
        out.classes[pat.bind] = cid
        yield out
        return
    for node in list(g.classes[cid].by_op.get(pat.op, ())):
        yield from _match_args(g, node, pat.args, env)


def _match_args(g: EGraph, node: ENode, pats: tuple[Pat, ...], env: Env) -> Iterator[Env]:
    if len(pats) != len(node.args):
        return

    def go(i: int, env: Env) -> Iterator[Env]:
        if i == len(pats):
            yield env
            return
        cid = g.find(node.args[i])
        for env2 in _match_child(g, cid, pats[i], env):
            yield from go(i + 1, env2)

    yield from go(0, env)


def match_lhs(g: EGraph, node: ENode, pat: Pat) -> Iterator[Env]:
    if node.sym.op is not pat.op:
        return
    yield from _match_args(g, node, pat.args, Env())


def build_rhs(g: EGraph, tpl: RTpl, env: Env) -> int:
    if tpl.ref:
        return env.classes[tpl.ref]
    if tpl.theta:
        return g._add_enode(ENode(PARAM_SYMBOL, ()))
    if tpl.const_of is not None:
        return g._add_enode(ENode(const_symbol(tpl.const_of(env)), ()))
    args = tuple(build_rhs(g, a, env) for a in tpl.args)
    return g._add_enode(ENode(Symbol(tpl.op), args))


def saturate_one_step(g: EGraph, rules: list[Rule], max_matches: int = MATCH_BUDGET) -> int:
    """One pass: collect all matches against the touched frontier, apply all,
    rebuild once.  Returns the number of matches applied."""
    by_op: dict[Op, list[Rule]] = {}
    for rule in rules:
        by_op.setdefault(rule.lhs.op, []).append(rule)
    pending = g.take_pending()
    matches: list[tuple[int, Rule, Env]] = []
    truncated = False
    for node in pending:
        rs = by_op.get(node.sym.op)
        if not rs:
            continue
        cid = g.node_class(node)
        if cid is None:
            continue
        for rule in rs:
            for env in match_lhs(g, node, rule.lhs):
                if rule.guard is not None and not rule.guard(g, env):
                    continue
                matches.append((cid, rule, env))
                if len(matches) >= max_matches:
                    truncated = True
                    break
            if truncated:
                break
        if truncated:
            break
    if truncated:
        log.warning("saturation step truncated at %d matches", max_matches)
    for cid, rule, env in matches:
        rhs = build_rhs(g, rule.rhs, env)
        g.merge(cid, rhs, family=rule.family)
    g.rebuild()
    return len(matches)


# ---------------------------------------------------------------------------
# the default rule set


def _param_free(name: str) -> Callable[[EGraph, Env], bool]:
    def guard(g: EGraph, env: Env) -> bool:
        return g.classes[env.classes[name]].param_free

    return guard


def _div_self_guard(g: EGraph, env: Env) -> bool:
    cid = env.classes["a"]
    return g.classes[cid].param_free and not g.class_has_const(cid, 0.0)


def _fold(op: Callable[[float, float], float]) -> Callable[[Env], float]:
    def fn(env: Env) -> float:
        return op(env.consts["c1"], env.consts["c2"])

    return fn


def _fold_guard(op: Callable[[float, float], float], no_zero_rhs: bool = False):
    def guard(g: EGraph, env: Env) -> bool:
        c1, c2 = env.consts["c1"], env.consts["c2"]
        if no_zero_rhs and c2 == 0.0:
            return False
        try:
            return math.isfinite(op(c1, c2))
        except (OverflowError, ZeroDivisionError):
            return False

    return guard


def _const_nonzero(name: str) -> Callable[[EGraph, Env], bool]:
    def guard(g: EGraph, env: Env) -> bool:
        return env.consts[name] != 0.0

    return guard


def default_rules() -> list[Rule]:
    a, b, c = pv("a"), pv("b"), pv("c")
    s = pv("s")
    rules: list[Rule] = [
        Rule("comm-add", pop(Op.ADD, a, b), rop(Op.ADD, rv("b"), rv("a"))),
        Rule("comm-mul", pop(Op.MUL, a, b), rop(Op.MUL, rv("b"), rv("a"))),
        Rule(
            "assoc-add-l",
            pop(Op.ADD, pop(Op.ADD, a, b), c),
            rop(Op.ADD, rv("a"), rop(Op.ADD, rv("b"), rv("c"))),
        ),
        Rule(
            "assoc-add-r",
            pop(Op.ADD, a, pop(Op.ADD, b, c)),
            rop(Op.ADD, rop(Op.ADD, rv("a"), rv("b")), rv("c")),
        ),
        Rule(
            "assoc-mul-l",
            pop(Op.MUL, pop(Op.MUL, a, b), c),
            rop(Op.MUL, rv("a"), rop(Op.MUL, rv("b"), rv("c"))),
        ),
        Rule(
            "assoc-mul-r",
            pop(Op.MUL, a, pop(Op.MUL, b, c)),
            rop(Op.MUL, rop(Op.MUL, rv("a"), rv("b")), rv("c")),
        ),
        Rule("add-zero-r", pop(Op.ADD, a, pconst("z", 0.0)), rv("a")),
        Rule("add-zero-l", pop(Op.ADD, pconst("z", 0.0), a), rv("a")),
        Rule("mul-one-r", pop(Op.MUL, a, pconst("z", 1.0)), rv("a")),
        Rule("mul-one-l", pop(Op.MUL, pconst("z", 1.0), a), rv("a")),
        Rule("mul-zero-r", pop(Op.MUL, a, pconst("z", 0.0)), rconst(lambda env: 0.0)),
        Rule("mul-zero-l", pop(Op.MUL, pconst("z", 0.0), a), rconst(lambda env: 0.0)),
        # a - a and a / a only collapse when the class surely denotes a single
        # function; on parameter-dependent classes each occurrence is an
        # independent parameter, and collapsing would corrupt the graph
        Rule(
            "sub-self",
            pop(Op.SUB, a, pv("a")),
            rconst(lambda env: 0.0),
            guard=_param_free("a"),
        ),
        Rule(
            "div-self",
            pop(Op.DIV, a, pv("a")),
            rconst(lambda env: 1.0),
            guard=_div_self_guard,
        ),
        Rule("add-self", pop(Op.ADD, a, pv("a")), rop(Op.MUL, rconst(lambda env: 2.0), rv("a"))),
        Rule(
            "mul-fold-sum",
            pop(Op.ADD, pop(Op.MUL, pconst("c1"), s), pop(Op.MUL, pconst("c2"), pv("s"))),
            rop(Op.MUL, rconst(_fold(lambda x, y: x + y)), rv("s")),
            guard=_fold_guard(lambda x, y: x + y),
        ),
        Rule(
            "mul-fold-inc-l",
            pop(Op.ADD, pop(Op.MUL, pconst("c1"), s), pv("s")),
            rop(Op.MUL, rconst(lambda env: env.consts["c1"] + 1.0), rv("s")),
        ),
        Rule(
            "mul-fold-inc-r",
            pop(Op.ADD, s, pop(Op.MUL, pconst("c1"), pv("s"))),
            rop(Op.MUL, rconst(lambda env: env.consts["c1"] + 1.0), rv("s")),
        ),
        Rule("log-exp", pop(Op.LOGABS, pop(Op.EXP, a)), rv("a")),
    ]
    folds = [
        (Op.ADD, lambda x, y: x + y, False),
        (Op.SUB, lambda x, y: x - y, False),
        (Op.MUL, lambda x, y: x * y, False),
        (Op.DIV, lambda x, y: x / y if y != 0.0 else math.inf, True),
    ]
    for op, fn, no_zero in folds:
        rules.append(
            Rule(
                f"fold-{op.name.lower()}",
                pop(op, pconst("c1"), pconst("c2")),
                rconst(_fold(fn)),
                guard=_fold_guard(fn, no_zero_rhs=no_zero),
            )
        )
    # parameter absorption: a free parameter combined with a free parameter or
    # a literal is again a free parameter (zero literals excluded for the
    # multiplicative forms, where absorption would not span the same family)
    for op in (Op.ADD, Op.SUB, Op.MUL, Op.DIV):
        name = op.name.lower()
        mulish = op in (Op.MUL, Op.DIV)
        rules.append(
            Rule(f"theta-{name}-theta", pop(op, ptheta(), ptheta()), rtheta(), family=True)
        )
        rules.append(
            Rule(
                f"theta-{name}-const",
                pop(op, ptheta(), pconst("c")),
                rtheta(),
                guard=_const_nonzero("c") if mulish else None,
                family=True,
            )
        )
        rules.append(
            Rule(
                f"const-{name}-theta",
                pop(op, pconst("c"), ptheta()),
                rtheta(),
                guard=_const_nonzero("c") if mulish else None,
                family=True,
            )
        )
    return rules
