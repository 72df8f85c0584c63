"""Equality graph over expression trees.

Stores every inserted expression (and anything derived from it by rewriting)
as a union-find of equivalence classes plus a hash-cons map from e-nodes to
classes.  Lookups never mutate, so the structure can answer "was this
expression, or an equivalent, ever visited?" while the search runs.

All parameter terminals share a single e-node, so two expressions that differ
only in their parameterization collapse into one class.  Constants keep their
literal identity.

Internal bookkeeping notes:

- Only nodes referencing an absorbed class get stale hash-cons keys, so a
  merge queues the absorbed side's parent entries for repair and unions the
  rest by moving it into the heavier class.
- Class node sets may transiently hold superseded spellings of a node; every
  read that needs exactness canonicalizes on the fly, and the hash-cons keeps
  exactly one live canonical key per node (superseded keys are unreachable by
  canonical probes and swept out by :meth:`EGraph.sweep`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

from .expr import ARITY, Expr, Op, PARAM_SYMBOL, Symbol

__all__ = ["ENode", "EClass", "EGraph", "SpineStep", "EGraphFormatError"]


class ENode(NamedTuple):
    """An operator whose children are e-class ids."""

    sym: Symbol
    args: tuple[int, ...]


class SpineStep(NamedTuple):
    """One level of a root-to-hole path.

    ``siblings`` has one entry per child position: the e-class id of the
    off-path subtree, ``None`` at ``hole`` and for subtrees absent from the
    graph.
    """

    sym: Symbol
    hole: int
    siblings: tuple[Optional[int], ...]


@dataclass
class EClass:
    id: int
    nodes: dict[ENode, None]
    by_op: dict[Op, list[ENode]]
    parents: list[tuple[ENode, int]]
    smallest_size: int
    param_free: bool
    const_value: Optional[float] = None
    family_merged: bool = False  # joined through a parameter-absorption rule

    @property
    def weight(self) -> int:
        return len(self.nodes) + len(self.parents)


class _UnionFind:
    def __init__(self) -> None:
        self.parent: list[int] = []

    def make(self) -> int:
        cid = len(self.parent)
        self.parent.append(cid)
        return cid

    def extend_to(self, n: int) -> None:
        while len(self.parent) < n:
            self.make()

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root


class EGraphFormatError(ValueError):
    """Raised when an e-graph file cannot be decoded."""


_THETA_NODE = ENode(PARAM_SYMBOL, ())


class EGraph:
    def __init__(self) -> None:
        self._uf = _UnionFind()
        self.hashcons: dict[ENode, int] = {}
        self.classes: dict[int, EClass] = {}
        self.roots: list[int] = []
        self._evaluated: dict[int, None] = {}
        self._repair_worklist: list[tuple[ENode, int]] = []
        self._analysis_worklist: list[int] = []
        self._pending: dict[ENode, None] = {}
        self._dirty = False

    # -- basic queries ------------------------------------------------------

    def find(self, cid: int) -> int:
        return self._uf.find(cid)

    def canonicalize(self, node: ENode) -> ENode:
        return ENode(node.sym, tuple(self._uf.find(a) for a in node.args))

    @property
    def class_count(self) -> int:
        return len(self.classes)

    @property
    def node_count(self) -> int:
        """Number of distinct canonical e-nodes."""
        find = self._uf.find
        count = 0
        for node in self.hashcons:
            if all(find(a) == a for a in node.args):
                count += 1
        return count

    @property
    def theta_class(self) -> Optional[int]:
        cid = self.hashcons.get(_THETA_NODE)
        return None if cid is None else self._uf.find(cid)

    def canonical_roots(self) -> list[int]:
        return [self._uf.find(r) for r in self.roots]

    def mark_evaluated(self, cid: int) -> None:
        self._evaluated[self._uf.find(cid)] = None

    def evaluated_classes(self) -> list[int]:
        out: dict[int, None] = {}
        for cid in self._evaluated:
            out[self._uf.find(cid)] = None
        return list(out)

    def class_has_const(self, cid: int, value: float) -> bool:
        return self.classes[self._uf.find(cid)].const_value == value

    def canonical_class_nodes(self, cid: int) -> list[ENode]:
        """Member e-nodes in canonical spelling, deduplicated."""
        cls = self.classes[self._uf.find(cid)]
        return list(dict.fromkeys(self.canonicalize(n) for n in cls.nodes))

    def _check_clean(self) -> None:
        if self._dirty:
            raise RuntimeError("e-graph queried between merge() and rebuild()")

    # -- insertion ----------------------------------------------------------

    def _add_enode(self, node: ENode) -> int:
        node = self.canonicalize(node)
        found = self.hashcons.get(node)
        if found is not None:
            return self._uf.find(found)
        cid = self._uf.make()
        child_classes = [self.classes[a] for a in node.args]
        smallest = 1 + sum(c.smallest_size for c in child_classes)
        pf = node.sym.op is not Op.PARAM and all(c.param_free for c in child_classes)
        cv = node.sym.value if node.sym.op is Op.CONST else None
        self.classes[cid] = EClass(
            cid, {node: None}, {node.sym.op: [node]}, [], smallest, pf, cv
        )
        self.hashcons[node] = cid
        for a in dict.fromkeys(node.args):
            self.classes[a].parents.append((node, cid))
        self._pending[node] = None
        return cid

    def add_expr(self, e: Expr) -> int:
        """Bottom-up insertion; appends the root id to ``roots``."""
        cid = self._add_tree(e)
        self.roots.append(cid)
        return cid

    def _add_tree(self, e: Expr) -> int:
        args = tuple(self._add_tree(a) for a in e.args)
        return self._add_enode(ENode(e.sym, args))

    def lookup_expr(self, e: Expr) -> Optional[int]:
        """Class id of ``e`` iff every one of its e-nodes is present; never mutates."""
        self._check_clean()

        def go(node: Expr) -> Optional[int]:
            args = []
            for a in node.args:
                cid = go(a)
                if cid is None:
                    return None
                args.append(cid)
            found = self.hashcons.get(ENode(node.sym, tuple(args)))
            return None if found is None else self._uf.find(found)

        return go(e)

    def subtree_classes(self, e: Expr) -> list[Optional[int]]:
        """Class ids of every subtree of ``e`` in pre-order, ``None`` where absent.

        One bottom-up pass; never mutates.
        """
        self._check_clean()
        out: list[Optional[int]] = []

        def go(node: Expr) -> Optional[int]:
            slot = len(out)
            out.append(None)
            args = []
            ok = True
            for a in node.args:
                cid = go(a)
                if cid is None:
                    ok = False
                else:
                    args.append(cid)
            if not ok:
                return None
            found = self.hashcons.get(ENode(node.sym, tuple(args)))
            cid = None if found is None else self._uf.find(found)
            out[slot] = cid
            return cid

        go(e)
        return out

    # -- merging and congruence maintenance ---------------------------------

    def merge(self, a: int, b: int, family: bool = False) -> int:
        """Union two classes; callers must :meth:`rebuild` before querying."""
        ra, rb = self._uf.find(a), self._uf.find(b)
        if ra == rb:
            if family:
                self.classes[ra].family_merged = True
            return ra
        ca, cb = self.classes[ra], self.classes[rb]
        if ca.weight < cb.weight:
            ra, rb, ca, cb = rb, ra, cb, ca
        self._uf.parent[rb] = ra
        # only nodes referencing the absorbed id have stale hash-cons keys
        self._repair_worklist.extend(cb.parents)
        for pnode, _ in cb.parents:
            self._pending[pnode] = None
        # the side whose smallest size got beaten propagates to its parents
        if cb.smallest_size < ca.smallest_size or (cb.param_free and not ca.param_free):
            self._analysis_worklist.extend(p for _, p in ca.parents)
        if ca.smallest_size < cb.smallest_size or (ca.param_free and not cb.param_free):
            self._analysis_worklist.extend(p for _, p in cb.parents)
        ca.nodes.update(cb.nodes)
        for op, nodes in cb.by_op.items():
            ca.by_op.setdefault(op, []).extend(nodes)
        ca.parents.extend(cb.parents)
        ca.smallest_size = min(ca.smallest_size, cb.smallest_size)
        ca.param_free = ca.param_free or cb.param_free
        if ca.const_value is None:
            ca.const_value = cb.const_value
        ca.family_merged = ca.family_merged or cb.family_merged or family
        del self.classes[rb]
        self._dirty = True
        return ra

    def rebuild(self) -> None:
        """Restore hash-cons/congruence invariants and refresh the analysis."""
        while self._repair_worklist:
            todo = self._repair_worklist
            self._repair_worklist = []
            for pnode, pcls in todo:
                self.hashcons.pop(pnode, None)
                canon = self.canonicalize(pnode)
                pc = self._uf.find(pcls)
                existing = self.hashcons.get(canon)
                if existing is not None:
                    ec = self._uf.find(existing)
                    if ec != pc:
                        pc = self._uf.find(self.merge(ec, pc))
                self.hashcons[canon] = pc
                self._pending[canon] = None
        self._propagate_analysis()
        self._dirty = False

    def _node_size(self, node: ENode) -> int:
        return 1 + sum(self.classes[self._uf.find(a)].smallest_size for a in node.args)

    def _node_param_free(self, node: ENode) -> bool:
        if node.sym.op is Op.PARAM:
            return False
        return all(self.classes[self._uf.find(a)].param_free for a in node.args)

    def _propagate_analysis(self) -> None:
        work = self._analysis_worklist
        self._analysis_worklist = []
        while work:
            cid = self._uf.find(work.pop())
            cls = self.classes[cid]
            best = min(self._node_size(n) for n in cls.nodes)
            pf = cls.param_free or any(self._node_param_free(n) for n in cls.nodes)
            changed = False
            if best < cls.smallest_size:
                cls.smallest_size = best
                changed = True
            if pf and not cls.param_free:
                cls.param_free = True
                changed = True
            if changed:
                for _, pcls in cls.parents:
                    work.append(pcls)

    def take_pending(self) -> list[ENode]:
        """Nodes added or touched since the last saturation step, canonical, deduped."""
        self._check_clean()
        out: dict[ENode, None] = {}
        for node in self._pending:
            canon = self.canonicalize(node)
            if canon in self.hashcons:
                out[canon] = None
        self._pending = {}
        return list(out)

    def discard_pending(self) -> None:
        """Drop the touched-node frontier.

        The search loop calls this before inserting each new expression so the
        following saturation step covers exactly that expression; rewrite
        products from earlier insertions do not accumulate into an ever-growing
        match frontier.
        """
        self._pending = {}

    def node_class(self, node: ENode) -> Optional[int]:
        found = self.hashcons.get(self.canonicalize(node))
        return None if found is None else self._uf.find(found)

    def sweep(self) -> None:
        """Drop superseded hash-cons keys (unreachable by canonical probes)."""
        find = self._uf.find
        stale = [
            node for node in self.hashcons if any(find(a) != a for a in node.args)
        ]
        for node in stale:
            del self.hashcons[node]

    # -- extraction ---------------------------------------------------------

    def extract_smallest(self, cid: int) -> Expr:
        """A member expression achieving ``smallest_size``.

        Ties break on the lowest symbol ordinal, then the lowest child class
        ids (then variable index / constant value for terminals).
        """
        self._check_clean()
        memo: dict[int, Expr] = {}

        def node_key(n: ENode) -> tuple:
            return (
                self._node_size(n),
                int(n.sym.op),
                tuple(self._uf.find(a) for a in n.args),
                n.sym.index,
                n.sym.value,
            )

        def build(c: int) -> Expr:
            c = self._uf.find(c)
            got = memo.get(c)
            if got is not None:
                return got
            cls = self.classes[c]
            best = min(cls.nodes, key=node_key)
            expr = Expr(best.sym, tuple(build(a) for a in best.args))
            memo[c] = expr
            return expr

        return build(cid)

    def member_expr(self, node: ENode) -> Expr:
        """Expand one e-node using the smallest expression of each child class."""
        return Expr(node.sym, tuple(self.extract_smallest(a) for a in node.args))

    # -- contextual containment (novelty probe) -----------------------------

    def contains_with_context(self, spine: Sequence[SpineStep], candidate: int) -> bool:
        """Would the host expression, with ``candidate`` plugged into the hole,
        be present in the graph?  Walks the spine bottom-up; never mutates."""
        self._check_clean()
        cur = self._uf.find(candidate)
        for step in reversed(spine):
            args = []
            for j, sib in enumerate(step.siblings):
                if j == step.hole:
                    args.append(cur)
                elif sib is None:
                    return False
                else:
                    args.append(self._uf.find(sib))
            found = self.hashcons.get(ENode(step.sym, tuple(args)))
            if found is None:
                return False
            cur = self._uf.find(found)
        return True

    # -- family-merge reachability (soundness-test support) ------------------

    def family_reachable(self, cid: int) -> bool:
        """True if the class, or any class reachable through member e-nodes,
        was ever merged by a parameter-absorption rule."""
        seen: set[int] = set()
        stack = [self._uf.find(cid)]
        while stack:
            c = stack.pop()
            if c in seen:
                continue
            seen.add(c)
            cls = self.classes[c]
            if cls.family_merged:
                return True
            for n in cls.nodes:
                for a in n.args:
                    stack.append(self._uf.find(a))
        return False

    # -- serialization ------------------------------------------------------

    _MAGIC = b"EGG1"
    _VERSION = 1

    def serialize(self) -> bytes:
        """Versioned binary snapshot: classes, e-nodes, roots, evaluated ids."""
        self._check_clean()
        self.sweep()
        find = self._uf.find
        members: dict[int, list[ENode]] = {}
        for node, cid in self.hashcons.items():
            members.setdefault(find(cid), []).append(node)
        out = bytearray()
        out += self._MAGIC
        out += struct.pack("<I", self._VERSION)
        out += struct.pack("<I", len(members))
        for cid in sorted(members):
            nodes = sorted(members[cid], key=_node_sort_key)
            out += struct.pack("<II", cid, len(nodes))
            for node in nodes:
                text = _symbol_text(node.sym).encode("utf-8")
                out += struct.pack("<H", len(text))
                out += text
                out += struct.pack("<B", len(node.args))
                for a in node.args:
                    out += struct.pack("<I", a)
        roots = self.canonical_roots()
        out += struct.pack("<I", len(roots))
        for r in roots:
            out += struct.pack("<I", r)
        evaluated = self.evaluated_classes()
        out += struct.pack("<I", len(evaluated))
        for c in evaluated:
            out += struct.pack("<I", c)
        return bytes(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "EGraph":
        r = _Reader(data)
        magic = r.read(4)
        if magic != cls._MAGIC:
            raise EGraphFormatError(f"bad magic {magic!r} at offset 0")
        version = r.u32()
        if version != cls._VERSION:
            raise EGraphFormatError(f"unsupported version {version} at offset 4")
        g = cls()
        n_classes = r.u32()
        raw: list[tuple[int, list[ENode]]] = []
        max_id = -1
        for _ in range(n_classes):
            cid = r.u32()
            max_id = max(max_id, cid)
            nodes = []
            for _ in range(r.u32()):
                text = r.read(r.u16()).decode("utf-8")
                sym = _symbol_from_text(text, r.pos)
                arity = r.u8()
                args = tuple(r.u32() for _ in range(arity))
                if arity != ARITY[sym.op]:
                    raise EGraphFormatError(
                        f"arity mismatch for {text!r} at offset {r.pos}"
                    )
                nodes.append(ENode(sym, args))
                if args:
                    max_id = max(max_id, *args)
            raw.append((cid, nodes))
        g._uf.extend_to(max_id + 1)
        for cid, nodes in raw:
            by_op: dict[Op, list[ENode]] = {}
            cv = None
            for n in nodes:
                by_op.setdefault(n.sym.op, []).append(n)
                if n.sym.op is Op.CONST:
                    cv = n.sym.value
            g.classes[cid] = EClass(
                cid, dict.fromkeys(nodes), by_op, [], 1 << 30, False, cv
            )
        for cid, nodes in raw:
            for node in nodes:
                for a in dict.fromkeys(node.args):
                    if a not in g.classes:
                        raise EGraphFormatError(f"dangling class id {a}")
                    g.classes[a].parents.append((node, cid))
                g.hashcons[node] = cid
                g._pending[node] = None
        n_roots = r.u32()
        g.roots = [r.u32() for _ in range(n_roots)]
        n_eval = r.u32()
        g._evaluated = dict.fromkeys(r.u32() for _ in range(n_eval))
        if r.pos != len(data):
            raise EGraphFormatError(f"trailing bytes at offset {r.pos}")
        for cid in g.roots + list(g._evaluated):
            if cid not in g.classes:
                raise EGraphFormatError(f"dangling class id {cid}")
        g._recompute_analysis()
        return g

    def _recompute_analysis(self) -> None:
        # least fixpoint from terminals up; sizes only decrease, pf only flips on
        changed = True
        while changed:
            changed = False
            for cls in self.classes.values():
                sizes = []
                pf = cls.param_free
                for n in cls.nodes:
                    child = [self.classes[self._uf.find(a)] for a in n.args]
                    if all(c.smallest_size < (1 << 30) for c in child):
                        sizes.append(1 + sum(c.smallest_size for c in child))
                    if n.sym.op is not Op.PARAM and all(c.param_free for c in child):
                        pf = True
                if sizes and min(sizes) < cls.smallest_size:
                    cls.smallest_size = min(sizes)
                    changed = True
                if pf and not cls.param_free:
                    cls.param_free = True
                    changed = True


def _node_sort_key(node: ENode) -> tuple:
    return (int(node.sym.op), node.sym.index, node.sym.value, node.args)


def _symbol_text(sym: Symbol) -> str:
    if sym.op is Op.VAR:
        return f"var:{sym.index}"
    if sym.op is Op.CONST:
        return f"const:{sym.value!r}"
    if sym.op is Op.PARAM:
        return "param"
    from .expr import OP_NAMES

    return OP_NAMES[sym.op]


def _symbol_from_text(text: str, offset: int) -> Symbol:
    from .expr import NAME_TO_OP

    if text.startswith("var:"):
        try:
            return Symbol(Op.VAR, index=int(text[4:]))
        except ValueError:
            raise EGraphFormatError(f"bad variable {text!r} at offset {offset}")
    if text.startswith("const:"):
        try:
            return Symbol(Op.CONST, value=float(text[6:]))
        except ValueError:
            raise EGraphFormatError(f"bad constant {text!r} at offset {offset}")
    op = NAME_TO_OP.get(text)
    if op is None or op in (Op.VAR, Op.CONST):
        raise EGraphFormatError(f"unknown symbol {text!r} at offset {offset}")
    return Symbol(op)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise EGraphFormatError(f"truncated input at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.read(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.read(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]
