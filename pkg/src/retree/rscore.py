"""Node and query r-scores.

A node's r-score is the best accuracy gain one edit at that node can buy:
keep a single child (``Semantics.SELECT``) or drop a single child
(``Semantics.PRUNE``). A query's r-score is the best total of node scores
over at most ``M`` mutually non-conflicting nodes, solved exactly by a tree
knapsack and cross-checked by exhaustive enumeration.

All arithmetic is on ``fractions.Fraction``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Optional

from retree.tree import NodeRef, NotInternal, ReasoningTree, TreeError


class Semantics(str, enum.Enum):
    SELECT = "fix"
    PRUNE = "prune"

    @classmethod
    def parse(cls, value: "str | Semantics") -> "Semantics":
        if isinstance(value, Semantics):
            return value
        aliases = {"fix": cls.SELECT, "select": cls.SELECT, "prune": cls.PRUNE, "pruning": cls.PRUNE}
        try:
            return aliases[value.lower()]
        except KeyError:
            raise ValueError(f"unknown edit semantics {value!r}") from None


class NoInternalNodes(TreeError):
    pass


class TooLarge(TreeError):
    pass


@dataclass(frozen=True)
class NodeScore:
    node: NodeRef
    r_score: Fraction
    # kept child under SELECT, removed child under PRUNE; None when no edit is possible
    child: Optional[NodeRef]

    @property
    def feasible(self) -> bool:
        return self.child is not None


@dataclass
class QueryScore:
    query_id: str
    base_acc: Fraction
    budget: int
    semantics: Semantics
    rscore_sum: Fraction
    rscore_seq: Fraction
    selected_nodes: list[NodeRef] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "base_acc": float(self.base_acc),
            "budget": self.budget,
            "semantics": self.semantics.value,
            "rscore_sum": float(self.rscore_sum),
            "rscore_seq": float(self.rscore_seq),
            "selected_nodes": list(self.selected_nodes),
            "exact": {
                "base_acc": str(self.base_acc),
                "rscore_sum": str(self.rscore_sum),
                "rscore_seq": str(self.rscore_seq),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QueryScore":
        exact = d.get("exact", {})

        def num(key: str) -> Fraction:
            if key in exact:
                return Fraction(exact[key])
            return Fraction(d[key])

        return cls(
            query_id=str(d["query_id"]),
            base_acc=num("base_acc"),
            budget=int(d["budget"]),
            semantics=Semantics.parse(d["semantics"]),
            rscore_sum=num("rscore_sum"),
            rscore_seq=num("rscore_seq"),
            selected_nodes=[int(n) for n in d.get("selected_nodes", [])],
        )


def _gain(
    tree: ReasoningTree, n: NodeRef, child: NodeRef, semantics: Semantics, mass_preserving: bool
) -> Optional[Fraction]:
    C, T = tree.counts()
    cn, tn = tree.counts(n)
    cc, tc = tree.counts(child)
    base = Fraction(C, T)
    if semantics is Semantics.SELECT:
        if mass_preserving:
            return (C - cn + Fraction(cc * tn, tc)) / T - base
        return Fraction(C - cn + cc, T - tn + tc) - base
    rest_c, rest_t = cn - cc, tn - tc
    if mass_preserving and rest_t > 0:
        return (C - cn + Fraction(rest_c * tn, rest_t)) / T - base
    if T - tc == 0:
        return None
    return Fraction(C - cc, T - tc) - base


def node_rscore(
    tree: ReasoningTree,
    n: NodeRef,
    semantics: Semantics | str = Semantics.SELECT,
    mass_preserving: bool = False,
) -> NodeScore:
    """Best single-edit accuracy gain at internal node ``n``.

    Ties go to the lowest child position. Under PRUNE a candidate whose
    removal would empty the tree is skipped; if every candidate is skipped the
    score is infeasible (``child is None``).
    """
    semantics = Semantics.parse(semantics)
    node = tree.node(n)
    if node.is_leaf:
        raise NotInternal(f"node {n} is a leaf")
    best: Optional[Fraction] = None
    best_child = None
    for ch in node.children:
        g = _gain(tree, n, ch, semantics, mass_preserving)
        if g is not None and (best is None or g > best):
            best, best_child = g, ch
    if best is None:
        return NodeScore(n, Fraction(0), None)
    return NodeScore(n, best, best_child)


def node_scores(
    tree: ReasoningTree, semantics: Semantics | str = Semantics.SELECT, mass_preserving: bool = False
) -> dict[NodeRef, NodeScore]:
    return {n: node_rscore(tree, n, semantics, mass_preserving) for n in tree.internal_nodes}


def _in_edit_region(tree: ReasoningTree, j: NodeRef, s: NodeScore, semantics: Semantics) -> bool:
    """True when the edit described by ``s`` removes node ``j``."""
    if semantics is Semantics.SELECT:
        return j != s.node and tree.is_descendant(j, s.node) and not tree.is_descendant(j, s.child)
    return tree.is_descendant(j, s.child)


def conflicting(tree: ReasoningTree, a: NodeScore, b: NodeScore, semantics: Semantics | str) -> bool:
    semantics = Semantics.parse(semantics)
    return _in_edit_region(tree, b.node, a, semantics) or _in_edit_region(tree, a.node, b, semantics)


# -- exact tree knapsack ------------------------------------------------------
#
# Table entries are (value, size, key) where key is a bitmask over internal
# nodes with the smallest id in the highest bit. Entries compare by value,
# then fewer nodes, then key; for equal sizes the larger key is the
# lexicographically smaller sorted id list. All three parts add up over
# disjoint subtrees, which keeps per-subtree optima composable.

_Entry = tuple[Fraction, int, int]
_ZERO: _Entry = (Fraction(0), 0, 0)


def _better(a: _Entry, b: _Entry) -> bool:
    return (a[0], -a[1], a[2]) > (b[0], -b[1], b[2])


def _add(a: _Entry, b: _Entry) -> _Entry:
    return (a[0] + b[0], a[1] + b[1], a[2] | b[2])


def _merge(x: list[_Entry], y: list[_Entry]) -> list[_Entry]:
    out = []
    for m in range(len(x)):
        best = _add(x[0], y[m])
        for a in range(1, m + 1):
            cand = _add(x[a], y[m - a])
            if _better(cand, best):
                best = cand
        out.append(best)
    return out


def _solve(tree: ReasoningTree, M: int, semantics: Semantics, mass_preserving: bool) -> tuple[_Entry, list[NodeRef]]:
    internal = tree.internal_nodes
    if not internal:
        raise NoInternalNodes(f"tree {tree.query_id!r} has no internal nodes")
    if M < 1:
        raise ValueError("budget M must be >= 1")
    scores = node_scores(tree, semantics, mass_preserving)
    width = len(internal)
    bit = {n: 1 << (width - 1 - i) for i, n in enumerate(internal)}
    empty = [_ZERO] * (M + 1)
    tables: dict[NodeRef, list[_Entry]] = {}
    for n in tree.postorder():
        kids = tree.children(n)
        if not kids:
            tables[n] = empty
            continue
        merged = empty
        for ch in kids:
            merged = _merge(merged, tables[ch])
        s = scores[n]
        if s.feasible:
            if semantics is Semantics.SELECT:
                below = tables[s.child]
            else:
                below = empty
                for ch in kids:
                    if ch != s.child:
                        below = _merge(below, tables[ch])
            own: _Entry = (s.r_score, 1, bit[n])
            merged = list(merged)
            for m in range(1, M + 1):
                cand = _add(own, below[m - 1])
                if _better(cand, merged[m]):
                    merged[m] = cand
        tables[n] = merged
    best = tables[tree.root][M]
    chosen = [n for n in internal if best[2] & bit[n]]
    return best, chosen


def dp_query_rscore(
    tree: ReasoningTree, M: int, semantics: Semantics | str = Semantics.SELECT, mass_preserving: bool = False
) -> Fraction:
    """Optimal sum of node r-scores over <= M non-conflicting nodes."""
    best, _ = _solve(tree, M, Semantics.parse(semantics), mass_preserving)
    return best[0]


def query_rscore(
    tree: ReasoningTree, M: int, semantics: Semantics | str = Semantics.SELECT, mass_preserving: bool = False
) -> QueryScore:
    from retree.mcn import potential_gain

    semantics = Semantics.parse(semantics)
    best, chosen = _solve(tree, M, semantics, mass_preserving)
    return QueryScore(
        query_id=tree.query_id,
        base_acc=tree.base_acc,
        budget=M,
        semantics=semantics,
        rscore_sum=best[0],
        rscore_seq=potential_gain(tree, M, semantics),
        selected_nodes=chosen,
    )


ORACLE_LIMIT = 25


def query_rscore_oracle(
    tree: ReasoningTree, M: int, semantics: Semantics | str = Semantics.SELECT, mass_preserving: bool = False
) -> QueryScore:
    """Exhaustive search over node subsets; reference for the knapsack."""
    from retree.mcn import potential_gain

    semantics = Semantics.parse(semantics)
    internal = tree.internal_nodes
    if not internal:
        raise NoInternalNodes(f"tree {tree.query_id!r} has no internal nodes")
    if len(internal) > ORACLE_LIMIT:
        raise TooLarge(f"{len(internal)} internal nodes exceeds oracle limit {ORACLE_LIMIT}")
    if M < 1:
        raise ValueError("budget M must be >= 1")
    scores = node_scores(tree, semantics, mass_preserving)
    cands = [n for n in internal if scores[n].feasible]
    clash = {
        (a, b): conflicting(tree, scores[a], scores[b], semantics) for a, b in combinations(cands, 2)
    }

    best_value = Fraction(0)
    best_set: tuple[NodeRef, ...] = ()
    for size in range(1, min(M, len(cands)) + 1):
        for subset in combinations(cands, size):
            if any(clash[pair] for pair in combinations(subset, 2)):
                continue
            value = sum((scores[n].r_score for n in subset), Fraction(0))
            if value > best_value or (
                value == best_value and (len(subset), subset) < (len(best_set), best_set)
            ):
                best_value, best_set = value, subset
    return QueryScore(
        query_id=tree.query_id,
        base_acc=tree.base_acc,
        budget=M,
        semantics=semantics,
        rscore_sum=best_value,
        rscore_seq=potential_gain(tree, M, semantics),
        selected_nodes=list(best_set),
    )
