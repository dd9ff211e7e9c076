"""Minimum corrective nodes and the budgeted accuracy frontier.

Every subtree is summarised, per edit budget, by the Pareto set of
``(correct, total)`` leaf counts it can be reduced to. A pair dominates
another when it has at least as many correct leaves and at most as many
leaves in total; dominated pairs can never give a better ratio after being
combined with the rest of the tree, so they are dropped at every merge.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Optional

from retree.rscore import Semantics, TooLarge
from retree.tree import NodeRef, ReasoningTree

Pair = tuple[int, int]


class _Unattainable:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Unattainable"

    def __bool__(self) -> bool:
        return False


Unattainable = _Unattainable()


def as_fraction(x: Real | str | Fraction) -> Fraction:
    # floats go through repr so that 0.9 means 9/10, not its binary expansion
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def pareto_prune(pairs) -> list[Pair]:
    # the empty outcome (0, 0) is kept but never dominates: it is only valid beside a non-empty sibling
    out: list[Pair] = []
    best_c = -1
    for c, t in sorted(set(pairs), key=lambda p: (p[1], -p[0])):
        if t == 0:
            out.append((c, t))
        elif c > best_c:
            out.append((c, t))
            best_c = c
    return out


@dataclass
class ParetoFrontier:
    """``levels[e]`` is the non-dominated outcome set reachable with <= e edits."""

    levels: list[list[Pair]]

    @property
    def max_edits(self) -> int:
        return len(self.levels) - 1

    def best_acc(self, e: int) -> Fraction:
        return max(Fraction(c, t) for c, t in self.levels[e] if t > 0)

    def first_meeting(self, target: Fraction) -> Optional[int]:
        for e, level in enumerate(self.levels):
            if any(t > 0 and Fraction(c, t) >= target for c, t in level):
                return e
        return None


def _combine(x: list[list[Pair]], y: list[list[Pair]]) -> list[list[Pair]]:
    out = []
    for e in range(len(x)):
        pool = []
        for a in range(e + 1):
            for c1, t1 in x[a]:
                for c2, t2 in y[e - a]:
                    pool.append((c1 + c2, t1 + t2))
        out.append(pareto_prune(pool))
    return out


def _tables(tree: ReasoningTree, E: int, semantics: Semantics) -> dict[NodeRef, list[list[Pair]]]:
    nothing = [[(0, 0)] for _ in range(E + 1)]
    tables: dict[NodeRef, list[list[Pair]]] = {}
    for n in tree.postorder():
        node = tree.node(n)
        if node.is_leaf:
            tables[n] = [[(1 if node.label else 0, 1)] for _ in range(E + 1)]
            continue
        kids = node.children
        acc_table = nothing
        for ch in kids:
            acc_table = _combine(acc_table, tables[ch])
        levels = [list(level) for level in acc_table]
        if semantics is Semantics.SELECT:
            after_edit = [tables[ch] for ch in kids]
        else:
            after_edit = []
            for ch in kids:
                rest = nothing
                for other in kids:
                    if other != ch:
                        rest = _combine(rest, tables[other])
                after_edit.append(rest)
        for e in range(1, E + 1):
            extra = [p for tab in after_edit for p in tab[e - 1]]
            levels[e] = pareto_prune(levels[e] + extra)
        tables[n] = levels
    return tables


def _unbounded(tree: ReasoningTree, semantics: Semantics) -> list[Pair]:
    """Pareto set of outcomes with no limit on the number of edits."""
    sets: dict[NodeRef, list[Pair]] = {}

    def combine(x: list[Pair], y: list[Pair]) -> list[Pair]:
        return pareto_prune((c1 + c2, t1 + t2) for c1, t1 in x for c2, t2 in y)

    for n in tree.postorder():
        node = tree.node(n)
        if node.is_leaf:
            sets[n] = [(1 if node.label else 0, 1)]
            continue
        pool: list[Pair] = [(0, 0)]
        for ch in node.children:
            pool = combine(pool, sets[ch])
        pool = list(pool)
        for ch in node.children:
            if semantics is Semantics.SELECT:
                pool.extend(sets[ch])
            else:
                rest: list[Pair] = [(0, 0)]
                for other in node.children:
                    if other != ch:
                        rest = combine(rest, sets[other])
                pool.extend(rest)
        sets[n] = pareto_prune(pool)
    return sets[tree.root]


def achievable_frontier(tree: ReasoningTree, max_edits: int, semantics: Semantics | str = Semantics.SELECT) -> ParetoFrontier:
    if max_edits < 0:
        raise ValueError("max_edits must be >= 0")
    semantics = Semantics.parse(semantics)
    root = _tables(tree, max_edits, semantics)[tree.root]
    return ParetoFrontier([[p for p in level if p[1] > 0] for level in root])


def mcn(tree: ReasoningTree, target_acc, semantics: Semantics | str = Semantics.SELECT):
    """Fewest node edits after which the tree accuracy reaches ``target_acc``.

    Returns ``Unattainable`` when no edit budget works.
    """
    semantics = Semantics.parse(semantics)
    target = as_fraction(target_acc)
    if not 0 <= target <= 1:
        raise ValueError("target accuracy must lie in [0, 1]")
    if tree.base_acc >= target:
        return 0
    if not any(t > 0 and Fraction(c, t) >= target for c, t in _unbounded(tree, semantics)):
        return Unattainable
    limit = len(tree.internal_nodes)
    E = 1
    while True:
        E = min(E, limit)
        root = _tables(tree, E, semantics)[tree.root]
        for e in range(E + 1):
            if any(t > 0 and Fraction(c, t) >= target for c, t in root[e]):
                return e
        if E == limit:  # pragma: no cover - excluded by the unbounded check
            return Unattainable
        E *= 2


def potential_gain(tree: ReasoningTree, budget: int, semantics: Semantics | str = Semantics.SELECT) -> Fraction:
    """Largest accuracy increase reachable with at most ``budget`` compounded edits."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if budget == 0 or not tree.internal_nodes:
        return Fraction(0)
    E = min(budget, len(tree.internal_nodes))
    frontier = achievable_frontier(tree, E, semantics)
    return frontier.best_acc(E) - tree.base_acc


MCN_ORACLE_LIMIT = 15


def mcn_oracle(tree: ReasoningTree, target_acc, semantics: Semantics | str = Semantics.SELECT):
    """Breadth-first search over edit sets applied to the actual tree."""
    from retree.simulate import EmptiedTree, apply_edit

    semantics = Semantics.parse(semantics)
    target = as_fraction(target_acc)
    if len(tree.internal_nodes) > MCN_ORACLE_LIMIT:
        raise TooLarge(f"{len(tree.internal_nodes)} internal nodes exceeds oracle limit {MCN_ORACLE_LIMIT}")
    if tree.counts()[0] == 0:
        # edits only remove leaves, so accuracy stays 0; skips an exhaustive search
        return 0 if target <= 0 else Unattainable

    def key(t: ReasoningTree, edited: frozenset) -> tuple:
        alive = frozenset(n.id for n in t.nodes)
        return alive, edited & alive

    start = (tree, frozenset())
    seen = {key(*start)}
    frontier = deque([start])
    level = 0
    while frontier:
        if any(t.base_acc >= target for t, _ in frontier):
            return level
        nxt = deque()
        for t, edited in frontier:
            for n in t.internal_nodes:
                if n in edited:
                    continue
                kids = t.children(n)
                if semantics is Semantics.SELECT and len(kids) < 2:
                    continue
                for ch in kids:
                    try:
                        t2 = apply_edit(t, n, ch, semantics)
                    except EmptiedTree:
                        continue
                    state = (t2, edited | {n})
                    k = key(*state)
                    if k not in seen:
                        seen.add(k)
                        nxt.append(state)
        frontier = nxt
        level += 1
    return Unattainable
