"""Reasoning-tree data model.

A tree is a flat, id-addressed node table. Leaves carry a boolean
correctness label; internal nodes carry an ordered child list whose order is
the sampling branch order. Trees are immutable; edited trees are derived
copies that keep the original node ids (so ids may have gaps).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, Optional, Sequence

NodeRef = int


class TreeError(ValueError):
    pass


class EmptySet(TreeError):
    pass


class NotALeaf(TreeError):
    pass


class NotInternal(TreeError):
    pass


class UnknownNode(TreeError):
    pass


@dataclass(frozen=True)
class Node:
    id: NodeRef
    parent: Optional[NodeRef]
    depth: int
    children: tuple[NodeRef, ...] = ()
    label: Optional[bool] = None
    # index of this node among its parent's fork (0..k-1); -1 for the root
    branch: int = -1

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class ReasoningTree:
    query_id: str
    arity: int
    max_depth: int
    nodes: tuple[Node, ...]
    ragged: bool = False
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {n.id: i for i, n in enumerate(self.nodes)})

    # -- navigation -------------------------------------------------------

    def node(self, n: NodeRef) -> Node:
        try:
            return self.nodes[self._index[n]]
        except KeyError:
            raise UnknownNode(f"node {n} not in tree {self.query_id!r}") from None

    def __contains__(self, n: object) -> bool:
        return n in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    @cached_property
    def root(self) -> NodeRef:
        roots = [n.id for n in self.nodes if n.parent is None]
        if len(roots) != 1:
            raise TreeError(f"tree {self.query_id!r} has {len(roots)} roots")
        return roots[0]

    def children(self, n: NodeRef) -> tuple[NodeRef, ...]:
        return self.node(n).children

    def is_leaf(self, n: NodeRef) -> bool:
        return self.node(n).is_leaf

    @cached_property
    def leaves(self) -> tuple[NodeRef, ...]:
        """Leaves in depth-first branch order."""
        return tuple(n for n in self.preorder() if self.node(n).is_leaf)

    @cached_property
    def internal_nodes(self) -> tuple[NodeRef, ...]:
        return tuple(sorted(n.id for n in self.nodes if not n.is_leaf))

    def preorder(self, start: Optional[NodeRef] = None) -> Iterator[NodeRef]:
        stack = [self.root if start is None else start]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(self.node(n).children))

    def postorder(self) -> list[NodeRef]:
        return list(reversed(list(self._reverse_postorder())))

    def _reverse_postorder(self) -> Iterator[NodeRef]:
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(self.node(n).children)

    def path(self, n: NodeRef) -> tuple[int, ...]:
        """Branch indices from the root down to ``n``."""
        out = []
        node = self.node(n)
        while node.parent is not None:
            out.append(node.branch)
            node = self.node(node.parent)
        return tuple(reversed(out))

    def is_descendant(self, n: NodeRef, ancestor: NodeRef) -> bool:
        """True when ``n`` lies in the subtree rooted at ``ancestor`` (inclusive)."""
        node = self.node(n)
        while True:
            if node.id == ancestor:
                return True
            if node.parent is None:
                return False
            node = self.node(node.parent)

    # -- leaf statistics --------------------------------------------------

    @cached_property
    def _counts(self) -> dict[NodeRef, tuple[int, int]]:
        counts: dict[NodeRef, tuple[int, int]] = {}
        for n in self.postorder():
            node = self.node(n)
            if node.is_leaf:
                counts[n] = (1 if node.label else 0, 1)
            else:
                c = t = 0
                for ch in node.children:
                    cc, tt = counts[ch]
                    c += cc
                    t += tt
                counts[n] = (c, t)
        return counts

    def counts(self, n: Optional[NodeRef] = None) -> tuple[int, int]:
        """(correct, total) leaf counts under ``n`` (the root by default)."""
        if n is None:
            n = self.root
        self.node(n)
        return self._counts[n]

    @property
    def base_acc(self) -> Fraction:
        c, t = self.counts()
        return Fraction(c, t)


def leaf_descendants(tree: ReasoningTree, n: NodeRef) -> frozenset[NodeRef]:
    node = tree.node(n)
    if node.is_leaf:
        return frozenset((n,))
    return frozenset(m for m in tree.preorder(n) if tree.node(m).is_leaf)


def acc(tree: ReasoningTree, leaf_set: Iterable[NodeRef]) -> Fraction:
    """Share of correct leaves in ``leaf_set``."""
    leaf_set = set(leaf_set)
    if not leaf_set:
        raise EmptySet("accuracy of an empty leaf set is undefined")
    correct = 0
    for n in leaf_set:
        node = tree.node(n)
        if not node.is_leaf:
            raise NotALeaf(f"node {n} is internal")
        correct += bool(node.label)
    return Fraction(correct, len(leaf_set))


# -- validation ---------------------------------------------------------------


@dataclass
class Violation:
    rule: str
    node: Optional[NodeRef]
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        return "; ".join(f"{v.rule} at node {v.node}: {v.detail}".rstrip(": ") for v in self.violations)


def validate(tree: ReasoningTree, strict: bool = False) -> ValidationReport:
    """Check every structural invariant; never raises.

    With ``strict`` a ragged tree (short leaf or under-full fork) is itself a
    violation.
    """
    report = ValidationReport()
    add = report.violations.append
    by_id = {}
    for node in tree.nodes:
        if node.id in by_id:
            add(Violation("duplicate id", node.id))
        by_id[node.id] = node

    roots = [n.id for n in tree.nodes if n.parent is None]
    if len(roots) != 1:
        add(Violation("root count", None, f"found {len(roots)} roots"))
    for r in roots:
        if by_id[r].depth != 0:
            add(Violation("root depth", r, f"depth {by_id[r].depth}"))

    for node in tree.nodes:
        if node.parent is not None:
            parent = by_id.get(node.parent)
            if parent is None:
                add(Violation("dangling parent", node.id, f"parent {node.parent}"))
            else:
                if parent.depth != node.depth - 1:
                    add(Violation("depth mismatch", node.id, f"parent depth {parent.depth}, depth {node.depth}"))
                if node.id not in parent.children:
                    add(Violation("parent link", node.id, f"not listed under {node.parent}"))
        if len(node.children) > tree.arity:
            add(Violation("arity exceeded", node.id, f"{len(node.children)} > {tree.arity}"))
        if node.depth > tree.max_depth:
            add(Violation("depth exceeded", node.id, f"{node.depth} > {tree.max_depth}"))
        for ch in node.children:
            child = by_id.get(ch)
            if child is None:
                add(Violation("dangling child", node.id, f"child {ch}"))
            elif child.parent != node.id:
                add(Violation("child link", node.id, f"child {ch} points to {child.parent}"))
        if len(set(node.children)) != len(node.children):
            add(Violation("repeated child", node.id))
        if node.is_leaf and node.label is None:
            add(Violation("unlabeled leaf", node.id))
        if not node.is_leaf and node.label is not None:
            add(Violation("labeled internal", node.id))
        if node.is_leaf and node.depth < tree.max_depth and strict:
            add(Violation("short leaf", node.id, f"depth {node.depth} < {tree.max_depth}"))
        if not node.is_leaf and len(node.children) < tree.arity and strict:
            add(Violation("under-full fork", node.id, f"{len(node.children)} < {tree.arity}"))

    if len(roots) == 1:
        seen: set[NodeRef] = set()
        stack = [roots[0]]
        while stack:
            n = stack.pop()
            if n in seen:
                add(Violation("cycle", n))
                continue
            seen.add(n)
            stack.extend(ch for ch in by_id[n].children if ch in by_id)
        for n in sorted(set(by_id) - seen):
            add(Violation("unreachable", n))
        if not report.violations and not tree.ragged:
            leaves = [n for n in by_id.values() if n.is_leaf]
            if len(leaves) != tree.arity**tree.max_depth:
                add(Violation("leaf count", None, f"{len(leaves)} != {tree.arity}^{tree.max_depth}"))
    return report


def is_ragged(nodes: Sequence[Node], arity: int, max_depth: int) -> bool:
    return any(
        (n.is_leaf and n.depth < max_depth) or (not n.is_leaf and len(n.children) < arity)
        for n in nodes
    )


# -- construction -------------------------------------------------------------


def from_paths(
    query_id: str,
    leaves: Sequence[tuple[Sequence[int], bool]],
    arity: int,
    max_depth: int,
) -> ReasoningTree:
    """Build a tree from (branch path, label) pairs.

    Ids are assigned breadth-first with siblings in branch order, so the root
    is 0 and, for a full tree, the leaves are the last ``arity**max_depth`` ids.
    Paths must already be prefix-consistent; see ``retree.ingest`` for the
    checked entry point.
    """
    # trie: path tuple -> label (None for internal)
    trie: dict[tuple[int, ...], Optional[bool]] = {(): None}
    labels = {}
    for p, lab in leaves:
        p = tuple(p)
        labels[p] = bool(lab)
        for i in range(len(p)):
            trie.setdefault(p[:i], None)
        trie[p] = bool(lab)
    kids: dict[tuple[int, ...], list[tuple[int, ...]]] = {p: [] for p in trie}
    for p in trie:
        if p:
            kids[p[:-1]].append(p)

    ids: dict[tuple[int, ...], int] = {}
    order = [()]
    i = 0
    while i < len(order):
        p = order[i]
        ids[p] = i
        order.extend(sorted(kids[p]))
        i += 1

    nodes = []
    for p in order:
        children = tuple(ids[c] for c in sorted(kids[p]))
        nodes.append(
            Node(
                id=ids[p],
                parent=ids[p[:-1]] if p else None,
                depth=len(p),
                children=children,
                label=labels.get(p) if not children else None,
                branch=p[-1] if p else -1,
            )
        )
    return ReasoningTree(
        query_id=query_id,
        arity=arity,
        max_depth=max_depth,
        nodes=tuple(nodes),
        ragged=is_ragged(nodes, arity, max_depth),
    )


def full_tree(query_id: str, arity: int, max_depth: int, labels: Sequence[bool | int]) -> ReasoningTree:
    """Complete ``arity``-ary tree; ``labels`` are given in leaf (lexicographic path) order."""
    if len(labels) != arity**max_depth:
        raise TreeError(f"need {arity ** max_depth} labels, got {len(labels)}")
    paths = _all_paths(arity, max_depth)
    return from_paths(query_id, list(zip(paths, (bool(x) for x in labels))), arity, max_depth)


def _all_paths(arity: int, depth: int) -> list[tuple[int, ...]]:
    paths: list[tuple[int, ...]] = [()]
    for _ in range(depth):
        paths = [p + (b,) for p in paths for b in range(arity)]
    return paths


def leaf_records(tree: ReasoningTree) -> list[tuple[tuple[int, ...], bool]]:
    """(path, label) for every leaf, in depth-first order."""
    return [(tree.path(n), bool(tree.node(n).label)) for n in tree.leaves]


# -- manifest serialization -----------------------------------------------------


def to_dict(tree: ReasoningTree) -> dict:
    nodes = []
    for node in sorted(tree.nodes, key=lambda n: n.id):
        d = {
            "id": node.id,
            "parent": node.parent,
            "depth": node.depth,
            "children": list(node.children),
            "branch": node.branch,
        }
        if node.is_leaf:
            d["label"] = bool(node.label)
        nodes.append(d)
    return {
        "query_id": tree.query_id,
        "arity": tree.arity,
        "max_depth": tree.max_depth,
        "ragged": tree.ragged,
        "nodes": nodes,
    }


def from_dict(doc: dict) -> ReasoningTree:
    try:
        nodes = []
        for d in doc["nodes"]:
            parent = d["parent"]
            children = tuple(int(c) for c in d.get("children", ()))
            nodes.append(
                Node(
                    id=int(d["id"]),
                    parent=None if parent is None else int(parent),
                    depth=int(d["depth"]),
                    children=children,
                    label=bool(d["label"]) if "label" in d else None,
                    branch=int(d.get("branch", -1)),
                )
            )
        arity, max_depth = int(doc["arity"]), int(doc["max_depth"])
        # manifests without branch fields use child position as the branch
        by_id = {n.id: n for n in nodes}
        fixed = []
        for n in nodes:
            if n.parent is not None and n.branch < 0 and n.parent in by_id:
                n = Node(n.id, n.parent, n.depth, n.children, n.label, by_id[n.parent].children.index(n.id))
            fixed.append(n)
        nodes = sorted(fixed, key=lambda n: n.id)
        return ReasoningTree(
            query_id=str(doc["query_id"]),
            arity=arity,
            max_depth=max_depth,
            nodes=tuple(nodes),
            ragged=bool(doc.get("ragged", is_ragged(nodes, arity, max_depth))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TreeError(f"malformed tree document: {exc}") from exc


def dumps(tree: ReasoningTree) -> str:
    """Byte-stable JSON for one tree."""
    return json.dumps(to_dict(tree), sort_keys=True, separators=(",", ":"))


def loads(text: str) -> ReasoningTree:
    return from_dict(json.loads(text))
