"""Synthetic reasoning trees and a toy model of edit-driven training.

Training is modelled as greedy node edits: each step, a subset of trees is
selected by a policy, and every selected tree attempts edits at its current
highest-r-score node, each succeeding with a fixed probability. This is a
model built for qualitative comparisons; it has no language model in it.
"""

from __future__ import annotations

import hashlib
import math
import random
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from retree.mcn import Unattainable, as_fraction, mcn, potential_gain
from retree.rscore import NoInternalNodes, Semantics, dp_query_rscore, node_rscore
from retree.schedule import epoch_weights, gamma
from retree.tree import Node, NodeRef, NotInternal, ReasoningTree, TreeError, full_tree, is_ragged

POLICIES = ("rscore_top", "acc_top", "random", "weighted")


class NodeRemoved(TreeError):
    pass


class EmptiedTree(TreeError):
    pass


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from any mix of ints and strings."""
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


# -- edits --------------------------------------------------------------------


def apply_edit(tree: ReasoningTree, n: NodeRef, choice: NodeRef, semantics: Semantics | str = Semantics.SELECT) -> ReasoningTree:
    """Return a copy of ``tree`` with one edit applied at ``n``.

    SELECT keeps ``choice`` and removes its siblings; PRUNE removes ``choice``.
    A node left without children is removed as well, recursively; emptying
    the whole tree raises ``EmptiedTree``. Re-applying an edit is a no-op.
    """
    semantics = Semantics.parse(semantics)
    if n not in tree:
        raise NodeRemoved(f"node {n} is not in the current tree")
    kids = tree.children(n)
    if not kids:
        raise NotInternal(f"node {n} is a leaf")
    if semantics is Semantics.SELECT:
        if choice not in kids:
            raise ValueError(f"node {choice} is not a child of {n}")
        drop = [ch for ch in kids if ch != choice]
    else:
        if choice not in tree:
            return tree
        if choice not in kids:
            raise ValueError(f"node {choice} is not a child of {n}")
        drop = [choice]
    if not drop:
        return tree

    removed: set[NodeRef] = set()
    for ch in drop:
        removed.update(tree.preorder(ch))
    new_children = {n: tuple(ch for ch in kids if ch not in removed)}
    node = tree.node(n)
    # a childless internal node is no longer a valid branch point
    while not new_children[node.id]:
        removed.add(node.id)
        if node.parent is None:
            raise EmptiedTree(f"edit at {n} removes every leaf of {tree.query_id!r}")
        parent = tree.node(node.parent)
        siblings = new_children.get(parent.id, parent.children)
        new_children[parent.id] = tuple(ch for ch in siblings if ch != node.id)
        node = parent

    nodes = []
    for old in tree.nodes:
        if old.id in removed:
            continue
        if old.id in new_children:
            old = Node(old.id, old.parent, old.depth, new_children[old.id], old.label, old.branch)
        nodes.append(old)
    return ReasoningTree(
        query_id=tree.query_id,
        arity=tree.arity,
        max_depth=tree.max_depth,
        nodes=tuple(nodes),
        ragged=is_ragged(nodes, tree.arity, tree.max_depth),
    )


# -- synthetic trees ------------------------------------------------------------


@dataclass(frozen=True)
class SimTreeSpec:
    arity: int = 4
    depth: int = 3
    target_base_acc: float = 0.25
    concentration: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.arity < 1 or self.depth < 1:
            raise ValueError("arity and depth must be positive")
        if not 0 <= self.target_base_acc <= 1:
            raise ValueError("target_base_acc must lie in [0, 1]")
        if not 0 <= self.concentration <= 1:
            raise ValueError("concentration must lie in [0, 1]")

    @property
    def n_leaves(self) -> int:
        return self.arity**self.depth

    @property
    def n_correct(self) -> int:
        # round half up, computed exactly
        return math.floor(as_fraction(self.target_base_acc) * self.n_leaves + Fraction(1, 2))


def place_correct(spec: SimTreeSpec) -> list[bool]:
    """Leaf labels (lexicographic path order) from the sticky random walk."""
    rng = random.Random(spec.seed)
    k, d, N = spec.arity, spec.depth, spec.n_leaves
    labels = [False] * N
    free = list(range(N))
    prev: Optional[int] = None
    for _ in range(spec.n_correct):
        pool = free
        if prev is not None and rng.random() < spec.concentration:
            # smallest subtree around the previous leaf that still has room
            for level in range(d - 1, -1, -1):
                block = k ** (d - level)
                lo = prev // block * block
                pool = [i for i in free if lo <= i < lo + block]
                if pool:
                    break
        leaf = pool[rng.randrange(len(pool))]
        labels[leaf] = True
        free.remove(leaf)
        prev = leaf
    return labels


def generate_tree(spec: SimTreeSpec, query_id: str = "sim") -> ReasoningTree:
    return full_tree(query_id, spec.arity, spec.depth, place_correct(spec))


def generate_cohort(spec: SimTreeSpec, count: int, prefix: str) -> list[ReasoningTree]:
    trees = []
    for i in range(count):
        qid = f"{prefix}-{i:04d}"
        s = SimTreeSpec(spec.arity, spec.depth, spec.target_base_acc, spec.concentration, derive_seed(spec.seed, qid))
        trees.append(generate_tree(s, qid))
    return trees


# -- training simulation --------------------------------------------------------


@dataclass(frozen=True)
class SimRunConfig:
    steps: int = 60
    edits_per_step: int = 1
    selection_policy: str = "rscore_top"
    fraction_selected: float = 1 / 3
    edit_success_prob: float = 0.1
    seed: int = 0
    budget: int = 4
    semantics: str = "fix"
    mcn_target: float = 0.9
    record_metrics: bool = True

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.edits_per_step < 0:
            raise ValueError("edits_per_step must be >= 0")
        if self.selection_policy not in POLICIES:
            raise ValueError(f"selection_policy must be one of {POLICIES}")
        if not 0 < self.fraction_selected <= 1:
            raise ValueError("fraction_selected must lie in (0, 1]")
        if not 0 < self.edit_success_prob <= 1:
            raise ValueError("edit_success_prob must lie in (0, 1]")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        Semantics.parse(self.semantics)


@dataclass
class SimRow:
    step: int
    query_id: str
    acc: float
    mcn: Optional[int]
    rscore_sum: Optional[float]
    rscore_seq: Optional[float]
    selected: int


@dataclass
class SimResult:
    rows: list[SimRow] = field(default_factory=list)
    final_trees: dict[str, ReasoningTree] = field(default_factory=dict)

    def series(self, metric: str, query_ids: Optional[Sequence[str]] = None) -> list[float]:
        """Per-step mean of ``metric`` over ``query_ids`` (all trees by default).

        ``None`` entries (e.g. unattainable MCN) are left out of the mean.
        """
        wanted = None if query_ids is None else set(query_ids)
        by_step: dict[int, list[float]] = {}
        for r in self.rows:
            if wanted is not None and r.query_id not in wanted:
                continue
            v = getattr(r, metric)
            bucket = by_step.setdefault(r.step, [])
            if v is not None:
                bucket.append(float(v))
        return [statistics.fmean(v) if v else math.nan for _, v in sorted(by_step.items())]

    def first_step_reaching(self, threshold: float, query_ids: Optional[Sequence[str]] = None) -> Optional[int]:
        for step, value in enumerate(self.series("acc", query_ids)):
            if value >= threshold:
                return step
        return None


class _TreeState:
    """One tree's evolving copy plus lazily computed metrics."""

    def __init__(self, tree: ReasoningTree, cfg: SimRunConfig, seed: int):
        self.tree = tree
        self.cfg = cfg
        self.semantics = Semantics.parse(cfg.semantics)
        self.rng = random.Random(derive_seed(seed, tree.query_id))
        self.edited: set[NodeRef] = set()
        self._cache: dict[str, object] = {}

    def _get(self, name: str, fn):
        if name not in self._cache:
            self._cache[name] = fn()
        return self._cache[name]

    @property
    def acc(self) -> float:
        return float(self.tree.base_acc)

    @property
    def rscore_sum(self) -> float:
        def compute():
            try:
                return float(dp_query_rscore(self.tree, self.cfg.budget, self.semantics))
            except NoInternalNodes:
                return 0.0

        return self._get("rscore_sum", compute)

    @property
    def rscore_seq(self) -> float:
        return self._get("rscore_seq", lambda: float(potential_gain(self.tree, self.cfg.budget, self.semantics)))

    @property
    def mcn(self) -> Optional[int]:
        def compute():
            v = mcn(self.tree, self.cfg.mcn_target, self.semantics)
            return None if v is Unattainable else v

        return self._get("mcn", compute)

    def best_edit(self):
        return self._get("best_edit", self._best_edit)

    def _best_edit(self):
        best = None
        for n in self.tree.internal_nodes:
            if n in self.edited:
                continue
            s = node_rscore(self.tree, n, self.semantics)
            if s.feasible and s.r_score > 0 and (best is None or s.r_score > best.r_score):
                best = s
        return best

    def train(self, attempts: int) -> None:
        for _ in range(attempts):
            s = self.best_edit()
            if s is None:
                return
            if self.rng.random() < self.cfg.edit_success_prob:
                self.tree = apply_edit(self.tree, s.node, s.child, self.semantics)
                self.edited.add(s.node)
                self._cache.clear()


def _n_selected(n: int, fraction: float) -> int:
    return max(1, min(n, math.floor(n * fraction + 0.5)))


def run_training_sim(trees: Sequence[ReasoningTree], config: SimRunConfig) -> SimResult:
    """Simulate ``config.steps`` steps; step 0 records the starting trees."""
    ids = [t.query_id for t in trees]
    if len(set(ids)) != len(ids):
        raise ValueError("query ids must be unique")
    states = [_TreeState(t, config, config.seed) for t in trees]
    select_rng = random.Random(derive_seed(config.seed, "select"))
    n_sel = _n_selected(len(states), config.fraction_selected)
    result = SimResult()

    def record(step: int, chosen: set[int]) -> None:
        for i, st in enumerate(states):
            full = config.record_metrics
            result.rows.append(
                SimRow(
                    step=step,
                    query_id=st.tree.query_id,
                    acc=st.acc,
                    mcn=st.mcn if full else None,
                    rscore_sum=st.rscore_sum if full else None,
                    rscore_seq=st.rscore_seq if full else None,
                    selected=int(i in chosen),
                )
            )

    record(0, set())
    for step in range(1, config.steps + 1):
        chosen = _select(states, config, step, n_sel, select_rng)
        for i in sorted(chosen):
            states[i].train(config.edits_per_step)
        record(step, chosen)
    result.final_trees = {st.tree.query_id: st.tree for st in states}
    return result


def _select(states: list[_TreeState], cfg: SimRunConfig, step: int, n_sel: int, rng: random.Random) -> set[int]:
    n = len(states)
    if n_sel >= n:
        return set(range(n))
    policy = cfg.selection_policy
    if policy == "rscore_top":
        order = sorted(range(n), key=lambda i: (-states[i].rscore_sum, i))
        return set(order[:n_sel])
    if policy == "acc_top":
        order = sorted(range(n), key=lambda i: (-states[i].acc, i))
        return set(order[:n_sel])
    if policy == "random":
        return set(rng.sample(range(n), n_sel))
    # weighted: sample without replacement in proportion to this step's curriculum weight
    g = gamma(step, cfg.steps, "sigmoid")
    scores = {str(i): min(1.0, states[i].rscore_sum) for i in range(n)}
    weights = np.array([e.weight for e in epoch_weights(scores, g, 0.5, 2.0)])
    gen = np.random.default_rng(derive_seed(cfg.seed, "weighted", step))
    picked = gen.choice(n, size=n_sel, replace=False, p=weights / weights.sum())
    return {int(i) for i in picked}


def summarize(result: SimResult, cohorts: Optional[dict[str, str]] = None) -> list[dict]:
    """Per-step mean and standard deviation of each metric, per cohort and overall.

    ``cohorts`` maps query_id to a cohort name; by default the id prefix
    before the last ``-`` is used.
    """

    def cohort_of(qid: str) -> str:
        if cohorts is not None:
            return cohorts.get(qid, "all")
        return qid.rsplit("-", 1)[0] if "-" in qid else "all"

    groups: dict[tuple[int, str], list[SimRow]] = {}
    for r in result.rows:
        groups.setdefault((r.step, "all"), []).append(r)
        c = cohort_of(r.query_id)
        if c != "all":
            groups.setdefault((r.step, c), []).append(r)

    out = []
    for (step, cohort), rows in sorted(groups.items()):
        row = {"step": step, "cohort": cohort, "n": len(rows)}
        for metric in ("acc", "mcn", "rscore_sum", "rscore_seq", "selected"):
            vals = [float(getattr(r, metric)) for r in rows if getattr(r, metric) is not None]
            row[f"{metric}_mean"] = statistics.fmean(vals) if vals else math.nan
            row[f"{metric}_std"] = statistics.pstdev(vals) if len(vals) > 1 else 0.0
        out.append(row)
    return out
