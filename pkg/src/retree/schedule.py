"""Curriculum weights and GRPO helpers.

Per epoch, each query's score is blended toward its reflection as training
progresses, the blended values are ranked across the dataset, and the rank
percentile is mapped affinely onto ``[omega_min, omega_max]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from retree.tree import ReasoningTree

GAMMA_KINDS = ("linear", "sigmoid")
METRIC_KINDS = ("rscore_sum", "rscore_seq", "acc")

# (omega_min, omega_max) presets
OMEGA_PRESETS = {"default": (0.5, 2.0), "narrow": (0.2, 0.8)}


@dataclass(frozen=True)
class ScheduleParams:
    total_epochs: int = 10
    omega_min: float = 0.5
    omega_max: float = 2.0
    gamma_kind: str = "sigmoid"
    metric_kind: str = "rscore_sum"
    normalize_mean_weight: bool = False

    def __post_init__(self) -> None:
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0 < self.omega_min <= self.omega_max:
            raise ValueError("need 0 < omega_min <= omega_max")
        if self.gamma_kind not in GAMMA_KINDS:
            raise ValueError(f"gamma_kind must be one of {GAMMA_KINDS}")
        if self.metric_kind not in METRIC_KINDS:
            raise ValueError(f"metric_kind must be one of {METRIC_KINDS}")


@dataclass(frozen=True)
class ScheduleEntry:
    query_id: str
    epoch: int
    score: float
    alpha: float
    percentile: float
    weight: float

    def to_dict(self) -> dict:
        return asdict(self)


def gamma(t: int, T: int, kind: str = "linear") -> float:
    if T < 1 or not 1 <= t <= T:
        raise ValueError(f"epoch {t} outside 1..{T}")
    return _gamma(t / T, kind)


def _gamma(x: float, kind: str) -> float:
    if kind == "linear":
        return x
    if kind == "sigmoid":
        return 1.0 / (1.0 + math.exp(-(x - 0.5)))
    raise ValueError(f"unknown gamma kind {kind!r}")


def clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def alpha_blend(score: float, gamma_t: float) -> float:
    r = clamp01(score)
    return (1 - gamma_t) * r + gamma_t * (1 - r)


def rank_percentile(alphas: Sequence) -> list[float]:
    """Percentile of each value among all values: largest -> 1, smallest -> 0.

    Tied values share the mean of their positions. A single value sits at 0.5.
    """
    n = len(alphas)
    if n == 0:
        raise ValueError("rank_percentile needs at least one value")
    if n == 1:
        return [0.5]
    order = sorted(range(n), key=lambda i: alphas[i])
    out = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and alphas[order[j + 1]] == alphas[order[i]]:
            j += 1
        pct = (i + j) / 2 / (n - 1)
        for pos in range(i, j + 1):
            out[order[pos]] = pct
        i = j + 1
    return out


def epoch_weights(
    scores: Mapping[str, float], gamma_t: float, omega_min: float, omega_max: float
) -> list[ScheduleEntry]:
    """Weights for one epoch, in ``scores`` iteration order (epoch left as 0)."""
    qids = list(scores)
    clamped = [clamp01(float(scores[q])) for q in qids]
    alphas = [alpha_blend(r, gamma_t) for r in clamped]
    # rank on the exact blend so float rounding never merges or swaps distinct scores
    g = Fraction(gamma_t)
    exact = [g + Fraction(r) * (1 - 2 * g) for r in clamped]
    pcts = rank_percentile(exact)
    return [
        ScheduleEntry(q, 0, r, a, p, p * omega_max + (1 - p) * omega_min)
        for q, r, a, p in zip(qids, clamped, alphas, pcts)
    ]


def build_schedule(scores: Mapping[str, float], params: ScheduleParams) -> list[ScheduleEntry]:
    if not scores:
        raise ValueError("no scores to schedule")
    ordered = {q: scores[q] for q in sorted(scores)}
    out: list[ScheduleEntry] = []
    T = params.total_epochs
    for t in range(1, T + 1):
        rows = epoch_weights(ordered, gamma(t, T, params.gamma_kind), params.omega_min, params.omega_max)
        if params.normalize_mean_weight:
            mean = sum(r.weight for r in rows) / len(rows)
            rows = [ScheduleEntry(r.query_id, 0, r.score, r.alpha, r.percentile, r.weight / mean) for r in rows]
        out.extend(ScheduleEntry(r.query_id, t, r.score, r.alpha, r.percentile, r.weight) for r in rows)
    return out


def acc_baseline_scores(trees: Iterable[ReasoningTree]) -> dict[str, float]:
    return {tree.query_id: float(tree.base_acc) for tree in trees}


def group_advantages(rewards: Sequence[float], delta: float = 1e-4) -> list[float]:
    """Group-normalised advantages, population std."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("empty reward group")
    if np.all(r == r[0]):
        return [0.0] * r.size
    return ((r - r.mean()) / (r.std() + delta)).tolist()


def apply_schedule_weight(objective_value: float, weight: float) -> float:
    return weight * objective_value
