import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retree.schedule import (
    ScheduleParams,
    acc_baseline_scores,
    alpha_blend,
    apply_schedule_weight,
    build_schedule,
    epoch_weights,
    gamma,
    group_advantages,
    rank_percentile,
)
from retree.tree import full_tree


def weights(scores, g, lo=0.5, hi=2.0):
    return {e.query_id: e.weight for e in epoch_weights(scores, g, lo, hi)}


def test_gamma_examples():
    assert gamma(5, 10, "linear") == 0.5
    assert gamma(10, 10, "linear") == 1.0
    assert gamma(5, 10, "sigmoid") == 0.5
    # 1 / (1 + e^0.5), written out independently
    assert gamma(0 + 1, 1, "sigmoid") == pytest.approx(0.6224593312, abs=1e-10)
    assert 1 - gamma(1, 1, "sigmoid") == pytest.approx(0.3775406688, abs=1e-10)
    with pytest.raises(ValueError):
        gamma(0, 10)
    with pytest.raises(ValueError):
        gamma(1, 10, "cosine")


def test_alpha_examples():
    assert alpha_blend(0.8, 0.0) == 0.8
    assert alpha_blend(0.8, 1.0) == pytest.approx(0.2)
    assert alpha_blend(0.8, 0.5) == 0.5
    assert alpha_blend(1.7, 0.0) == 1.0  # clamped


def test_rank_percentile_examples():
    assert rank_percentile([0.8, 0.3, 0.5]) == [1.0, 0.0, 0.5]
    assert rank_percentile([0.4, 0.4]) == [0.5, 0.5]
    assert rank_percentile([0.9]) == [0.5]
    assert rank_percentile([1, 2, 2, 3]) == [0.0, 0.5, 0.5, 1.0]
    with pytest.raises(ValueError):
        rank_percentile([])


def test_epoch_weight_probes():
    scores = {"q1": 0.8, "q2": 0.3, "q3": 0.5}
    assert weights(scores, 0.0) == {"q1": 2.0, "q2": 0.5, "q3": 1.25}
    assert weights(scores, 1.0) == {"q1": 0.5, "q2": 2.0, "q3": 1.25}
    assert weights(scores, 0.5) == {"q1": 1.25, "q2": 1.25, "q3": 1.25}


def _vectors(n_vectors, rng):
    for _ in range(n_vectors):
        n = rng.randint(2, 12)
        yield {f"q{i}": rng.randint(0, 1000) / 1000 for i in range(n)}


def test_ordering_invariance_under_monotone_maps():
    rng = random.Random(7)
    maps = [lambda x: x**2, lambda x: math.sqrt(x), lambda x: 0.1 + 0.8 * x]
    for scores in _vectors(1000, rng):
        f = rng.choice(maps)
        mapped = {q: f(v) for q, v in scores.items()}
        for g in (0.0, 0.3, 1.0):
            assert weights(scores, g) == weights(mapped, g)


def test_direction_flips_and_mean_weight():
    rng = random.Random(8)
    for scores in _vectors(1000, rng):
        early, late = weights(scores, 0.0), weights(scores, 1.0)
        qs = list(scores)
        for a in qs:
            for b in qs:
                if scores[a] > scores[b]:
                    assert early[a] > early[b] and late[a] < late[b]
        for g in (0.0, 0.25, 0.5, 0.9, 1.0):
            w = list(weights(scores, g).values())
            assert abs(np.mean(w) - 1.25) < 1e-12
            assert all(0.5 <= x <= 2.0 for x in w)


def test_build_schedule_defaults_and_normalize():
    scores = {"b": 0.8, "a": 0.3, "c": 0.5}
    rows = build_schedule(scores, ScheduleParams())
    assert len(rows) == 30
    assert [r.query_id for r in rows[:3]] == ["a", "b", "c"]
    assert {r.epoch for r in rows} == set(range(1, 11))
    first = {r.query_id: r.weight for r in rows if r.epoch == 1}
    last = {r.query_id: r.weight for r in rows if r.epoch == 10}
    assert first["b"] == 2.0 and last["b"] == 0.5
    norm = build_schedule(scores, ScheduleParams(normalize_mean_weight=True, omega_min=0.2, omega_max=0.8))
    for t in range(1, 11):
        assert abs(np.mean([r.weight for r in norm if r.epoch == t]) - 1) < 1e-12


def test_schedule_params_validation():
    with pytest.raises(ValueError):
        ScheduleParams(total_epochs=0)
    with pytest.raises(ValueError):
        ScheduleParams(omega_min=2.0, omega_max=1.0)
    with pytest.raises(ValueError):
        ScheduleParams(metric_kind="other")


def test_acc_baseline_scores(e1):
    t2 = full_tree("Z", 2, 1, [1, 1])
    assert acc_baseline_scores([e1, t2]) == {"E1": 0.25, "Z": 1.0}


def test_group_advantages_examples():
    adv = group_advantages([1, 1, 0, 0])
    expected = 0.5 / 0.5001
    assert adv == pytest.approx([expected, expected, -expected, -expected], abs=1e-5)
    assert adv[0] == pytest.approx(0.99980, abs=1e-5)
    assert group_advantages([0.3, 0.3, 0.3]) == [0.0, 0.0, 0.0]
    assert group_advantages([5.0]) == [0.0]
    with pytest.raises(ValueError):
        group_advantages([])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=16),
    st.floats(-5, 5, allow_nan=False),
)
def test_group_advantage_invariants(rewards, shift):
    adv = group_advantages(rewards)
    assert abs(sum(adv) / len(adv)) < 1e-12 or np.std(rewards) < 1e-9
    shifted = group_advantages([r + shift for r in rewards])
    if np.std(rewards) > 1e-6:
        assert np.allclose(adv, shifted, atol=1e-6)


def test_apply_schedule_weight():
    assert apply_schedule_weight(-0.4, 2.0) == -0.8
    assert apply_schedule_weight(3.0, 0.5) == 1.5
