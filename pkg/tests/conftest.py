import random

import pytest

from retree.tree import from_paths, full_tree


def random_full_tree(rng: random.Random, k: int, d: int, p_correct: float = 0.4, qid: str = "q"):
    return full_tree(qid, k, d, [rng.random() < p_correct for _ in range(k**d)])


def random_ragged_tree(rng: random.Random, k: int, d: int, p_correct: float = 0.4, p_stop: float = 0.2, qid: str = "r"):
    """Tree with early-stopped leaves and forks missing some branches."""
    leaves = []

    def grow(path):
        if len(path) == d or (path and rng.random() < p_stop):
            leaves.append((path, rng.random() < p_correct))
            return
        width = rng.randint(1, k)
        for b in sorted(rng.sample(range(k), width)):
            grow(path + (b,))

    grow(())
    return from_paths(qid, leaves, k, d)


@pytest.fixture
def e1():
    # root 0; n1 = 1, n2 = 2; leaves L0..L3 = 3..6 with labels 1,0,0,0
    return full_tree("E1", 2, 2, [1, 0, 0, 0])


@pytest.fixture
def rng():
    return random.Random(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def emit(name: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
