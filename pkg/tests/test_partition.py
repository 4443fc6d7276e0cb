import itertools

import numpy as np
import pytest

from app.core.partition import (compare_strategies, is_level_monotone, make_plan, part_sums, partition_average,
                                partition_level, partition_random, sum_gap)
from app.exceptions import PartitionError
from app.models.retrieval import RecallCandidate


def _cands(*confidences):
    return [RecallCandidate(type_id=f"t{i:02d}", raw_score=c, confidence=c) for i, c in enumerate(confidences)]


def _ids(part):
    return [c.type_id for c in part]


def _confidences(plan):
    return [[c.confidence for c in part] for part in plan.parts]


def _best_balanced_gap(cands, n):
    """Smallest sum gap over every assignment whose part sizes differ by at most one"""
    best = None
    for assignment in itertools.product(range(n), repeat=len(cands)):
        sizes = [assignment.count(p) for p in range(n)]
        if max(sizes) - min(sizes) > 1:
            continue
        sums = [sum(c.confidence for c, p in zip(cands, assignment) if p == part) for part in range(n)]
        gap = max(sums) - min(sums)
        best = gap if best is None or gap < best else best
    return best


def test_random_is_seed_stable():
    """Test the same seed gives the same parts on every call"""
    cands = _cands(0.9, 0.6, 0.3, 0.1)
    first = partition_random(cands, 2, seed=7)
    assert all(partition_random(cands, 2, seed=7) == first for _ in range(5))
    assert first.seed == 7


def test_random_sizes():
    """Test round-robin sizes after the shuffle"""
    assert partition_random(_cands(0.9, 0.8, 0.7, 0.6, 0.5), 2, seed=1).sizes == (3, 2)


def test_random_single_part_is_a_shuffle():
    """Test N=1 keeps every candidate"""
    cands = _cands(0.9, 0.8, 0.7, 0.6, 0.5)
    plan = partition_random(cands, 1, seed=3)
    assert len(plan.parts) == 1
    assert sorted(_ids(plan.parts[0])) == _ids(cands)


def test_level_chunks():
    """Test sort-then-chunk with the larger chunk first"""
    plan = partition_level(_cands(0.1, 0.9, 0.4, 0.7, 0.8), 2)
    assert _confidences(plan) == [[0.9, 0.8, 0.7], [0.4, 0.1]]


def test_level_equal_confidences_follow_type_id():
    """Test ties fall back to type id order"""
    cands = list(reversed(_cands(0.5, 0.5, 0.5, 0.5)))
    plan = partition_level(cands, 2)
    assert [_ids(p) for p in plan.parts] == [["t00", "t01"], ["t02", "t03"]]


def test_level_default_sizes():
    """Test fifteen recalled types in two partitions"""
    plan = partition_level(_cands(*np.linspace(1.0, 0.0, 15).tolist()), 2)
    assert plan.sizes == (8, 7)
    assert is_level_monotone(plan)


def test_average_balances_sums():
    """Test the serpentine deal on the worked fixtures"""
    plan = partition_average(_cands(0.9, 0.5, 0.5, 0.1), 2)
    assert _confidences(plan) == [[0.9, 0.1], [0.5, 0.5]]
    assert sum_gap(plan) == pytest.approx(0.0)

    cands = _cands(0.4, 0.3, 0.2, 0.1)
    average, level = partition_average(cands, 2), partition_level(cands, 2)
    assert _confidences(average) == [[0.4, 0.1], [0.3, 0.2]]
    assert sum_gap(average) == pytest.approx(0.0)
    assert sum_gap(level) == pytest.approx(0.4)


def test_average_equal_confidences():
    """Test equal confidences give equal part sums when N divides k"""
    plan = partition_average(_cands(*[0.5] * 6), 3)
    assert part_sums(plan) == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("confidences,n", [
    ((0.9, 0.5, 0.5, 0.1), 2),
    ((0.4, 0.3, 0.2, 0.1), 2),
    ((1.0, 0.8, 0.6, 0.4, 0.2, 0.0), 2),
    ((1.0, 0.9, 0.7, 0.6, 0.4, 0.3, 0.1, 0.0), 2),
    ((0.9, 0.8, 0.7, 0.3, 0.2, 0.1), 3),
    ((0.5, 0.5, 0.5, 0.5, 0.5, 0.5), 3),
])
def test_average_matches_exhaustive_optimum(confidences, n):
    """Test curated fixtures where the serpentine gap is the optimal balanced gap"""
    cands = _cands(*confidences)
    assert sum_gap(partition_average(cands, n)) == pytest.approx(_best_balanced_gap(cands, n), abs=1e-9)


@pytest.mark.parametrize("strategy", ["random", "average", "level"])
def test_partition_properties(strategy):
    """Test disjoint cover and size balance on random instances"""
    rng = np.random.default_rng(42)
    for _ in range(1000):
        k = int(rng.integers(1, 21))
        n = int(rng.integers(1, k + 1))
        cands = _cands(*np.round(rng.uniform(0.0, 1.0, k), 2).tolist())
        seed = int(rng.integers(0, 2 ** 31))

        plan = make_plan(strategy, cands, n, seed)

        assert len(plan.parts) == n
        assert sorted(c.type_id for part in plan.parts for c in part) == _ids(cands)
        assert max(plan.sizes) - min(plan.sizes) <= 1
        assert all(plan.sizes)
        if strategy == "level":
            assert is_level_monotone(plan)
        if strategy == "random":
            assert make_plan(strategy, cands, n, seed) == plan


def test_make_plan_dispatch():
    """Test strategy selection and the seed rules"""
    cands = _cands(*np.linspace(1.0, 0.0, 15).tolist())

    assert make_plan("level", cands, 2).strategy == "level"
    assert make_plan("average", cands, 2, seed=9).seed is None
    with pytest.raises(PartitionError, match="seed required"):
        make_plan("random", cands, 2)
    with pytest.raises(PartitionError, match="unknown strategy"):
        make_plan("greedy", cands, 2)


@pytest.mark.parametrize("cands,n,message", [
    (_cands(0.5, 0.4), 3, "exceeds candidate count"),
    (_cands(0.5), 0, "at least 1"),
    ([], 1, "no candidates"),
])
def test_partition_errors(cands, n, message):
    """Test impossible partition requests"""
    with pytest.raises(PartitionError, match=message):
        partition_level(cands, n)


def test_compare_strategies():
    """Test the side-by-side strategy report"""
    report = compare_strategies(_cands(0.4, 0.3, 0.2, 0.1), 2, seed=0)

    assert set(report) == {"random", "average", "level"}
    assert report["level"]["parts"] == [["t00", "t01"], ["t02", "t03"]]
    assert report["level"]["level_monotone"] is True
    assert report["level"]["sum_gap"] == pytest.approx(0.4)
    assert report["average"]["sum_gap"] == pytest.approx(0.0)
    assert report["average"]["level_monotone"] is False
    assert report["random"]["sizes"] == [2, 2]
