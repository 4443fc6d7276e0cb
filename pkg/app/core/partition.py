from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import PartitionError
from app.models.retrieval import PartitionPlan, RecallCandidate

STRATEGIES = ("random", "average", "level")


def _check(cands: Sequence[RecallCandidate], n: int) -> None:
    if n < 1:
        raise PartitionError("N must be at least 1")
    if not cands:
        raise PartitionError("no candidates to partition")
    if n > len(cands):
        raise PartitionError(f"N exceeds candidate count ({n} > {len(cands)})")


def _by_confidence(cands: Sequence[RecallCandidate]) -> List[RecallCandidate]:
    return sorted(cands, key=lambda c: (-c.confidence, c.type_id))


def _plan(strategy: str, parts: List[List[RecallCandidate]], seed: Optional[int] = None) -> PartitionPlan:
    return PartitionPlan(strategy=strategy, parts=tuple(tuple(part) for part in parts), seed=seed)


def partition_random(cands: Sequence[RecallCandidate], n: int, seed: int) -> PartitionPlan:
    """Seeded shuffle, then round-robin into n parts"""
    _check(cands, n)
    order = np.random.default_rng(seed).permutation(len(cands))
    parts: List[List[RecallCandidate]] = [[] for _ in range(n)]
    for position, index in enumerate(order):
        parts[position % n].append(cands[int(index)])
    return _plan("random", parts, seed)


def partition_level(cands: Sequence[RecallCandidate], n: int) -> PartitionPlan:
    """Sort by confidence and cut into n contiguous chunks, earlier chunks one larger"""
    _check(cands, n)
    ranked = _by_confidence(cands)
    size, extra = divmod(len(ranked), n)
    parts, start = [], 0
    for i in range(n):
        end = start + size + (1 if i < extra else 0)
        parts.append(ranked[start:end])
        start = end
    return _plan("level", parts)


def partition_average(cands: Sequence[RecallCandidate], n: int) -> PartitionPlan:
    """Serpentine deal of the confidence-sorted list: 1..n, n..1, ..."""
    _check(cands, n)
    parts: List[List[RecallCandidate]] = [[] for _ in range(n)]
    for position, cand in enumerate(_by_confidence(cands)):
        lap, offset = divmod(position, n)
        parts[offset if lap % 2 == 0 else n - 1 - offset].append(cand)
    return _plan("average", parts)


def make_plan(strategy: str, cands: Sequence[RecallCandidate], n: int, seed: Optional[int] = None) -> PartitionPlan:
    if strategy == "random":
        if seed is None:
            raise PartitionError("seed required")
        return partition_random(cands, n, seed)
    if strategy == "level":
        return partition_level(cands, n)
    if strategy == "average":
        return partition_average(cands, n)
    raise PartitionError(f"unknown strategy {strategy!r}")


def part_sums(plan: PartitionPlan) -> Tuple[float, ...]:
    return tuple(sum(c.confidence for c in part) for part in plan.parts)


def sum_gap(plan: PartitionPlan) -> float:
    sums = part_sums(plan)
    return max(sums) - min(sums)


def is_level_monotone(plan: PartitionPlan) -> bool:
    """Every part's weakest confidence is at least the next part's strongest"""
    for left, right in zip(plan.parts, plan.parts[1:]):
        if left and right and min(c.confidence for c in left) < max(c.confidence for c in right):
            return False
    return True


def compare_strategies(cands: Sequence[RecallCandidate], n: int, seed: int = 0) -> Dict[str, dict]:
    """Sizes, confidence sums, sum gap and level monotonicity of each strategy on the same candidates"""
    report: Dict[str, dict] = {}
    for strategy in STRATEGIES:
        plan = make_plan(strategy, cands, n, seed)
        report[strategy] = {
            "sizes": list(plan.sizes),
            "sums": [round(s, 12) for s in part_sums(plan)],
            "sum_gap": round(sum_gap(plan), 12),
            "level_monotone": is_level_monotone(plan),
            "parts": [[c.type_id for c in part] for part in plan.parts],
        }
    return report
