"""
Informative-group filtering
"""
import logging
from typing import List, NamedTuple, Sequence

from rewards.engine import RolloutGroup

logger = logging.getLogger(__name__)


class FilterResult(NamedTuple):
    kept: List[RolloutGroup]
    dropped_all_correct: int
    dropped_all_wrong: int

    @property
    def n_input(self) -> int:
        return len(self.kept) + self.dropped_all_correct + self.dropped_all_wrong

    @property
    def informative_fraction(self) -> float:
        return len(self.kept) / self.n_input if self.n_input else 0.0


def rejection_filter(groups: Sequence[RolloutGroup]) -> FilterResult:
    """Keep the groups with both correct and incorrect rollouts, in input order"""
    kept = []
    all_correct = all_wrong = 0
    for group in groups:
        if group.n_neg == 0:
            all_correct += 1
        elif group.n_neg == group.n_rollout:
            all_wrong += 1
        else:
            kept.append(group)
    if groups and not kept:
        logger.warning(f"No informative groups among {len(groups)} ({all_correct} all-correct, {all_wrong} all-wrong)")
    return FilterResult(kept, all_correct, all_wrong)
