"""
Ratio-EMA oversampling and difficulty-tier resampling
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from rewards.engine import RolloutGroup
from taskforge.records import Tier

from .filters import rejection_filter

logger = logging.getLogger(__name__)

DEFAULT_TIER_WEIGHTS = (0.2, 1.0, 1.0)


@dataclass(frozen=True)
class RatioEmaState:
    """EMA of the informative-group fraction"""

    rho: float = 0.5
    alpha: float = 0.1
    rho_min: float = 0.05
    factor_cap: int = 8

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.rho_min <= self.rho <= 1.0:
            raise ValueError(f"Need 0 < rho_min <= rho <= 1, got rho={self.rho}, rho_min={self.rho_min}")
        if self.factor_cap < 1:
            raise ValueError(f"factor_cap must be >= 1, got {self.factor_cap}")


def ratio_ema_update(state: RatioEmaState, observed_fraction: float) -> RatioEmaState:
    if not 0.0 <= observed_fraction <= 1.0:
        raise ValueError(f"Observed fraction must lie in [0, 1], got {observed_fraction}")
    rho = (1.0 - state.alpha) * state.rho + state.alpha * observed_fraction
    return replace(state, rho=min(1.0, max(state.rho_min, rho)))


def oversample_count(state: RatioEmaState, batch_target: int) -> int:
    """ceil(batch_target / rho), capped at factor_cap * batch_target"""
    if batch_target < 1:
        raise ValueError(f"Batch target must be >= 1, got {batch_target}")
    # The epsilon keeps exact quotients such as 16 / 0.4 from rounding up
    wanted = math.ceil(batch_target / state.rho - 1e-9)
    return min(wanted, state.factor_cap * batch_target)


class FillResult(NamedTuple):
    target: int
    groups: List[RolloutGroup]
    n_drawn: int
    n_informative: int
    rounds: int
    dropped_all_correct: int
    dropped_all_wrong: int
    state: RatioEmaState

    @property
    def filled(self) -> bool:
        return len(self.groups) >= self.target

    @property
    def informative_fraction(self) -> float:
        return self.n_informative / self.n_drawn if self.n_drawn else 0.0


def fill_informative_batch(
    state: RatioEmaState,
    target: int,
    draw: Callable[[int, int], Sequence[RolloutGroup]],
) -> FillResult:
    """
    Collect target informative groups with Ratio-EMA sized draws

    Args:
        state: Current estimate of the informative fraction
        target: Groups wanted in the batch
        draw: (round, count) -> count freshly verified groups

    Returns:
        FillResult with at most target groups (first ones in draw order) and the
        state updated once with this iteration's observed fraction
    """
    budget = state.factor_cap * target
    kept: List[RolloutGroup] = []
    n_drawn = n_informative = all_correct = all_wrong = 0
    rounds = 0

    while len(kept) < target and n_drawn < budget:
        count = min(oversample_count(state, target - len(kept)), budget - n_drawn)
        drawn = draw(rounds, count)
        result = rejection_filter(drawn)
        kept.extend(result.kept)
        n_drawn += len(drawn)
        n_informative += len(result.kept)
        all_correct += result.dropped_all_correct
        all_wrong += result.dropped_all_wrong
        rounds += 1
        if not drawn:
            break

    if len(kept) < target:
        logger.warning(f"Filled {len(kept)}/{target} informative groups after {n_drawn} draws")
    observed = n_informative / n_drawn if n_drawn else 0.0
    return FillResult(
        target=target,
        groups=kept[:target],
        n_drawn=n_drawn,
        n_informative=n_informative,
        rounds=rounds,
        dropped_all_correct=all_correct,
        dropped_all_wrong=all_wrong,
        state=ratio_ema_update(state, observed),
    )


def tier_classify(group_accuracy: float) -> Tier:
    if not 0.0 <= group_accuracy <= 1.0:
        raise ValueError(f"Group accuracy must lie in [0, 1], got {group_accuracy}")
    if group_accuracy == 1.0:
        return Tier.MASTERED
    if group_accuracy == 0.0:
        return Tier.UNMASTERED
    return Tier.PARTIAL


@dataclass
class TierReport:
    """Latest tier of every task seen so far"""

    tiers: Dict[str, Tier] = field(default_factory=dict)

    def record(self, task_id: str, group_accuracy: float) -> Tier:
        tier = tier_classify(group_accuracy)
        self.tiers[task_id] = tier
        return tier

    def record_groups(self, groups: Iterable[RolloutGroup]):
        for group in groups:
            self.record(group.task_id, group.accuracy)

    def tier_of(self, task_id: str) -> Tier:
        return self.tiers.get(task_id, Tier.UNKNOWN)

    def counts(self) -> Dict[str, int]:
        counts = {tier.value: 0 for tier in Tier}
        for tier in self.tiers.values():
            counts[tier.value] += 1
        return counts


def resample_weights(
    report: TierReport,
    base: Tuple[float, float, float] = DEFAULT_TIER_WEIGHTS,
    task_ids: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """
    Categorical sampling distribution over tasks from their tiers

    Args:
        report: Tier of each task
        base: (w_mastered, w_partial, w_unmastered); tasks without a tier use w_partial
        task_ids: Tasks to weight, in output order (defaults to the report's tasks)

    Returns:
        Probabilities aligned with task_ids, summing to 1
    """
    w_mastered, w_partial, w_unmastered = (float(w) for w in base)
    if min(w_mastered, w_partial, w_unmastered) <= 0:
        raise ValueError(f"Tier weights must be positive, got {base}")
    if w_mastered > min(w_partial, w_unmastered):
        raise ValueError(f"Mastered weight must not exceed the partial/unmastered weights, got {base}")

    task_ids = list(report.tiers) if task_ids is None else list(task_ids)
    if not task_ids:
        raise ValueError("Cannot build resampling weights for an empty task set")

    by_tier = {Tier.MASTERED: w_mastered, Tier.PARTIAL: w_partial, Tier.UNMASTERED: w_unmastered}
    weights = np.array([by_tier.get(report.tier_of(t), w_partial) for t in task_ids], dtype=np.float64)
    return weights / weights.sum()
