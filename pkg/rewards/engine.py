"""
Reward and advantage computations for verifiable-reward training

Covers the binary Pass@1 reward, the grouped Pass@k statistics and advantages,
the diversity-fused Pass@1 reward, the soft length penalty, their phase-dependent
hybrid combination and the distinct-response count.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from django.db import models

from policy.engine import Rollout
from taskforge.records import Task
from verifier.answers import Verdict, verify

from .distance import DistanceFn, char_trigram_distances

logger = logging.getLogger(__name__)

# Div values closer than this are treated as one level
DIV_TIE_ATOL = 1e-12


class DegenerateGroupError(ValueError):
    """The group reward has zero variance, so Pass@k advantages are undefined"""


class Phase(models.TextChoices):
    EARLY_PASSK = 'early_passk', 'Early (Pass@k)'
    LATE_DIVERSITY = 'late_diversity', 'Late (diversity-fused Pass@1)'


@dataclass(frozen=True)
class RolloutGroup:
    task_id: str
    rollouts: Tuple[Rollout, ...]
    correctness: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'rollouts', tuple(self.rollouts))
        object.__setattr__(self, 'correctness', tuple(int(c) for c in self.correctness))
        if len(self.rollouts) < 2:
            raise ValueError(f"Group {self.task_id} needs at least 2 rollouts, got {len(self.rollouts)}")
        if len(self.correctness) != len(self.rollouts):
            raise ValueError(
                f"Group {self.task_id}: {len(self.correctness)} rewards for {len(self.rollouts)} rollouts"
            )
        if any(c not in (0, 1) for c in self.correctness):
            raise ValueError(f"Group {self.task_id} correctness must be binary, got {self.correctness}")
        stray = [r.task_id for r in self.rollouts if r.task_id != self.task_id]
        if stray:
            raise ValueError(f"Group {self.task_id} contains rollouts of other tasks: {sorted(set(stray))}")

    @property
    def n_rollout(self) -> int:
        return len(self.rollouts)

    @property
    def n_neg(self) -> int:
        return self.n_rollout - sum(self.correctness)

    @property
    def accuracy(self) -> float:
        return sum(self.correctness) / self.n_rollout

    @property
    def is_informative(self) -> bool:
        return 0 < self.n_neg < self.n_rollout

    @property
    def texts(self) -> List[str]:
        return [r.text for r in self.rollouts]

    @property
    def lengths(self) -> np.ndarray:
        return np.array([r.length for r in self.rollouts], dtype=np.int64)


def score_group(task: Task, rollouts: Sequence[Rollout]) -> RolloutGroup:
    """Verify every rollout of a task and bundle them into a group"""
    correctness = [pass1_reward(verify(r.text, task.ground_truth, task.alternates)) for r in rollouts]
    return RolloutGroup(task_id=task.id, rollouts=tuple(rollouts), correctness=tuple(correctness))


@dataclass(frozen=True)
class GroupStats:
    n_rollout: int
    n_neg: int
    k: int
    r_bar_group: float
    sigma_group: float
    a_pos: float = 0.0
    a_neg: float = 0.0

    @property
    def is_degenerate(self) -> bool:
        return self.sigma_group == 0.0


@dataclass(frozen=True)
class DiversityConfig:
    distance: DistanceFn = char_trigram_distances
    norm_lo: float = 0.5
    norm_hi: float = 1.0
    tau: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.norm_lo <= self.norm_hi:
            raise ValueError(f"Need 0 <= norm_lo <= norm_hi, got [{self.norm_lo}, {self.norm_hi}]")
        if self.tau < 0:
            raise ValueError(f"Similarity threshold must be >= 0, got {self.tau}")


@dataclass(frozen=True)
class LengthConfig:
    l_max: int = 512
    l_soft: int = 128

    def __post_init__(self):
        if not 0 < self.l_soft < self.l_max:
            raise ValueError(f"Need 0 < l_soft < l_max, got l_soft={self.l_soft}, l_max={self.l_max}")


class AdvantageVector(NamedTuple):
    values: np.ndarray
    degenerate: bool
    phase: Phase


def pass1_reward(verdict: Verdict) -> int:
    return int(verdict.reward)


def passk_stats(n_rollout: int, n_neg: int, k: int) -> GroupStats:
    """
    Closed-form group statistics of the Pass@k reward

    The mean is 1 - C(n_neg, k) / C(n_rollout, k), evaluated with exact integer
    binomials; the deviation is the Bernoulli std of that mean.
    """
    if n_rollout < 1:
        raise ValueError(f"n_rollout must be >= 1, got {n_rollout}")
    if not 1 <= k <= n_rollout:
        raise ValueError(f"k must lie in [1, {n_rollout}], got {k}")
    if not 0 <= n_neg <= n_rollout:
        raise ValueError(f"n_neg must lie in [0, {n_rollout}], got {n_neg}")

    r_bar = 1 - Fraction(math.comb(n_neg, k), math.comb(n_rollout, k))
    sigma = math.sqrt(r_bar * (1 - r_bar))
    stats = GroupStats(n_rollout=n_rollout, n_neg=n_neg, k=k, r_bar_group=float(r_bar), sigma_group=sigma)
    if stats.is_degenerate:
        return stats
    a_pos, a_neg = passk_advantages(stats)
    return GroupStats(n_rollout, n_neg, k, float(r_bar), sigma, a_pos, a_neg)


def passk_advantages(stats: GroupStats) -> Tuple[float, float]:
    """(a_pos, a_neg): standardized values of a unit and of a zero reward"""
    if stats.sigma_group <= 0.0:
        raise DegenerateGroupError(
            f"Group with n_rollout={stats.n_rollout}, n_neg={stats.n_neg}, k={stats.k} has zero reward variance"
        )
    a_pos = (1.0 - stats.r_bar_group) / stats.sigma_group
    a_neg = -stats.r_bar_group / stats.sigma_group
    return a_pos, a_neg


def passk_estimate(n: int, c: int, k: int) -> float:
    """Unbiased Pass@k of n samples with c correct: 1 - C(n - c, k) / C(n, k)"""
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if not 0 <= c <= n:
        raise ValueError(f"c must lie in [0, {n}], got {c}")
    return float(1 - Fraction(math.comb(n - c, k), math.comb(n, k)))


def diversity_from_matrix(distances: np.ndarray) -> np.ndarray:
    """Mean distance of each response to the others"""
    distances = np.asarray(distances, dtype=np.float64)
    n = distances.shape[0]
    if distances.shape != (n, n):
        raise ValueError(f"Distance matrix must be square, got shape {distances.shape}")
    if n < 2:
        raise ValueError(f"Diversity needs at least 2 responses, got {n}")
    off_diagonal = distances.sum(axis=1) - np.diag(distances)
    return off_diagonal / (n - 1)


def diversity_scores(responses: Sequence[str], cfg: DiversityConfig) -> np.ndarray:
    if len(responses) < 2:
        raise ValueError(f"Diversity needs at least 2 responses, got {len(responses)}")
    return diversity_from_matrix(cfg.distance(list(responses)))


def normalize_diversity(div: np.ndarray, cfg: DiversityConfig) -> np.ndarray:
    """Affine map of the group's Div values from [min, max] onto [norm_lo, norm_hi]"""
    div = np.asarray(div, dtype=np.float64)
    low, high = div.min(), div.max()
    if np.isclose(high, low, rtol=0.0, atol=DIV_TIE_ATOL):
        return np.full_like(div, cfg.norm_hi)
    return cfg.norm_lo + (cfg.norm_hi - cfg.norm_lo) * (div - low) / (high - low)


def fuse_diversity(rewards: Sequence[int], div: Sequence[float], cfg: DiversityConfig) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    div = np.asarray(div, dtype=np.float64)
    if rewards.shape != div.shape:
        raise ValueError(f"Rewards {rewards.shape} and diversity {div.shape} must have equal lengths")
    if rewards.size == 0:
        return rewards
    return rewards * normalize_diversity(div, cfg)


def diversity_advantages(r_div: Sequence[float]) -> np.ndarray:
    r_div = np.asarray(r_div, dtype=np.float64)
    if r_div.size == 0:
        raise ValueError("Cannot center an empty reward vector")
    return r_div - r_div.mean()


def length_reward(length: int, cfg: LengthConfig) -> float:
    """0 up to l_max - l_soft, then a linear ramp down to -1 at l_max, -1 beyond"""
    if length < 0:
        raise ValueError(f"Length must be >= 0, got {length}")
    threshold = cfg.l_max - cfg.l_soft
    if length <= threshold:
        return 0.0
    if length <= cfg.l_max:
        return (threshold - length) / cfg.l_soft
    return -1.0


def phase_for_iteration(iteration: int, total_iterations: int, switch_fraction: float) -> Phase:
    """Pass@k until switch_fraction of the run has elapsed, diversity afterwards"""
    if iteration < switch_fraction * total_iterations:
        return Phase.EARLY_PASSK
    return Phase.LATE_DIVERSITY


def hybrid_advantage(
    group: RolloutGroup,
    phase: Phase,
    k: int,
    div_cfg: DiversityConfig,
    len_cfg: Optional[LengthConfig] = None,
    w_len: float = 0.0,
) -> AdvantageVector:
    """
    Per-response advantages for the current training phase

    Args:
        group: Verified rollout group
        phase: early_passk uses Pass@k advantages, late_diversity the centered
            diversity-fused Pass@1 reward
        k: Pass@k group size
        div_cfg: Diversity settings (late phase)
        len_cfg: Length penalty settings; None disables the length term
        w_len: Weight of the additive length term

    Returns:
        AdvantageVector; a zero-variance early-phase group yields zeros flagged degenerate
    """
    phase = Phase(phase)
    if phase == Phase.EARLY_PASSK:
        stats = passk_stats(group.n_rollout, group.n_neg, k)
        if stats.is_degenerate:
            logger.warning(f"Degenerate group for task {group.task_id} (n_neg={group.n_neg}); advantages zeroed")
            return AdvantageVector(np.zeros(group.n_rollout), True, phase)
        correct = np.asarray(group.correctness, dtype=bool)
        values = np.where(correct, stats.a_pos, stats.a_neg).astype(np.float64)
    else:
        div = diversity_scores(group.texts, div_cfg)
        values = diversity_advantages(fuse_diversity(group.correctness, div, div_cfg))

    if len_cfg is not None and w_len != 0.0:
        values = values + w_len * np.array([length_reward(int(n), len_cfg) for n in group.lengths])
    return AdvantageVector(values, False, phase)


def cluster_responses(responses: Sequence[str], cfg: DiversityConfig) -> List[int]:
    """
    Greedy clustering: each response joins the first cluster whose representative
    lies closer than tau, else founds a new cluster

    Returns:
        Cluster index of every response, in input order
    """
    if not responses:
        raise ValueError("Cannot cluster an empty response list")
    if len(responses) == 1:
        return [0]
    distances = np.asarray(cfg.distance(list(responses)), dtype=np.float64)

    representatives: List[int] = []
    assignment = []
    for i in range(len(responses)):
        for cluster, rep in enumerate(representatives):
            if distances[i, rep] < cfg.tau:
                assignment.append(cluster)
                break
        else:
            representatives.append(i)
            assignment.append(len(representatives) - 1)
    return assignment


def distinct_count(responses: Sequence[str], cfg: DiversityConfig) -> int:
    return max(cluster_responses(responses, cfg)) + 1
