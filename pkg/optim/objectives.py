"""
Policy objectives: sequence-level clipped surrogate (GSPO) and reference-free DPO
"""
import logging
from dataclasses import dataclass
from typing import List, Mapping, Sequence, Tuple

import numpy as np

from policy.engine import PolicyParams, logprob_and_grad
from policy.vocabulary import Vocabulary
from rewards.engine import RolloutGroup
from taskforge.records import PreferenceAttribute, PreferencePair, Task

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClipConfig:
    """Asymmetric ratio bounds [1 - eps_low, 1 + eps_high]"""

    eps_low: float = 0.2
    eps_high: float = 0.28

    def __post_init__(self):
        if self.eps_low <= 0 or self.eps_high <= 0:
            raise ValueError(f"Clip bounds must be positive, got {self}")
        if self.eps_low >= 1:
            raise ValueError(f"eps_low must be below 1, got {self.eps_low}")


@dataclass(frozen=True)
class TokenizedPair:
    task: Task
    chosen: Tuple[int, ...]
    rejected: Tuple[int, ...]
    attribute: PreferenceAttribute = PreferenceAttribute.CONCISENESS

    def __post_init__(self):
        if not self.chosen or not self.rejected:
            raise ValueError(f"Pair for {self.task.id} has an empty response")


def tokenize_pairs(pairs: Sequence[PreferencePair], tasks: Mapping[str, Task], vocabulary: Vocabulary) -> List[TokenizedPair]:
    tokenized = []
    for pair in pairs:
        if pair.task_id not in tasks:
            raise ValueError(f"Preference pair references unknown task {pair.task_id}")
        tokenized.append(TokenizedPair(
            task=tasks[pair.task_id],
            chosen=tuple(vocabulary.tokenize(pair.chosen)),
            rejected=tuple(vocabulary.tokenize(pair.rejected)),
            attribute=pair.attribute,
        ))
    return tokenized


def sequence_ratio(logprob_cur: float, logprob_old: float, length: int) -> float:
    """Length-normalized importance ratio exp((lp_cur - lp_old) / |y|)"""
    return float(np.exp((logprob_cur - logprob_old) / length))


def gspo_loss_grad(
    params: PolicyParams,
    old: PolicyParams,
    groups: Sequence[Tuple[RolloutGroup, np.ndarray]],
    clip: ClipConfig,
    tasks: Mapping[str, Task],
) -> Tuple[float, np.ndarray]:
    """
    Clipped sequence-level surrogate loss and its gradient

    Args:
        params: Live policy
        old: Snapshot that produced every rollout's logprob_old
        groups: (group, advantages) pairs in batch order
        clip: Ratio bounds
        tasks: Task of each group, keyed by id

    Returns:
        (loss, grad) with loss = -mean over groups of the within-group mean of
        min(s * A, clip(s) * A); the clipped branch contributes no gradient
    """
    if not groups:
        raise ValueError("GSPO needs at least one rollout group")

    loss = 0.0
    grad = np.zeros_like(params.weights)
    for group, advantages in groups:
        advantages = np.asarray(advantages, dtype=np.float64)
        if advantages.shape != (group.n_rollout,):
            raise ValueError(
                f"Group {group.task_id}: {advantages.shape} advantages for {group.n_rollout} rollouts"
            )
        if not np.all(np.isfinite(advantages)):
            raise ValueError(f"Group {group.task_id} has non-finite advantages")
        task = tasks[group.task_id]

        group_term = 0.0
        group_grad = np.zeros_like(params.weights)
        for rollout, advantage in zip(group.rollouts, advantages):
            if rollout.policy_version < old.version:
                raise ValueError(
                    f"Snapshot v{old.version} is newer than the policy v{rollout.policy_version} "
                    f"that sampled a rollout of {rollout.task_id}"
                )
            if advantage == 0.0:
                continue
            lp_cur, lp_grad = logprob_and_grad(params, task, rollout.tokens, rollout.temperature)
            ratio = sequence_ratio(lp_cur, rollout.logprob_old, rollout.length)
            clipped = min(max(ratio, 1.0 - clip.eps_low), 1.0 + clip.eps_high)
            if ratio * advantage <= clipped * advantage:
                group_term += ratio * advantage
                group_grad += (advantage * ratio / rollout.length) * lp_grad
            else:
                group_term += clipped * advantage
        loss += group_term / group.n_rollout
        grad += group_grad / group.n_rollout

    n_groups = len(groups)
    return -loss / n_groups, -grad / n_groups


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def pair_margins(params: PolicyParams, pairs: Sequence[TokenizedPair]) -> np.ndarray:
    """log pi(chosen) - log pi(rejected) for every pair"""
    margins = np.empty(len(pairs), dtype=np.float64)
    for i, pair in enumerate(pairs):
        lp_w, _ = logprob_and_grad(params, pair.task, pair.chosen)
        lp_l, _ = logprob_and_grad(params, pair.task, pair.rejected)
        margins[i] = lp_w - lp_l
    return margins


def preference_accuracy(params: PolicyParams, pairs: Sequence[TokenizedPair]) -> float:
    if not pairs:
        raise ValueError("Preference accuracy needs at least one pair")
    return float(np.mean(pair_margins(params, pairs) > 0))


def dpo_loss_grad(params: PolicyParams, pairs: Sequence[TokenizedPair], beta: float) -> Tuple[float, np.ndarray]:
    """
    Reference-free DPO: mean of -log sigmoid(beta * (log pi(y_w) - log pi(y_l)))
    """
    if not pairs:
        raise ValueError("DPO needs at least one preference pair")
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")

    losses = np.empty(len(pairs), dtype=np.float64)
    grad = np.zeros_like(params.weights)
    for i, pair in enumerate(pairs):
        lp_w, grad_w = logprob_and_grad(params, pair.task, pair.chosen)
        lp_l, grad_l = logprob_and_grad(params, pair.task, pair.rejected)
        z = beta * (lp_w - lp_l)
        losses[i] = -_log_sigmoid(z)
        # d/dz of -log sigmoid(z) is -sigmoid(-z)
        weight = -beta * float(np.exp(_log_sigmoid(-z)))
        grad += weight * (grad_w - grad_l)
    return float(losses.mean()), grad / len(pairs)
