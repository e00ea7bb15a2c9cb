"""
Policy evaluation: greedy accuracy, abstention, probe diversity, Pass@k, lengths
"""
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from policy.engine import PolicyParams, RedundancyConfig, decode_greedy, derive_seed, sample
from policy.vocabulary import Vocabulary
from rewards.engine import DiversityConfig, distinct_count, passk_estimate
from taskforge.records import Task
from verifier.answers import VerdictReason, verify

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvaluationReport:
    n_tasks: int
    accuracy: Optional[float]
    n_ablated: int
    abstention_rate: Optional[float]
    n_probes: int
    mean_distinct_count: Optional[float]
    mean_length: Optional[float]
    p50_length: Optional[float]
    p95_length: Optional[float]
    max_length: Optional[int]
    passk: Optional[float] = None
    passk_k: Optional[int] = None

    def to_record(self) -> dict:
        return asdict(self)


def length_summary(lengths: Sequence[int]) -> Dict[str, Optional[float]]:
    if len(lengths) == 0:
        return {'mean_length': None, 'p50_length': None, 'p95_length': None, 'max_length': None}
    lengths = np.asarray(lengths, dtype=np.float64)
    return {
        'mean_length': float(lengths.mean()),
        'p50_length': float(np.percentile(lengths, 50)),
        'p95_length': float(np.percentile(lengths, 95)),
        'max_length': int(lengths.max()),
    }


class Evaluator:
    """Greedy and sampled evaluation of one policy"""

    def __init__(
        self,
        params: PolicyParams,
        vocabulary: Vocabulary,
        max_len: int = 32,
        redundancy: RedundancyConfig = RedundancyConfig(),
        temperature: float = 1.0,
    ):
        self.params = params
        self.vocabulary = vocabulary
        self.max_len = max_len
        self.redundancy = redundancy
        self.temperature = temperature

    def greedy(self, task: Task):
        return decode_greedy(
            self.params, task, self.max_len, self.redundancy,
            detokenize=self.vocabulary.detokenize, eos_id=self.vocabulary.eos_id,
        )

    def samples(self, task: Task, n: int, seed: int, stream: str = 'eval'):
        return [
            sample(
                self.params, task, self.max_len, self.temperature,
                seed=derive_seed(seed, stream, task.id, i),
                redundancy=self.redundancy,
                detokenize=self.vocabulary.detokenize,
                eos_id=self.vocabulary.eos_id,
            )
            for i in range(n)
        ]

    def greedy_accuracy(self, tasks: Sequence[Task]) -> Optional[float]:
        if not tasks:
            return None
        correct = 0
        for task in tasks:
            correct += verify(self.greedy(task).text, task.ground_truth, task.alternates).reward
        return correct / len(tasks)

    def abstention_rate(self, tasks: Sequence[Task]) -> Optional[float]:
        """Share of ablated tasks answered with an abstention"""
        ablated = [t for t in tasks if t.is_ablated]
        if not ablated:
            return None
        abstained = 0
        for task in ablated:
            verdict = verify(self.greedy(task).text, task.ground_truth, task.alternates)
            abstained += verdict.reason == VerdictReason.ABSTAIN_MATCH
        return abstained / len(ablated)

    def mean_distinct_count(self, probes: Sequence[Task], n_samples: int, seed: int, cfg: DiversityConfig,
                            stream: str = 'probe') -> Optional[float]:
        if not probes:
            return None
        counts = [distinct_count([r.text for r in self.samples(task, n_samples, seed, stream)], cfg) for task in probes]
        return float(np.mean(counts))

    def mean_passk(self, tasks: Sequence[Task], n_samples: int, k: int, seed: int) -> Optional[float]:
        if not tasks or n_samples < 1:
            return None
        k = min(k, n_samples)
        estimates = []
        for task in tasks:
            rollouts = self.samples(task, n_samples, seed, stream='passk')
            n_correct = sum(verify(r.text, task.ground_truth, task.alternates).reward for r in rollouts)
            estimates.append(passk_estimate(n_samples, n_correct, k))
        return float(np.mean(estimates))


def evaluate(
    params: PolicyParams,
    vocabulary: Vocabulary,
    tasks: Sequence[Task],
    probes: Sequence[Task] = (),
    *,
    max_len: int = 32,
    redundancy: RedundancyConfig = RedundancyConfig(),
    temperature: float = 1.0,
    diversity: DiversityConfig = DiversityConfig(),
    probe_samples: int = 8,
    passk_samples: int = 0,
    passk_k: int = 4,
    seed: int = 0,
) -> EvaluationReport:
    """
    Evaluate a policy on a task suite

    Args:
        params: Policy to evaluate
        vocabulary: Token table of the policy
        tasks: Evaluation tasks; ablated ones count toward the abstention rate only
        probes: Multi-answer probe tasks for the distinct-response count
        probe_samples: Samples per probe prompt
        passk_samples: Samples per answerable task for Pass@k (0 disables)

    Returns:
        EvaluationReport
    """
    evaluator = Evaluator(params, vocabulary, max_len, redundancy, temperature)
    answerable = [t for t in tasks if not t.is_ablated]
    ablated = [t for t in tasks if t.is_ablated]

    lengths: List[int] = [evaluator.greedy(task).length for task in answerable]
    report = EvaluationReport(
        n_tasks=len(answerable),
        accuracy=evaluator.greedy_accuracy(answerable),
        n_ablated=len(ablated),
        abstention_rate=evaluator.abstention_rate(ablated),
        n_probes=len(probes),
        mean_distinct_count=evaluator.mean_distinct_count(probes, probe_samples, seed, diversity),
        passk=evaluator.mean_passk(answerable, passk_samples, passk_k, seed) if passk_samples else None,
        passk_k=min(passk_k, passk_samples) if passk_samples else None,
        **length_summary(lengths),
    )
    logger.info(
        f"Evaluated v{params.version}: accuracy {report.accuracy}, abstention {report.abstention_rate}, "
        f"distinct {report.mean_distinct_count}"
    )
    return report
