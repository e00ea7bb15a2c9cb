"""
Leakage screening of evidence-bearing tasks

A task leaks when its question, stripped of the evidence, is still answered
with the original ground truth.
"""
import logging
import re
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Protocol

from django.db import models

from policy.engine import PolicyParams, RedundancyConfig, derive_seed, sample
from policy.vocabulary import Vocabulary
from taskforge.generators import ARITHMETIC_OPERATORS, apply_operator
from taskforge.records import Task
from taskforge.transforms import ABSTENTION_RESPONSES, ablate_context, boxed
from verifier.answers import verify

logger = logging.getLogger(__name__)

_OPERAND = re.compile(r'\b(first|second)\s*=\s*(-?\d+)')
_EXPRESSION = re.compile(r'\(first\s*(\S)\s*second\)\s*mod\s*(\d+)')
_SYMBOLS = {symbol: name for name, symbol in ARITHMETIC_OPERATORS}


class ScreenDecision(models.TextChoices):
    CLEAN = 'clean'
    LEAKED = 'leaked'


class ScreenResult(NamedTuple):
    task_id: str
    decision: ScreenDecision
    match_rate: float
    n_trials: int

    @property
    def leaked(self) -> bool:
        return self.decision == ScreenDecision.LEAKED


class Responder(Protocol):
    def respond(self, task: Task, n: int, seed: int) -> List[str]:
        ...


class PromptOracleResponder:
    """Answers from the prompt text alone; refuses when the operands are absent"""

    def answer(self, task: Task) -> Optional[str]:
        operands = dict(_OPERAND.findall(task.prompt))
        expression = _EXPRESSION.search(task.prompt)
        if expression is None or {'first', 'second'} - operands.keys():
            return None
        symbol, modulus = expression.groups()
        if symbol not in _SYMBOLS:
            return None
        return str(apply_operator(_SYMBOLS[symbol], int(operands['first']), int(operands['second']), int(modulus)))

    def respond(self, task: Task, n: int, seed: int) -> List[str]:
        answer = self.answer(task)
        response = boxed(answer) if answer is not None else ABSTENTION_RESPONSES[-1]
        return [response] * n


@dataclass
class PolicyResponder:
    """Samples the policy on the screened prompt"""

    params: PolicyParams
    vocabulary: Vocabulary
    max_len: int = 32
    temperature: float = 1.0
    redundancy: RedundancyConfig = RedundancyConfig()

    def respond(self, task: Task, n: int, seed: int) -> List[str]:
        return [
            sample(
                self.params, task, self.max_len, self.temperature,
                seed=derive_seed(seed, task.id, trial),
                redundancy=self.redundancy,
                detokenize=self.vocabulary.detokenize,
                eos_id=self.vocabulary.eos_id,
            ).text
            for trial in range(n)
        ]


def leakage_screen(
    task: Task,
    responder: Responder,
    n_trials: int = 8,
    threshold: float = 0.5,
    seed: int = 0,
) -> ScreenResult:
    """
    Ask the responder the context-ablated question n_trials times

    Args:
        task: Evidence-bearing task with its context present
        responder: Produces responses to a task
        n_trials: Number of responses (>= 1)
        threshold: Match rate at or above which the task is leaked
        seed: Sampling seed

    Returns:
        ScreenResult with the match rate against the original ground truth
    """
    if not task.requires_context:
        raise ValueError(f"Task {task.id} is text-only; leakage screening needs an evidence-bearing task")
    if task.context is None:
        raise ValueError(f"Task {task.id} has no context to remove")
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")

    ablated = ablate_context(task)
    responses = responder.respond(ablated, n_trials, seed)
    matches = sum(verify(response, task.ground_truth, task.alternates).reward for response in responses)
    match_rate = matches / n_trials
    decision = ScreenDecision.LEAKED if match_rate >= threshold else ScreenDecision.CLEAN
    if decision == ScreenDecision.LEAKED:
        logger.info(f"Task {task.id} leaks: {matches}/{n_trials} answers without context")
    return ScreenResult(task.id, decision, match_rate, n_trials)
