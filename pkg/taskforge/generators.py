"""
Synthetic verifiable task families

Every generator is a pure function of its arguments: the same (count, modulus, seed)
always yields the same task list.
"""
import logging
from typing import List

import numpy as np

from .records import Task, append_boxed_instruction

logger = logging.getLogger(__name__)

ARITHMETIC_OPERATORS = (
    ('add', '+'),
    ('sub', '-'),
    ('mul', '*'),
)

LOGIC_OPERATORS = ('and', 'or', 'xor', 'implies')


def apply_operator(name: str, a: int, b: int, modulus: int) -> int:
    """Reference arithmetic for the task families"""
    if name == 'add':
        return (a + b) % modulus
    if name == 'sub':
        return (a - b) % modulus
    if name == 'mul':
        return (a * b) % modulus
    raise ValueError(f"Unknown operator: {name}")


def evaluate_logic(name: str, p: bool, q: bool) -> bool:
    if name == 'and':
        return p and q
    if name == 'or':
        return p or q
    if name == 'xor':
        return p != q
    if name == 'implies':
        return (not p) or q
    raise ValueError(f"Unknown logic operator: {name}")


def _check_request(count: int, modulus: int = 2):
    if count < 1:
        raise ValueError(f"Task count must be positive, got {count}")
    if modulus < 2:
        raise ValueError(f"Modulus must be at least 2, got {modulus}")


def _draw_operands(rng: np.random.Generator, modulus: int):
    a, b = (int(v) for v in rng.integers(0, 10 * modulus, size=2))
    name, symbol = ARITHMETIC_OPERATORS[int(rng.integers(0, len(ARITHMETIC_OPERATORS)))]
    return a, b, name, symbol


def gen_arith_tasks(count: int, modulus: int, seed: int) -> List[Task]:
    """
    Generate modular arithmetic tasks

    Args:
        count: Number of tasks
        modulus: Modulus of the arithmetic (>= 2)
        seed: Generator seed

    Returns:
        Tasks asking for (a op b) mod modulus with op in {+, -, *}
    """
    _check_request(count, modulus)
    rng = np.random.default_rng(seed)

    tasks = []
    for index in range(count):
        a, b, name, symbol = _draw_operands(rng, modulus)
        prompt = f"Compute ({a} {symbol} {b}) mod {modulus}."
        tasks.append(Task(
            id=f"arith-{seed}-{index:05d}",
            prompt=append_boxed_instruction(prompt),
            ground_truth=str(apply_operator(name, a, b, modulus)),
            tags=frozenset({'arithmetic', f"op:{name}", f"mod:{modulus}"}),
        ))
    return tasks


def gen_context_tasks(count: int, modulus: int, seed: int, leak_fraction: float = 0.0) -> List[Task]:
    """
    Generate evidence-bearing arithmetic tasks

    The operands live only in the context, so the question is unanswerable without
    it. A leak_fraction of the tasks also restate the operands in the prompt, which
    makes them answerable from the text alone.
    """
    _check_request(count, modulus)
    if not 0.0 <= leak_fraction <= 1.0:
        raise ValueError(f"Leak fraction must lie in [0, 1], got {leak_fraction}")
    rng = np.random.default_rng(seed)

    n_leaky = int(np.floor(leak_fraction * count))
    leaky = set(int(i) for i in rng.choice(count, size=n_leaky, replace=False)) if n_leaky else set()

    tasks = []
    for index in range(count):
        a, b, name, symbol = _draw_operands(rng, modulus)
        context = f"Evidence: first = {a} ; second = {b} ."
        if index in leaky:
            prompt = f"Given first = {a} and second = {b}, compute (first {symbol} second) mod {modulus}."
        else:
            prompt = f"Using the evidence, compute (first {symbol} second) mod {modulus}."
        tasks.append(Task(
            id=f"ctx-{seed}-{index:05d}",
            prompt=append_boxed_instruction(prompt),
            ground_truth=str(apply_operator(name, a, b, modulus)),
            context=context,
            requires_context=True,
            tags=frozenset({'context', f"op:{name}", f"mod:{modulus}"}),
        ))
    return tasks


def gen_logic_tasks(count: int, seed: int) -> List[Task]:
    """Generate text-only boolean reasoning tasks (count may be zero)"""
    if count < 0:
        raise ValueError(f"Task count must be non-negative, got {count}")
    rng = np.random.default_rng(seed)

    tasks = []
    for index in range(count):
        p, q = (bool(v) for v in rng.integers(0, 2, size=2))
        name = LOGIC_OPERATORS[int(rng.integers(0, len(LOGIC_OPERATORS)))]
        p_text, q_text = str(p).lower(), str(q).lower()
        prompt = f"If p is {p_text} and q is {q_text}, is (p {name} q) true or false?"
        tasks.append(Task(
            id=f"logic-{seed}-{index:05d}",
            prompt=append_boxed_instruction(prompt),
            ground_truth=str(evaluate_logic(name, p, q)).lower(),
            tags=frozenset({'logic', f"op:{name}"}),
            is_text_only=True,
        ))
    return tasks


def gen_probe_tasks(count: int, modulus: int, seed: int) -> List[Task]:
    """
    Generate open tasks with at least three verifiable answers

    Each task asks for any x in [0, modulus) with x mod d = r; d <= modulus // 3
    guarantees three or more solutions.
    """
    _check_request(count, modulus)
    if modulus < 6:
        raise ValueError(f"Probe tasks need modulus >= 6 to admit three answers, got {modulus}")
    rng = np.random.default_rng(seed)

    tasks = []
    for index in range(count):
        divisor = int(rng.integers(2, modulus // 3 + 1))
        remainder = int(rng.integers(0, divisor))
        answers = [str(x) for x in range(modulus) if x % divisor == remainder]
        prompt = f"Name any value x with 0 <= x < {modulus} and x mod {divisor} = {remainder}."
        tasks.append(Task(
            id=f"probe-{seed}-{index:05d}",
            prompt=append_boxed_instruction(prompt),
            ground_truth=answers[0],
            tags=frozenset({'probe', 'multi-answer', f"mod:{modulus}"}),
            alternates=tuple(answers[1:]),
        ))
    logger.debug(f"Generated {len(tasks)} probe tasks for modulus {modulus}")
    return tasks
