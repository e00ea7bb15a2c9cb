"""
RL data-construction transforms: cloze conversion, context ablation,
preference pairing and text-only mixing
"""
import logging
import math
from dataclasses import replace
from typing import Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np
from sklearn.utils import murmurhash3_32

from verifier.answers import ABSTAIN, REFUSAL_PHRASES

from .generators import gen_logic_tasks
from .records import (
    ABLATED_SUFFIX,
    PreferenceAttribute,
    PreferencePair,
    Task,
    append_boxed_instruction,
)

logger = logging.getLogger(__name__)

# (prefix, suffix) wrapped around a concise answer to build verbose variants
PADDING_TEMPLATES = (
    ('well so the answer is clearly', 'indeed'),
    ('hmm let us note that the answer is', 'so that is it'),
    ('thus we get that the answer is', 'as we can see'),
    ('so to be clear the final answer is', 'and that is the answer'),
)

FABRICATION_PREFIX = 'the answer is clearly'

ABSTENTION_RESPONSES = (
    f"\\boxed{{{ABSTAIN}}}",
    f"it cannot be determined \\boxed{{{ABSTAIN}}}",
)

Options = Union[Mapping[str, str], Sequence[Tuple[str, str]]]


def boxed(answer: str) -> str:
    return f"\\boxed{{{answer}}}"


def response_words() -> Tuple[str, ...]:
    """Every plain word the transforms can emit, in a stable order"""
    words = set()
    for prefix, suffix in PADDING_TEMPLATES:
        words.update(prefix.split())
        words.update(suffix.split())
    words.update(FABRICATION_PREFIX.split())
    for phrase in REFUSAL_PHRASES + ABSTENTION_RESPONSES:
        words.update(w for w in phrase.split() if not w.startswith('\\boxed'))
    return tuple(sorted(words))


def to_cloze(question: str, options: Options, correct_label: str) -> Task:
    """
    Convert a multiple-choice item into an open cloze task

    Args:
        question: Question stem without the option list
        options: Labeled options, as a mapping or (label, content) pairs
        correct_label: Label of the correct option

    Returns:
        Task whose prompt carries no options and whose ground truth is the
        correct option's content
    """
    pairs = list(options.items()) if isinstance(options, Mapping) else list(options)
    labels = [label for label, _ in pairs]
    contents = [content.strip() for _, content in pairs]

    if correct_label not in labels:
        raise ValueError(f"Correct label {correct_label!r} is not among the options {labels}")
    if len(set(labels)) != len(labels):
        raise ValueError(f"Duplicate option labels in {labels}")
    if len(set(c.casefold() for c in contents)) != len(contents):
        raise ValueError("Options with duplicate contents make the ground truth ambiguous")

    answer = contents[labels.index(correct_label)]
    digest = murmurhash3_32(question.strip(), seed=0, positive=True)
    return Task(
        id=f"cloze-{digest:08x}",
        prompt=append_boxed_instruction(question.strip()),
        ground_truth=answer,
        tags=frozenset({'cloze'}),
        is_text_only=True,
    )


def ablate_context(task: Task) -> Task:
    """
    Build the context-ablated variant of an evidence-bearing task

    The variant keeps only the question; its ground truth becomes ABSTAIN.
    Ablating twice is an error.
    """
    if not task.requires_context:
        raise ValueError(f"Task {task.id} does not require context and cannot be ablated")
    if task.context is None or task.id.endswith(ABLATED_SUFFIX):
        raise ValueError(f"Task {task.id} carries no context; it is already ablated")

    return replace(
        task,
        id=f"{task.id}{ABLATED_SUFFIX}",
        context=None,
        ground_truth=ABSTAIN,
        alternates=(),
        tags=task.tags | {'ablated'},
    )


def _pad_to_ratio(chosen: str, prefix: str, suffix: str, ratio: int = 3) -> str:
    words = f"{prefix} {chosen} {suffix}".split()
    # Repeat the suffix until the verbose variant is long enough
    while len(words) < ratio * len(chosen.split()):
        words.extend(suffix.split())
    return ' '.join(words)


def _stutter(text: str) -> str:
    return ' '.join(f"{w} {w}" for w in text.split())


def make_preference_pairs(
    tasks: Sequence[Task],
    seed: int,
    styles: Iterable[str] = (PreferenceAttribute.CONCISENESS,),
) -> List[PreferencePair]:
    """
    Build corrective preference pairs

    Args:
        tasks: Source tasks; ablated tasks yield abstention pairs
        seed: Seed for template and fabrication choices
        styles: Attributes to build for answerable tasks, cycled over the tasks

    Returns:
        One preference pair per task
    """
    if not tasks:
        raise ValueError("Cannot build preference pairs from an empty task list")
    style_cycle = [PreferenceAttribute(s) for s in styles]
    if not style_cycle or PreferenceAttribute.ABSTENTION in style_cycle:
        raise ValueError(f"Styles must be non-empty and exclude abstention, got {style_cycle}")

    rng = np.random.default_rng(seed)
    pairs = []
    for index, task in enumerate(tasks):
        if task.is_ablated:
            fabricated = boxed(str(int(rng.integers(0, 10))))
            pairs.append(PreferencePair(
                task_id=task.id,
                chosen=ABSTENTION_RESPONSES[int(rng.integers(0, len(ABSTENTION_RESPONSES)))],
                rejected=f"{FABRICATION_PREFIX} {fabricated}",
                attribute=PreferenceAttribute.ABSTENTION,
            ))
            continue

        style = style_cycle[index % len(style_cycle)]
        chosen = boxed(task.ground_truth)
        prefix, suffix = PADDING_TEMPLATES[int(rng.integers(0, len(PADDING_TEMPLATES)))]
        if style == PreferenceAttribute.CONCISENESS:
            rejected = _pad_to_ratio(chosen, prefix, suffix)
        elif style == PreferenceAttribute.FLUENCY:
            rejected = f"{_stutter(prefix)} {chosen}"
        else:
            rejected = f"{chosen} {prefix} {chosen}"
        pairs.append(PreferencePair(task_id=task.id, chosen=chosen, rejected=rejected, attribute=style))

    logger.info(f"Built {len(pairs)} preference pairs from {len(tasks)} tasks")
    return pairs


def mix_text_only(tasks: Sequence[Task], fraction: float, seed: int) -> List[Task]:
    """
    Interleave floor(fraction * len(tasks)) text-only reasoning tasks

    Args:
        tasks: Base task list
        fraction: Share of text-only additions relative to the base list, in [0, 1]
        seed: Seed for the added tasks and their positions

    Returns:
        Base tasks in their original order with the text-only tasks inserted
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"Text-only fraction must lie in [0, 1], got {fraction}")
    n_added = math.floor(fraction * len(tasks) + 1e-9)
    if n_added == 0:
        return list(tasks)

    extras = gen_logic_tasks(n_added, seed)
    rng = np.random.default_rng(seed)
    total = len(tasks) + n_added
    extra_slots = set(int(i) for i in rng.choice(total, size=n_added, replace=False))

    mixed = []
    base_iter, extra_iter = iter(tasks), iter(extras)
    for slot in range(total):
        mixed.append(next(extra_iter) if slot in extra_slots else next(base_iter))
    return mixed
