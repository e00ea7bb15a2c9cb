"""
Task and preference-pair records shared by every stage of the pipeline
"""
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Tuple

from django.db import models

from verifier.answers import ABSTAIN, extract_boxed, is_abstain

BOXED_INSTRUCTION = 'The final answer MUST BE put in \\boxed{}.'

ABLATED_SUFFIX = '::ablated'


def append_boxed_instruction(prompt: str) -> str:
    """Terminate a prompt with the boxed-answer instruction (idempotent)"""
    stripped = prompt.rstrip()
    if stripped.endswith(BOXED_INSTRUCTION):
        return stripped
    return f"{stripped} {BOXED_INSTRUCTION}" if stripped else BOXED_INSTRUCTION


class Tier(models.TextChoices):
    UNKNOWN = 'unknown'
    MASTERED = 'mastered'
    PARTIAL = 'partial'
    UNMASTERED = 'unmastered'


class PreferenceAttribute(models.TextChoices):
    CONCISENESS = 'conciseness'
    FLUENCY = 'fluency'
    ABSTENTION = 'abstention'
    STYLE_COMPLIANCE = 'style-compliance'


@dataclass(frozen=True)
class Task:
    """A verifiable prompt; context is the desk-scale stand-in for an image"""

    id: str
    prompt: str
    ground_truth: str
    context: Optional[str] = None
    requires_context: bool = False
    tags: FrozenSet[str] = field(default_factory=frozenset)
    tier: Tier = Tier.UNKNOWN
    is_text_only: bool = False
    alternates: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.ground_truth or not self.ground_truth.strip():
            raise ValueError(f"Task {self.id} has an empty ground truth")
        if self.requires_context and self.context is None and not is_abstain(self.ground_truth):
            raise ValueError(
                f"Task {self.id} requires context it does not carry, so its ground truth must be {ABSTAIN}"
            )
        # Normalize containers so records stay hashable
        object.__setattr__(self, 'tags', frozenset(self.tags))
        object.__setattr__(self, 'alternates', tuple(self.alternates))
        object.__setattr__(self, 'tier', Tier(self.tier))

    @property
    def is_ablated(self) -> bool:
        return self.requires_context and self.context is None

    @property
    def accepted_answers(self) -> Tuple[str, ...]:
        return (self.ground_truth,) + self.alternates

    def to_record(self) -> dict:
        return {
            'id': self.id,
            'prompt': self.prompt,
            'ground_truth': self.ground_truth,
            'context': self.context,
            'requires_context': self.requires_context,
            'tags': sorted(self.tags),
            'tier': self.tier.value,
            'is_text_only': self.is_text_only,
            'alternates': list(self.alternates),
        }

    @classmethod
    def from_record(cls, record: dict) -> 'Task':
        return cls(
            id=record['id'],
            prompt=record['prompt'],
            ground_truth=record['ground_truth'],
            context=record.get('context'),
            requires_context=bool(record.get('requires_context', False)),
            tags=frozenset(record.get('tags', ())),
            tier=Tier(record.get('tier', Tier.UNKNOWN)),
            is_text_only=bool(record.get('is_text_only', False)),
            alternates=tuple(record.get('alternates', ())),
        )


@dataclass(frozen=True)
class PreferencePair:
    """(prompt, chosen, rejected) triple for preference optimization"""

    task_id: str
    chosen: str
    rejected: str
    attribute: PreferenceAttribute

    def __post_init__(self):
        object.__setattr__(self, 'attribute', PreferenceAttribute(self.attribute))
        if self.chosen == self.rejected:
            raise ValueError(f"Preference pair for {self.task_id} has identical responses")
        if self.attribute != PreferenceAttribute.ABSTENTION:
            if extract_boxed(self.chosen) is None or extract_boxed(self.rejected) is None:
                raise ValueError(f"Preference pair for {self.task_id} has a response without a boxed answer")

    def to_record(self) -> dict:
        return {
            'task_id': self.task_id,
            'chosen': self.chosen,
            'rejected': self.rejected,
            'attribute': self.attribute.value,
        }

    @classmethod
    def from_record(cls, record: dict) -> 'PreferencePair':
        return cls(
            task_id=record['task_id'],
            chosen=record['chosen'],
            rejected=record['rejected'],
            attribute=PreferenceAttribute(record['attribute']),
        )
