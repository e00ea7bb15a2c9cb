"""
Boxed-answer extraction and the binary verifiable reward
"""
import re
from dataclasses import dataclass
from typing import Iterable, Optional

from django.db import models

ABSTAIN = '<ABSTAIN>'

BOX_OPEN = '\\boxed{'

# A response without a box counts as abstaining when it contains one of these
REFUSAL_PHRASES = (
    'cannot be determined',
    'cannot determine',
    'not enough information',
    'insufficient information',
    'unable to answer',
    'i cannot answer',
)

_WHITESPACE = re.compile(r'\s+')
_PURE_INTEGER = re.compile(r'[+-]?\d+')


class VerdictReason(models.TextChoices):
    MATCH = 'match'
    MISMATCH = 'mismatch'
    NO_BOX = 'no_box'
    ABSTAIN_MATCH = 'abstain_match'
    ABSTAIN_MISMATCH = 'abstain_mismatch'


REWARDED_REASONS = frozenset({VerdictReason.MATCH, VerdictReason.ABSTAIN_MATCH})


@dataclass(frozen=True)
class Verdict:
    """Outcome of checking one response against its ground truth"""

    extracted: Optional[str]
    reward: int
    reason: VerdictReason

    def __post_init__(self):
        if self.reward not in (0, 1):
            raise ValueError(f"Verdict reward must be 0 or 1, got {self.reward}")
        if (self.reward == 1) != (self.reason in REWARDED_REASONS):
            raise ValueError(f"Verdict reward {self.reward} contradicts reason {self.reason}")


def extract_boxed(text: str) -> Optional[str]:
    """
    Return the content of the last \\boxed{...} in the text

    Args:
        text: Response text

    Returns:
        Whitespace-trimmed box content, or None when there is no box or
        the last box never closes
    """
    start = text.rfind(BOX_OPEN)
    if start < 0:
        return None

    depth = 1
    begin = start + len(BOX_OPEN)
    for pos in range(begin, len(text)):
        char = text[pos]
        if char == '{':
            depth += 1
        elif char == '}':
            depth -= 1
            if depth == 0:
                return text[begin:pos].strip()
    return None


def normalize_answer(answer: str) -> str:
    """Trim, collapse whitespace, drop leading zeros of integers and case-fold"""
    canonical = _WHITESPACE.sub(' ', answer.strip())
    if _PURE_INTEGER.fullmatch(canonical):
        canonical = str(int(canonical))
    return canonical.casefold()


def is_abstain(answer: Optional[str]) -> bool:
    return answer is not None and normalize_answer(answer) == normalize_answer(ABSTAIN)


def contains_refusal(text: str) -> bool:
    lowered = _WHITESPACE.sub(' ', text).casefold()
    return any(phrase in lowered for phrase in REFUSAL_PHRASES)


def verify(response: str, ground_truth: str, alternates: Iterable[str] = ()) -> Verdict:
    """
    Compute the exact-match reward of a response

    Args:
        response: Full response text
        ground_truth: Canonical answer or the ABSTAIN sentinel
        alternates: Additional accepted answers for multi-answer tasks

    Returns:
        Verdict with reward 1 only for a normalized exact match
    """
    if not ground_truth or not ground_truth.strip():
        raise ValueError("Ground truth must be non-empty")

    expects_abstain = is_abstain(ground_truth)
    extracted = extract_boxed(response)

    if extracted is None:
        if expects_abstain and contains_refusal(response):
            return Verdict(None, 1, VerdictReason.ABSTAIN_MATCH)
        return Verdict(None, 0, VerdictReason.NO_BOX)

    if is_abstain(extracted):
        if expects_abstain:
            return Verdict(extracted, 1, VerdictReason.ABSTAIN_MATCH)
        return Verdict(extracted, 0, VerdictReason.ABSTAIN_MISMATCH)

    if expects_abstain:
        # A confident answer where the evidence is missing
        return Verdict(extracted, 0, VerdictReason.ABSTAIN_MISMATCH)

    accepted = {normalize_answer(ground_truth)}
    accepted.update(normalize_answer(alt) for alt in alternates)
    if normalize_answer(extracted) in accepted:
        return Verdict(extracted, 1, VerdictReason.MATCH)
    return Verdict(extracted, 0, VerdictReason.MISMATCH)
