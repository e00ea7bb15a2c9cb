"""
Curation report records ({task_id, decision, tier, match_rate} per line)
"""
import logging
from typing import Iterable, List, NamedTuple, Optional

from django.db import models

from taskforge.records import Tier
from taskforge.storage import read_ndjson, write_ndjson

from .screening import ScreenResult

logger = logging.getLogger(__name__)


class CurationDecision(models.TextChoices):
    CLEAN = 'clean'
    LEAKED = 'leaked'
    KEPT = 'kept'
    DROPPED_ALL_CORRECT = 'dropped_all_correct'
    DROPPED_ALL_WRONG = 'dropped_all_wrong'


class CurationRecord(NamedTuple):
    task_id: str
    decision: CurationDecision
    tier: Tier = Tier.UNKNOWN
    match_rate: Optional[float] = None

    @classmethod
    def from_screen(cls, result: ScreenResult, tier: Tier = Tier.UNKNOWN) -> 'CurationRecord':
        return cls(result.task_id, CurationDecision(result.decision.value), tier, result.match_rate)

    def to_record(self) -> dict:
        return {
            'task_id': self.task_id,
            'decision': CurationDecision(self.decision).value,
            'tier': Tier(self.tier).value,
            'match_rate': self.match_rate,
        }

    @classmethod
    def from_record(cls, record: dict) -> 'CurationRecord':
        return cls(
            task_id=record['task_id'],
            decision=CurationDecision(record['decision']),
            tier=Tier(record.get('tier', Tier.UNKNOWN)),
            match_rate=record.get('match_rate'),
        )


def write_curation_report(path, records: Iterable[CurationRecord]) -> int:
    count = write_ndjson(path, (record.to_record() for record in records))
    logger.info(f"Wrote {count} curation records to {path}")
    return count


def read_curation_report(path) -> List[CurationRecord]:
    return [CurationRecord.from_record(record) for record in read_ndjson(path)]


def leaked_task_ids(records: Iterable[CurationRecord]) -> frozenset:
    return frozenset(r.task_id for r in records if r.decision == CurationDecision.LEAKED)
