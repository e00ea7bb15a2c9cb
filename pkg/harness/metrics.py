"""
Per-iteration metrics records and their NDJSON writers
"""
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional

from django.db import models

logger = logging.getLogger(__name__)


class Stage(models.TextChoices):
    STAGE1 = 'stage1', 'Stage-1 online GSPO'
    STAGE2 = 'stage2', 'Stage-2 offline DPO'


@dataclass(frozen=True)
class MetricsRecord:
    """
    One training iteration (Stage-1) or epoch (Stage-2)

    Every field is always written; fields that do not apply to a stage are null.
    """

    stage: str
    iteration: int
    loss: Optional[float] = None
    greedy_accuracy: Optional[float] = None
    mean_length: Optional[float] = None
    p95_length: Optional[float] = None
    informative_fraction: Optional[float] = None
    rho: Optional[float] = None
    mean_abs_advantage: Optional[float] = None
    distinct_count: Optional[float] = None
    phase: Optional[str] = None
    n_groups: Optional[int] = None
    n_drawn: Optional[int] = None
    n_degenerate: Optional[int] = None
    truncated_fraction: Optional[float] = None
    policy_version: Optional[int] = None
    preference_accuracy: Optional[float] = None
    held_out_accuracy: Optional[float] = None
    abstention_rate: Optional[float] = None

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, record: dict) -> 'MetricsRecord':
        names = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in record.items() if key in names})


def _round(value, digits: int = 12):
    return None if value is None else round(float(value), digits)


class MetricsWriter:
    """
    Appends metrics to <stem>_metrics.jsonl and wall-clock times to <stem>_timings.jsonl

    Timings live in their own file so the metrics file is a pure function of
    (config, seed).
    """

    def __init__(self, out_dir, stem: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.out_dir / f"{stem}_metrics.jsonl"
        self.timings_path = self.out_dir / f"{stem}_timings.jsonl"
        self.metrics_path.write_text('', encoding='utf-8')
        self.timings_path.write_text('', encoding='utf-8')
        self.records: List[MetricsRecord] = []

    def write(self, record: MetricsRecord, wall_clock_ms: float):
        if self.records and record.iteration != self.records[-1].iteration + 1:
            raise ValueError(
                f"Metrics iteration {record.iteration} does not follow {self.records[-1].iteration}"
            )
        payload = {
            key: (_round(value) if isinstance(value, float) else value)
            for key, value in record.to_record().items()
        }
        with self.metrics_path.open('a', encoding='utf-8') as handle:
            handle.write(json.dumps(payload, sort_keys=True) + '\n')
        with self.timings_path.open('a', encoding='utf-8') as handle:
            handle.write(json.dumps({
                'stage': record.stage,
                'iteration': record.iteration,
                'wall_clock_ms': round(wall_clock_ms, 3),
            }) + '\n')
        self.records.append(record)


def read_metrics(path) -> List[MetricsRecord]:
    records = []
    with Path(path).open('r', encoding='utf-8') as handle:
        for line in handle:
            if line.strip():
                records.append(MetricsRecord.from_record(json.loads(line)))
    return records
