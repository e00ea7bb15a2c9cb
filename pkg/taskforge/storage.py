"""
Newline-delimited JSON persistence for task sets and preference pairs
"""
import json
import logging
from pathlib import Path
from typing import Iterable, List, Union

from .records import PreferencePair, Task

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def write_ndjson(path: PathLike, records: Iterable[dict]) -> int:
    """Write one JSON object per line (UTF-8) and return the record count"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open('w', encoding='utf-8') as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + '\n')
            count += 1
    return count


def read_ndjson(path: PathLike) -> List[dict]:
    records = []
    with Path(path).open('r', encoding='utf-8') as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_no}: invalid JSON record ({e})") from e
    return records


def write_tasks(path: PathLike, tasks: Iterable[Task]) -> int:
    count = write_ndjson(path, (task.to_record() for task in tasks))
    logger.info(f"Wrote {count} tasks to {path}")
    return count


def read_tasks(path: PathLike) -> List[Task]:
    return [Task.from_record(record) for record in read_ndjson(path)]


def write_pairs(path: PathLike, pairs: Iterable[PreferencePair]) -> int:
    count = write_ndjson(path, (pair.to_record() for pair in pairs))
    logger.info(f"Wrote {count} preference pairs to {path}")
    return count


def read_pairs(path: PathLike) -> List[PreferencePair]:
    return [PreferencePair.from_record(record) for record in read_ndjson(path)]
