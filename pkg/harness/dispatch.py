"""
Rollout fan-out: inline for one worker, a Celery group otherwise
"""
import base64
import logging
from typing import List, NamedTuple, Sequence

from celery import group

from policy.checkpoint import from_bytes, to_bytes
from policy.engine import PolicyParams, RedundancyConfig, Rollout, sample
from policy.vocabulary import Vocabulary
from taskforge.records import Task

logger = logging.getLogger(__name__)


class RolloutRequest(NamedTuple):
    task: Task
    seed: int


def run_chunk(params: PolicyParams, vocabulary: Vocabulary, requests: Sequence[RolloutRequest],
              max_len: int, temperature: float, redundancy: RedundancyConfig) -> List[Rollout]:
    return [
        sample(
            params, request.task, max_len, temperature, request.seed,
            redundancy=redundancy,
            detokenize=vocabulary.detokenize,
            eos_id=vocabulary.eos_id,
        )
        for request in requests
    ]


def encode_chunk(params: PolicyParams, modulus: int, requests: Sequence[RolloutRequest],
                 max_len: int, temperature: float, redundancy: RedundancyConfig) -> dict:
    return {
        'checkpoint': base64.b64encode(to_bytes(params)).decode('ascii'),
        'modulus': modulus,
        'tasks': [request.task.to_record() for request in requests],
        'seeds': [str(request.seed) for request in requests],
        'max_len': max_len,
        'temperature': temperature,
        'redundancy_window': redundancy.window,
        'redundancy_max_repeats': redundancy.max_repeats,
    }


def decode_and_run_chunk(payload: dict) -> List[dict]:
    params = from_bytes(base64.b64decode(payload['checkpoint']))
    requests = [
        RolloutRequest(Task.from_record(record), int(seed))
        for record, seed in zip(payload['tasks'], payload['seeds'])
    ]
    rollouts = run_chunk(
        params,
        Vocabulary.for_modulus(payload['modulus']),
        requests,
        payload['max_len'],
        payload['temperature'],
        RedundancyConfig(payload['redundancy_window'], payload['redundancy_max_repeats']),
    )
    return [rollout.to_payload() for rollout in rollouts]


class RolloutDispatcher:
    """
    Generates rollouts in request order

    Every request carries its own seed, so the output does not depend on the
    worker count.
    """

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ValueError(f"Worker count must be >= 1, got {workers}")
        self.workers = workers

    def generate(self, params: PolicyParams, vocabulary: Vocabulary, modulus: int,
                 requests: Sequence[RolloutRequest], max_len: int, temperature: float,
                 redundancy: RedundancyConfig) -> List[Rollout]:
        if not requests:
            return []
        if self.workers == 1 or len(requests) == 1:
            return run_chunk(params, vocabulary, requests, max_len, temperature, redundancy)

        from .tasks import generate_rollout_chunk

        size = -(-len(requests) // self.workers)
        chunks = [requests[i:i + size] for i in range(0, len(requests), size)]
        job = group(
            generate_rollout_chunk.s(encode_chunk(params, modulus, chunk, max_len, temperature, redundancy))
            for chunk in chunks
        )
        results = [result.get(disable_sync_subtasks=False) for result in job.apply_async().results]

        rollouts = []
        for result in results:
            if result.get('status') != 'success':
                raise RuntimeError(f"Rollout chunk failed: {result.get('error')}")
            rollouts.extend(Rollout.from_payload(payload) for payload in result['rollouts'])
        logger.debug(f"Generated {len(rollouts)} rollouts over {len(chunks)} chunks")
        return rollouts
