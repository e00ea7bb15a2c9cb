"""
Optional run registry backed by the TrainingRun model

Database problems are logged and never abort a training run.
"""
import logging
from typing import Optional

from django.conf import settings
from django.db import DatabaseError
from django.utils import timezone

from .models import TrainingRun

logger = logging.getLogger(__name__)


def open_run(stage: str, config_data: dict, seed: int, output_dir) -> Optional[TrainingRun]:
    if not settings.RLVR_RECORD_RUNS:
        return None
    try:
        return TrainingRun.objects.create(stage=stage, seed=seed, config=config_data, output_dir=str(output_dir))
    except DatabaseError as e:
        logger.warning(f"Could not record {stage} run: {str(e)}")
        return None


def close_run(run: Optional[TrainingRun], result=None, error: Optional[Exception] = None):
    if run is None:
        return
    try:
        if error is not None:
            run.status = TrainingRun.Status.FAILED
            run.error_message = str(error)
        else:
            run.status = TrainingRun.Status.COMPLETED
            run.checkpoint_path = str(result.checkpoint_path)
            run.iterations_completed = result.iterations_completed
            run.final_metrics = result.final_metrics
        run.finished_at = timezone.now()
        run.save()
    except DatabaseError as e:
        logger.warning(f"Could not update run {run.id}: {str(e)}")
