"""
Celery tasks for rollout generation and whole-stage training jobs
"""
import logging

from celery import shared_task

from .dispatch import decode_and_run_chunk

logger = logging.getLogger(__name__)


@shared_task
def generate_rollout_chunk(payload):
    """Sample one chunk of rollouts from a serialized policy snapshot"""
    try:
        rollouts = decode_and_run_chunk(payload)
        return {'status': 'success', 'rollouts': rollouts}
    except Exception as e:
        logger.error(f"Rollout chunk failed: {str(e)}")
        return {'status': 'error', 'error': str(e)}


@shared_task
def run_stage1_job(config_data, out_dir, workers=1):
    """Run Stage-1 from a configuration document"""
    from .config import parse_run_config
    from .pipeline import run_stage1

    try:
        config = parse_run_config(config_data)
        result = run_stage1(config, out_dir, workers=workers)
        return {
            'status': 'success',
            'checkpoint': str(result.checkpoint_path),
            'iterations': result.iterations_completed,
            'final_metrics': result.final_metrics,
        }
    except Exception as e:
        logger.error(f"Stage-1 job failed: {str(e)}")
        return {'status': 'error', 'error': str(e)}


@shared_task
def run_stage2_job(config_data, out_dir, checkpoint_path, pairs_path=None, tasks_path=None):
    """Run Stage-2 DPO on a Stage-1 checkpoint"""
    from .config import parse_run_config
    from .pipeline import run_stage2

    try:
        config = parse_run_config(config_data)
        result = run_stage2(config, out_dir, checkpoint_path, pairs_path, tasks_path)
        return {
            'status': 'success',
            'checkpoint': str(result.checkpoint_path),
            'epochs': config.stage2.epochs,
            'final_metrics': result.final_metrics,
        }
    except Exception as e:
        logger.error(f"Stage-2 job failed: {str(e)}")
        return {'status': 'error', 'error': str(e)}
