import uuid
from django.db import models


class TrainingRun(models.Model):
    """One invocation of a training stage"""

    class Status(models.TextChoices):
        RUNNING = 'running', 'Running'
        COMPLETED = 'completed', 'Completed'
        FAILED = 'failed', 'Failed'

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    stage = models.CharField(max_length=20, db_index=True)
    status = models.CharField(max_length=20, choices=Status.choices, default=Status.RUNNING)
    seed = models.BigIntegerField(default=0)
    config = models.JSONField(default=dict)
    output_dir = models.CharField(max_length=500)
    checkpoint_path = models.CharField(max_length=500, blank=True)
    iterations_completed = models.IntegerField(default=0)
    final_metrics = models.JSONField(default=dict, blank=True)
    error_message = models.TextField(blank=True)

    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']
        indexes = [
            models.Index(fields=['stage', 'status'], name='harness_run_stage_status_idx'),
        ]

    def __str__(self):
        return f"{self.stage} seed={self.seed} ({self.status})"
