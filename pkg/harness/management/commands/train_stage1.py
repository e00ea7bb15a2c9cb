from django.conf import settings

from harness.metrics import Stage
from harness.pipeline import Stage1Trainer
from harness.registry import close_run, open_run

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Stage-1: online GSPO with phase-switched hybrid rewards'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--workers', type=int, default=None, help='Rollout workers (default: RLVR_WORKERS)')

    def run(self, config, out_dir, options):
        workers = options['workers'] or settings.RLVR_WORKERS
        run = open_run(Stage.STAGE1.value, config.to_dict(), config.seed, out_dir)
        try:
            result = Stage1Trainer(config, out_dir, workers=workers).run()
        except Exception as e:
            close_run(run, error=e)
            raise
        close_run(run, result)
        accuracy = result.final_metrics.get('greedy_accuracy')
        self.stdout.write(self.style.SUCCESS(
            f"Stage-1 finished after {result.iterations_completed} iterations "
            f"(greedy accuracy {accuracy}) -> {result.checkpoint_path}"
        ))
