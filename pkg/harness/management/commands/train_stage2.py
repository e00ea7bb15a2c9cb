from harness.metrics import Stage
from harness.pipeline import Stage2Trainer
from harness.registry import close_run, open_run

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Stage-2: offline reference-free DPO on preference pairs'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True, help='Stage-1 checkpoint')
        parser.add_argument('--pairs', default=None, help='Preference pairs (default: built from the config suite)')
        parser.add_argument('--tasks', default=None, help='Tasks referenced by the pairs (default: config suite)')

    def run(self, config, out_dir, options):
        run = open_run(Stage.STAGE2.value, config.to_dict(), config.seed, out_dir)
        try:
            trainer = Stage2Trainer.from_files(config, out_dir, options['checkpoint'], options['pairs'], options['tasks'])
            result = trainer.run()
        except Exception as e:
            close_run(run, error=e)
            raise
        close_run(run, result)
        final = result.final_metrics
        self.stdout.write(self.style.SUCCESS(
            f"Stage-2 finished after {result.iterations_completed - 1} epochs "
            f"(preference accuracy {final.get('preference_accuracy')}, "
            f"held-out {final.get('held_out_accuracy')}) -> {result.checkpoint_path}"
        ))
