from django.core.management.base import CommandError

from harness.reporting import report_paths

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Render metrics streams into CSV or XLSX summaries'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--metrics', nargs='+', default=None, help='Metrics files (default: *_metrics.jsonl in --out-dir)')
        parser.add_argument('--format', choices=['csv', 'xlsx'], default='csv')

    def run(self, config, out_dir, options):
        paths = options['metrics'] or sorted(out_dir.glob('*_metrics.jsonl'))
        if not paths:
            raise CommandError(f"No metrics files found in {out_dir}")
        for path in report_paths(options['format'], paths, out_dir):
            self.stdout.write(self.style.SUCCESS(f"Wrote {path}"))
