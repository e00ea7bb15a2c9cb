"""
Shared option handling and exit-code mapping for the pipeline commands
"""
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from harness.config import ConfigurationError, RunConfig, load_run_config

logger = logging.getLogger(__name__)

CONFIG_ERROR_EXIT = 2
NUMERIC_ERROR_EXIT = 3


class PipelineCommand(BaseCommand):
    """Adds --config/--seed/--out-dir and maps failures to exit codes 2 and 3"""

    def add_arguments(self, parser):
        parser.add_argument('--config', default=None, help='JSON run configuration (unknown keys are rejected)')
        parser.add_argument('--seed', type=int, default=None, help='Overrides the configuration seed')
        parser.add_argument('--out-dir', default=None, help='Output directory (default: RLVR_OUTPUT_DIR/seed-<seed>)')

    def load_config(self, options) -> RunConfig:
        seed = options['seed']
        if seed is None and options['config'] is None:
            seed = settings.RLVR_DEFAULT_SEED
        return load_run_config(options['config'], seed)

    def out_dir(self, options, config: RunConfig) -> Path:
        path = Path(options['out_dir']) if options['out_dir'] else Path(settings.RLVR_OUTPUT_DIR) / f"seed-{config.seed}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def handle(self, *args, **options):
        try:
            config = self.load_config(options)
            self.run(config, self.out_dir(options, config), options)
        except (ConfigurationError, ValidationError) as e:
            logger.error(f"Configuration error: {str(e)}")
            raise CommandError(f"Configuration error: {e}", returncode=CONFIG_ERROR_EXIT)
        except (ArithmeticError, FloatingPointError) as e:
            logger.error(f"Numeric error: {str(e)}")
            raise CommandError(f"Numeric error: {e}", returncode=NUMERIC_ERROR_EXIT)

    def run(self, config: RunConfig, out_dir: Path, options):
        raise NotImplementedError
