import argparse
import json
import logging
import os
import sys

from pydantic import ValidationError

# Add the current directory to Python path so we can import our modules
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config import config
from exceptions import QsdLabError
from services.experiment_service import ExperimentService

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_IO = 5


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Run one QSD / traveling-wave experiment described by a JSON config document"
    )
    parser.add_argument("config", help="path to the experiment config (JSON)")
    parser.add_argument("--out", default=None, help="output directory (overrides outputs.directory)")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="logging level (default from QSDLAB_LOG_LEVEL)")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    try:
        experiment = ExperimentService.load_config(args.config)
    except (ValidationError, json.JSONDecodeError) as e:
        logger.error(f"❌ Invalid config {args.config}: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"❌ Cannot read config {args.config}: {e}")
        return EXIT_IO

    try:
        logger.info(f"🚀 Starting {experiment.command}...")
        manifest = ExperimentService().run(experiment, args.out)
        logger.info(f"✅ {experiment.command} completed in {manifest.wall_time_seconds:.2f}s, {len(manifest.files)} files")
        return 0
    except ValidationError as e:
        logger.error(f"❌ Invalid parameters: {e}")
        return EXIT_CONFIG
    except QsdLabError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ I/O error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
