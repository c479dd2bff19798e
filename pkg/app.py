"""
RAAD Pipeline - Command-Line Entry Point

Runs one pipeline command (data generation, training, layer scoring, quantization,
fine-tuning, evaluation, heatmaps, bit sweep or a multi-seed run) against an output
directory laid out as data/, checkpoints/, reports/ and heatmaps/.
"""

import argparse
import sys
from typing import List, Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from config.Config import get_config
from config.Constants import EVAL_STAGES
from logs.logger import get_logger
from parsers.ConfigParser import parsePipelineConfig
from scheduler.PipelineRunner import PipelineRunner, with_stage_logging
from utils.errors import ConfigError, PipelineOrderError, RaadError

logger = get_logger(__name__)

COMMANDS = (
    "gen-data", "pretrain", "train", "score-layers", "quantize", "finetune",
    "eval", "heatmaps", "bitsweep", "run",
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ORDER = 3


def buildParser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raad", description="Run a RAAD pipeline command")
    parser.add_argument("command", choices=COMMANDS, help="Pipeline command to run")
    parser.add_argument("--config", help="JSON pipeline config (defaults when omitted)")
    parser.add_argument("--seed", type=int, help="Override the config seed")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--stage", choices=EVAL_STAGES, help="Restrict eval/heatmaps to one stage")
    parser.add_argument("--seeds", default="0,1,2", help="Comma-separated seeds for the run command")
    return parser


def parseSeeds(text: str) -> List[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError("--seeds", f"expected comma-separated integers, got {text!r}")
    if not seeds or any(seed < 0 for seed in seeds):
        raise ConfigError("--seeds", "needs at least one nonnegative seed")
    return seeds


def runCommand(args: argparse.Namespace) -> None:
    config = parsePipelineConfig(args.config)
    if args.seed is not None:
        config = config.withSeed(args.seed)
    outdir = args.out or config.outdir or get_config().OUTPUT_DIR
    logger.info(f"Runtime settings: {get_config().to_dict()}")
    runner = PipelineRunner(config, outdir)

    commands = {
        "gen-data": runner.cmdGenData,
        "pretrain": runner.cmdPretrain,
        "train": runner.cmdTrain,
        "score-layers": runner.cmdScoreLayers,
        "quantize": runner.cmdQuantize,
        "finetune": runner.cmdFinetune,
        "eval": lambda: runner.cmdEval(args.stage),
        "heatmaps": lambda: runner.cmdHeatmaps(args.stage),
        "bitsweep": runner.cmdBitSweep,
        "run": lambda: runner.cmdRun(parseSeeds(args.seeds)),
    }
    with_stage_logging(args.command, commands[args.command])


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and run one command.

    Returns:
        int: 0 on success, 2 for config errors, 3 for out-of-order commands, 1 for other pipeline errors
    """
    args = buildParser().parse_args(argv)
    try:
        runCommand(args)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG
    except PipelineOrderError as e:
        logger.error(f"Run the predecessor command first: {e}")
        return EXIT_ORDER
    except RaadError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
