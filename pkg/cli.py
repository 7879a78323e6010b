import argparse
import logging
import sys
from typing import List, Optional

from src.controllers import EvaluationController, PipelineController, TrainingController
from src.utilities.config import CONFIG_ONLY_KEYS, PROFILES, THREADS_ENV, RunConfig, resolve_run_config
from src.utilities.errors import PointSegError, UsageError
from src.utilities.kernels import set_num_threads

DEFAULTS = RunConfig()
CONFIG_EPILOG = (f"a --config file also accepts every flag name as a key, plus {', '.join(CONFIG_ONLY_KEYS)} "
                 "(see README.md for their values)")


class CommandParser(argparse.ArgumentParser):
    """ArgumentParser that reports bad usage as a UsageError (exit code 1)."""

    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}")


def _common(sub: argparse.ArgumentParser, input_help: str, output_help: str) -> None:
    sub.add_argument('-i', "--input", type=str, default=None, help=input_help)
    sub.add_argument('-o', "--output", type=str, default=None, help=output_help)
    sub.add_argument("--checkpoint", type=str, default=None,
                     help='PSEG checkpoint (default: none, random weights from --seed)')
    sub.add_argument("--profile", type=str, default=None, choices=sorted(PROFILES),
                     help=f'frame and graph size (default: {DEFAULTS.profile})')
    sub.add_argument("--seed", type=int, default=None, help=f'random seed (default: {DEFAULTS.seed})')
    sub.add_argument("--threads", type=int, default=None,
                     help=f'kernel threads, else the config file, else ${THREADS_ENV} (default: {DEFAULTS.threads})')
    sub.add_argument("--config", type=str, default=None,
                     help='key = value config file, overridden by flags (default: none)')
    sub.add_argument('-v', "--verbose", action='store_true', help='debug logging (default: off)')


def _ransac_flag(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--ransac", action='store_true', default=None,
                     help='refine labels with RANSAC ground removal (default: off)')


def _synthetic_flag(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--synthetic", type=int, default=None,
                     help=f'use N generated scenes instead of --input (default: {DEFAULTS.synthetic})')


def build_parser() -> CommandParser:
    parser = CommandParser(prog="pointseg", description="LiDAR road-object segmentation on spherical range images",
                           epilog=CONFIG_EPILOG)
    commands = parser.add_subparsers(dest='command', help='Available functionalities', required=True)

    project_arg = commands.add_parser('project', help='project a .bin scan into a frame array and range preview',
                                      epilog=CONFIG_EPILOG)
    _common(project_arg, 'Path to the input .bin scan', 'Output path stem (writes .npy and .png)')

    train_arg = commands.add_parser('train', help='train on a frame directory, logging loss to a CSV',
                                    epilog=CONFIG_EPILOG)
    _common(train_arg, 'Directory of .npy frames', 'Path of the checkpoint to write')
    train_arg.add_argument("--steps", type=int, default=None, help=f'optimizer steps (default: {DEFAULTS.steps})')
    train_arg.add_argument("--lr", type=float, default=None, help=f'Adagrad learning rate (default: {DEFAULTS.lr})')
    train_arg.add_argument("--batch", type=int, default=None, help=f'frames per step (default: {DEFAULTS.batch})')
    _synthetic_flag(train_arg)

    infer_arg = commands.add_parser('infer', help='segment a frame or scan',
                                    epilog=CONFIG_EPILOG)
    _common(infer_arg, 'Path to a .npy frame or .bin scan', 'Output path stem (writes .ppm and .txt)')
    _ransac_flag(infer_arg)

    eval_arg = commands.add_parser('eval', help='per-class precision, recall and IoU over the validation frames',
                                   epilog=CONFIG_EPILOG)
    _common(eval_arg, 'Directory of .npy frames', 'Directory for report.txt and report.csv')
    _ransac_flag(eval_arg)
    _synthetic_flag(eval_arg)

    bench_arg = commands.add_parser('bench', help='per-stage latency percentiles',
                                    epilog=CONFIG_EPILOG)
    _common(bench_arg, 'Path to a .npy frame or .bin scan', 'Optional CSV path for the timings')
    bench_arg.add_argument("--iterations", type=int, default=None,
                           help=f'timed iterations (default: {DEFAULTS.iterations})')
    bench_arg.add_argument("--warmup", type=int, default=None,
                           help=f'untimed warmup iterations (default: {DEFAULTS.warmup})')
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def dispatch(config: RunConfig):
    if config.command == 'project':
        return PipelineController(config).project_scan()
    if config.command == 'train':
        return TrainingController(config).train()
    if config.command == 'infer':
        return PipelineController(config).infer()
    if config.command == 'eval':
        return EvaluationController(config).evaluate()
    return PipelineController(config).bench()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) == 0:
        parser.print_help()
        return 1
    try:
        args = parser.parse_args(argv)
        configure_logging(args.verbose)
        config = resolve_run_config(args.command, vars(args))
        set_num_threads(config.threads)
    except PointSegError as e:
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code

    ack = dispatch(config)
    if ack[0]:
        print(ack[1])
        return 0
    print(f"error occurred -> {ack[2].message}", file=sys.stderr)
    return ack[2].exit_code


if __name__ == '__main__':
    sys.exit(main())
