"""Command-line entry point ``profilenet``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigError, DataError, NumericalError, ProfileNetError
from .pipeline import STAGES, PipelineConfig, PipelineError, run_stages

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="profilenet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--output-dir", type=Path, help="override the configured output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads within a stage")
    helps = {
        "fit-lpa": "sweep mixture models, select one, write sweep/classes/posteriors",
        "describe": "v-tests and membership correlations from classes.csv",
        "importance": "LMG importance of predictors for each profile",
        "network": "per-profile networks, centrality and bootstrap",
        "run-all": "every stage in sequence plus report.json",
    }
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=helps[name])
    ex = sub.add_parser("example", help="copy the bundled synthetic dataset and config")
    ex.add_argument("directory", type=Path)
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output_dir is not None:
        cfg.output_dir = str(args.output_dir)
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return cfg


def write_example(directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    data = resources.files("profilenet") / "data"
    for name in ("synthetic.csv", "synthetic.yaml"):
        target = directory / name
        with resources.as_file(data / name) as src:
            shutil.copyfile(src, target)
        out.append(target)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "example":
        for path in write_example(args.directory):
            print(path)
        return EXIT_OK
    try:
        cfg = _load_config(args)
        report = run_stages(cfg, args.command, n_jobs=args.threads)
    except (ProfileNetError, OSError) as exc:
        print(f"profilenet {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc) if isinstance(exc, ProfileNetError) else EXIT_DATA
    if report.selected is not None:
        K, param = report.selected
        print(f"selected model {param.number} with {K} profiles; sizes {report.class_sizes}")
    print(f"outputs written to {cfg.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
