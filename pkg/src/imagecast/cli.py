"""Command-line entry point.

Subcommands cover the pipeline end to end. Configuration comes from an
optional key=value file plus repeatable ``--set key=value`` overrides;
``print-config`` shows the effective result. Exit codes: 0 success,
1 runtime failure, 2 configuration or usage error. Failures emit a JSON
error summary on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    format_config,
    load_config,
    validate,
)

logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--corpus", help="shortcut for --set corpus=...")
    parser.add_argument("--metadata", help="shortcut for --set metadata=...")
    parser.add_argument("--work-dir", help="shortcut for --set work_dir=...")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imagecast",
        description="Time-series forecasting by image features and weighted model combination.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("featurize", "encode series and extract pooled feature vectors"),
        ("forecast", "run the forecasting pool on every training split"),
        ("train", "fit combination-weight models from features and forecasts"),
        ("evaluate", "score the combination against the pool on held-out tails"),
        ("plot", "write each series' encoded image"),
        ("project", "2-d PCA of the feature file"),
        ("print-config", "print the effective configuration"),
    ]:
        p = sub.add_parser(name, help=text)
        _add_common(p)
    return parser


def _load_effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.corpus:
        cfg.corpus = args.corpus
    if args.metadata:
        cfg.metadata = args.metadata
    if args.work_dir:
        cfg.work_dir = args.work_dir
    apply_overrides(cfg, args.overrides)
    return cfg


def _fail(exc: Exception, code: int) -> int:
    summary = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _load_effective_config(args)
    except (ConfigError, OSError) as exc:
        return _fail(exc, 2)

    if args.command == "print-config":
        sys.stdout.write(format_config(cfg))
        return 0

    try:
        validate(cfg)
    except ConfigError as exc:
        return _fail(exc, 2)

    try:
        if args.command == "featurize":
            manifest = pipeline.featurize(cfg)
            print(
                f"featurized {manifest['series_ok']} series "
                f"({manifest['descriptor_total']} descriptors, "
                f"dim {manifest['feature_dim']})"
            )
        elif args.command == "forecast":
            manifest = pipeline.forecast(cfg)
            print(f"wrote {manifest['rows']} forecast rows for {manifest['series_ok']} series")
        elif args.command == "train":
            manifest = pipeline.train_model(cfg)
            for label, entry in manifest["groups"].items():
                loss = entry.get("final_loss")
                loss_text = f"{loss:.6f}" if isinstance(loss, float) else "n/a"
                print(
                    f"group {label}: {entry['series']} series, "
                    f"{entry['rounds']} rounds, final loss {loss_text}"
                )
        elif args.command == "evaluate":
            report, manifest = pipeline.evaluate(cfg)
            for m in report.method_ids:
                print(f"{m}: total OWA {report.get('Total', m, 'owa'):.6f}")
            print(f"report written to {pipeline.work_path(cfg, pipeline.REPORT_FILE)}")
        elif args.command == "plot":
            manifest = pipeline.plot(cfg)
            print(f"wrote {len(manifest['images'])} images to {manifest['directory']}/")
        elif args.command == "project":
            manifest = pipeline.project(cfg)
            print(
                f"projected {manifest['series']} series "
                f"(explained variance {manifest['explained_variance']})"
            )
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        return _fail(exc, 2)
    except Exception as exc:
        logger.debug("command failed", exc_info=True)
        return _fail(exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
