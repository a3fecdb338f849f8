"""Command-line entry point: one subcommand per pipeline stage plus ``audit`` for the full chain."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import pipeline
from .config import PATH_KEYS, load_config
from .errors import ClientError, ConfigError, SchemaError, ValidationError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_INPUT = 2
EXIT_SCHEMA = 3
EXIT_CLIENT = 4

log = logging.getLogger("sidewalk_audit")


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()}
        if record.exc_info:
            doc["exc"] = self.formatException(record.exc_info)
        return json.dumps(doc, sort_keys=True)


def setup_logging(level: str = "info") -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("sidewalk_audit")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _param(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    common.add_argument("--mode", choices=("fixture", "live"), help="client mode (default: fixture)")
    common.add_argument("--workers", type=int)
    common.add_argument("-p", "--param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                        help="override any config parameter")
    common.add_argument("--log-level", default="info")
    for key in PATH_KEYS:
        common.add_argument(f"--{key.replace('_', '-')}", dest=key, type=Path)
    # stage inputs; default to the previous stage's output inside --out
    common.add_argument("--pois", dest="pois_csv", type=Path)
    common.add_argument("--traces", dest="traces_geojson", type=Path)
    common.add_argument("--coverage", dest="coverage_csv", type=Path)

    parser = argparse.ArgumentParser(prog="sidewalk-audit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("pois", "sample, fetch, dedup and categorize POIs per sector"),
        ("trace", "trace walkable segments around each POI"),
        ("coverage", "build street-view coverage grids and filter traced segments"),
        ("score", "score audited segments and aggregate to POI, sector and category"),
        ("guidance", "replay an event log and write the guidance shown"),
        ("rate", "descriptive and pairwise statistics for a ratings CSV"),
        ("audit", "run pois, trace, coverage, score and a guidance walk"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _run(args: argparse.Namespace) -> dict[str, Path]:
    overrides: dict[str, object] = {k: getattr(args, k) for k in PATH_KEYS}
    overrides.update(mode=args.mode, workers=args.workers)
    overrides.update(dict(args.param))
    cfg = load_config(args.config, overrides)
    out: Path = args.out
    pois = args.pois_csv or out / "pois.csv"
    traces = args.traces_geojson or out / "traces.geojson"
    coverage = args.coverage_csv or out / "coverage.csv"

    if args.command == "pois":
        return pipeline.run_pois(cfg, out)
    if args.command == "trace":
        _need(pois)
        return pipeline.run_trace(cfg, pois, out)
    if args.command == "coverage":
        _need(pois, traces)
        return pipeline.run_coverage(cfg, pois, traces, out)
    if args.command == "score":
        _need(pois, coverage)
        return pipeline.run_score(cfg, pois, coverage, out)
    if args.command == "guidance":
        return pipeline.run_guidance(cfg, out)
    if args.command == "rate":
        return pipeline.run_rate(cfg, out)
    return pipeline.run_audit(cfg, out)


def _need(*paths: Path) -> None:
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(str(p))


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        paths = _run(args)
    except FileNotFoundError as exc:
        missing = exc.filename if exc.filename is not None else (exc.args[0] if exc.args else exc)
        print(f"error: missing input file: {missing}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (SchemaError, ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ClientError as exc:
        print(f"error: client failure: {exc}", file=sys.stderr)
        return EXIT_CLIENT
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for name, path in sorted(paths.items()):
        print(f"{name}\t{path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
