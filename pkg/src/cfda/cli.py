"""Command-line driver.

    cfda all --config run.toml
    cfda pca --config run.toml --input curves.csv --sex men
    cfda fixture out/fixture

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import pipeline, synthetic
from .errors import CfdaError, PartialAgeCoverage

log = logging.getLogger("cfda.cli")

STAGE_NAMES = ("ingest", "smooth", "pca", "cluster", "plot", "all")


def _add_common(p):
    p.add_argument("--config", type=Path, help="TOML pipeline configuration")
    p.add_argument("--data", type=Path, action="append", help="input death-count CSV (repeatable)")
    p.add_argument("--output", type=Path)
    p.add_argument("--sex", choices=("men", "women", "both"))
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--sigma", type=float)
    p.add_argument("--B", type=int, dest="B")
    p.add_argument("--g-range", nargs=2, type=int, metavar=("LO", "HI"))
    p.add_argument("--master-seed", type=int)
    p.add_argument("--silhouette-literal", action="store_true", default=None)
    p.add_argument("--unsquared", action="store_true", help="use plain distances in the silhouette")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfda", description="Compositional functional data analysis of cause-of-death mortality")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_NAMES:
        p = sub.add_parser(name)
        _add_common(p)
        if name in ("pca", "cluster"):
            p.add_argument("--input", type=Path, help="read this CSV instead of the upstream stage output")
    fx = sub.add_parser("fixture", help="write the synthetic six-country fixture and a matching config")
    fx.add_argument("directory", type=Path)
    fx.add_argument("--seed", type=int, default=2024)
    return parser


def make_config(args) -> pipeline.PipelineConfig:
    overrides = {}
    for key in ("output", "sex", "K", "sigma", "B", "master_seed"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.data:
        overrides["data"] = args.data
    if args.g_range:
        overrides["g_range"] = tuple(range(args.g_range[0], args.g_range[1] + 1))
    if args.silhouette_literal:
        overrides["silhouette_literal"] = True
    if args.unsquared:
        overrides["silhouette_squared"] = False
    if args.config:
        return pipeline.PipelineConfig.load(args.config, **overrides)
    return pipeline.PipelineConfig(**overrides)


def write_fixture(directory: Path, seed: int = 2024) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    synthetic.write_who_fixture(directory / "deaths.csv", seed=seed)
    (directory / "format.toml").write_text(synthetic.fixture_format_toml())
    countries = ", ".join(f'"{c}"' for c in synthetic.FIXTURE_COUNTRIES)
    (directory / "config.toml").write_text(
        "[paths]\n"
        'data = ["deaths.csv"]\n'
        'format = "format.toml"\n'
        'output = "out"\n\n'
        "[analysis]\n"
        f"countries = [{countries}]\n"
        "K = 4\n"
        "B = 200\n"
        "g_range = [2, 4]\n"
        "master_seed = 7\n"
    )
    return directory / "config.toml"


def _report(stage, exc):
    report = {"stage": stage, "error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
    print(json.dumps(report), file=sys.stderr)
    return exc.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fixture":
        path = write_fixture(args.directory, args.seed)
        print(path)
        return 0
    try:
        cfg = make_config(args)
    except CfdaError as exc:
        return _report("config", exc)
    except (TypeError, ValueError) as exc:
        print(json.dumps({"stage": "config", "error": type(exc).__name__, "message": str(exc), "exit_code": 2}),
              file=sys.stderr)
        return 2
    stages = list(pipeline.STAGES) if args.command == "all" else [args.command]
    written = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PartialAgeCoverage)
        for stage in stages:
            log.info("stage %s", stage)
            try:
                if stage in ("pca", "cluster") and getattr(args, "input", None):
                    written += pipeline.STAGES[stage](cfg, args.input)
                else:
                    written += pipeline.STAGES[stage](cfg)
            except CfdaError as exc:
                return _report(stage, exc)
    if args.command == "all":
        print(pipeline.write_manifest(cfg, written))
    else:
        for p in written:
            print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
