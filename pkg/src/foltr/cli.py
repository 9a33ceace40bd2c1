"""Command line entry point: ``foltr run|grid|charts|synth|validate``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, ExperimentConfig, config_from_dict
from .data import dump_letor
from .experiment import load_grid, output_dir, resolve_paths, run_grid
from .synthetic import separable_dataset

log = logging.getLogger("foltr")

_CONFIG_FIELDS = [f for f in dataclasses.fields(ExperimentConfig) if f.name != "dataset"]


def _yaml_value(text: str):
    return yaml.safe_load(text)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("experiment settings (override the config file)")
    for f in _CONFIG_FIELDS:
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=_yaml_value, default=None,
                           metavar=f.name.upper())
    data = p.add_argument_group("dataset")
    data.add_argument("--train", help="LETOR training file (requires --test)")
    data.add_argument("--test", help="LETOR test file")
    data.add_argument("--data", dest="path", help="single LETOR file, split by --test-fraction")
    data.add_argument("--test-fraction", type=float)
    data.add_argument("--split-seed", type=int)
    data.add_argument("--grade-levels", type=int, choices=(3, 5))
    data.add_argument("--dataset-name", dest="name")
    data.add_argument("--synthetic", type=_yaml_value, metavar="YAML",
                      help="generate separable synthetic data, e.g. '{n_queries: 200}'")
    data.add_argument("--no-normalize", action="store_true")


def _raw_config(args) -> dict:
    raw = {}
    if args.config:
        raw = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        raw.pop("grid", None)
        if isinstance(raw.get("dataset"), dict):
            raw["dataset"] = resolve_paths(raw["dataset"], Path(args.config).parent)
    for f in _CONFIG_FIELDS:
        value = getattr(args, f.name)
        if value is not None:
            raw[f.name] = value
    ds_overrides = {k: getattr(args, k) for k in ("train", "test", "path", "test_fraction", "split_seed",
                                                   "grade_levels", "name")
                    if getattr(args, k) is not None}
    if args.synthetic is not None:
        ds_overrides["synthetic"] = args.synthetic or {}
    if args.no_normalize:
        ds_overrides["normalize"] = False
    if ds_overrides:
        ds = dict(raw.get("dataset") or {})
        if {"train", "path", "synthetic"} & set(ds_overrides):
            for key in ("train", "test", "path", "synthetic"):
                ds.pop(key, None)
        ds.update(ds_overrides)
        raw["dataset"] = ds
    return raw


def _finish(result, out: Path, charts: bool) -> int:
    for row in result.summary:
        delta = row["baseline_delta"]
        delta_s = "" if delta == "" else f"  delta {delta:+.4f}"
        print(f"{row['dataset']:>12} {row['click_model']:>13} {row['attack']:>11} {row['defense']:>12} "
              f"m={row['m']}  nDCG@10 {row['mean_final_ndcg']:.4f} ± {row['std_final_ndcg']:.4f}{delta_s}")
    if charts and result.merged_csv is not None:
        from .plotting import emit_charts

        for path in emit_charts([result.merged_csv], out / "charts"):
            log.info("wrote %s", path)
    for cell in result.failures:
        print(f"FAILED {cell.config.fingerprint()}: {cell.error}", file=sys.stderr)
    print(f"results in {out}")
    return result.exit_code


def cmd_run(args) -> int:
    cfg = config_from_dict(_raw_config(args))
    out = output_dir(cfg.output)
    return _finish(run_grid([cfg], out, trace=args.trace), out, not args.no_charts)


def cmd_grid(args) -> int:
    configs = load_grid(args.config)
    if args.output:
        configs = [c.replace(output=args.output) for c in configs]
    out = output_dir(configs[0].output)
    log.info("grid has %d configurations", len(configs))
    return _finish(run_grid(configs, out, trace=args.trace), out, not args.no_charts)


def cmd_charts(args) -> int:
    from .plotting import emit_charts

    for path in emit_charts(args.csv, args.output):
        print(path)
    return 0


def cmd_synth(args) -> int:
    ds = separable_dataset(args.queries, args.docs, args.features, args.grades, args.seed)
    Path(args.out).write_text(dump_letor(ds), encoding="utf-8")
    print(f"wrote {len(ds)} queries to {args.out}")
    return 0


def cmd_validate(args) -> int:
    for cfg in load_grid(args.config):
        print(json.dumps({"fingerprint": cfg.fingerprint(), **cfg.to_dict()}, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foltr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration (all repeats)")
    p.add_argument("config", nargs="?", help="YAML config file")
    _add_config_flags(p)
    p.add_argument("--trace", action="store_true", help="write per-round JSONL traces")
    p.add_argument("--no-charts", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="run the grid described by a config's 'grid' block")
    p.add_argument("config")
    p.add_argument("--output", "-o")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--no-charts", action="store_true")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("charts", help="render nDCG@10 charts from metric CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--output", "-o", default="charts")
    p.set_defaults(func=cmd_charts)

    p = sub.add_parser("synth", help="write a synthetic separable LETOR file")
    p.add_argument("out")
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--docs", type=int, default=10)
    p.add_argument("--features", type=int, default=5)
    p.add_argument("--grades", type=int, default=5, choices=(3, 5))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="expand and validate a config, printing each resolved cell")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
