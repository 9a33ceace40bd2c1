"""Experiment grids: seeded repeats, per-cell CSV files, a merged CSV and a summary table."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, ExperimentConfig, config_from_dict, load_datasets
from .federation import run_experiment

log = logging.getLogger(__name__)

CSV_HEADER = ["round", "ndcg_at_10", "dataset", "click_model", "attack", "knowledge", "defense", "n", "m", "seed", "repeat"]
SUMMARY_HEADER = [
    "dataset", "click_model", "attack", "knowledge", "defense", "n", "m",
    "repeats", "mean_final_ndcg", "std_final_ndcg", "baseline_delta",
]
OUTPUT_ENV = "FOLTR_OUTPUT_DIR"
_FANG_TARGETS = {"fang_krum": ("krum", "multi_krum"), "fang_trmean": ("trimmed_mean", "median")}


def output_dir(cfg_output: str | os.PathLike) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg_output)


def repeat_seed(cfg: ExperimentConfig, repeat: int) -> int:
    return cfg.seed + repeat


def cell_key(cfg: ExperimentConfig) -> tuple:
    return (cfg.dataset_name, cfg.click_model_name, cfg.attack, cfg.knowledge, cfg.aggregator, cfg.n, cfg.m)


def cell_filename(cfg: ExperimentConfig) -> str:
    parts = [str(p) for p in cell_key(cfg)]
    parts[-1] = f"m{parts[-1]}"
    parts[-2] = f"n{parts[-2]}"
    return "__".join(parts + [cfg.fingerprint()]) + ".csv"


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class CellResult:
    config: ExperimentConfig
    csv_path: Path | None = None
    finals: list[float] = field(default_factory=list)
    error: str | None = None


@dataclass
class GridResult:
    cells: list[CellResult]
    merged_csv: Path | None
    summary_csv: Path | None
    summary: list[dict]

    @property
    def failures(self) -> list[CellResult]:
        return [c for c in self.cells if c.error is not None]

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def run_cell(cfg: ExperimentConfig, out: Path, datasets=None, trace: bool = False) -> CellResult:
    """All repeats of one configuration, written to a single CSV."""
    datasets = datasets if datasets is not None else load_datasets(cfg)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    finals = []
    trace_fh = open(out / (cell_filename(cfg)[:-4] + ".trace.jsonl"), "w") if trace else None
    try:
        for r in range(cfg.repeats):
            seed = repeat_seed(cfg, r)

            def sink(t, seed=seed, r=r):
                trace_fh.write(json.dumps({"seed": seed, "repeat": r, **t.summary()}, default=float) + "\n")

            records = run_experiment(cfg, seed=seed, datasets=datasets, on_trace=sink if trace_fh else None)
            for rec in records:
                writer.writerow([
                    rec.round, _fmt(rec.ndcg_at_10), cfg.dataset_name, cfg.click_model_name, cfg.attack,
                    cfg.knowledge, cfg.aggregator, cfg.n, cfg.m, seed, r,
                ])
            finals.append(float(np.mean([rec.ndcg_at_10 for rec in records[-cfg.final_window :]])))
    finally:
        if trace_fh:
            trace_fh.close()
    path = out / cell_filename(cfg)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return CellResult(cfg, path, finals)


def summarize(cells: list[CellResult]) -> list[dict]:
    """Mean and std of final-window nDCG per cell, with the delta to the matching honest FedAvg cell."""
    done = [c for c in cells if c.error is None and c.finals]
    baselines = {}
    for c in done:
        cfg = c.config
        if cfg.attack == "none" and cfg.aggregator == "fedavg":
            baselines.setdefault((cfg.dataset_name, cfg.click_model_name, cfg.model, cfg.n), float(np.mean(c.finals)))
    rows = []
    for c in done:
        cfg = c.config
        mean = float(np.mean(c.finals))
        base = baselines.get((cfg.dataset_name, cfg.click_model_name, cfg.model, cfg.n))
        rows.append({
            "dataset": cfg.dataset_name,
            "click_model": cfg.click_model_name,
            "attack": cfg.attack,
            "knowledge": cfg.knowledge,
            "defense": cfg.aggregator,
            "n": cfg.n,
            "m": cfg.m,
            "repeats": len(c.finals),
            "mean_final_ndcg": mean,
            "std_final_ndcg": float(np.std(c.finals)),
            "baseline_delta": "" if base is None else mean - base,
        })
    return rows


def write_summary(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, SUMMARY_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in row.items()})


def run_grid(configs: list[ExperimentConfig], out: str | os.PathLike | None = None, trace: bool = False) -> GridResult:
    """Run every configuration; failures are recorded and the rest still run."""
    if not configs:
        raise ValueError("empty grid")
    out = output_dir(out if out is not None else configs[0].output)
    out.mkdir(parents=True, exist_ok=True)
    cache: dict[str, tuple] = {}
    cells = []
    for cfg in configs:
        key = json.dumps(cfg.dataset, sort_keys=True, default=str)
        try:
            if key not in cache:
                cache[key] = load_datasets(cfg)
            cell = run_cell(cfg, out, cache[key], trace=trace)
            log.info("finished %s: final nDCG %s", cell.csv_path.name, np.round(cell.finals, 4).tolist())
        except Exception as exc:  # noqa: BLE001 - one failed cell must not stop the grid
            log.error("config %s failed: %s", cfg.fingerprint(), exc)
            cell = CellResult(cfg, error=f"{type(exc).__name__}: {exc}")
        cells.append(cell)

    merged = None
    written = [c.csv_path for c in cells if c.csv_path is not None]
    if written:
        merged = out / "metrics.csv"
        merge_csvs(written, merged)
    summary = summarize(cells)
    summary_path = out / "summary.csv"
    write_summary(summary, summary_path)
    if any(c.error for c in cells):
        with open(out / "failures.txt", "w", encoding="utf-8") as fh:
            for c in cells:
                if c.error:
                    fh.write(f"{c.config.fingerprint()}\t{c.error}\n")
    return GridResult(cells, merged, summary_path, summary)


def merge_csvs(paths, dest: Path) -> None:
    with open(dest, "w", encoding="utf-8", newline="") as out:
        out.write(",".join(CSV_HEADER) + "\n")
        for p in paths:
            lines = Path(p).read_text(encoding="utf-8").splitlines(keepends=True)
            if not lines or lines[0].strip() != ",".join(CSV_HEADER):
                raise ValueError(f"{p}: unexpected CSV header")
            out.writelines(lines[1:])


def expand_grid(base: dict, axes: dict, baseline: bool = True, check_files: bool = True) -> list[ExperimentConfig]:
    """Cartesian product of ``axes`` over ``base``.

    Honest cells are collapsed to ``m = 0``, Fang attacks are only paired
    with the rules they target, and with ``baseline`` an honest FedAvg cell
    is added for every (dataset, click model) the grid touches.
    """
    names = list(axes)
    seen = set()
    configs = []

    def add(raw):
        cfg = config_from_dict(raw, check_files=check_files)
        if cfg.fingerprint() not in seen:
            seen.add(cfg.fingerprint())
            configs.append(cfg)

    for values in itertools.product(*(axes[k] for k in names)):
        raw = {**base, **dict(zip(names, values))}
        if raw.get("attack", "none") == "none":
            raw["m"] = 0
        targets = _FANG_TARGETS.get(raw.get("attack"))
        if targets and raw.get("aggregator", "fedavg") not in targets:
            continue
        try:
            if baseline:
                add({**raw, "attack": "none", "m": 0, "aggregator": "fedavg"})
            add(raw)
        except ConfigError as exc:
            log.warning("skipping grid cell %s: %s", dict(zip(names, values)), "; ".join(exc.problems))
    return configs


def load_grid(path: str | os.PathLike, check_files: bool = True) -> list[ExperimentConfig]:
    """Read a YAML config; an optional ``grid`` block maps config keys to lists of values."""
    path = Path(path)
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    axes = raw.pop("grid", None) or {}
    baseline = bool(axes.pop("baseline", True)) if isinstance(axes, dict) else True
    if isinstance(raw.get("dataset"), dict):
        raw["dataset"] = resolve_paths(raw["dataset"], path.parent)
    if isinstance(axes, dict) and "dataset" in axes:
        axes["dataset"] = [resolve_paths(d, path.parent) for d in axes["dataset"]]
    if not axes:
        return [config_from_dict(raw, check_files=check_files)]
    return expand_grid(raw, axes, baseline=baseline, check_files=check_files)


def resolve_paths(ds: dict, base: Path) -> dict:
    ds = dict(ds)
    for key in ("train", "test", "path"):
        if key in ds and not Path(ds[key]).is_absolute():
            ds[key] = str(base / ds[key])
    return ds
