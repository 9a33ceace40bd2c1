"""nDCG@10-vs-round line charts from metric CSVs (SVG output)."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import CSV_HEADER  # noqa: E402

PANEL_ORDER = ("perfect", "navigational", "informational")

plt.rcParams.update({
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.hashsalt": "foltr",  # stable element ids across runs
})


def read_metrics(paths) -> list[dict]:
    rows = []
    for p in paths:
        with open(p, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != CSV_HEADER:
                raise ValueError(f"{p}: CSV header {reader.fieldnames} does not match schema {CSV_HEADER}")
            rows.extend(reader)
    return rows


def mean_curves(rows: list[dict]) -> dict:
    """``{(dataset, click_model): {line_key: (rounds, mean_ndcg)}}`` averaged over repeats and seeds."""
    acc = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    for r in rows:
        panel = (r["dataset"], r["click_model"])
        line = (r["attack"], r["knowledge"], r["defense"], int(r["m"]), int(r["n"]))
        acc[panel][line][int(r["round"])].append(float(r["ndcg_at_10"]))
    out = {}
    for panel, lines in acc.items():
        out[panel] = {}
        for line, by_round in lines.items():
            rounds = np.array(sorted(by_round))
            out[panel][line] = (rounds, np.array([np.mean(by_round[x]) for x in rounds]))
    return out


def _label(line) -> str:
    attack, knowledge, defense, m, n = line
    if attack == "none":
        return "honest" if defense == "fedavg" else f"honest / {defense}"
    pct = f"{round(100 * m / n)}%"
    who = attack if attack == "data_poison" else f"{attack} ({knowledge})"
    return f"{who} {pct} / {defense}"


def _style(line):
    attack, _, defense, m, _ = line
    if attack == "none" and defense == "fedavg":
        return {"color": "black", "linestyle": "-", "linewidth": 1.4}
    return {"linestyle": "-" if defense == "fedavg" else "--", "linewidth": 1.0}


def _draw(ax, lines: dict, title: str) -> None:
    for line in sorted(lines, key=lambda l: (l[0] != "none", l[2] != "fedavg", l)):
        rounds, ndcg = lines[line]
        ax.plot(rounds, ndcg, label=_label(line), **_style(line))
    ax.set_title(title)
    ax.set_xlabel("round")
    ax.set_ylabel("nDCG@10")
    ax.grid(alpha=0.3)


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def emit_charts(csv_paths, output_dir) -> list[Path]:
    """One chart per (dataset, click model) plus one multi-panel figure per dataset."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    curves = mean_curves(read_metrics(csv_paths))
    written = []
    for (dataset, click), lines in sorted(curves.items()):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        _draw(ax, lines, f"{dataset} ({click})")
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        path = out / f"{_safe(dataset)}__{_safe(click)}.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)

    datasets = sorted({d for d, _ in curves})
    for dataset in datasets:
        clicks = sorted((c for d, c in curves if d == dataset),
                        key=lambda c: (PANEL_ORDER.index(c) if c in PANEL_ORDER else len(PANEL_ORDER), c))
        fig, axes = plt.subplots(1, len(clicks), figsize=(4.2 * len(clicks), 3.4), sharey=True, squeeze=False)
        for ax, click in zip(axes[0], clicks):
            _draw(ax, curves[(dataset, click)], click)
        handles, labels = axes[0][-1].get_legend_handles_labels()
        axes[0][-1].legend(handles, labels, loc="best", frameon=False)
        fig.suptitle(dataset)
        fig.tight_layout()
        path = out / f"{_safe(dataset)}__panels.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written
