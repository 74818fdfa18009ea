"""Figure rendering for the delimited outputs: loss-curve plots from trace
CSVs, metric bar charts, and threshold-sweep contact sheets."""
from __future__ import annotations

import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _atomic_save(fig, path):
    tmp = str(path) + ".tmp.png"
    fig.savefig(tmp, dpi=120, bbox_inches="tight")
    os.replace(tmp, path)
    plt.close(fig)


def loss_curves(trace_csv, out_png) -> None:
    steps, stages = [], []
    series = {k: [] for k in ("loss_D", "loss_G_adv", "loss_L1", "loss_FM")}
    with open(trace_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            stages.append(int(row["stage"]))
            for k in series:
                series[k].append(float(row[k]))
    fig, axes = plt.subplots(2, 2, figsize=(10, 6), sharex=True)
    for ax, (name, vals) in zip(axes.ravel(), series.items()):
        ax.plot(steps, vals, lw=0.8)
        ax.set_title(name)
        ax.grid(alpha=0.3)
    for boundary in np.flatnonzero(np.diff(stages)):
        for ax in axes.ravel():
            ax.axvline(steps[boundary], color="gray", ls="--", lw=0.6)
    fig.supxlabel("step")
    _atomic_save(fig, out_png)


def metrics_bar(report: dict, out_png) -> None:
    keys = ["is_mean", "fid", "kid"]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    vals = [report[k] for k in keys]
    ax.bar(keys, vals, color=["#4878d0", "#ee854a", "#6acc64"])
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.4g}", ha="center", va="bottom", fontsize=9)
    ax.set_title(f"metrics ({report.get('provider', '?')} features)")
    _atomic_save(fig, out_png)


def tau_sweep_sheet(rows: list[dict], out_png) -> None:
    """rows: per-tau dicts with keys tau, line, field, and optionally image."""
    ncols = max(3 if "image" in rows[0] else 2, 2)
    fig, axes = plt.subplots(len(rows), ncols, figsize=(3 * ncols, 3 * len(rows)), squeeze=False)
    for r, row in enumerate(rows):
        axes[r][0].imshow(row["line"], cmap="gray")
        axes[r][0].set_ylabel(f"tau={row['tau']:.2f}")
        axes[r][1].imshow(row["field"], cmap="magma")
        if "image" in row:
            axes[r][2].imshow(np.clip(row["image"], 0, 1))
        for ax in axes[r]:
            ax.set_xticks([])
            ax.set_yticks([])
    for ax, title in zip(axes[0], ["line map", "distance field", "generated"]):
        ax.set_title(title)
    _atomic_save(fig, out_png)
