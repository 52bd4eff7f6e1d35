"""Delimited/JSON report writers and the matplotlib figures beside them.

All writers are deterministic: floats use a fixed shortest-round-trip
format, JSON keys are sorted, and nothing embeds timestamps, so rerunning a
command with the same inputs and seed reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def format_value(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".12g")
    return str(value)


def write_csv(path, fieldnames: list[str], rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format_value(row.get(k, "")) for k in fieldnames})
    return path


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n",
                    encoding="utf-8")
    return path


def plot_metric_lines(rows: list[dict], fields: list[str], path, title: str,
                      xfield: str = "frame_id", ylabel: str = "score") -> Path:
    """Per-frame metric curves, one line per metric."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    x = [row[xfield] for row in rows]
    for name in fields:
        y = [row.get(name, math.nan) for row in rows]
        ax.plot(x, y, marker="o", markersize=3, label=name)
    ax.set_xlabel(xfield.replace("_", " "))
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if fields:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_schedule(rows: list[dict], path) -> Path:
    """Loss-weight decay curve with the phase boundary marked."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    iters = [row["iter"] for row in rows]
    ax.plot(iters, [row["lambda_seg"] for row in rows], label="lambda_seg")
    ax.plot(iters, [row["lambda_sal"] for row in rows], label="lambda_sal")
    boundary = next((row["iter"] for row in rows if row["phase"] == "II"), None)
    if boundary is not None:
        ax.axvline(boundary, color="gray", linestyle="--", alpha=0.6, label="phase II start")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss weight")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title("two-phase loss weight schedule")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_map(values: np.ndarray, path, title: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 5))
    im = ax.imshow(values, cmap="magma", vmin=0.0)
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_error_bars(errors: dict[str, float], threshold: float, path, title: str) -> Path:
    """Log-scale bar chart of gradient-check errors against the threshold."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    names = list(errors)
    values = [max(errors[n], 1e-16) for n in names]
    ax.bar(range(len(names)), values, color="#4878d0")
    ax.axhline(threshold, color="crimson", linestyle="--", label=f"threshold {threshold:g}")
    ax.set_yscale("log")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("max relative error")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
