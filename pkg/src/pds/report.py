"""Verification report output: a CSV of every check plus matplotlib figures."""

from __future__ import annotations

import csv
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .cloud import Cloud  # noqa: E402
from .harness import FAIL, PASS, SKIP, VerificationReport  # noqa: E402

_STATUS_COLORS = {PASS: "#4c9a5f", FAIL: "#c2453d", SKIP: "#b0b0b0"}


def write_checks_csv(report: VerificationReport, path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "device", "window", "status", "detail"])
        for c in report.checks:
            w.writerow([c.kind, c.device, "" if c.window is None else c.window, c.status, c.detail])
    return path


def plot_check_summary(report: VerificationReport, path: str | os.PathLike) -> Path:
    counts = report.counts()
    kinds = list(counts)
    x = np.arange(len(kinds))
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    bottom = np.zeros(len(kinds))
    for status in (PASS, FAIL, SKIP):
        vals = np.array([counts[k][status] for k in kinds])
        ax.bar(x, vals, bottom=bottom, color=_STATUS_COLORS[status], label=status, width=0.6)
        bottom += vals
    ax.set_xticks(x)
    ax.set_xticklabels(kinds)
    ax.set_ylabel("checks")
    ax.set_title("verification outcome" + ("" if report.ok else f" ({len(report.failures)} failed)"))
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_shard_layout(cloud: Cloud, path: str | os.PathLike) -> Path:
    """Device x window grid coloured by the shard that stores each aggregate."""
    cells = {(d, w): s.shard_id for s in cloud.shards for (d, w) in s.records}
    devices = sorted({d for d, _ in cells} | set(cloud.directory))
    n_windows = 1 + max((w for _, w in cells), default=0)
    grid = np.full((len(devices), n_windows), np.nan)
    for (d, w), shard in cells.items():
        grid[devices.index(d), w] = shard

    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * n_windows + 2), max(2.5, 0.35 * len(devices) + 1.2)))
    cmap = ListedColormap(plt.get_cmap("tab10").colors[: max(cloud.shard_count, 1)])
    im = ax.imshow(np.ma.masked_invalid(grid), cmap=cmap, vmin=-0.5, vmax=cloud.shard_count - 0.5, aspect="auto")
    ax.set_yticks(range(len(devices)))
    ax.set_yticklabels([d.id_number for d in devices], fontsize=8)
    ax.set_xlabel("window index")
    ax.set_title("aggregate placement by shard")
    cbar = fig.colorbar(im, ax=ax, ticks=range(cloud.shard_count))
    cbar.set_label("shard")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def write_report(report: VerificationReport, cloud: Cloud, outdir: str | os.PathLike) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return [
        write_checks_csv(report, outdir / "checks.csv"),
        plot_check_summary(report, outdir / "checks.png"),
        plot_shard_layout(cloud, outdir / "shard_layout.png"),
    ]
