"""Report figures written next to the CSV outputs of ``bench``, ``run``,
``simulate`` and ``eval``.

Figures are built on :class:`matplotlib.figure.Figure` directly so no GUI
backend is ever touched.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure

FIGSIZE = (7.0, 4.0)
DPI = 110
STAGE_COLORS = {
    "capture_staleness": "#7f7f7f",
    "preprocess": "#1f77b4",
    "inference": "#d62728",
    "decode": "#2ca02c",
    "control": "#9467bd",
    "end_to_end": "#000000",
}


def _new_figure(nrows: int = 1, ncols: int = 1, figsize=FIGSIZE):
    fig = Figure(figsize=figsize, dpi=DPI)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    for ax in axes.flat:
        ax.grid(True, alpha=0.3, linewidth=0.6)
        ax.tick_params(labelsize=9)
        for side in ("top", "right"):
            ax.spines[side].set_visible(False)
    return fig, axes


def _save(fig: Figure, path: str | os.PathLike) -> str:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    return os.fspath(path)


def plot_trajectory(result, path, half_width: float | None = None, title: str = "") -> str:
    """Lateral offset and steering rate over time for one closed-loop run."""
    fig, axes = _new_figure(2, 1, figsize=(7.0, 5.0))
    t, offset = result.times, result.offsets
    omega = np.array([row["omega"] for row in result.trajectory])
    ax = axes[0, 0]
    ax.plot(t, offset, color="#1f77b4", lw=1.4, label="offset")
    ax.axhspan(-0.05, 0.05, color="#2ca02c", alpha=0.12, label="settle band")
    if half_width:
        for sign in (-1, 1):
            ax.axhline(sign * half_width, color="#d62728", lw=0.8, ls="--")
    ax.set_ylabel("offset right of center [m]")
    ax.legend(fontsize=8, loc="upper right", frameon=False)
    if title:
        ax.set_title(title, fontsize=10)
    ax = axes[1, 0]
    ax.plot(t, omega, color="#9467bd", lw=1.2)
    ax.set_ylabel("omega [rad/s]")
    ax.set_xlabel("time [s]")
    return _save(fig, path)


def plot_bench(results: Sequence, path, speedup: float | None = None) -> str:
    """Per-call inference latency for each benchmarked backend."""
    fig, axes = _new_figure()
    ax = axes[0, 0]
    for i, res in enumerate(results):
        ax.plot(np.arange(1, len(res.inference_ms) + 1), res.inference_ms, marker="o", ms=3, lw=1,
                label=f"{res.name} (mean {np.mean(res.inference_ms):.1f} ms)")
    ax.set_yscale("log")
    ax.set_xlabel("call")
    ax.set_ylabel("inference latency [ms]")
    if speedup is not None:
        ax.set_title(f"speedup {speedup:.2f}x", fontsize=10)
    ax.legend(fontsize=8, frameon=False)
    return _save(fig, path)


def plot_stage_latency(report, path) -> str:
    """Per-frame stage latencies of a pipeline run, plus achieved rate."""
    from lanekeeper.pipeline import STAGES

    fig, axes = _new_figure()
    ax = axes[0, 0]
    for stage in STAGES:
        series = report.series(stage)
        if series:
            ax.plot(series, lw=1, color=STAGE_COLORS[stage], label=stage)
    ax.set_xlabel("processed frame")
    ax.set_ylabel("ms")
    fps = f"{report.achieved_fps:.2f}" if report.achieved_fps else "n/a"
    ax.set_title(f"{report.frames_processed} processed, {report.frames_dropped} dropped, {fps} fps", fontsize=10)
    ax.legend(fontsize=7, ncol=3, frameon=False)
    return _save(fig, path)


def plot_tally(reports: Sequence, path) -> str:
    """Detection rate per run label."""
    fig, axes = _new_figure()
    ax = axes[0, 0]
    labels = [r.label for r in reports]
    rates = [r.detection_rate for r in reports]
    bars = ax.bar(labels, rates, color="#1f77b4", width=0.6)
    for bar, rep in zip(bars, reports):
        ax.annotate(rep.rate_fraction, (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, 1.1)
    ax.set_ylabel("detection rate")
    return _save(fig, path)
