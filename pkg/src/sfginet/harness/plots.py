"""Figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_loss_curve(result, path):
    steps = [s[0] for s in result.steps]
    losses = [s[3] for s in result.steps]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.semilogy(steps, losses, lw=0.8, color="tab:blue", label="train loss")
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    if result.epochs and np.isfinite(result.epochs[0][2]):
        per_epoch = max(1, len(steps) // len(result.epochs))
        ax2 = ax1.twinx()
        ax2.plot([e[0] * per_epoch for e in result.epochs], [e[2] for e in result.epochs], "o-", ms=3,
                 color="tab:orange", label="val rel. error")
        ax2.set_ylabel("validation mean relative error")
    ax1.set_title("training")
    _save(fig, path)


def plot_eval(report, path):
    labels = np.array([r.label for r in report.records])
    preds = np.array([r.prediction for r in report.records])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(labels, preds, s=6, alpha=0.6)
    hi = float(max(labels.max(), preds.max(), 1e-12))
    ax.plot([0, hi], [0, hi], "k--", lw=0.8)
    ax.set_xlabel("ground truth")
    ax.set_ylabel("prediction")
    ax.set_title(f"mean rel. error {report.mean_rel_error:.3f} +- {report.std_rel_error:.3f}")
    _save(fig, path)


def plot_bench(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in dict.fromkeys(r.method for r in rows):
        pts = sorted((r.n, r.seconds) for r in rows if r.method == method)
        ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o-", label=method)
    ax.set_xlabel("points per set")
    ax.set_ylabel("seconds")
    ax.legend()
    _save(fig, path)


def plot_sketch(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    groups = {}
    for r in rows:
        groups.setdefault((r.mode, r.delta), []).append(r.roundtrip_error / r.delta)
    ax.boxplot(list(groups.values()), tick_labels=[f"{m} {d:g}" for m, d in groups])
    ax.axhline(1.0, color="k", ls="--", lw=0.8)
    ax.set_ylabel("round-trip error / delta")
    _save(fig, path)
