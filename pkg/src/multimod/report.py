"""Render training-report figures next to the delimited metrics output."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def read_metrics(csv_path: str) -> list[dict]:
    with open(csv_path, "r", encoding="utf-8") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def render_training_report(csv_path: str, out_dir: str) -> list[str]:
    """Loss-curve and alignment figures for one training run; returns the
    written file paths. Empty metrics produce no figures."""
    rows = read_metrics(csv_path)
    if not rows:
        return []
    os.makedirs(out_dir, exist_ok=True)
    steps = [r["step"] for r in rows]
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in [("loss_total", "total"), ("loss_mlm", "masked LM"),
                       ("loss_vlc", "contrastive"), ("loss_vlm", "matching"),
                       ("loss_ilm", "instruction LM")]:
        ax.plot(steps, [r[key] for r in rows], label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.set_title("training losses")
    fig.tight_layout()
    path = os.path.join(out_dir, "losses.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(steps, [r["gap"] for r in rows], color="tab:purple")
    ax1.set_xlabel("step")
    ax1.set_ylabel("modality gap")
    ax1.set_title("centroid gap")
    ax2.plot(steps, [r["r1_i2t"] for r in rows], label="R@1 vision to text")
    ax2.plot(steps, [r["r1_t2i"] for r in rows], label="R@1 text to vision")
    ax2.set_xlabel("step")
    ax2.set_ylabel("recall")
    ax2.set_ylim(-0.02, 1.02)
    ax2.legend(fontsize=8)
    ax2.set_title("held-out retrieval")
    fig.tight_layout()
    path = os.path.join(out_dir, "alignment.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
