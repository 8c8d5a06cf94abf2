"""Figure rendering for CLI reports.

Every report path writes its figures next to the delimited output (JSON/JSONL/
CSV) so a run directory is self-describing. Figures carry no timestamps or
run-specific metadata; outputs stay byte-reproducible.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_LOSS_KEYS = ("seg", "mfd", "triplet", "cst")
_PNG_META = {"Software": None}


def save_loss_curves(step_records: list[dict], path) -> None:
    """Per-term loss curves over global step with stage boundaries marked."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    steps = np.arange(len(step_records))
    for key in _LOSS_KEYS:
        values = [rec.get(key) for rec in step_records]
        if not any(v is not None for v in values):
            continue
        ax.plot(steps, [np.nan if v is None else v for v in values], label=key, linewidth=0.9)
    stages = [rec["stage"] for rec in step_records]
    for boundary in np.flatnonzero(np.diff(stages)) + 1:
        ax.axvline(boundary, color="gray", linestyle=":", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("training loss terms")
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def save_stage_metrics(stage_metrics: list[dict], path) -> None:
    """Target accuracy and mIoU per stage."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    stages = [m["stage"] for m in stage_metrics]
    ax.plot(stages, [m["accuracy"] for m in stage_metrics], marker="o", label="target accuracy")
    ax.plot(stages, [m["miou"] for m in stage_metrics], marker="s", label="target mIoU")
    ax.set_xlabel("stage")
    ax.set_ylabel("metric")
    ax.set_xticks(stages)
    ax.set_ylim(0.0, 1.0)
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title("per-stage target metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def save_kl_grid(table, best_params, kl_before: float, path) -> None:
    """KL per grid point, identity level, and the selected configuration."""
    fig, ax = plt.subplots(figsize=(8, 4))
    kls = [kl for _, kl in table]
    ax.plot(range(len(kls)), kls, marker=".", linewidth=0.7, label="grid point KL")
    ax.axhline(kl_before, color="gray", linestyle="--", linewidth=0.9, label="unfiltered KL")
    best_idx = next(i for i, (p, _) in enumerate(table) if p == best_params)
    ax.plot([best_idx], [kls[best_idx]], marker="*", markersize=12, color="red", label="selected")
    ax.set_xlabel("grid index")
    ax.set_ylabel("KL divergence")
    ax.set_title("high-frequency KL over the bilateral parameter grid")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def save_gamma_histogram(gammas: list[float], path) -> None:
    """Distribution of solved gamma exponents over a batch."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.hist(gammas, bins=24, color="steelblue", edgecolor="black", linewidth=0.5)
    ax.axvline(1.0, color="red", linestyle="--", linewidth=0.9)
    ax.set_xlabel("gamma")
    ax.set_ylabel("images")
    ax.set_title("solved gamma per image pair")
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
