"""Report rendering: delimited tables, JSON summaries, and figures.

Everything here is presentation only. Numbers are computed elsewhere and
arrive as report dataclasses; this module turns them into files an operator
can read or plot. Figures render through the Agg backend so the command
line works on headless machines.
"""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .anomaly import AnomalyReport
from .evaluation import EvaluationReport, TTEReport
from .training import TrainReport


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_kv(pairs: dict) -> str:
    """Aligned ``key = value`` lines, insertion order preserved."""
    if not pairs:
        return ""
    width = max(len(str(k)) for k in pairs)
    return "\n".join(f"{str(k).ljust(width)} = {v}" for k, v in pairs.items())


def evaluation_table(reports: list[EvaluationReport]) -> str:
    """Fixed-width comparison table, one row per evaluated predictor."""
    header = f"{'model':<24} {'recall':>8} {'precision':>10} {'f1':>8} {'n':>6}"
    lines = [header, "-" * len(header)]
    for rep in reports:
        row = rep.table_row()
        lines.append(
            f"{row['model']:<24} {row['recall']:>8.4f} {row['precision']:>10.4f}"
            f" {row['f1']:>8.4f} {rep.n_evaluated:>6d}"
        )
    return "\n".join(lines)


def tte_summary(report: TTEReport) -> dict:
    return {
        "mae_days": round(report.mae_days, 6),
        "mse_days": round(report.mse_days, 6),
        "n_evaluated": report.n_evaluated,
        "n_skipped": report.n_skipped,
    }


def anomaly_csv(report: AnomalyReport) -> str:
    """Delimited verdicts in report order (highest score first)."""
    lines = ["client_id,cluster,distance,score,flagged"]
    for v in report.verdicts:
        lines.append(f"{v.client_id},{v.cluster},{v.distance:.6f},{v.score:.6f},{int(v.flagged)}")
    return "\n".join(lines)


def training_summary(report: TrainReport) -> dict:
    summary = {
        "epochs_run": report.epochs_run,
        "stopped_early": report.stopped_early,
        "n_funnels": report.n_funnels,
        "n_slices": report.n_slices,
        "n_validation": report.n_validation,
        "wall_seconds": round(report.wall_seconds, 3),
        "final_train_loss": report.epoch_losses[-1] if report.epoch_losses else None,
        "final_validation_loss": report.validation_losses[-1] if report.validation_losses else None,
        "checkpoint_path": report.checkpoint_path,
    }
    summary["config"] = dict(report.config_echo)
    return summary


def save_loss_curve(report: TrainReport, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.2))
    epochs = range(1, len(report.epoch_losses) + 1)
    ax.plot(epochs, report.epoch_losses, marker="o", markersize=3, label="train")
    if report.validation_losses:
        ax.plot(range(1, len(report.validation_losses) + 1), report.validation_losses,
                marker="s", markersize=3, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("training loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_bars(reports: list[EvaluationReport], path) -> None:
    """Grouped recall/precision/f1 bars, one group per predictor."""
    metrics = ("recall", "precision", "f1")
    fig, ax = plt.subplots(figsize=(7, 4.2))
    width = 0.8 / max(len(reports), 1)
    for i, rep in enumerate(reports):
        row = rep.table_row()
        xs = [j + i * width for j in range(len(metrics))]
        ax.bar(xs, [row[m] for m in metrics], width=width, label=rep.label)
    ax.set_xticks([j + width * (len(reports) - 1) / 2 for j in range(len(metrics))])
    ax.set_xticklabels(metrics)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("mean over customers")
    ax.set_title("next-basket quality")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_score_histogram(report: AnomalyReport, path) -> None:
    scores = [v.distance for v in report.verdicts]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.hist(scores, bins=30, color="#4878a8", edgecolor="black", linewidth=0.4)
    flagged = [v.distance for v in report.verdicts if v.flagged]
    for d in flagged:
        ax.axvline(d, color="#c0392b", linewidth=0.8, alpha=0.7)
    ax.set_xlabel("prediction distance")
    ax.set_ylabel("funnels")
    ax.set_title(f"anomaly distances ({len(flagged)} flagged of {len(scores)})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
