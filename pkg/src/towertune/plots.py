"""Report figures. Uses the Agg backend so runs work headless; every
function writes a PNG next to the delimited output it illustrates."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _parse_metric_rows(rows):
    epochs, losses, rank1, mean_ap = [], [], [], []
    for row in rows:
        parts = row.split(",")
        epochs.append(int(parts[0]))
        losses.append(float(parts[1]) if parts[1] else None)
        rank1.append(float(parts[2]))
        mean_ap.append(float(parts[5]))
    return epochs, losses, rank1, mean_ap


def training_curves(metric_rows, path) -> None:
    """Loss on the left axis, retrieval quality on the right."""
    epochs, losses, rank1, mean_ap = _parse_metric_rows(metric_rows)
    fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(10, 4))

    loss_pts = [(e, v) for e, v in zip(epochs, losses) if v is not None]
    if loss_pts:
        ax_loss.plot(*zip(*loss_pts), color="tab:red")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.set_title("training loss")

    ax_metric.plot(epochs, rank1, label="rank-1", color="tab:blue")
    ax_metric.plot(epochs, mean_ap, label="mAP", color="tab:green")
    ax_metric.set_xlabel("epoch")
    ax_metric.set_ylim(0, 1.05)
    ax_metric.set_title("retrieval on held-out split")
    ax_metric.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def ablation_chart(rows, path) -> None:
    """Grouped bars of rank-1 and mAP per transfer-method variant."""
    names = [r["variant"] for r in rows]
    rank1 = [r["rank1"] for r in rows]
    mean_ap = [r["mAP"] for r in rows]
    x = range(len(names))

    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.38
    ax.bar([i - width / 2 for i in x], rank1, width, label="rank-1",
           color="tab:blue")
    ax.bar([i + width / 2 for i in x], mean_ap, width, label="mAP",
           color="tab:green")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=15)
    ax.set_ylim(0, 1.05)
    ax.set_title("transfer-method ablation")
    ax.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def sweep_curve(axis_name, rows, path) -> None:
    values = [r["value"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(values, [r["rank1"] for r in rows], "o-", label="rank-1",
            color="tab:blue")
    ax.plot(values, [r["mAP"] for r in rows], "s-", label="mAP",
            color="tab:green")
    ax.set_xlabel(axis_name.replace("_", " "))
    ax.set_ylim(0, 1.05)
    ax.set_title(f"sweep over {axis_name.replace('_', ' ')}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
