"""The four figure types rendered from run artifacts.

All functions write a PNG (no embedded timestamps, so re-rendering the same
inputs reproduces the same bytes) and return the matplotlib Figure for
inspection.  Rendering never writes into the run directory it reads.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .frames import RunLogFrame, read_belief_records

__all__ = [
    "save_figure",
    "plot_learning_curves",
    "plot_motion_beliefs",
    "plot_reward_beliefs",
    "plot_correlation",
]


def save_figure(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_learning_curves(
    frame: RunLogFrame, metric: str, out_path: str | Path, title: str | None = None
):
    """One mean curve per run name with a +-1 std band across its seeds."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name in frame.names:
        epochs, mean, std = frame.curve_band(name, metric)
        (line,) = ax.plot(epochs, mean, label=f"{name} ({len(frame.seeds(name))} seeds)")
        ax.fill_between(epochs, mean - std, mean + std, alpha=0.25, color=line.get_color())
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric)
    ax.set_title(title or metric)
    ax.legend()
    fig.tight_layout()
    save_figure(fig, out_path)
    return fig


def _select_record(records: list[dict], episode: int, step: int, agent: int) -> dict:
    for record in records:
        if (record["episode"], record["step"], record["agent"]) == (episode, step, agent):
            return record
    raise IndexError(f"no snapshot record for episode {episode}, step {step}, agent {agent}")


def plot_motion_beliefs(
    snapshot_path: str | Path,
    out_path: str | Path,
    *,
    episode: int = 0,
    step: int = 0,
    agent: int = 0,
    ground_truth: bool = False,
):
    """Grid map of one agent's motion prediction at one step.

    True agent positions are dots, the prey a star, obstacles squares.
    Predicted positions are crosses with an arrow per predicted displacement;
    a zero displacement draws no arrow.  With ``ground_truth`` the target
    rows are rendered instead of the prediction (a layout self-check).
    """
    records = read_belief_records(snapshot_path)
    record = _select_record(records, episode, step, agent)
    m = record["map_size"]
    fig, ax = plt.subplots(figsize=(5.2, 5.2))
    ax.set_xlim(-0.5, m - 0.5)
    ax.set_ylim(m - 0.5, -0.5)  # row 0 on top, like the text renderer
    ax.set_xticks(range(m))
    ax.set_yticks(range(m))
    ax.grid(True, linewidth=0.4, alpha=0.4)
    ax.set_aspect("equal")

    for row, col in record["obstacles"]:
        ax.add_patch(plt.Rectangle((col - 0.5, row - 0.5), 1, 1, color="0.3"))
    true_cells = np.array(record["true_cells"], dtype=float)
    ax.scatter(true_cells[:, 1], true_cells[:, 0], s=70, color="tab:blue", zorder=3,
               label="agents")
    prey = record["prey_cell"]
    ax.scatter([prey[1]], [prey[0]], marker="*", s=160, color="tab:red", zorder=3,
               label="prey")

    if ground_truth:
        rows = np.array(record["target_motion"], dtype=float)
        positions = rows[:, :2] * m
        dirs = rows[:, 2:]
    else:
        positions = np.array(record["pred_positions"], dtype=float)
        dirs = np.array(record["pred_dirs"], dtype=float)
    ax.scatter(positions[:, 1], positions[:, 0], marker="x", s=60, color="tab:green",
               zorder=4, label="predicted")
    for (row, col), (drow, dcol) in zip(positions, dirs):
        if drow == 0.0 and dcol == 0.0:
            continue
        ax.annotate(
            "", xy=(col + dcol, row + drow), xytext=(col, row),
            arrowprops={"arrowstyle": "->", "color": "tab:green", "lw": 1.6},
            zorder=4,
        )
    which = "ground truth" if ground_truth else f"agent {agent} prediction"
    ax.set_title(f"episode {episode}, step {step}: {which}")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    save_figure(fig, out_path)
    return fig


def plot_reward_beliefs(
    snapshot_path: str | Path,
    out_path: str | Path,
    *,
    episode: int = 0,
    agent: int = 0,
):
    """One agent's predicted return for every teammate, over episode steps."""
    records = [
        r for r in read_belief_records(snapshot_path)
        if r["episode"] == episode and r["agent"] == agent
    ]
    if not records:
        raise IndexError(f"no snapshot records for episode {episode}, agent {agent}")
    records.sort(key=lambda r: r["step"])
    steps = [r["step"] for r in records]
    predicted = np.array([r["pred_reward"] for r in records])
    target = np.array([r["target_reward"] for r in records])
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for j in range(predicted.shape[1]):
        (line,) = ax.plot(steps, predicted[:, j], label=f"predicted return, agent {j}")
        ax.plot(steps, target[:, j], linestyle="--", alpha=0.6, color=line.get_color())
    ax.set_xlabel("step")
    ax.set_ylabel("discounted future reward")
    ax.set_title(f"reward predictions by agent {agent} (dashed: true return)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    save_figure(fig, out_path)
    return fig


def plot_correlation(
    frame: RunLogFrame,
    out_path: str | Path,
    *,
    head: str = "motion",
    report: dict | None = None,
):
    """Prediction accuracy vs. game performance across training epochs.

    Scatter of (-mse, -avg_steps) per epoch with a least-squares trend line.
    The annotated r is taken from the supplied correlation report when given
    (the evaluator's number), otherwise recomputed from the points.
    """
    column = f"{head}_mse"
    xs, ys = [], []
    for name in frame.names:
        for seed in frame.seeds(name):
            xs.append(-frame.column(name, seed, column))
            ys.append(-frame.column(name, seed, "avg_steps"))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if report is not None:
        r_value = report[f"pearson_{head}"]
    else:
        dx, dy = x - x.mean(), y - y.mean()
        r_value = float((dx * dy).sum() / np.sqrt((dx * dx).sum() * (dy * dy).sum()))
    slope, intercept = np.polyfit(x, y, 1)
    fig, ax = plt.subplots(figsize=(5.4, 4.2))
    ax.scatter(x, y, s=12, alpha=0.6)
    grid = np.linspace(x.min(), x.max(), 50)
    ax.plot(grid, slope * grid + intercept, color="tab:red", label=f"r = {r_value:.2f}")
    ax.set_xlabel(f"{head} prediction accuracy (-MSE)")
    ax.set_ylabel("game performance (-avg steps)")
    ax.set_title(f"performance vs. {head} prediction accuracy")
    ax.legend()
    fig.tight_layout()
    save_figure(fig, out_path)
    return fig
