"""Parsing of run artifacts: epoch logs, belief snapshots, correlation reports.

This package talks to training runs only through their files: ``log.csv``
(one header row, comma-delimited epoch metrics), ``beliefs.jsonl`` (one JSON
record per step per agent) and ``reports/correlation.json``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["LOG_COLUMNS", "RunLogFrame", "load_runs", "read_belief_records", "split_run_name"]

# schema of a run's log.csv, as written by the trainer
LOG_COLUMNS = (
    "epoch",
    "avg_steps",
    "completion_rate",
    "avg_return",
    "actor_loss",
    "critic_loss",
    "aux_motion_loss",
    "aux_reward_loss",
    "entropy",
    "total_loss",
    "motion_mse",
    "reward_mse",
    "wall_time",
)

_RUN_DIR_RE = re.compile(r"^(?P<name>.+)-s(?P<seed>\d+)$")


def split_run_name(directory: str | Path) -> tuple[str, int]:
    """Split a run directory name of the form <name>-s<seed>."""
    match = _RUN_DIR_RE.match(Path(directory).name)
    if not match:
        raise ValueError(f"run directory {directory} is not named <name>-s<seed>")
    return match.group("name"), int(match.group("seed"))


@dataclass
class RunLogFrame:
    """Epoch-metric table for one or more runs, keyed by (name, seed)."""

    runs: dict[tuple[str, int], dict[str, np.ndarray]] = field(default_factory=dict)

    def add(self, name: str, seed: int, rows: list[dict[str, float]]) -> None:
        if not rows:
            raise ValueError(f"run {name}-s{seed} has an empty log")
        epochs = np.array([row["epoch"] for row in rows])
        if not (np.diff(epochs) > 0).all():
            raise ValueError(f"run {name}-s{seed}: epochs are not strictly increasing")
        table = {
            column: np.array([row[column] for row in rows], dtype=np.float64)
            for column in rows[0]
        }
        self.runs[(name, seed)] = table

    @property
    def names(self) -> list[str]:
        return sorted({name for name, _ in self.runs})

    def seeds(self, name: str) -> list[int]:
        return sorted(seed for run, seed in self.runs if run == name)

    def column(self, name: str, seed: int, column: str) -> np.ndarray:
        table = self.runs[(name, seed)]
        if column not in table:
            raise KeyError(f"run {name}-s{seed} has no column {column!r}")
        return table[column]

    def curve_band(self, name: str, column: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mean and std of a metric across this run's seeds, on common epochs."""
        seeds = self.seeds(name)
        if not seeds:
            raise KeyError(f"no runs named {name!r}")
        length = min(len(self.column(name, seed, "epoch")) for seed in seeds)
        stack = np.stack([self.column(name, seed, column)[:length] for seed in seeds])
        epochs = self.column(name, seeds[0], "epoch")[:length]
        return epochs, stack.mean(axis=0), stack.std(axis=0)


def _read_log(path: Path) -> list[dict[str, float]]:
    rows: list[dict[str, float]] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            values = line.split(",")
            rows.append(
                {
                    key: (int(raw) if key == "epoch" else float(raw))
                    for key, raw in zip(header, values)
                }
            )
    return rows


def load_runs(run_dirs: list[str | Path]) -> RunLogFrame:
    """Parse the logs of the given run directories into one frame."""
    frame = RunLogFrame()
    for directory in run_dirs:
        directory = Path(directory)
        log_path = directory / "log.csv"
        if not log_path.exists():
            raise FileNotFoundError(f"{directory} has no log.csv")
        name, seed = split_run_name(directory)
        frame.add(name, seed, _read_log(log_path))
    return frame


def read_belief_records(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise ValueError(f"{path} contains no records")
    return records
