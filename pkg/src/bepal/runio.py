"""Run persistence: config files, binary checkpoints, delimited epoch logs,
and belief-snapshot records.

The checkpoint is a self-describing container: a magic/version header, a
JSON metadata block, then named tensors stored as a shape header followed by
flat little-endian float64 values.  Loading a saved checkpoint reproduces
parameters and optimizer state bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .autodiff import Tensor
from .gridworld import EnvConfig
from .model import BepalParams
from .optim import RmspropState
from .training import EpisodeBatch, TrainConfig

__all__ = [
    "VERSION",
    "LOG_COLUMNS",
    "RunConfig",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "append_log_row",
    "read_log",
    "write_json",
    "read_json",
    "write_belief_records",
    "read_belief_records",
    "trace_rows",
]

VERSION = "0.1.0"

_MAGIC = b"BPCK"
_FORMAT_VERSION = 1

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


# ------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    name: str
    env: EnvConfig
    train: TrainConfig
    seed: int = 0
    out_dir: str = "runs"
    checkpoint_interval: int = 50

    def run_dir(self) -> Path:
        return Path(self.out_dir) / f"{self.name}-s{self.seed}"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "env": dataclasses.asdict(self.env),
            "train": dataclasses.asdict(self.train),
            "seed": self.seed,
            "out_dir": self.out_dir,
            "checkpoint_interval": self.checkpoint_interval,
            "code_version": VERSION,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        data = dict(data)
        data.pop("code_version", None)
        env = _dataclass_from_dict(EnvConfig, data.pop("env"), "env")
        train = _dataclass_from_dict(TrainConfig, data.pop("train"), "train")
        known = {f.name for f in dataclasses.fields(cls)} - {"env", "train"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(env=env, train=train, **data)


def _dataclass_from_dict(cls, data: Mapping, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {where} config keys: {sorted(unknown)}")
    return cls(**data)


# ------------------------------------------------------------------
# tensor container


def _write_tensor(fh, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", array.ndim))
    for dim in array.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", fh.read(2))
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    return name, data


@dataclass
class Checkpoint:
    format_version: int
    config: dict
    params: BepalParams
    opt_state: RmspropState
    epoch: int
    rng_state: dict | None


def _model_dims(params: BepalParams) -> dict:
    return {
        "n_agents": params.n_agents,
        "feat_dim": params.feat_dim,
        "hidden": params.hidden,
        "d_k": params.d_k,
        "gat_heads": params.gat1.heads,
        "gat_head_out": params.gat1.head_weights[0].shape[0],
        "motion_hidden_dim": params.motion_hidden.out_dim,
    }


def save_checkpoint(
    path: str | Path,
    params: BepalParams,
    opt_state: RmspropState,
    epoch: int,
    rng_state: dict | None,
    config: Mapping | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": _FORMAT_VERSION,
        "code_version": VERSION,
        "epoch": epoch,
        "rng_state": _jsonable(rng_state),
        "config": dict(config) if config is not None else None,
        "model": _model_dims(params),
        "optimizer": {
            "learning_rate": opt_state.learning_rate,
            "smoothing": opt_state.smoothing,
            "epsilon": opt_state.epsilon,
        },
    }
    named = params.named_parameters()
    tensors: list[tuple[str, np.ndarray]] = [(k, v.data) for k, v in named.items()]
    tensors += [(f"opt.{k}", v) for k, v in opt_state.v.items()]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, array in tensors:
            _write_tensor(fh, name, array)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        (meta_len,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (n_tensors,) = struct.unpack("<I", fh.read(4))
        tensors = dict(_read_tensor(fh) for _ in range(n_tensors))
    dims = meta["model"]
    params = BepalParams.create(np.random.default_rng(0), **dims)
    named = params.named_parameters()
    for name, tensor in named.items():
        stored = tensors.get(name)
        if stored is None:
            raise ValueError(f"checkpoint missing parameter {name}")
        if stored.shape != tensor.data.shape:
            raise ValueError(
                f"checkpoint parameter {name} has shape {stored.shape}, expected {tensor.data.shape}"
            )
        tensor.data = stored
    opt_meta = meta["optimizer"]
    opt_state = RmspropState(
        learning_rate=opt_meta["learning_rate"],
        smoothing=opt_meta["smoothing"],
        epsilon=opt_meta["epsilon"],
        v={k[4:]: v for k, v in tensors.items() if k.startswith("opt.")},
    )
    return Checkpoint(
        format_version=version,
        config=meta.get("config"),
        params=params,
        opt_state=opt_state,
        epoch=meta["epoch"],
        rng_state=meta.get("rng_state"),
    )


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


# ------------------------------------------------------------------
# delimited epoch log


def _format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def append_log_row(path: str | Path, row: Mapping[str, float]) -> None:
    path = Path(path)
    missing = [c for c in LOG_COLUMNS if c not in row]
    if missing:
        raise ValueError(f"log row missing columns: {missing}")
    new_file = not path.exists()
    with open(path, "a", encoding="utf-8") as fh:
        if new_file:
            fh.write(",".join(LOG_COLUMNS) + "\n")
        fh.write(",".join(_format_value(row[c]) for c in LOG_COLUMNS) + "\n")


def read_log(path: str | Path) -> list[dict[str, float]]:
    rows: list[dict[str, float]] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            values = line.split(",")
            row: dict[str, float] = {}
            for key, raw in zip(header, values):
                row[key] = int(raw) if key == "epoch" else float(raw)
            rows.append(row)
    return rows


# ------------------------------------------------------------------
# structured records


def write_json(path: str | Path, payload: Mapping) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_belief_records(path: str | Path, records: Iterable[Mapping]) -> int:
    """One JSON object per line; returns the number of records written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")
            count += 1
    return count


def read_belief_records(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def trace_rows(batch: EpisodeBatch) -> list[dict]:
    """Flat per-step per-agent trace of one episode."""
    rows = []
    for t in range(batch.length):
        for i in range(batch.n_agents):
            rows.append(
                {
                    "step": t,
                    "agent": i,
                    "row": int(batch.positions[t + 1, i, 0]),
                    "col": int(batch.positions[t + 1, i, 1]),
                    "action": int(batch.actions[t, i]),
                    "gate": int(batch.gates[t, i]),
                    "reward": float(batch.rewards[t, i]),
                }
            )
    return rows
