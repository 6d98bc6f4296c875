"""Persistence round-trips: configs, checkpoints, logs, belief records."""

import numpy as np
import pytest

from bepal import runio
from bepal.gridworld import EnvConfig
from bepal.optim import RmspropState
from bepal.runio import RunConfig
from bepal.training import TrainConfig
from test_model import tiny_params


def sample_config():
    return RunConfig(
        name="unit",
        env=EnvConfig(map_size=6, n_agents=2, n_obstacles=3, max_steps=12),
        train=TrainConfig(episodes_per_epoch=2, epochs=3),
        seed=5,
        out_dir="runs",
        checkpoint_interval=2,
    )


# ------------------------------------------------------------------
# config


def test_config_roundtrip(tmp_path):
    cfg = sample_config()
    path = tmp_path / "c.json"
    runio.write_json(path, cfg.to_dict())
    back = RunConfig.from_dict(runio.read_json(path))
    assert back == cfg


def test_unknown_keys_rejected():
    payload = sample_config().to_dict()
    payload["typo_key"] = 1
    with pytest.raises(ValueError, match="typo_key"):
        RunConfig.from_dict(payload)
    payload = sample_config().to_dict()
    payload["env"]["gravity"] = 9.8
    with pytest.raises(ValueError, match="gravity"):
        RunConfig.from_dict(payload)


def test_run_dir_embeds_name_and_seed(tmp_path):
    cfg = sample_config()
    assert cfg.run_dir().name == "unit-s5"


# ------------------------------------------------------------------
# checkpoints


def test_checkpoint_bit_roundtrip(tmp_path, rng):
    params = tiny_params(rng)
    opt = RmspropState(learning_rate=0.002, smoothing=0.9, epsilon=1e-7)
    for name, tensor in params.named_parameters().items():
        opt.v[name] = np.abs(rng.normal(size=tensor.data.shape))
    master = np.random.default_rng(77)
    master.random(13)  # advance the stream
    path = tmp_path / "x.ckpt"
    runio.save_checkpoint(
        path, params, opt, epoch=9, rng_state=master.bit_generator.state,
        config=sample_config().to_dict(),
    )
    ckpt = runio.load_checkpoint(path)
    assert ckpt.epoch == 9
    assert ckpt.config["name"] == "unit"
    for (name, orig), (name2, loaded) in zip(
        params.named_parameters().items(), ckpt.params.named_parameters().items()
    ):
        assert name == name2
        assert (orig.data == loaded.data).all()
    for name, acc in opt.v.items():
        assert (ckpt.opt_state.v[name] == acc).all()
    assert ckpt.opt_state.learning_rate == 0.002
    assert ckpt.opt_state.smoothing == 0.9
    # restored generator continues the exact stream
    resumed = np.random.default_rng()
    resumed.bit_generator.state = ckpt.rng_state
    assert resumed.random() == master.random()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        runio.load_checkpoint(path)


# ------------------------------------------------------------------
# log


def test_log_roundtrip_lossless(tmp_path):
    path = tmp_path / "log.csv"
    rows = []
    rng = np.random.default_rng(3)
    for epoch in range(1, 4):
        row = {c: float(rng.normal()) for c in runio.LOG_COLUMNS}
        row["epoch"] = epoch
        rows.append(row)
        runio.append_log_row(path, row)
    back = runio.read_log(path)
    assert back == rows


def test_log_missing_column_rejected(tmp_path):
    with pytest.raises(ValueError, match="missing"):
        runio.append_log_row(tmp_path / "log.csv", {"epoch": 1})


# ------------------------------------------------------------------
# belief records


def test_belief_records_roundtrip(tmp_path):
    path = tmp_path / "beliefs.jsonl"
    records = [
        {"episode": 0, "step": t, "agent": 0, "pred_reward": [0.1 * t, -0.2]}
        for t in range(5)
    ]
    count = runio.write_belief_records(path, records)
    assert count == 5
    assert list(runio.read_belief_records(path)) == records
