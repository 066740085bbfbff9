import json

import numpy as np
import pytest

from src.checkpoint_store import (
    CHECKPOINT_FORMAT,
    CheckpointError,
    CheckpointStore,
    load_checkpoint,
    save_checkpoint,
)
from src.neuralnet import MlpParams


@pytest.fixture
def store(tmp_path):
    return CheckpointStore(tmp_path / "checkpoints")


def test_save_and_load_restores_params(store):
    params = MlpParams.initialize((6, 40, 40, 3), seed=5)
    path = store.save("meta", params, seed=5, config_hash="ab" * 32)
    assert path == store.checkpoints_dir / "meta.json"
    restored, header = load_checkpoint(path, expected_layer_sizes=(6, 40, 40, 3))
    np.testing.assert_array_equal(restored.flat(), params.flat())
    assert header["format"] == CHECKPOINT_FORMAT
    assert header["seed"] == 5
    assert header["activation"] == "tanh"


def test_identical_params_give_identical_bytes(tmp_path):
    params = MlpParams.initialize((6, 8, 3), seed=1)
    save_checkpoint(tmp_path / "a.json", params, seed=1, config_hash="x")
    save_checkpoint(tmp_path / "b.json", params.copy(), seed=1, config_hash="x")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_topology_mismatch(store):
    path = store.save("small", MlpParams.initialize((6, 8, 3), seed=0))
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(path, expected_layer_sizes=(6, 40, 40, 3))
    assert exc.value.code == "checkpoint mismatch"


def test_corrupted_and_foreign_files(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(CheckpointError):
        load_checkpoint(broken)

    foreign = tmp_path / "foreign.json"
    foreign.write_text(json.dumps({"header": {"format": "other"}, "params": []}), encoding="utf-8")
    with pytest.raises(CheckpointError):
        load_checkpoint(foreign)

    short = tmp_path / "short.json"
    save_checkpoint(short, MlpParams.initialize((2, 3, 1), seed=0))
    document = json.loads(short.read_text(encoding="utf-8"))
    document["params"] = document["params"][:-1]
    short.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(CheckpointError):
        load_checkpoint(short)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.json")
