import json

import numpy as np
import pytest

from src.metalearn import (
    CorpusError,
    FaultTaskSet,
    MetaConfig,
    MetaTrainingError,
    RunTooShortError,
    SinusoidTaskFamily,
    adaptation_losses,
    build_dataset,
    dataset_sampler,
    generate_training_corpus,
    load_corpus,
    meta_optimize,
    meta_train,
    save_corpus,
    sinusoid_task_set,
    split_support_query,
)
from src.neuralnet import DatasetError, MlpParams, TaskDataset, adapt, loss
from src.quadrotor_sim import FaultSpec, QuadState, RunLog, simulate_tracking

from conftest import TRAINING_FAULTS


def _state(position, velocity):
    return QuadState(position=np.asarray(position, dtype=float), velocity=np.asarray(velocity, dtype=float),
                     attitude=np.zeros(3), angular_rate=np.zeros(3))


def _quick_config(**overrides):
    values = dict(alpha=0.01, beta=0.001, inner_steps=1, meta_iterations=5, support_size=10,
                  query_size=10, seed=0, optimizer="sgd", log_every=0)
    values.update(overrides)
    return MetaConfig(**values)


def test_build_dataset_by_hand():
    run = RunLog(0.02)
    run.append(_state([0, 0, 0], [0, 0, 0]), [0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0])
    run.append(_state([0.1, 0, 0], [1, 0, 0]), [0.2, 0, 0], [1, 0, 0], [0.2, 0, 0], [1, 0, 0])
    data = build_dataset(run, "F1")
    assert len(data) == 1
    np.testing.assert_allclose(data.inputs[0], [0.2, 0, 0, 1, 0, 0])
    np.testing.assert_allclose(data.targets[0], [0.1, 0, 0])
    assert data.fault_id == "F1"


def test_build_dataset_rejects_short_runs():
    run = RunLog(0.02)
    run.append(_state([0, 0, 0], [0, 0, 0]), [0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0])
    with pytest.raises(RunTooShortError) as exc:
        build_dataset(run)
    assert exc.value.code == "run too short"
    assert isinstance(exc.value, DatasetError)


def test_corpus_has_one_task_per_fault(small_corpus):
    assert len(small_corpus) == len(TRAINING_FAULTS)
    assert [f.name for f in small_corpus.faults] == [f.name for f in TRAINING_FAULTS]
    assert small_corpus.faults[0].is_nominal
    assert not small_corpus.skips
    sizes = {len(data) for data in small_corpus.datasets}
    assert len(sizes) == 1
    for data in small_corpus.datasets:
        assert data.inputs.shape[1] == 6
        assert data.targets.shape[1] == 3
    small_corpus.validate()


def test_corpus_argument_errors(setup, line_traj):
    with pytest.raises(CorpusError) as exc:
        generate_training_corpus([], [line_traj], setup)
    assert exc.value.code == "invalid corpus"
    with pytest.raises(CorpusError):
        generate_training_corpus(TRAINING_FAULTS, [], setup)


def test_task_set_validation(small_corpus):
    with pytest.raises(CorpusError):
        FaultTaskSet(tasks=small_corpus.tasks[:1]).validate()
    with pytest.raises(CorpusError):
        FaultTaskSet(tasks=small_corpus.tasks[1:]).validate()


def test_zero_iterations_return_initial_params(small_corpus):
    init = MlpParams.initialize((6, 40, 40, 3), seed=3)
    result = meta_train(small_corpus, _quick_config(meta_iterations=0), (6, 40, 40, 3), init=init)
    np.testing.assert_array_equal(result.params.flat(), init.flat())
    assert result.trace == []


def test_meta_training_is_deterministic(small_corpus):
    a = meta_train(small_corpus, _quick_config(), (6, 20, 3), init_seed=1)
    b = meta_train(small_corpus, _quick_config(), (6, 20, 3), init_seed=1)
    np.testing.assert_array_equal(a.params.flat(), b.params.flat())
    assert a.trace == b.trace
    assert len(a.trace) == 5


def test_meta_train_rejects_wrong_init_topology(small_corpus):
    with pytest.raises(ValueError):
        meta_train(small_corpus, _quick_config(), (6, 20, 3), init=MlpParams.initialize((6, 10, 3)))


def test_non_finite_loss_stops_training():
    bad = TaskDataset(np.zeros((4, 1)), np.full((4, 1), 1e200))
    cfg = _quick_config(support_size=2, query_size=2)
    with pytest.raises(MetaTrainingError) as exc:
        meta_optimize(dataset_sampler([bad], cfg), cfg, MlpParams.initialize((1, 4, 1), seed=0))
    assert exc.value.details["iteration"] == 0


def test_config_validation():
    with pytest.raises(ValueError):
        _quick_config(optimizer="rmsprop")
    with pytest.raises(ValueError):
        _quick_config(meta_iterations=-1)
    with pytest.raises(ValueError):
        _quick_config(alpha=0.0)
    cfg = MetaConfig.from_dict({"alpha": 0.02, "unknown": 1})
    assert cfg.alpha == 0.02
    assert MetaConfig.from_dict(cfg.to_dict()) == cfg


def test_support_and_query_are_disjoint():
    data = TaskDataset(np.arange(50, dtype=float).reshape(-1, 1), np.zeros((50, 1)))
    rng = np.random.default_rng(0)
    support, query = split_support_query(data, 20, 20, rng)
    assert len(support) == 20 and len(query) == 20
    assert not set(support.inputs[:, 0]) & set(query.inputs[:, 0])

    small = data.subset(range(7))
    support, query = split_support_query(small, 20, 20, rng)
    assert len(support) == 3 and len(query) == 4
    assert not set(support.inputs[:, 0]) & set(query.inputs[:, 0])

    with pytest.raises(DatasetError):
        split_support_query(data.subset([0]), 1, 1, rng)


def test_sampler_draws_a_subset_of_tasks():
    tasks = sinusoid_task_set(6, 10, seed=0)
    cfg = _quick_config(support_size=4, query_size=4, tasks_per_iteration=2)
    pairs = dataset_sampler(tasks, cfg)(np.random.default_rng(0), 0)
    assert len(pairs) == 2
    assert all(len(s) == 4 and len(q) == 4 for s, q in pairs)


def test_corpus_files_round_trip(tmp_path, small_corpus):
    manifest_path = save_corpus(small_corpus, tmp_path / "corpus", config_hash="c" * 64)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    assert manifest["format"] == "meta-recovery-corpus"
    assert len(manifest["data"]["tasks"]) == len(small_corpus)
    assert "created_at" in manifest["meta"]

    loaded, _ = load_corpus(tmp_path / "corpus")
    assert [f.name for f in loaded.faults] == [f.name for f in small_corpus.faults]
    for original, restored in zip(small_corpus.datasets, loaded.datasets):
        np.testing.assert_array_equal(restored.inputs, original.inputs)
        np.testing.assert_array_equal(restored.targets, original.targets)

    save_corpus(small_corpus, tmp_path / "again", config_hash="c" * 64)
    again = json.loads((tmp_path / "again" / "manifest.json").read_text(encoding="utf-8"))
    assert again["data"] == manifest["data"]


def test_load_corpus_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "absent")
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}), encoding="utf-8")
    with pytest.raises(CorpusError):
        load_corpus(tmp_path)


@pytest.mark.slow
def test_adaptation_lowers_loss_on_fault_tasks(fault_corpus, meta_params):
    rng = np.random.default_rng(0)
    before, after = [], []
    for data in fault_corpus.datasets:
        support, query = split_support_query(data, 20, 20, rng)
        b, a = adaptation_losses(meta_params, support, query, alpha=0.01, steps=5)
        before.append(b)
        after.append(a)
    assert np.mean(after) < np.mean(before)


@pytest.mark.slow
def test_meta_initialization_adapts_better_than_random_on_unseen_fault(slalom, setup, meta_params):
    unseen = FaultSpec((1.0, 0.7, 1.0, 1.0), name="F1*")
    run = simulate_tracking(QuadState.at_rest(slalom.pos[0]), slalom, unseen, setup)
    data = build_dataset(run, unseen.name)
    meta_losses, random_losses = [], []
    for seed in range(10):
        support, query = split_support_query(data, 20, 20, np.random.default_rng(seed))
        meta_losses.append(adaptation_losses(meta_params, support, query, alpha=0.01, steps=5)[1])
        random_init = MlpParams.initialize((6, 40, 40, 3), seed=seed)
        random_losses.append(adaptation_losses(random_init, support, query, alpha=0.01, steps=5)[1])
    assert np.mean(meta_losses) < np.mean(random_losses)


@pytest.mark.slow
def test_trailing_query_loss_decreases_on_fault_corpus(meta_result):
    trace = np.asarray(meta_result.trace, dtype=float)
    assert np.all(np.isfinite(trace))
    quarter = len(trace) // 4
    first = trace[:100].mean()
    assert trace[quarter - 100:quarter].mean() < first
    assert trace[-100:].mean() < first


@pytest.mark.slow
def test_meta_learning_beats_plain_initialization_on_sinusoids():
    family = SinusoidTaskFamily()
    cfg = MetaConfig(alpha=0.005, beta=0.001, inner_steps=5, meta_iterations=15000, support_size=10,
                     query_size=10, seed=0, optimizer="adam", log_every=0, tasks_per_iteration=10)
    init = MlpParams.initialize((1, 40, 40, 1), seed=0)
    learned = meta_optimize(family.sampler(cfg), cfg, init).params

    rng = np.random.default_rng(123)
    meta_losses, plain_losses, unadapted_losses = [], [], []
    for _ in range(20):
        amplitude, phase = family.sample_task(rng)
        support = family.dataset(amplitude, phase, 10, rng)
        query = family.dataset(amplitude, phase, 50, rng)
        meta_losses.append(loss(adapt(learned, support, 0.005, 5), query))
        plain_losses.append(loss(adapt(init, support, 0.005, 5), query))
        unadapted_losses.append(loss(learned, query))
    assert np.mean(meta_losses) < 0.8 * np.mean(plain_losses)
    assert np.mean(meta_losses) <= 0.2 * np.mean(unadapted_losses)
