"""Общие фикстуры тестов."""
from pathlib import Path

import numpy as np
import pytest

from src.config import Config, read_json
from src.harness import corpus_faults, corpus_trajectories
from src.metalearn import MetaConfig, generate_training_corpus, meta_train
from src.quadrotor_sim import FaultSpec
from src.trajgen import Waypoint, min_jerk_segment, multi_waypoint

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

SLALOM = [
    Waypoint((0.0, 0.0, 1.0), 0.0),
    Waypoint((2.0, 1.2, 1.0), 0.5),
    Waypoint((4.0, -1.2, 1.0), 0.5),
    Waypoint((6.0, 1.2, 1.0), 0.5),
    Waypoint((8.0, 0.0, 1.0), 0.0),
]

TRAINING_FAULTS = [
    FaultSpec.nominal(),
    FaultSpec((0.6, 1.0, 1.0, 1.0), name="F1"),
    FaultSpec((0.8, 1.0, 1.0, 1.0), name="F2"),
    FaultSpec((1.0, 0.6, 1.0, 1.0), name="F3"),
    FaultSpec((1.0, 0.8, 1.0, 1.0), name="F4"),
]


@pytest.fixture
def settings():
    return Config(ROOT / "config.json")


@pytest.fixture
def setup(settings):
    return settings.sim_setup


@pytest.fixture
def params(settings):
    return settings.quad_params


@pytest.fixture
def line_traj():
    """Прямая 0 → 2 м по x за 2 с с шагом 0.02 с."""
    zero = np.zeros(3)
    return min_jerk_segment([0.0, 0.0, 1.0], zero, zero, [2.0, 0.0, 1.0], zero, zero, 2.0, 0.02)


@pytest.fixture
def slalom():
    return multi_waypoint(SLALOM, dt=0.02, avg_speed=0.5)


@pytest.fixture(scope="session")
def small_corpus():
    """Корпус из пяти задач на двух коротких траекториях."""
    settings = Config(ROOT / "config.json")
    trajectories = [
        multi_waypoint([Waypoint((0.0, 0.0, 1.0)), Waypoint((2.0, 1.0, 1.0))], dt=0.02, avg_speed=0.5),
        multi_waypoint([Waypoint((0.0, 0.0, 1.0)), Waypoint((-1.0, 2.0, 1.5), 0.3)], dt=0.02, avg_speed=0.6),
    ]
    return generate_training_corpus(TRAINING_FAULTS, trajectories, settings.sim_setup)


@pytest.fixture(scope="session")
def fault_corpus():
    """Корпус из scenarios/training_corpus.json: номинал и F1..F4 на всех траекториях и скоростях."""
    settings = Config(ROOT / "config.json")
    cfg = read_json(SCENARIOS / "training_corpus.json")
    trajectories, provenance = corpus_trajectories(cfg, settings.sim_step)
    return generate_training_corpus(corpus_faults(cfg), trajectories, settings.sim_setup, provenance)


@pytest.fixture(scope="session")
def meta_result(fault_corpus):
    """Мета-обучение (Adam) на поставляемом корпусе для сквозных тестов."""
    cfg = MetaConfig(alpha=0.01, beta=0.001, inner_steps=1, meta_iterations=6000,
                     support_size=20, query_size=20, seed=0, optimizer="adam", log_every=0)
    return meta_train(fault_corpus, cfg, (6, 40, 40, 3), init_seed=0)


@pytest.fixture(scope="session")
def meta_params(meta_result):
    return meta_result.params
