"""Shared fixtures: a tiny training setup for unit tests and the full
acceptance-scale category model, both session-scoped so their cost is paid
once per run."""

import time

import numpy as np
import pytest

from semshape import (
    CategorySpec,
    TrainConfig,
    aggregate_instance_features,
    build_semantic_prototype,
    generate_category,
    synthesize,
    train_category_model,
)


def _attach(model, params, instances, k_agg):
    mats = [
        aggregate_instance_features(synthesize(model, p), inst, k_agg)
        for p, inst in zip(params, instances)
    ]
    return model.with_semantics(build_semantic_prototype(mats))


@pytest.fixture(scope="session")
def mini_setup():
    """Small bottle category and model: fast enough for unit tests."""
    spec = CategorySpec(family="bottle", instance_count=8, points_per_instance=512, seed=21)
    dataset = generate_category(spec)
    train = dataset.instances[:6]
    cfg = TrainConfig(basis_dim=3, prototype_points=256, epochs=200, fit_iters=200, seed=4)
    result = train_category_model(train, cfg, category_id="bottle")
    model = _attach(result.model, result.params, train, cfg.k_agg)
    return {
        "dataset": dataset,
        "train": train,
        "held": dataset.instances[6:],
        "model": model,
        "result": result,
        "cfg": cfg,
    }


@pytest.fixture(scope="session")
def bottle_setup():
    """Acceptance-scale bottle category: 20 train / 5 held-out instances,
    1024 prototype points, 5 basis vectors, 1000 epochs."""
    spec = CategorySpec(family="bottle", instance_count=25, points_per_instance=2048, seed=7)
    dataset = generate_category(spec)
    train = dataset.instances[:20]
    cfg = TrainConfig(basis_dim=5, prototype_points=1024, epochs=1000, fit_iters=300, seed=3)
    t0 = time.perf_counter()
    result = train_category_model(train, cfg, category_id="bottle")
    model = _attach(result.model, result.params, train, cfg.k_agg)
    return {
        "dataset": dataset,
        "train": train,
        "held": dataset.instances[20:],
        "model": model,
        "result": result,
        "cfg": cfg,
        "train_seconds": time.perf_counter() - t0,
    }


@pytest.fixture()
def announce(capsys):
    """Print one uncaptured status line per acceptance criterion."""

    def _announce(line: str):
        with capsys.disabled():
            print(line, flush=True)

    return _announce


def random_rotation(rng) -> np.ndarray:
    """Uniform rotation matrix (Shoemake quaternion method)."""
    u1, u2, u3 = rng.uniform(0.0, 1.0, 3)
    q = np.array([
        np.sqrt(1 - u1) * np.sin(2 * np.pi * u2),
        np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
        np.sqrt(u1) * np.sin(2 * np.pi * u3),
        np.sqrt(u1) * np.cos(2 * np.pi * u3),
    ])
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
