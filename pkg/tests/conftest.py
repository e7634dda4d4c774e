"""Shared desk-scale datasets and cached training runs.

Training runs are expensive, so every run is computed at most once per
session and reused by every test that needs it.
"""

from __future__ import annotations

import numpy as np
import pytest

from pantiny.data import DEFAULT_DOMAINS, Dataset, make_sample
from pantiny.losses import LossWeights
from pantiny.model import PRESETS
from pantiny.train import TrainConfig, train_fresh

DATA_SEED = 0
SEEDS = (0, 1, 2)
DESK_STEPS = 2000
DESK_BATCH = 1


def build_dataset(spec, split: str, n: int, seed: int = DATA_SEED) -> Dataset:
    samples = [make_sample(spec, seed, split, i) for i in range(n)]
    return Dataset(spec.name, split, spec.ratio,
                   np.stack([s["lrms"] for s in samples]),
                   np.stack([s["pan"] for s in samples]),
                   np.stack([s["hrms"] for s in samples]))


@pytest.fixture(scope="session")
def desk_data():
    """The three built-in domains at 200 train / 32 test patches of 64x64."""
    train = [build_dataset(d, "train", d.num_train) for d in DEFAULT_DOMAINS]
    test = [build_dataset(d, "test", d.num_test) for d in DEFAULT_DOMAINS]
    return train, test


class RunCache:
    def __init__(self, data):
        self.train_sets, self.test_sets = data
        self._runs: dict = {}

    def get(self, kind: str, seed: int, domain: int | None = None, weights: LossWeights | None = None,
            steps: int = DESK_STEPS):
        key = (kind, seed, domain, weights, steps)
        if key not in self._runs:
            paradigm = "separate" if domain is not None else "all_in_one"
            sets = [self.train_sets[domain]] if domain is not None else self.train_sets
            cfg = TrainConfig(seed=seed, batch=DESK_BATCH, steps=steps, paradigm=paradigm,
                              loss=weights or LossWeights())
            self._runs[key] = train_fresh(PRESETS["small"], sets, cfg, self.test_sets)
        return self._runs[key]

    def all_in_one(self, seed, weights=None, steps=DESK_STEPS):
        return self.get("all", seed, None, weights, steps)

    def separate(self, seed, domain, steps=DESK_STEPS):
        return self.get("sep", seed, domain, None, steps)


@pytest.fixture(scope="session")
def runs(desk_data):
    return RunCache(desk_data)
