"""Desk-scale experiments: training-time speedup and the g tradeoff."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .archspec import EnsembleSpec, dense_arch
from .engine import TrainConfig
from .inference import predict_average
from .pipeline import RunConfig, run
from .testkit import SyntheticSpec, gen


@dataclass(frozen=True)
class DeskSetup:
    hidden: tuple = ((16, 16), (24, 16), (32, 24))
    n_train: int = 1000
    n_test: int = 1000
    noise: float = 0.1
    data_seed: int = 0
    test_seed: int = 99
    train: TrainConfig = TrainConfig(batch_size=32, learning_rate=0.05, max_epochs=400, patience=15)
    finetune_lr_factor: float = 0.1

    def ensemble(self) -> EnsembleSpec:
        return EnsembleSpec([dense_arch(2, list(h), 2) for h in self.hidden])

    def data(self) -> tuple:
        train = gen(SyntheticSpec("mix", self.n_train, 2, self.noise, self.data_seed))
        test = gen(SyntheticSpec("mix", self.n_test, 2, self.noise, self.test_seed))
        return train, test

    def config(self, strategy: str, g=None, seed: int = 0) -> RunConfig:
        return RunConfig(self.ensemble(), strategy, g=g, train=self.train, mother_train=self.train, seed=seed,
                         finetune_lr_factor=self.finetune_lr_factor)


@dataclass
class Outcome:
    label: str
    total_epochs: int
    mother_epochs: int
    accuracy: float
    wall_seconds: float


def run_one(setup: DeskSetup, strategy: str, g=None, seed: int = 0, data=None) -> Outcome:
    train, test = data or setup.data()
    t = time.perf_counter()
    report = run(setup.config(strategy, g, seed), train)
    acc = predict_average([report.networks[n] for n in sorted(report.networks)], test)[1]
    label = strategy if g is None else f"{strategy}(g={g})"
    return Outcome(label, report.total_epochs, report.mother_epochs, acc, time.perf_counter() - t)


def speedup(setup: DeskSetup = DeskSetup(), seed: int = 1) -> dict:
    data = setup.data()
    full = run_one(setup, "full_data", seed=seed, data=data)
    mn = run_one(setup, "mothernets", 1, seed, data)
    return {"full_data": full, "mothernets": mn, "epoch_ratio": mn.total_epochs / full.total_epochs,
            "accuracy_gap": abs(mn.accuracy - full.accuracy)}


def g_sweep(setup: DeskSetup = DeskSetup(), seeds=range(1, 11), gs=(1, 2, 3)) -> dict:
    data = setup.data()
    rows = {g: [run_one(setup, "mothernets", g, s, data) for s in seeds] for g in gs}
    return {g: {"mean_epochs": float(np.mean([o.total_epochs for o in rows[g]])),
                "mean_accuracy": float(np.mean([o.accuracy for o in rows[g]])),
                "epochs": [o.total_epochs for o in rows[g]],
                "accuracy": [o.accuracy for o in rows[g]]} for g in gs}
