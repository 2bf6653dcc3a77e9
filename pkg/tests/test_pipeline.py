import json
from dataclasses import replace

import numpy as np
import pytest

from mothernets.archspec import EnsembleSpec, conv_arch, dense_arch
from mothernets.engine import Dataset, TrainConfig, encode_weights
from mothernets.errors import StrategyUnsupported, ValidationError
from mothernets.pipeline import RunConfig, bag_sample, cost_report, derive_seed, run
from mothernets.testkit import SyntheticSpec, gen, oracle_forward_equality

FAST = TrainConfig(batch_size=16, learning_rate=0.1, max_epochs=12, patience=3)


@pytest.fixture(scope="module")
def blobs():
    return gen(SyntheticSpec("blobs", 120, 2, 0.2, 0))


def ensemble(n=3):
    return EnsembleSpec([dense_arch(2, h, 2) for h in ([4, 4], [6, 4], [8, 5], [5, 6, 6])[:n]])


def cfg(strategy="mothernets", **kw):
    return RunConfig(ensemble(kw.pop("n", 3)), strategy, train=FAST, mother_train=FAST, **kw)


def test_g_equal_members_matches_full_data(blobs):
    mn = run(cfg(g=3), blobs)
    full = run(cfg("full_data"), blobs)
    assert mn.mother_logs == {} and mn.hatched == {}
    assert {n: l.epochs for n, l in mn.logs.items()} == {n: l.epochs for n, l in full.logs.items()}
    assert mn.total_epochs == full.total_epochs
    for n in full.networks:
        assert encode_weights(mn.networks[n]) == encode_weights(full.networks[n])


def test_g_one_trains_one_mother(blobs):
    rep = run(cfg(g=1), blobs)
    assert list(rep.mothers) == ["c0"] and len(rep.cluster_plan.clusters) == 1
    assert sorted(rep.hatched) == sorted(rep.networks)
    mother = rep.mothers["c0"].arch
    assert mother.hidden_units == [4, 4]


def test_hatched_members_preserve_mother_function(blobs):
    rep = run(cfg(g=1, noise_sigma=0.0, n=4), blobs)
    for name, h in rep.hatched.items():
        ok, diff = oracle_forward_equality(rep.mothers["c0"], h)
        assert ok, (name, diff)


def test_epoch_accounting_identity(blobs):
    rep = run(cfg(g=2, n=4), blobs)
    assert rep.total_epochs == sum(l.epochs for l in rep.logs.values()) + \
        sum(l.epochs for l in rep.mother_logs.values())
    assert rep.total_epochs == rep.member_epochs + rep.mother_epochs
    assert rep.to_dict()["epochs"]["total"] == rep.total_epochs


@pytest.mark.parametrize("strategy,kw", [("mothernets", {"g": 1}), ("bagging", {}), ("mothernets", {"tau": 0.5})])
def test_reproducible(blobs, strategy, kw):
    a, b = run(cfg(strategy, **kw), blobs), run(cfg(strategy, **kw), blobs)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    for n in a.networks:
        assert encode_weights(a.networks[n]) == encode_weights(b.networks[n])


def test_parallel_matches_serial(blobs):
    a, b = run(cfg(g=1), blobs), run(cfg(g=1), blobs, jobs=3)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_seed_changes_run(blobs):
    a, b = run(cfg("full_data"), blobs), run(cfg("full_data", seed=1), blobs)
    assert any(encode_weights(a.networks[n]) != encode_weights(b.networks[n]) for n in a.networks)


def test_conv_ensemble_rejected(blobs):
    ens = EnsembleSpec([conv_arch((8, 8, 1), [[(3, 2)]], [], 2)])
    with pytest.raises(StrategyUnsupported):
        run(RunConfig(ens, "full_data"), blobs)


@pytest.mark.parametrize("kw", [{"strategy": "mothernets"}, {"strategy": "mothernets", "g": 2, "tau": 0.5},
                                {"strategy": "mothernets", "g": 0}, {"strategy": "mothernets", "g": 4},
                                {"strategy": "boosting"}, {"strategy": "full_data", "finetune_lr_factor": 0}])
def test_run_config_validation(kw):
    with pytest.raises(ValidationError):
        RunConfig(ensemble(), **kw)


def test_run_config_round_trip():
    c = cfg(g=2, noise_sigma=0.05, seed=4, finetune_lr_factor=0.1, bag_hatched=True)
    assert RunConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_bag_single_row():
    d = Dataset(np.array([[1.0, 2.0]]), [1], 2)
    for s in range(5):
        b = bag_sample(d, s)
        assert np.array_equal(b.features, d.features) and list(b.labels) == [1]


def test_bag_unique_fraction():
    n = 2000
    d = Dataset(np.arange(n, dtype=float)[:, None], np.zeros(n, int), 2)
    fracs = [len(np.unique(bag_sample(d, s).features)) / n for s in range(100)]
    assert abs(np.mean(fracs) - (1 - np.exp(-1))) <= 0.02


def test_bag_deterministic():
    d = gen(SyntheticSpec("blobs", 50, 2, 0.1, 0))
    assert np.array_equal(bag_sample(d, 3).features, bag_sample(d, 3).features)
    assert len(bag_sample(d, 3)) == 50


@pytest.mark.parametrize("seconds,rate,usd", [(36000, 0.9, 9.0), (3600, 3.06, 3.06), (0, 0.9, 0.0)])
def test_cost(seconds, rate, usd):
    assert cost_report(seconds, rate) == pytest.approx(usd, abs=1e-12)


@pytest.mark.parametrize("rate", [0, -1.0])
def test_cost_rejects_rate(rate):
    with pytest.raises(ValidationError):
        cost_report(10.0, rate)


def test_derive_seed_stable_and_tagged():
    assert derive_seed(0, "a") == derive_seed(0, "a")
    assert len({derive_seed(0, "a"), derive_seed(0, "b"), derive_seed(1, "a")}) == 3


def test_finetune_factor_scales_rate(blobs):
    slow = run(cfg(g=1, finetune_lr_factor=1e-9, noise_sigma=0.0), blobs)
    for name, h in slow.hatched.items():
        ok, _ = oracle_forward_equality(h, slow.networks[name], tol=1e-5)
        assert ok
