"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that pytest prints in an
"acceptance criteria" section at the end of the run.
"""
import json
import time

import numpy as np
import pytest

from mothernets.archspec import EnsembleSpec, dense_arch, param_count
from mothernets.cli import main
from mothernets.clustering import cluster_greedy_tau, cluster_kmeans
from mothernets.diagnostics import chebyshev_bound, collect_samples, covariance_report
from mothernets.engine import TrainConfig, WeightedNetwork, gradients, init_network, save_dataset
from mothernets.experiments import DeskSetup, g_sweep, speedup
from mothernets.inference import build_shared, chi, member_accuracies, oracle_accuracy, shared_infer
from mothernets.mothernet import build
from mothernets.pipeline import RunConfig, run
from mothernets.testkit import (SyntheticSpec, dense_mother_units, fd_gradients, gen, mother_target_pair,
                                oracle_balanced_kmeans, oracle_consecutive_partitions, random_dense_arch,
                                random_grown_cluster, random_inputs)
from mothernets.transforms import apply_step, deepen_residual, hatch, perturb, plan_hatch
from mothernets.engine import forward


def max_diff(a, b, x):
    return float(np.max(np.abs(forward(a, x) - forward(b, x))))


def test_criterion_1_function_preservation(acceptance):
    start = time.perf_counter()
    worst, checks = 0.0, 0
    for i in range(200):
        rng = np.random.default_rng(10_000 + i)
        src, tgt = mother_target_pair(rng, "dense" if i % 2 == 0 else "conv")
        mother = init_network(src, i)
        x = random_inputs(src, 100, rng)
        plan = plan_hatch(src, tgt, seed=i)
        net = mother
        for step in plan.steps:                       # after every individual transform
            net = apply_step(net, step)
            worst = max(worst, max_diff(mother, net, x))
            checks += 1
        full = hatch(mother, plan)                    # and after the whole plan
        worst = max(worst, max_diff(mother, full, x))
        checks += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed <= 60
    acceptance(1, ok, f"200 pairs, {checks} checks, max |diff| {worst:.2e} (<= 1e-9), {elapsed:.1f}s (<= 60s)")
    assert ok


def independent_conv_minima(members):
    nb = min(len(m.conv_blocks) for m in members)
    out = []
    for b in range(nb):
        depth = min(len(m.conv_blocks[b].layers) for m in members)
        out.append([(min(m.conv_blocks[b].layers[i].filter_size for m in members),
                     min(m.conv_blocks[b].layers[i].num_filters for m in members)) for i in range(depth)])
    return out


def test_criterion_2_construction(acceptance):
    minima_ok = count_ok = 0
    for i in range(500):
        rng = np.random.default_rng(20_000 + i)
        ens = random_grown_cluster(rng, "dense" if i % 2 == 0 else "conv")
        arch = build(ens).arch
        members = list(ens.members)
        good = arch.hidden_units == dense_mother_units([m.hidden_units for m in members])
        if arch.kind == "conv":
            got = [[(l.filter_size, l.num_filters) for l in blk.layers] for blk in arch.conv_blocks]
            good &= got == independent_conv_minima(members)
        minima_ok += good
        count_ok += param_count(arch) <= min(param_count(m) for m in members)
    # clusters with no common ancestor: the minima still hold
    free_ok = 0
    for i in range(500):
        rng = np.random.default_rng(25_000 + i)
        members = [random_dense_arch(rng, n_in=3, n_out=2, max_depth=4, max_units=9)
                   for _ in range(int(rng.integers(1, 7)))]
        free_ok += build(EnsembleSpec(members)).arch.hidden_units == dense_mother_units(
            [m.hidden_units for m in members])
    ok = minima_ok == 500 and count_ok == 500 and free_ok == 500
    acceptance(2, ok, f"minima {minima_ok}/500 grown + {free_ok}/500 unrelated; "
                      f"param_count(M) <= min member {count_ok}/500")
    assert ok


def random_layouts(rng, n):
    return [[int(u) for u in rng.integers(1, 9, int(rng.integers(1, 4)))] for _ in range(n)]


def test_criterion_3_clustering(acceptance):
    greedy_ok = 0
    for i in range(1000):
        rng = np.random.default_rng(30_000 + i)
        ens = EnsembleSpec([dense_arch(2, h, 2) for h in random_layouts(rng, int(rng.integers(1, 11)))])
        tau = float(rng.uniform(0.02, 0.95))
        greedy_ok += len(cluster_greedy_tau(ens, tau).clusters) == oracle_consecutive_partitions(ens, tau)
    optimal, worst_gap, n_km = 0, 0, 1000
    for i in range(n_km):
        rng = np.random.default_rng(35_000 + i)
        n = int(rng.integers(2, 9))
        g = int(rng.integers(1, min(3, n) + 1))
        ls = random_layouts(rng, n)
        gap = cluster_kmeans(EnsembleSpec([dense_arch(2, h, 2) for h in ls]), g, seed=i).objective \
            - oracle_balanced_kmeans(ls, g)
        optimal += gap == 0
        worst_gap = max(worst_gap, gap)
    ok = greedy_ok == 1000 and optimal >= 0.95 * n_km and worst_gap <= 1
    acceptance(3, ok, f"greedy = oracle {greedy_ok}/1000; k-means optimal {optimal}/{n_km} (>= 95%), "
                      f"worst gap {worst_gap} (<= 1)")
    assert ok


def residual_net(rng, seed):
    net = init_network(random_dense_arch(rng, n_in=int(rng.integers(2, 5)), max_depth=3, max_units=5), seed)
    for _ in range(int(rng.integers(1, 3))):
        pos = int(rng.integers(0, len(net.arch.hidden) + 1))
        net = deepen_residual(net, pos, str(rng.choice(["linear", "relu"])))
    # give every parameter, including the zero residual branches, a generic value
    return net.with_weights([w + 0.3 * rng.standard_normal(w.shape) for w in net.weights])


def test_criterion_4_gradients(acceptance):
    worst, with_residual = 0.0, 0
    for i in range(50):
        rng = np.random.default_rng(40_000 + i)
        net = residual_net(rng, i)
        with_residual += any(net.arch.residual)
        b = int(rng.integers(1, 9))
        x = rng.standard_normal((b, net.arch.input_shape))
        y = rng.integers(0, net.arch.num_classes, b)
        for g, f in zip(gradients(net, x, y), fd_gradients(net, x, y, h=1e-6)):
            rel = np.abs(g - f) / np.maximum(np.maximum(np.abs(g), np.abs(f)), 1e-6)
            worst = max(worst, float(rel.max()))
    ok = worst <= 1e-4 and with_residual == 50
    acceptance(4, ok, f"50 nets ({with_residual} with residual blocks), batch 1-8, max rel err {worst:.2e} (<= 1e-4)")
    assert ok


def test_criterion_5_speedup(acceptance):
    start = time.perf_counter()
    res = speedup(DeskSetup(), seed=1)
    elapsed = time.perf_counter() - start
    full, mn = res["full_data"], res["mothernets"]
    ok = res["epoch_ratio"] <= 0.6 and res["accuracy_gap"] <= 0.02 and elapsed <= 300
    acceptance(5, ok, f"epochs {mn.total_epochs}/{full.total_epochs} = {res['epoch_ratio']:.3f} (<= 0.6); "
                      f"accuracy {mn.accuracy:.3f} vs {full.accuracy:.3f}, gap {res['accuracy_gap']:.3f} "
                      f"(<= 0.02); {elapsed:.0f}s (<= 300s)")
    assert ok


def test_criterion_6_g_knob(acceptance):
    rows = g_sweep(DeskSetup(), seeds=range(1, 11), gs=(1, 2, 3))
    epochs = [rows[g]["mean_epochs"] for g in (1, 2, 3)]
    accs = [rows[g]["mean_accuracy"] for g in (1, 2, 3)]
    ok = epochs[0] <= epochs[1] <= epochs[2] and accs[2] >= accs[0]
    acceptance(6, ok, "mean epochs g=1,2,3: " + ", ".join(f"{e:.1f}" for e in epochs) +
               "; mean accuracy: " + ", ".join(f"{a:.4f}" for a in accs))
    assert ok


def test_criterion_7_shared(acceptance):
    worst, identity_ok, n = 0.0, 0, 100
    for i in range(n):
        rng = np.random.default_rng(70_000 + i)
        base = [int(v) for v in rng.integers(1, 6, int(rng.integers(1, 4)))]
        n_in, n_out = int(rng.integers(1, 5)), int(rng.integers(2, 4))
        mother = init_network(dense_arch(n_in, base, n_out), i)
        members = []
        for j in range(int(rng.integers(1, 6))):
            target = dense_arch(n_in, [u + int(rng.integers(0, 5)) for u in base], n_out)
            members.append(hatch(mother, plan_hatch(mother.arch, target, seed=j)))
        sp = build_shared(mother, members)
        x = random_inputs(mother.arch, 100, rng)
        heads = shared_infer(sp, x).probs
        worst = max(worst, max(float(np.abs(heads[j] - forward(m, x)).max()) for j, m in enumerate(members)))
        sizes = [param_count(m.arch) for m in members]
        identity_ok += sp.num_params == sum(sizes) - (len(sizes) - 1) * param_count(mother.arch)
    c = chi(8, [20] * 5)
    ok = worst <= 1e-9 and identity_ok == n and abs(c - 0.6) <= 1e-12
    acceptance(7, ok, f"head vs member max |diff| {worst:.2e} (<= 1e-9); count identity {identity_ok}/{n}; "
                      f"chi(8, 5x20) = {c:.12f}")
    assert ok


def test_criterion_8_diagnostics(acceptance):
    train_cfg = TrainConfig(batch_size=16, max_epochs=10, patience=3)
    train = gen(SyntheticSpec("mix", 200, 2, 0.1, 0))
    test = gen(SyntheticSpec("mix", 100, 2, 0.1, 1))
    ens = EnsembleSpec([dense_arch(2, h, 2) for h in ([8], [12], [8, 8])])
    worst_identity, oracle_ok, fixtures = 0.0, 0, 0
    for strategy, g in (("mothernets", 1), ("mothernets", 2), ("full_data", None), ("bagging", None)):
        cfg = RunConfig(ens, strategy, g=g, train=train_cfg, mother_train=train_cfg)
        rep = covariance_report(collect_samples(cfg, train, test, 3, seeds=[1, 2, 3]))
        worst_identity = max(worst_identity, abs(rep.decomposition() - rep.ensemble_variance))
        for seed in (1, 2):
            nets = list(run(RunConfig(ens, strategy, g=g, train=train_cfg, mother_train=train_cfg, seed=seed),
                            train).networks.values())
            for data in (train, test):
                fixtures += 1
                oracle_ok += oracle_accuracy(nets, data) >= max(member_accuracies(nets, data))
    bound = chebyshev_bound(0.8, 0.01)
    ok = worst_identity <= 1e-12 and abs(bound - 1 / 9) <= 1e-12 and oracle_ok == fixtures
    acceptance(8, ok, f"decomposition residual {worst_identity:.1e} (<= 1e-12); chebyshev(0.8, 0.01) = "
                      f"{bound:.12f}; oracle >= best member {oracle_ok}/{fixtures}")
    assert ok


def test_criterion_9_determinism(acceptance, tmp_path, monkeypatch):
    monkeypatch.delenv("MOTHERNETS_SEED", raising=False)
    fast = TrainConfig(batch_size=16, max_epochs=8, patience=3)
    ens = EnsembleSpec([dense_arch(2, h, 2) for h in ([8], [12], [8, 10], [16, 12])])
    save_dataset(gen(SyntheticSpec("mix", 120, 2, 0.1, 0)), tmp_path / "train.csv")
    save_dataset(gen(SyntheticSpec("mix", 60, 2, 0.1, 1)), tmp_path / "test.csv")
    (tmp_path / "e.json").write_text(json.dumps(ens.to_dict()))
    configs = {"g1": RunConfig(ens, "mothernets", g=1, train=fast, mother_train=fast, seed=5),
               "g2": RunConfig(ens, "mothernets", g=2, train=fast, mother_train=fast, seed=5),
               "tau": RunConfig(ens, "mothernets", tau=0.6, train=fast, mother_train=fast, seed=5),
               "bag": RunConfig(ens, "bagging", train=fast, seed=5)}
    mismatched, compared = [], 0
    for name, cfg in configs.items():
        (tmp_path / f"{name}.json").write_text(json.dumps(cfg.to_dict()))
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            argvs = [["run", "--config", tmp_path / f"{name}.json", "--data", tmp_path / "train.csv",
                      "--out-dir", out],
                     ["eval", "--config", out / "report.json", "--data", tmp_path / "test.csv", "--out",
                      out / "eval.json"],
                     ["cluster", "--ensemble", tmp_path / "e.json", "--strategy", "kmeans", "--g", "2",
                      "--seed", "5", "--out", out / "plan.json"]]
            if name == "g2":           # widen-only clusters, so the shared plan applies
                argvs.append(["share", "--config", out / "report.json", "--out-dir", out / "shared"])
            for argv in argvs:
                assert main([str(a) for a in argv]) == 0
            outs.append(out)
        a, b = outs
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "timing.json")
        for f in files:
            compared += 1
            if (a / f).read_bytes() != (b / f).read_bytes():
                mismatched.append(f"{name}/{f}")
    ok = not mismatched and compared > 0
    acceptance(9, ok, f"{compared} output files compared across repeated CLI runs, "
                      f"{len(mismatched)} differ (wall-clock timing.json excluded)")
    assert ok, mismatched


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
