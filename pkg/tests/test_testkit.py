import itertools

import numpy as np
import pytest

from mothernets.archspec import dense_arch, edit_distance, param_count
from mothernets.engine import init_network
from mothernets.testkit import (SyntheticSpec, balanced_partitions, gen, least_squares_accuracy,
                                levenshtein_reference, logistic_accuracy, oracle_balanced_kmeans,
                                oracle_consecutive_partitions, oracle_forward_equality)
from mothernets.transforms import perturb


@pytest.mark.parametrize("generator", ["blobs", "spirals", "mix", "random_images"])
def test_gen_deterministic(generator):
    spec = SyntheticSpec(generator, 50, 3, 0.1, 4)
    a, b = gen(spec), gen(spec)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    assert len(a) == 50 and set(a.labels) <= {0, 1, 2}
    c = gen(SyntheticSpec(generator, 50, 3, 0.1, 5))
    assert not np.array_equal(a.features, c.features)


@pytest.mark.parametrize("seed", range(5))
def test_blobs_linearly_separable(seed):
    assert least_squares_accuracy(gen(SyntheticSpec("blobs", 200, 2, 0.1, seed))) >= 0.95


@pytest.mark.parametrize("seed", range(5))
def test_spirals_not_linear(seed):
    assert logistic_accuracy(gen(SyntheticSpec("spirals", 200, 2, 0.1, seed))) <= 0.7


def test_classes_balanced():
    d = gen(SyntheticSpec("blobs", 10, 3, 0.1, 0))
    assert sorted(np.bincount(d.labels)) == [3, 3, 4]


def test_levenshtein_reference_textbook():
    assert levenshtein_reference("kitten", "sitting") == 3
    assert levenshtein_reference([], [1, 2]) == 2
    assert levenshtein_reference([(3, 32)], [(3, 32)]) == 0


@pytest.mark.parametrize("a,b", [([1, 2, 3], [1, 3]), ([4, 0, 0], [4, 6, 5]), ([], []), ([5], [6, 7, 8, 9])])
def test_levenshtein_matches_library(a, b):
    assert levenshtein_reference(a, b) == edit_distance(a, b)


@pytest.mark.parametrize("n,g", [(4, 2), (5, 2), (6, 3), (7, 3), (5, 5), (3, 1)])
def test_balanced_partitions_complete(n, g):
    parts = list(balanced_partitions(range(n), g))
    seen = {frozenset(frozenset(p) for p in part) for part in parts}
    assert len(seen) == len(parts)
    sizes = {tuple(sorted(len(p) for p in part)) for part in parts}
    q, r = divmod(n, g)
    assert sizes == {tuple([q] * (g - r) + [q + 1] * r)}
    # brute-force count: label assignments that are balanced, divided by label symmetries
    brute = set()
    for labels in itertools.product(range(g), repeat=n):
        groups = [frozenset(i for i in range(n) if labels[i] == c) for c in range(g)]
        if sorted(map(len, groups)) == sorted([q] * (g - r) + [q + 1] * r):
            brute.add(frozenset(groups))
    assert seen == brute


def test_oracle_kmeans_small():
    # two obvious groups: zero cost
    assert oracle_balanced_kmeans([[4], [4], [9, 9], [9, 9]], 2) == 0
    assert oracle_balanced_kmeans([[4], [5]], 1) == 1


def test_oracle_consecutive_examples():
    assert oracle_consecutive_partitions([10, 12, 40, 50], 0.5) == 2
    assert oracle_consecutive_partitions([7, 7, 7], 0.01) == 1
    assert oracle_consecutive_partitions([3, 8, 20, 55], 1e-9) == 4
    with pytest.raises(ValueError):
        oracle_consecutive_partitions(list(range(1, 14)), 0.5)


def test_forward_equality_harness():
    net = init_network(dense_arch(3, [4], 2), 0)
    ok, diff = oracle_forward_equality(net, net)
    assert ok and diff == 0.0
    ok, diff = oracle_forward_equality(net, perturb(net, 0.1, 0))
    assert not ok and diff > 0


def test_forward_equality_input_mismatch():
    with pytest.raises(ValueError):
        oracle_forward_equality(init_network(dense_arch(3, [4], 2), 0), init_network(dense_arch(2, [4], 2), 0))
