"""Oracles and generators for the property suites.

The oracles here deliberately avoid the code paths they check: edit distance
is a memoized recursion rather than the row DP, MotherNet vectors are
recomputed from raw layer lists, and gradients come from central differences.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .archspec import (ConvBlockSpec, ConvLayerSpec, DenseLayerSpec, EnsembleSpec, NetworkArch, dense_arch,
                       param_count)
from .engine import Dataset, WeightedNetwork, cross_entropy, forward
from .mothernet import build
from .errors import ValidationError


# -- edit distance / clustering oracles ------------------------------------------------------

def levenshtein_reference(a: Sequence, b: Sequence) -> int:
    a, b = tuple(map(_freeze, a)), tuple(map(_freeze, b))

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def _freeze(e):
    return tuple(e) if isinstance(e, (list, tuple)) else e


def dense_mother_units(layouts: Sequence[Sequence[int]]) -> list:
    depth = min(len(l) for l in layouts)
    return [min(l[i] for l in layouts) for i in range(depth)]


def _padded(units, length):
    return list(units) + [0] * (length - len(units))


def balanced_partitions(items: Sequence, g: int):
    """Yield every partition of ``items`` into ``g`` unlabeled groups with sizes within one."""
    n = len(items)
    q, r = divmod(n, g)
    items = list(items)

    def rec(rest, groups, big_left):
        if not rest:
            if len(groups) == g:
                yield [list(x) for x in groups]
            return
        if len(groups) == g:
            return
        first, others = rest[0], rest[1:]
        for size in ((q + 1,) if big_left else ()) + ((q,) if (g - len(groups)) > big_left else ()):
            if size == 0:
                continue
            for combo in itertools.combinations(others, size - 1):
                grp = [first, *combo]
                left = [x for x in others if x not in combo]
                yield from rec(left, groups + [grp], big_left - (size == q + 1))

    yield from rec(items, [], r)


def oracle_balanced_kmeans(layouts: Sequence[Sequence[int]], g: int) -> int:
    """Exhaustive minimum total edit distance over balanced partitions (dense hidden layouts)."""
    length = max(len(l) for l in layouts)
    best = None
    for part in balanced_partitions(range(len(layouts)), g):
        total = 0
        for grp in part:
            mother = _padded(dense_mother_units([layouts[i] for i in grp]), length)
            total += sum(levenshtein_reference(_padded(layouts[i], length), mother) for i in grp)
        best = total if best is None else min(best, total)
    return best


def _tau_ok(archs, tau) -> bool:
    m = param_count(build(EnsembleSpec(list(archs))).arch)
    return all(param_count(a) - m < tau * param_count(a) for a in archs)


def oracle_consecutive_partitions(members, tau: float) -> int:
    """Minimum cluster count over consecutive partitions of the size-sorted members.

    ``members`` is an EnsembleSpec, a list of NetworkArch, or a list of
    single-hidden-layer sizes (2 inputs, 2 classes).
    """
    if isinstance(members, EnsembleSpec):
        archs = list(members.members)
        names = list(members.names)
    elif all(isinstance(m, NetworkArch) for m in members):
        archs, names = list(members), [f"net{i}" for i in range(len(members))]
    else:
        archs = [dense_arch(2, [int(s)], 2) for s in members]
        names = [f"net{i}" for i in range(len(archs))]
    if len(archs) > 12:
        raise ValidationError("the consecutive-partition oracle is capped at 12 members")
    order = sorted(range(len(archs)), key=lambda i: (param_count(archs[i]), names[i]))
    archs = [archs[i] for i in order]
    n = len(archs)
    best = n
    for mask in range(1 << (n - 1)):
        cuts = [0] + [i + 1 for i in range(n - 1) if mask >> i & 1] + [n]
        k = len(cuts) - 1
        if k >= best:
            continue
        if all(_tau_ok(archs[cuts[i]:cuts[i + 1]], tau) for i in range(k)):
            best = k
    return best


# -- network oracles -----------------------------------------------------------------------

def random_inputs(arch: NetworkArch, n: int, rng) -> np.ndarray:
    shape = (arch.input_shape,) if arch.kind == "dense" else tuple(arch.input_shape)
    return rng.standard_normal((n,) + shape)


def oracle_forward_equality(a: WeightedNetwork, b: WeightedNetwork, trials: int = 100, tol: float = 1e-9,
                            seed: int = 0) -> tuple:
    """Compare output probabilities on ``trials`` standard-normal inputs; returns (ok, max abs diff)."""
    if a.arch.input_shape != b.arch.input_shape:
        raise ValidationError("networks disagree on input shape")
    x = random_inputs(a.arch, trials, np.random.default_rng(seed))
    diff = float(np.max(np.abs(forward(a, x) - forward(b, x))))
    return diff <= tol, diff


def fd_gradients(net: WeightedNetwork, x, y, h: float = 1e-5) -> list:
    """Central finite differences of the mean cross-entropy."""
    grads = []
    for k, w in enumerate(net.weights):
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            ws = [v.copy() for v in net.weights]
            ws[k][idx] += h
            up = cross_entropy(net.with_weights(ws), x, y)
            ws[k][idx] -= 2 * h
            down = cross_entropy(net.with_weights(ws), x, y)
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


# -- synthetic data -------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    generator: str      # blobs | spirals | mix | random_images
    n: int
    num_classes: int = 2
    noise: float = 0.1
    seed: int = 0
    shape: tuple = (8, 8, 1)      # random_images only


def gen(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    k, n = spec.num_classes, spec.n
    labels = np.arange(n) % k
    rng.shuffle(labels)
    if spec.generator == "blobs":
        angles = 2 * np.pi * np.arange(k) / k
        centers = np.stack([np.cos(angles), np.sin(angles)], axis=1) * (1.0 if k == 2 else 2.0)
        x = centers[labels] + spec.noise * rng.standard_normal((n, 2))
        return Dataset(x, labels, k)
    if spec.generator == "spirals":
        return _spirals(rng, labels, k, spec.noise, 5.0)
    if spec.generator == "mix":
        # looser spirals around the origin next to a blob pair shifted to x = +3
        half = n // 2
        s = _spirals_spec(SyntheticSpec("spirals", n - half, k, spec.noise, spec.seed), 2.5)
        b = gen(SyntheticSpec("blobs", half, k, spec.noise, spec.seed + 1))
        x = np.vstack([s.features, b.features + np.array([3.0, 0.0])])
        y = np.concatenate([s.labels, b.labels])
        order = rng.permutation(n)
        return Dataset(x[order], y[order], k)
    if spec.generator == "random_images":
        x = rng.standard_normal((n,) + tuple(spec.shape))
        return Dataset(x, labels, k, tuple(spec.shape))
    raise ValidationError(f"unknown generator {spec.generator!r}")


def _spirals(rng, labels, k, noise, half_turns) -> Dataset:
    n = len(labels)
    t = np.sqrt(rng.uniform(0.05, 1.0, n)) * half_turns * np.pi
    phase = 2 * np.pi * labels / k
    x = np.stack([t * np.cos(t + phase), t * np.sin(t + phase)], axis=1) / (half_turns * np.pi)
    x += noise * rng.standard_normal((n, 2))
    return Dataset(x, labels, k)


def _spirals_spec(spec: SyntheticSpec, half_turns: float) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    labels = np.arange(spec.n) % spec.num_classes
    rng.shuffle(labels)
    return _spirals(rng, labels, spec.num_classes, spec.noise, half_turns)


def least_squares_accuracy(data: Dataset) -> float:
    """Closed-form one-vs-rest linear classifier fitted by least squares."""
    x = np.hstack([data.features.reshape(len(data), -1), np.ones((len(data), 1))])
    y = np.eye(data.num_classes)[data.labels] * 2 - 1
    w, *_ = np.linalg.lstsq(x, y, rcond=None)
    return float(np.mean(np.argmax(x @ w, axis=1) == data.labels))


def logistic_accuracy(data: Dataset, steps: int = 2000, lr: float = 0.5) -> float:
    """Multinomial logistic regression by full-batch gradient descent."""
    x = np.hstack([data.features.reshape(len(data), -1), np.ones((len(data), 1))])
    y = np.eye(data.num_classes)[data.labels]
    w = np.zeros((x.shape[1], data.num_classes))
    for _ in range(steps):
        z = x @ w
        p = np.exp(z - z.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        w -= lr * x.T @ (p - y) / len(data)
    return float(np.mean(np.argmax(x @ w, axis=1) == data.labels))


# -- random architectures ---------------------------------------------------------------------

def random_dense_arch(rng, n_in: int = 3, n_out: int = 2, max_depth: int = 3, max_units: int = 6,
                      min_depth: int = 1) -> NetworkArch:
    depth = int(rng.integers(min_depth, max_depth + 1))
    return dense_arch(n_in, [int(u) for u in rng.integers(1, max_units + 1, depth)], n_out)


def random_conv_arch(rng, input_shape=(10, 10, 2), n_out: int = 3) -> NetworkArch:
    """Random conv net; draws again until the feature map stays at least 1x1."""
    while True:
        nblocks = int(rng.integers(1, 3))
        blocks = []
        for b in range(nblocks):
            depth = int(rng.integers(1, 3))
            blocks.append(ConvBlockSpec([ConvLayerSpec(int(rng.choice([1, 3])), int(rng.integers(1, 4)))
                                         for _ in range(depth)], followed_by_pool=b == 0))
        hidden = [DenseLayerSpec(int(u)) for u in rng.integers(2, 6, int(rng.integers(0, 3)))]
        try:
            return NetworkArch("conv", input_shape, blocks, hidden + [DenseLayerSpec(n_out, "softmax")])
        except ValidationError:
            continue


WIDEN_OPS = ("widen", "conv_widen", "enlarge")


def grow(arch: NetworkArch, rng, steps: int = 3, allow_residual: bool = True,
         allow_new_blocks: bool = True, only=None) -> NetworkArch:
    """Randomly expand an architecture with operations hatching can undo.

    Dense layers are inserted at positions with a nonnegative input and with
    the width of their input so an identity (or zero residual) init exists.
    """
    for _ in range(steps):
        ops = ["widen", "deepen"] + (["residual"] if allow_residual else [])
        if arch.kind == "conv":
            ops += ["conv_widen", "conv_deepen", "enlarge"] + (["conv_block"] if allow_new_blocks else [])
        if only is not None:
            ops = [o for o in ops if o in only]
        op = ops[int(rng.integers(len(ops)))]
        try:
            arch = _grow_step(arch, op, rng)
        except ValidationError:
            continue
    return arch


def _grow_step(arch: NetworkArch, op: str, rng) -> NetworkArch:
    from .transforms import dense_input_nonneg
    layers, res = list(arch.dense_layers), list(arch.residual)
    widths = [arch.dense_input_width] + [l.units for l in layers]
    if op == "widen":
        idx = [i for i in range(len(layers) - 1) if not res[i]]
        if not idx:
            return arch
        i = idx[int(rng.integers(len(idx)))]
        new_units = layers[i].units + int(rng.integers(1, 4))
        layers[i] = DenseLayerSpec(new_units, layers[i].activation)
        # residual layers directly after i track its width
        j = i + 1
        while res[j]:
            layers[j] = DenseLayerSpec(new_units, layers[j].activation)
            j += 1
        return arch.replace(dense_layers=layers)
    if op in ("deepen", "residual"):
        pos = [p for p in range(len(layers)) if op == "residual" or dense_input_nonneg(arch, p)]
        if not pos:
            return arch
        p = pos[int(rng.integers(len(pos)))]
        act = "relu" if op == "deepen" else str(rng.choice(["relu", "linear"]))
        layers.insert(p, DenseLayerSpec(widths[p], act))
        res.insert(p, op == "residual")
        return arch.replace(dense_layers=layers, residual=res)
    blocks = [list(b.layers) for b in arch.conv_blocks]
    pools = [b.followed_by_pool for b in arch.conv_blocks]
    flat = [(b, i) for b in range(len(blocks)) for i in range(len(blocks[b]))]
    if op in ("conv_widen", "enlarge"):
        b, i = flat[int(rng.integers(len(flat)))]
        l = blocks[b][i]
        if op == "conv_widen":
            blocks[b][i] = ConvLayerSpec(l.filter_size, l.num_filters + int(rng.integers(1, 3)), l.padding)
        else:
            # same-size padding, as hatching would produce
            blocks[b][i] = ConvLayerSpec(l.filter_size + 2, l.num_filters, l.padding + 1)
    elif op == "conv_deepen":
        b = int(rng.integers(len(blocks)))
        blocks[b].append(ConvLayerSpec(1, blocks[b][-1].num_filters))
    else:
        blocks.append([ConvLayerSpec(1, blocks[-1][-1].num_filters)])
        pools.append(False)
    return arch.replace(conv_blocks=[ConvBlockSpec(l, p) for l, p in zip(blocks, pools)])


def mother_target_pair(rng, kind: str = "dense", steps: Optional[int] = None) -> tuple:
    """A random source architecture and a random expansion of it."""
    if kind == "dense":
        src = random_dense_arch(rng, n_in=int(rng.integers(2, 5)), n_out=int(rng.integers(2, 4)))
    else:
        src = random_conv_arch(rng, input_shape=(int(rng.integers(8, 11)), int(rng.integers(8, 11)),
                                                 int(rng.integers(1, 3))))
    return src, _grow_valid(src, rng, int(rng.integers(1, 5)) if steps is None else steps)


def _append_layers(arch: NetworkArch, rng, steps: int) -> NetworkArch:
    for _ in range(steps):
        layers, res = list(arch.dense_layers), list(arch.residual)
        width = layers[-2].units if len(layers) > 1 else arch.dense_input_width
        if arch.kind == "conv" and rng.random() < 0.5:
            blocks = [list(b.layers) for b in arch.conv_blocks]
            b = int(rng.integers(len(blocks)))
            blocks[b].append(ConvLayerSpec(1, blocks[b][-1].num_filters))
            arch = arch.replace(conv_blocks=[ConvBlockSpec(l, x.followed_by_pool)
                                             for l, x in zip(blocks, arch.conv_blocks)])
        elif arch.kind == "conv" or len(layers) > 1:
            arch = arch.replace(dense_layers=layers[:-1] + [DenseLayerSpec(width)] + layers[-1:],
                                residual=res[:-1] + [False] + res[-1:])
    return arch


def _grow_valid(src, rng, steps):
    # conv targets are judged with hatch-time padding; valid-conv shrinkage is fine
    return grow(src, rng, steps)


def random_grown_cluster(rng, kind: str = "dense", n: Optional[int] = None) -> EnsembleSpec:
    """Members obtained by randomly growing one shared base architecture."""
    base, _ = mother_target_pair(rng, kind, steps=0)
    n = int(rng.integers(1, 7)) if n is None else n
    # Members widen, then append layers at the end of each conv block or dense
    # tail.  Interior insertions shift positions, after which the per-position
    # minimum can be wider than a member's later layers and nothing hatches.
    members = []
    for _ in range(n):
        m = grow(base, rng, int(rng.integers(0, 3)), only=WIDEN_OPS)
        members.append(_append_layers(m, rng, int(rng.integers(0, 3))))
    return EnsembleSpec(members)
