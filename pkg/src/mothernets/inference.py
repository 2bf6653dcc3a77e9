"""Ensemble prediction and shared-MotherNet inference.

A shared plan stores MotherNet-origin units once.  For each widen-only member
the hatched layer ``j`` splits into ``m_j`` origin units (the first ones) and
``d_j`` introduced units.  Origin units carry shared weights ``A_j`` (folded:
the rows of replicated copies of an origin input are summed back onto it),
introduced units carry per-member weights, and the K output heads share the
origin-to-output weights.  Contributions of introduced units into origin
units (``B``) start at zero, so at hatch time every head reproduces its
member exactly.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .archspec import DenseLayerSpec, NetworkArch
from .engine import (Dataset, TrainConfig, TrainLog, WeightedNetwork, _dense_forward, _log_softmax, _prepare_input,
                     atomic_write, decode_weights, dense_backward, encode_weights, softmax)
from .errors import ShapeMismatch, UnsupportedTopology, ValidationError
from .transforms import HatchPlan


# -- plain ensembles ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionMatrix:
    probs: np.ndarray       # (networks, examples, classes)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] < 1:
            raise ShapeMismatch("probs must be (networks, examples, classes)")
        if not np.allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-9):
            raise ValidationError("every probability row must sum to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_nets(cls, nets, x) -> "PredictionMatrix":
        from .engine import forward
        return cls(np.stack([forward(n, x) for n in nets]))

    @property
    def member_labels(self) -> np.ndarray:
        return np.argmax(self.probs, axis=-1)

    def average(self) -> np.ndarray:
        return np.argmax(self.probs.mean(axis=0), axis=-1)

    def vote(self) -> np.ndarray:
        labels = self.member_labels
        counts = np.apply_along_axis(np.bincount, 0, labels, minlength=self.probs.shape[2])
        return np.argmax(counts, axis=0)    # first maximum: ties go to the lowest class


def _matrix(nets, data: Dataset) -> PredictionMatrix:
    if isinstance(nets, PredictionMatrix):
        return nets
    nets = list(nets)
    if not nets:
        raise ValidationError("need at least one network")
    outs = {(n.arch.input_shape, n.arch.output) for n in nets}
    if len(outs) != 1:
        raise ShapeMismatch("networks disagree on input or output shape")
    return PredictionMatrix.from_nets(nets, data.features)


def _accuracy(labels, data: Dataset) -> float:
    return float(np.mean(labels == data.labels))


def predict_average(nets, data: Dataset) -> tuple:
    """Argmax of the mean member probability row; returns (labels, accuracy)."""
    labels = _matrix(nets, data).average()
    return labels, _accuracy(labels, data)


def predict_vote(nets, data: Dataset) -> tuple:
    labels = _matrix(nets, data).vote()
    return labels, _accuracy(labels, data)


def oracle_accuracy(nets, data: Dataset) -> float:
    """Fraction of examples on which at least one member is right."""
    labels = _matrix(nets, data).member_labels
    return float(np.mean(np.any(labels == data.labels[None, :], axis=0)))


def member_accuracies(nets, data: Dataset) -> list:
    labels = _matrix(nets, data).member_labels
    return [float(np.mean(row == data.labels)) for row in labels]


def chi(mother_size: int, member_sizes) -> float:
    """1 - k|M| / sum |N_i|."""
    sizes = list(member_sizes)
    if not sizes:
        raise ValidationError("need at least one member size")
    if mother_size > min(sizes):
        raise ValidationError("the MotherNet cannot be larger than a member")
    return 1.0 - len(sizes) * mother_size / sum(sizes)


def shared_reduction(mother_size: int, member_sizes) -> float:
    """Fraction of parameters removed by sharing: (k-1)|M| / sum |N_i|."""
    sizes = list(member_sizes)
    return (len(sizes) - 1) * mother_size / sum(sizes)


# -- shared MotherNets ---------------------------------------------------------------------------------

@dataclass
class SharedPlan:
    """``mother`` holds the shared origin parameters (MotherNet-shaped).

    ``deltas[i][j]`` has the introduced tensors of member ``i`` at dense layer
    ``j``: ``C`` (origin in -> new), ``D`` (new in -> new), ``e`` (new bias)
    and ``B`` (new in -> origin).
    """
    mother: WeightedNetwork
    names: tuple
    plans: tuple
    deltas: list
    member_sizes: tuple = field(default=())

    @property
    def k(self) -> int:
        return len(self.names)

    @property
    def origin_widths(self) -> list:
        return [l.units for l in self.mother.arch.dense_layers]

    def intro_widths(self, i: int) -> list:
        return [d["e"].size for d in self.deltas[i]]

    @property
    def num_params(self) -> int:
        return self.mother.num_params + sum(t.size for d in self.deltas for layer in d for t in layer.values())

    def chi(self) -> float:
        return chi(self.mother.num_params, self.member_sizes)

    def reduction(self) -> float:
        return shared_reduction(self.mother.num_params, self.member_sizes)

    def accounting(self) -> dict:
        return {"shared_params": self.num_params, "mother_params": self.mother.num_params,
                "member_params": list(self.member_sizes), "unshared_params": int(sum(self.member_sizes)),
                "chi": self.chi(), "reduction": self.reduction()}

    # parameters as a flat, ordered list (shared first, then member deltas)
    def param_list(self) -> list:
        out = list(self.mother.weights)
        for d in self.deltas:
            for layer in d:
                out += [layer[k] for k in "CDeB"]
        return out

    def with_params(self, params) -> "SharedPlan":
        params = list(params)
        nm = len(self.mother.weights)
        mother = self.mother.with_weights(params[:nm])
        pos, deltas = nm, []
        for d in self.deltas:
            new = []
            for layer in d:
                new.append({k: np.asarray(params[pos + t], dtype=np.float64) for t, k in enumerate("CDeB")})
                pos += 4
            deltas.append(new)
        return SharedPlan(mother, self.names, self.plans, deltas, self.member_sizes)

    # -- serialization: mother MNWB + per-member delta bundles + JSON graph --
    def save(self, directory) -> None:
        directory = Path(directory)
        atomic_write(directory / "mother.mnwb", encode_weights(self.mother))
        for name, d in zip(self.names, self.deltas):
            arrays = {f"{k}{j}": layer[k] for j, layer in enumerate(d) for k in "CDeB"}
            buf = io.BytesIO()
            np.savez(buf, **arrays)
            atomic_write(directory / f"delta_{name}.npz", buf.getvalue())
        graph = {"names": list(self.names), "plans": [p.to_dict() for p in self.plans],
                 "origin_widths": self.origin_widths,
                 "intro_widths": {n: self.intro_widths(i) for i, n in enumerate(self.names)},
                 "member_sizes": list(self.member_sizes), "accounting": self.accounting()}
        atomic_write(directory / "graph.json", json.dumps(graph, sort_keys=True, indent=2))

    @classmethod
    def load(cls, directory) -> "SharedPlan":
        directory = Path(directory)
        graph = json.loads((directory / "graph.json").read_text())
        mother, _ = decode_weights((directory / "mother.mnwb").read_bytes())
        deltas = []
        nl = len(mother.arch.dense_layers)
        for name in graph["names"]:
            with np.load(directory / f"delta_{name}.npz") as z:
                deltas.append([{k: z[f"{k}{j}"].astype(np.float64) for k in "CDeB"} for j in range(nl)])
        return cls(mother, tuple(graph["names"]), tuple(HatchPlan.from_dict(p) for p in graph["plans"]), deltas,
                   tuple(graph["member_sizes"]))


def _unit_sources(plan: HatchPlan) -> list:
    """For each dense layer of the target, the origin unit every unit copies."""
    src = [np.arange(l.units) for l in plan.source.dense_layers]
    for step in plan.steps:
        if step.section != "dense" or step.kind != "widen":
            raise UnsupportedTopology(f"shared plans need dense widen-only hatching, got {step.kind}")
        src[step.position] = src[step.position][np.asarray(step.replication_map)]
    return src


def build_shared(mother: WeightedNetwork, members, names=None) -> SharedPlan:
    """Consolidate widen-only hatched members around one copy of the MotherNet."""
    members = list(members)
    if not members:
        raise ValidationError("need at least one member")
    arch = mother.arch
    if arch.kind != "dense":
        raise UnsupportedTopology("shared inference is dense-only")
    if any(arch.residual):
        raise UnsupportedTopology("residual MotherNets are not supported for sharing")
    names = tuple(names) if names is not None else tuple(f"net{i}" for i in range(len(members)))
    if len(names) != len(members):
        raise ValidationError("names and members differ in length")
    plans, sources = [], []
    for net in members:
        plan = net.plan
        if plan is None or net.provenance is None:
            raise ValidationError("members must be hatched networks carrying a plan and provenance")
        if plan.source != arch:
            raise ValidationError("member was not hatched from this MotherNet")
        sources.append(_unit_sources(plan))
        plans.append(plan)

    m = [l.units for l in arch.dense_layers]
    n_in = arch.dense_input_width
    shared, deltas = [], [[] for _ in members]
    for j in range(len(m)):
        m_prev = n_in if j == 0 else m[j - 1]
        folded, bias = [], []
        for i, net in enumerate(members):
            W, b = net.weights[2 * j], net.weights[2 * j + 1]
            rows = np.arange(m_prev) if j == 0 else sources[i][j - 1]
            F = np.zeros((m_prev, m[j]))
            np.add.at(F, rows, W[:, :m[j]])
            folded.append(F)
            bias.append(b[:m[j]])
            d_prev = W.shape[0] - m_prev
            deltas[i].append({"C": W[:m_prev, m[j]:].copy(), "D": W[m_prev:, m[j]:].copy(),
                              "e": b[m[j]:].copy(), "B": np.zeros((d_prev, m[j]))})
        shared += [np.mean(folded, axis=0), np.mean(bias, axis=0)]
    shared_net = WeightedNetwork(arch, shared, mother.rng_seed)
    return SharedPlan(shared_net, names, tuple(plans), deltas, tuple(n.num_params for n in members))


def _block_network(plan: SharedPlan) -> tuple:
    """Assemble the consolidated graph as one dense net with block weights.

    Hidden layer ``j`` is laid out as [origin | new_1 | ... | new_k]; the
    output layer stacks the K heads side by side.
    """
    arch = plan.mother.arch
    m = plan.origin_widths
    k = plan.k
    n_layers = len(m)
    intro = [plan.intro_widths(i) for i in range(k)]
    n_in = arch.dense_input_width
    weights, layers = [], []
    for j in range(n_layers):
        A, a = plan.mother.weights[2 * j], plan.mother.weights[2 * j + 1]
        last = j == n_layers - 1
        in_off = [A.shape[0]]
        for i in range(k):
            in_off.append(in_off[-1] + (intro[i][j - 1] if j > 0 else 0))
        n_rows = in_off[-1]
        if last:
            W = np.zeros((n_rows, k * m[j]))
            b = np.tile(a, k)
            for i in range(k):
                cols = slice(i * m[j], (i + 1) * m[j])
                W[:A.shape[0], cols] = A
                if j > 0:
                    W[in_off[i]:in_off[i + 1], cols] = plan.deltas[i][j]["B"]
        else:
            out_off = [m[j]]
            for i in range(k):
                out_off.append(out_off[-1] + intro[i][j])
            W = np.zeros((n_rows, out_off[-1]))
            b = np.zeros(out_off[-1])
            W[:A.shape[0], :m[j]] = A
            b[:m[j]] = a
            for i in range(k):
                d = plan.deltas[i][j]
                cols = slice(out_off[i], out_off[i + 1])
                W[:A.shape[0], cols] = d["C"]
                b[cols] = d["e"]
                if j > 0:
                    rows = slice(in_off[i], in_off[i + 1])
                    W[rows, :m[j]] = d["B"]
                    W[rows, cols] = d["D"]
        weights += [W, b]
        layers.append(DenseLayerSpec(W.shape[1], arch.dense_layers[j].activation))
    big = NetworkArch("dense", n_in, dense_layers=layers)
    return big, weights


def _split_block_grads(plan: SharedPlan, grads: list) -> list:
    """Inverse of ``_block_network`` for gradients (tied weights are summed)."""
    m = plan.origin_widths
    k = plan.k
    intro = [plan.intro_widths(i) for i in range(k)]
    n_layers = len(m)
    shared = []
    deltas = [[] for _ in range(k)]
    for j in range(n_layers):
        G, g = grads[2 * j], grads[2 * j + 1]
        last = j == n_layers - 1
        m_prev = plan.mother.weights[2 * j].shape[0]
        in_off = [m_prev]
        for i in range(k):
            in_off.append(in_off[-1] + (intro[i][j - 1] if j > 0 else 0))
        if last:
            gA = sum(G[:m_prev, i * m[j]:(i + 1) * m[j]] for i in range(k))
            ga = sum(g[i * m[j]:(i + 1) * m[j]] for i in range(k))
            for i in range(k):
                deltas[i].append({"C": np.zeros((m_prev, 0)), "D": np.zeros((in_off[i + 1] - in_off[i], 0)),
                                  "e": np.zeros(0),
                                  "B": G[in_off[i]:in_off[i + 1], i * m[j]:(i + 1) * m[j]]})
        else:
            out_off = [m[j]]
            for i in range(k):
                out_off.append(out_off[-1] + intro[i][j])
            gA, ga = G[:m_prev, :m[j]], g[:m[j]]
            for i in range(k):
                rows, cols = slice(in_off[i], in_off[i + 1]), slice(out_off[i], out_off[i + 1])
                deltas[i].append({"C": G[:m_prev, cols], "D": G[rows, cols], "e": g[cols], "B": G[rows, :m[j]]})
        shared += [gA, ga]
    out = list(shared)
    for d in deltas:
        for layer in d:
            out += [np.asarray(layer[key]) for key in "CDeB"]
    return out


def _head_logits(plan: SharedPlan, x, cache=None) -> tuple:
    big, weights = _block_network(plan)
    h, _ = _prepare_input(plan.mother.arch, x)
    z = _dense_forward(big, weights, h, cache)
    n_out = plan.origin_widths[-1]
    return big, weights, z.reshape(z.shape[0], plan.k, n_out)


def shared_infer(plan: SharedPlan, data) -> PredictionMatrix:
    """Run all heads in one pass; origin activations are computed once."""
    x = data.features if isinstance(data, Dataset) else data
    _, _, z = _head_logits(plan, x)
    return PredictionMatrix(np.transpose(softmax(z), (1, 0, 2)))


def shared_loss(plan: SharedPlan, x, y) -> float:
    """Mean over heads of the mean cross-entropy."""
    _, _, z = _head_logits(plan, x)
    y = np.asarray(y)
    lp = _log_softmax(z)
    return float(-lp[np.arange(len(y)), :, y].mean())


def shared_gradients(plan: SharedPlan, x, y) -> list:
    """Gradients of ``shared_loss`` aligned with ``plan.param_list()``."""
    cache = []
    big, weights, z = _head_logits(plan, x, cache)
    y = np.asarray(y)
    dz = softmax(z)
    dz[np.arange(len(y)), :, y] -= 1.0
    dz /= len(y) * plan.k
    grads = dense_backward(big, weights, cache, dz.reshape(len(y), -1))
    return _split_block_grads(plan, grads)


def _check_trainable(plan: SharedPlan) -> None:
    if plan.mother.arch.kind != "dense" or any(plan.mother.arch.residual):
        raise UnsupportedTopology("joint fine-tuning needs a dense, residual-free MotherNet")
    for p in plan.plans:
        _unit_sources(p)


def shared_finetune(plan: SharedPlan, data: Dataset, cfg: TrainConfig) -> tuple:
    """Joint SGD on the mean head loss; returns (SharedPlan, TrainLog).

    Shared tensors receive the sum of every head's gradient, introduced
    tensors only their own head's.  Early stopping follows the averaged-head
    training accuracy.
    """
    _check_trainable(plan)
    rng = np.random.default_rng(cfg.shuffle_seed)
    params = [p.copy() for p in plan.param_list()]
    log = TrainLog()
    best, stale = -1.0, 0
    n = len(data)
    current = plan
    for _ in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads = shared_gradients(current, data.features[idx], data.labels[idx])
            if cfg.learning_rate:
                for p, g in zip(params, grads):
                    p -= cfg.learning_rate * g
                current = plan.with_params(params)
        log.losses.append(shared_loss(current, data.features, data.labels))
        acc = _accuracy(shared_infer(current, data).average(), data)
        log.accuracies.append(acc)
        if acc > best:
            best, stale = acc, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return plan.with_params(params), log
