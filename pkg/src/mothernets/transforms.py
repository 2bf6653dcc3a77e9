"""Function-preserving network expansions and hatch planning.

Every transform maps a :class:`WeightedNetwork` to a larger one computing the
same function.  Provenance masks track which scalars were introduced by the
expansion (``True``) and which came from the source network (``False``).

Addressing: dense steps use ``position``, an index into ``arch.dense_layers``;
conv steps use ``(block, layer)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .archspec import ConvBlockSpec, ConvLayerSpec, DenseLayerSpec, NetworkArch
from .engine import WeightedNetwork, n_conv_layers
from .errors import (ActivationNotIdempotent, EvenEnlargement, InvalidReplicationMap, MissingProvenance,
                     UnhatchableSpec, ValidationError, WidthMismatch)

STEP_KINDS = ("deepen", "deepen_residual", "widen", "enlarge")


@dataclass(frozen=True)
class TransformStep:
    kind: str
    section: str = "dense"          # "dense" or "conv"
    position: int = 0               # dense layer index
    block: int = 0
    layer: int = 0
    new_units: int = 0              # widen: new unit / filter count
    replication_map: tuple = ()
    new_size: int = 0               # enlarge: new filter size
    activation: str = "relu"        # deepen / deepen_residual

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "section": self.section}
        if self.section == "dense":
            d["position"] = self.position
        else:
            d.update(block=self.block, layer=self.layer)
        if self.kind == "widen":
            d.update(new_units=self.new_units, replication_map=list(self.replication_map))
        elif self.kind == "enlarge":
            d["new_size"] = self.new_size
        else:
            d["activation"] = self.activation
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TransformStep":
        d = dict(d)
        if d.get("kind") not in STEP_KINDS:
            raise ValidationError(f"unknown transform kind {d.get('kind')!r}")
        d["replication_map"] = tuple(d.get("replication_map", ()))
        return cls(**d)


@dataclass(frozen=True)
class HatchPlan:
    steps: tuple
    source: NetworkArch
    target: NetworkArch

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "source": self.source.to_dict(),
                "target": self.target.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "HatchPlan":
        return cls(tuple(TransformStep.from_dict(s) for s in d["steps"]), NetworkArch.from_dict(d["source"]),
                   NetworkArch.from_dict(d["target"]))


# -- static helpers --------------------------------------------------------------------

def dense_input_nonneg(arch: NetworkArch, position: int) -> bool:
    """Whether the input to dense layer ``position`` is provably nonnegative.

    Conv stacks end in relu (and max-pool), so a conv net's dense tail starts
    nonnegative; raw dense inputs are not.
    """
    if position == 0:
        return arch.kind == "conv"
    layer, res = arch.dense_layers[position - 1], arch.residual[position - 1]
    if layer.activation != "relu":
        return False
    return dense_input_nonneg(arch, position - 1) if res else True


def _dense_widths(arch: NetworkArch) -> list:
    """Input width of every dense layer."""
    widths, w = [], arch.dense_input_width
    for layer in arch.dense_layers:
        widths.append(w)
        w = layer.units
    return widths


def _conv_index(arch: NetworkArch, block: int, layer: int) -> int:
    flat = [(b, i) for b, i, _ in arch.conv_layers()]
    try:
        return flat.index((block, layer))
    except ValueError:
        raise ValidationError(f"no conv layer at block {block}, layer {layer}") from None


def _prov(net: WeightedNetwork) -> list:
    if net.provenance is None:
        return [np.zeros(w.shape, dtype=bool) for w in net.weights]
    return [p.copy() for p in net.provenance]


def _finish(net, arch, weights, prov) -> WeightedNetwork:
    return WeightedNetwork(arch, weights, net.rng_seed, tuple(prov))


def structure(arch: NetworkArch) -> tuple:
    """Layer shapes ignoring conv padding (hatching adds padding of its own)."""
    conv = tuple((tuple((l.filter_size, l.num_filters) for l in blk.layers), blk.followed_by_pool)
                 for blk in arch.conv_blocks)
    return arch.kind, arch.input_shape, conv, tuple(arch.dense_layers), tuple(arch.residual)


# -- arch-level transforms (shape trace) ---------------------------------------------------

def _arch_insert_dense(arch, position, layer, residual):
    layers = list(arch.dense_layers)
    res = list(arch.residual)
    layers.insert(position, layer)
    res.insert(position, residual)
    return arch.replace(dense_layers=layers, residual=res)


def _check_dense_insert(arch, position):
    if not 0 <= position < len(arch.dense_layers):
        raise ValidationError(f"cannot insert a dense layer at position {position}")


def _arch_set_conv(arch, block, layer, spec=None, insert=False, dense_layers=None):
    blocks = [list(b.layers) for b in arch.conv_blocks]
    pools = [b.followed_by_pool for b in arch.conv_blocks]
    if block == len(blocks) and insert:
        blocks.append([])
        pools.append(False)
    if insert:
        blocks[block].insert(layer, spec)
    else:
        blocks[block][layer] = spec
    extra = {} if dense_layers is None else {"dense_layers": dense_layers}
    return arch.replace(conv_blocks=[ConvBlockSpec(l, p) for l, p in zip(blocks, pools)], **extra)


# -- weight-level transforms -------------------------------------------------------------------

def deepen(net: WeightedNetwork, position: int, activation: Optional[str] = None) -> WeightedNetwork:
    """Insert an identity dense layer at ``position``."""
    arch = net.arch
    _check_dense_insert(arch, position)
    if activation is None:
        activation = arch.dense_layers[position - 1].activation if position > 0 else "linear"
    if activation == "softmax":
        raise ValidationError("cannot insert a softmax layer")
    if activation == "relu" and not dense_input_nonneg(arch, position):
        raise ActivationNotIdempotent(
            f"relu identity at dense position {position} would clip a possibly negative input")
    width = _dense_widths(arch)[position]
    new_arch = _arch_insert_dense(arch, position, DenseLayerSpec(width, activation), False)
    k = 2 * (n_conv_layers(arch) + position)
    weights, prov = list(net.weights), _prov(net)
    weights[k:k] = [np.eye(width), np.zeros(width)]
    prov[k:k] = [np.ones((width, width), bool), np.ones(width, bool)]
    return _finish(net, new_arch, weights, prov)


def deepen_residual(net: WeightedNetwork, position: int, activation: str = "linear",
                    units: Optional[int] = None) -> WeightedNetwork:
    """Insert a residual block ``y = x + act(x W + b)`` with ``W = 0`` and ``b = 0``."""
    arch = net.arch
    _check_dense_insert(arch, position)
    width = _dense_widths(arch)[position]
    if units is not None and units != width:
        raise WidthMismatch(f"residual block needs units == input width ({units} != {width})")
    if activation == "softmax":
        raise ValidationError("cannot insert a softmax layer")
    new_arch = _arch_insert_dense(arch, position, DenseLayerSpec(width, activation), True)
    k = 2 * (n_conv_layers(arch) + position)
    weights, prov = list(net.weights), _prov(net)
    weights[k:k] = [np.zeros((width, width)), np.zeros(width)]
    prov[k:k] = [np.ones((width, width), bool), np.ones(width, bool)]
    return _finish(net, new_arch, weights, prov)


def deepen_conv(net: WeightedNetwork, block: int, layer: int) -> WeightedNetwork:
    """Insert a 1x1 identity conv layer; ``block == len(conv_blocks)`` opens a new pool-free block."""
    arch = net.arch
    if arch.kind != "conv":
        raise ValidationError("deepen_conv needs a conv network")
    if block > len(arch.conv_blocks) or block < 0:
        raise ValidationError(f"no conv block {block}")
    depth = len(arch.conv_blocks[block].layers) if block < len(arch.conv_blocks) else 0
    if not 0 <= layer <= depth:
        raise ValidationError(f"cannot insert at layer {layer} of block {block}")
    if block == 0 and layer == 0:
        raise ActivationNotIdempotent("a relu identity conv cannot precede the raw input layer")
    flat = arch.conv_layers()
    before = [i for i, (b, l, _) in enumerate(flat) if (b, l) < (block, layer)]
    k = len(before)
    channels = flat[k - 1][2].num_filters
    new_arch = _arch_set_conv(arch, block, layer, ConvLayerSpec(1, channels), insert=True)
    ident = np.eye(channels).reshape(channels, channels, 1, 1)
    weights, prov = list(net.weights), _prov(net)
    weights[2 * k:2 * k] = [ident, np.zeros(channels)]
    prov[2 * k:2 * k] = [np.ones(ident.shape, bool), np.ones(channels, bool)]
    return _finish(net, new_arch, weights, prov)


def _validate_map(old: int, new_units: int, replication_map) -> np.ndarray:
    m = np.asarray(replication_map, dtype=np.int64)
    if new_units <= old:
        raise InvalidReplicationMap(f"widen must increase width ({old} -> {new_units})")
    if m.shape != (new_units,):
        raise InvalidReplicationMap("replication_map needs one source per new unit")
    if not np.array_equal(m[:old], np.arange(old)):
        raise InvalidReplicationMap("the first units must map to themselves")
    if m.min() < 0 or m[old:].max() >= old:
        raise InvalidReplicationMap("replicated units must copy an existing unit")
    return m


def _propagate_dense(arch, weights, prov, start: int, fmap: np.ndarray, fcounts: np.ndarray):
    """Expand the inputs of dense layer ``start`` per ``fmap``; residual layers pass it on."""
    nc = n_conv_layers(arch)
    layers, old_in = list(arch.dense_layers), len(fcounts)
    j = start
    new_rows = fmap.size
    while True:
        k = 2 * (nc + j)
        W, b = weights[k], weights[k + 1]
        scale = (1.0 / fcounts[fmap])[:, None]
        if arch.residual[j]:
            weights[k] = W[fmap][:, fmap] * scale
            weights[k + 1] = b[fmap]
            pw = np.ones((new_rows, new_rows), bool)
            pw[:old_in, :old_in] = prov[k]
            pb = np.ones(new_rows, bool)
            pb[:old_in] = prov[k + 1]
            prov[k], prov[k + 1] = pw, pb
            layers[j] = DenseLayerSpec(new_rows, layers[j].activation)
            j += 1
            continue
        weights[k] = W[fmap] * scale
        pw = np.ones((new_rows, W.shape[1]), bool)
        pw[:old_in] = prov[k]
        prov[k] = pw
        return layers


def widen(net: WeightedNetwork, position: int, new_units: int, replication_map) -> WeightedNetwork:
    """Replicate units of hidden dense layer ``position``; the next layer's rows are divided by the copy counts."""
    arch = net.arch
    if not 0 <= position < len(arch.dense_layers) - 1:
        raise ValidationError(f"dense position {position} is not a hidden layer")
    if arch.residual[position]:
        raise WidthMismatch("a residual layer's width follows its input; widen the preceding layer")
    old = arch.dense_layers[position].units
    m = _validate_map(old, new_units, replication_map)
    counts = np.bincount(m, minlength=old).astype(np.float64)
    weights, prov = list(net.weights), _prov(net)
    k = 2 * (n_conv_layers(arch) + position)
    weights[k], weights[k + 1] = weights[k][:, m], weights[k + 1][m]
    pw = np.ones((weights[k].shape[0], new_units), bool)
    pw[:, :old] = prov[k]
    pb = np.ones(new_units, bool)
    pb[:old] = prov[k + 1]
    prov[k], prov[k + 1] = pw, pb
    layers = _propagate_dense(arch, weights, prov, position + 1, m, counts)
    layers[position] = DenseLayerSpec(new_units, arch.dense_layers[position].activation)
    new_arch = arch.replace(dense_layers=layers)
    return _finish(net, new_arch, weights, prov)


def widen_conv(net: WeightedNetwork, block: int, layer: int, new_units: int, replication_map) -> WeightedNetwork:
    """Replicate whole filters of a conv layer; the consumer's input channels are rescaled."""
    arch = net.arch
    k = _conv_index(arch, block, layer)
    spec = arch.conv_blocks[block].layers[layer]
    old = spec.num_filters
    m = _validate_map(old, new_units, replication_map)
    counts = np.bincount(m, minlength=old).astype(np.float64)
    weights, prov = list(net.weights), _prov(net)
    weights[2 * k], weights[2 * k + 1] = weights[2 * k][m], weights[2 * k + 1][m]
    pw = np.ones(weights[2 * k].shape, bool)
    pw[:old] = prov[2 * k]
    pb = np.ones(new_units, bool)
    pb[:old] = prov[2 * k + 1]
    prov[2 * k], prov[2 * k + 1] = pw, pb
    layers = list(arch.dense_layers)
    if k + 1 < n_conv_layers(arch):
        j = 2 * (k + 1)
        F = weights[j]
        weights[j] = F[:, m] / counts[m][None, :, None, None]
        pf = np.ones(weights[j].shape, bool)
        pf[:, :old] = prov[j]
        prov[j] = pf
    else:
        _, h, w = arch.conv_output_shape()
        hw = h * w
        fmap = (m[:, None] * hw + np.arange(hw)[None, :]).reshape(-1)
        fcounts = np.repeat(counts, hw)
        layers = _propagate_dense(arch, weights, prov, 0, fmap, fcounts)
    new_arch = _arch_set_conv(arch, block, layer, ConvLayerSpec(spec.filter_size, new_units, spec.padding),
                              dense_layers=layers)
    return _finish(net, new_arch, weights, prov)


def enlarge_filter(net: WeightedNetwork, block: int, layer: int, new_size: int) -> WeightedNetwork:
    """Zero-pad every filter of a conv layer and pad its input by the same width."""
    arch = net.arch
    k = _conv_index(arch, block, layer)
    spec = arch.conv_blocks[block].layers[layer]
    if new_size % 2 == 0 or (new_size - spec.filter_size) % 2:
        raise EvenEnlargement(f"filter size must stay odd ({spec.filter_size} -> {new_size})")
    if new_size <= spec.filter_size:
        raise ValidationError(f"enlarge must grow the filter ({spec.filter_size} -> {new_size})")
    p = (new_size - spec.filter_size) // 2
    pad = ((0, 0), (0, 0), (p, p), (p, p))
    weights, prov = list(net.weights), _prov(net)
    weights[2 * k] = np.pad(weights[2 * k], pad)
    prov[2 * k] = np.pad(prov[2 * k], pad, constant_values=True)
    new_arch = _arch_set_conv(arch, block, layer, ConvLayerSpec(new_size, spec.num_filters, spec.padding + p))
    return _finish(net, new_arch, weights, prov)


def apply_step(net: WeightedNetwork, step: TransformStep) -> WeightedNetwork:
    if step.kind == "enlarge":
        return enlarge_filter(net, step.block, step.layer, step.new_size)
    if step.section == "conv":
        if step.kind == "deepen":
            return deepen_conv(net, step.block, step.layer)
        if step.kind == "widen":
            return widen_conv(net, step.block, step.layer, step.new_units, step.replication_map)
    else:
        if step.kind == "deepen":
            return deepen(net, step.position, step.activation)
        if step.kind == "deepen_residual":
            return deepen_residual(net, step.position, step.activation)
        if step.kind == "widen":
            return widen(net, step.position, step.new_units, step.replication_map)
    raise ValidationError(f"unsupported step {step.kind} on {step.section} layers")


def _zeros_like_arch(arch: NetworkArch) -> WeightedNetwork:
    from .engine import param_shapes
    return WeightedNetwork(arch, [np.zeros(s) for s in param_shapes(arch)])


def trace_arch(arch: NetworkArch, steps) -> NetworkArch:
    """Replay ``steps`` on shapes only."""
    net = _zeros_like_arch(arch)
    for step in steps:
        net = apply_step(net, step)
    return net.arch


# -- planning ---------------------------------------------------------------------------------

def _align_dense(mother: NetworkArch, target: NetworkArch) -> list:
    """Embed the mother's hidden layers into the target's, in order.

    Returns one entry per target hidden layer: the matched mother index, or
    None for layers that must be inserted.  Earliest matches are tried first.
    """
    mh, th = mother.hidden, target.hidden
    mres, tres = mother.residual, target.residual
    start_nonneg = mother.kind == "conv"
    memo = set()

    def nonneg_after(act, res, nonneg_in):
        return act == "relu" and (nonneg_in or not res)

    def search(ti, mi, width, nonneg):
        if ti == len(th):
            return [] if mi == len(mh) else None
        key = (ti, mi, width, nonneg)
        if key in memo or len(th) - ti < len(mh) - mi:
            return None
        t = th[ti]
        if mi < len(mh):
            m = mh[mi]
            if m.activation == t.activation and mres[mi] == tres[ti] and t.units >= m.units:
                rest = search(ti + 1, mi + 1, m.units, nonneg_after(m.activation, mres[mi], nonneg))
                if rest is not None:
                    return [mi] + rest
        if tres[ti] or (t.units >= width and (t.activation == "linear" or nonneg)):
            # inserted residual blocks go in last, so plain deepens never see them
            rest = search(ti + 1, mi, width, nonneg if tres[ti] else nonneg_after(t.activation, False, nonneg))
            if rest is not None:
                return [None] + rest
        memo.add(key)
        return None

    result = search(0, 0, mother.dense_input_width, start_nonneg)
    if result is None:
        raise UnhatchableSpec("target dense layers cannot be reached from the MotherNet by deepen/widen")
    return result


def _plan_conv_deepen(mother: NetworkArch, target: NetworkArch) -> list:
    if len(target.conv_blocks) < len(mother.conv_blocks):
        raise UnhatchableSpec("target has fewer conv blocks than the MotherNet")
    steps = []
    for b, tblock in enumerate(target.conv_blocks):
        if b < len(mother.conv_blocks):
            mblock = mother.conv_blocks[b]
            if mblock.followed_by_pool != tblock.followed_by_pool:
                raise UnhatchableSpec(f"pooling after block {b} differs from the MotherNet")
            depth = len(mblock.layers)
            if len(tblock.layers) < depth:
                raise UnhatchableSpec(f"target block {b} is shallower than the MotherNet's")
        else:
            if tblock.followed_by_pool:
                raise UnhatchableSpec(f"added block {b} would need a pool, which is not function-preserving")
            depth = 0
        for i in range(depth, len(tblock.layers)):
            steps.append(TransformStep("deepen", "conv", block=b, layer=i))
    return steps


def plan_hatch(mother: NetworkArch, target: NetworkArch, seed: int = 0) -> HatchPlan:
    """Deterministic step list turning ``mother`` into ``target``.

    Order: conv deepens, dense deepens (residual blocks last), conv widens, dense widens, enlarges.
    Widen sources beyond the identity prefix are drawn with replacement from
    ``numpy.random.default_rng(seed)`` in step order.
    """
    if mother.kind != target.kind or mother.input_shape != target.input_shape:
        raise UnhatchableSpec("MotherNet and target differ in kind or input shape")
    if mother.output != target.output:
        raise UnhatchableSpec("MotherNet and target differ in the output layer")
    rng = np.random.default_rng(seed)
    steps = []
    if target.kind == "conv":
        steps += _plan_conv_deepen(mother, target)
    align = _align_dense(mother, target)
    deferred = [ti for ti, mi in enumerate(align) if mi is None and target.residual[ti]]
    for ti, mi in enumerate(align):
        if mi is None and not target.residual[ti]:
            shift = sum(1 for d in deferred if d < ti)
            steps.append(TransformStep("deepen", "dense", position=ti - shift, activation=target.hidden[ti].activation))
    for ti in deferred:
        steps.append(TransformStep("deepen_residual", "dense", position=ti, activation=target.hidden[ti].activation))
    arch = trace_arch(mother, steps)
    if target.kind == "conv":
        for b, i, tl in target.conv_layers():
            cur = arch.conv_blocks[b].layers[i]
            if tl.filter_size < cur.filter_size or tl.num_filters < cur.num_filters:
                raise UnhatchableSpec(f"target conv layer ({b},{i}) is smaller than the MotherNet's")
            if tl.num_filters > cur.num_filters:
                n = cur.num_filters
                rmap = tuple(range(n)) + tuple(int(v) for v in rng.integers(0, n, tl.num_filters - n))
                steps.append(TransformStep("widen", "conv", block=b, layer=i, new_units=tl.num_filters,
                                           replication_map=rmap))
    arch = trace_arch(mother, steps)
    for ti, t in enumerate(target.hidden):
        if target.residual[ti]:
            continue
        n = arch.dense_layers[ti].units
        if t.units > n:
            rmap = tuple(range(n)) + tuple(int(v) for v in rng.integers(0, n, t.units - n))
            steps.append(TransformStep("widen", "dense", position=ti, new_units=t.units, replication_map=rmap))
        elif t.units < n:
            raise UnhatchableSpec(f"target hidden layer {ti} is narrower than the MotherNet's")
    if target.kind == "conv":
        for b, i, tl in target.conv_layers():
            cur = arch.conv_blocks[b].layers[i]
            if tl.filter_size > cur.filter_size:
                steps.append(TransformStep("enlarge", "conv", block=b, layer=i, new_size=tl.filter_size))
    final = trace_arch(mother, steps)
    if structure(final) != structure(target):
        raise UnhatchableSpec("hatch plan does not reproduce the target architecture")
    return HatchPlan(tuple(steps), mother, final)


def hatch(mother_trained: WeightedNetwork, plan: HatchPlan) -> WeightedNetwork:
    """Apply ``plan``; every parameter is tagged as MotherNet-origin or introduced."""
    if mother_trained.arch != plan.source:
        raise ValidationError("the plan's source architecture does not match the network")
    net = WeightedNetwork(mother_trained.arch, [w.copy() for w in mother_trained.weights],
                          mother_trained.rng_seed, tuple(np.zeros(w.shape, bool) for w in mother_trained.weights))
    for step in plan.steps:
        net = apply_step(net, step)
    if net.arch != plan.target:
        raise UnhatchableSpec("applying the plan did not yield its declared target")
    return WeightedNetwork(net.arch, net.weights, net.rng_seed, net.provenance, plan)


def perturb(net: WeightedNetwork, sigma: Optional[float], seed: int,
            scope: str = "all_params") -> WeightedNetwork:
    """Add i.i.d. Gaussian noise to in-scope parameters.

    ``sigma=None`` uses 0.01 times each tensor's standard deviation, falling
    back to the std of all weight matrices for constant tensors.
    """
    if scope not in ("all_params", "new_params_only"):
        raise ValidationError(f"unknown perturbation scope {scope!r}")
    if scope == "new_params_only" and net.provenance is None:
        raise MissingProvenance("new_params_only needs a hatched network with provenance marks")
    if sigma is not None and sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if sigma == 0:
        return net.with_weights([w.copy() for w in net.weights])
    rng = np.random.default_rng(seed)
    pooled = np.concatenate([w.ravel() for w in net.weights if w.ndim > 1])
    fallback = float(pooled.std()) if pooled.size else 0.0
    out = []
    for i, w in enumerate(net.weights):
        noise = rng.standard_normal(w.shape)
        if sigma is None:
            s = float(w.std()) or fallback
            noise *= 0.01 * s
        else:
            noise *= sigma
        if scope == "new_params_only":
            noise = np.where(net.provenance[i], noise, 0.0)
        out.append(w + noise)
    return net.with_weights(out)
