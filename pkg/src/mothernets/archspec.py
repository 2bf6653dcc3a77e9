"""Architecture data model, vector encodings and the Levenshtein metric.

Dense networks are a chain of :class:`DenseLayerSpec` whose last entry is the
shared softmax output layer.  Convolutional networks are blocks of
:class:`ConvLayerSpec` (each block optionally followed by a 2x2/2 max-pool)
followed by a dense tail that is validated by the same rules.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import HeterogeneousKind, InvalidArch, MixedEntryKind

ACTIVATIONS = ("relu", "linear", "softmax")
KINDS = ("dense", "conv")

# Dense-tail entries inside conv vectors are encoded as (0, units) so that a
# conv vector holds pairs only; the zero pair (0, 0) is padding.
VectorEntry = Union[int, tuple]


@dataclass(frozen=True)
class DenseLayerSpec:
    units: int
    activation: str = "relu"

    def __post_init__(self):
        if int(self.units) != self.units or self.units < 1:
            raise InvalidArch(f"dense units must be a positive integer, got {self.units!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArch(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "units", int(self.units))


@dataclass(frozen=True)
class ConvLayerSpec:
    filter_size: int
    num_filters: int
    # Zero padding applied to the layer input; only ever non-zero after an
    # enlarge-filter transform.
    padding: int = 0

    def __post_init__(self):
        if self.filter_size < 1 or self.filter_size % 2 == 0:
            raise InvalidArch(f"filter_size must be a positive odd integer, got {self.filter_size}")
        if self.num_filters < 1:
            raise InvalidArch(f"num_filters must be >= 1, got {self.num_filters}")
        if self.padding < 0:
            raise InvalidArch("padding must be >= 0")


@dataclass(frozen=True)
class ConvBlockSpec:
    layers: tuple
    followed_by_pool: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise InvalidArch("conv block must contain at least one layer")


@dataclass(frozen=True)
class NetworkArch:
    kind: str
    input_shape: Union[int, tuple]
    conv_blocks: tuple = ()
    dense_layers: tuple = ()
    residual: tuple = ()

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if self.kind not in KINDS:
            raise InvalidArch(f"unknown network kind {self.kind!r}")
        set_("conv_blocks", tuple(self.conv_blocks))
        set_("dense_layers", tuple(self.dense_layers))
        res = tuple(bool(r) for r in self.residual) if self.residual else (False,) * len(self.dense_layers)
        set_("residual", res)
        if self.kind == "dense":
            if isinstance(self.input_shape, (list, tuple)):
                if len(self.input_shape) != 1:
                    raise InvalidArch("dense input_shape is a single feature count")
                set_("input_shape", int(self.input_shape[0]))
            if int(self.input_shape) < 1:
                raise InvalidArch("input feature count must be >= 1")
            if self.conv_blocks:
                raise InvalidArch("dense networks have no conv blocks")
        else:
            shape = tuple(int(s) for s in self.input_shape)
            if len(shape) != 3 or min(shape) < 1:
                raise InvalidArch("conv input_shape must be height x width x channels")
            set_("input_shape", shape)
            if not self.conv_blocks:
                raise InvalidArch("conv networks need at least one conv block")
        self._validate()

    def _validate(self):
        if not self.dense_layers:
            raise InvalidArch("a network needs an output layer")
        if len(self.residual) != len(self.dense_layers):
            raise InvalidArch("residual flags must parallel dense_layers")
        if self.dense_layers[-1].activation != "softmax":
            raise InvalidArch("the final layer must be the softmax output layer")
        if any(l.activation == "softmax" for l in self.dense_layers[:-1]):
            raise InvalidArch("softmax may only appear on the output layer")
        if self.residual[-1]:
            raise InvalidArch("the output layer cannot be residual")
        if self.kind == "conv":
            c, h, w = self.input_shape[2], self.input_shape[0], self.input_shape[1]
            for block in self.conv_blocks:
                for layer in block.layers:
                    h = h + 2 * layer.padding - layer.filter_size + 1
                    w = w + 2 * layer.padding - layer.filter_size + 1
                    c = layer.num_filters
                    if h < 1 or w < 1:
                        raise InvalidArch("conv stack shrinks the feature map below 1x1")
                if block.followed_by_pool:
                    h, w = h // 2, w // 2
                    if h < 1 or w < 1:
                        raise InvalidArch("max-pool shrinks the feature map below 1x1")
        width = self.dense_input_width
        for layer, res in zip(self.dense_layers, self.residual):
            if res and layer.units != width:
                raise InvalidArch(f"residual layer needs units == input width ({layer.units} != {width})")
            width = layer.units

    # -- derived shapes -----------------------------------------------------

    @property
    def hidden(self) -> tuple:
        return self.dense_layers[:-1]

    @property
    def hidden_units(self) -> list:
        return [l.units for l in self.dense_layers[:-1]]

    @property
    def output(self) -> DenseLayerSpec:
        return self.dense_layers[-1]

    @property
    def num_classes(self) -> int:
        return self.output.units

    def conv_output_shape(self) -> tuple:
        """(channels, height, width) after the last conv block."""
        h, w, c = self.input_shape
        for block in self.conv_blocks:
            for layer in block.layers:
                h = h + 2 * layer.padding - layer.filter_size + 1
                w = w + 2 * layer.padding - layer.filter_size + 1
                c = layer.num_filters
            if block.followed_by_pool:
                h, w = h // 2, w // 2
        return c, h, w

    @property
    def dense_input_width(self) -> int:
        if self.kind == "dense":
            return self.input_shape
        c, h, w = self.conv_output_shape()
        return c * h * w

    def conv_layers(self) -> list:
        """Flat list of (block, layer, spec)."""
        return [(b, i, l) for b, block in enumerate(self.conv_blocks) for i, l in enumerate(block.layers)]

    def replace(self, **changes) -> "NetworkArch":
        d = dict(kind=self.kind, input_shape=self.input_shape, conv_blocks=self.conv_blocks,
                 dense_layers=self.dense_layers, residual=self.residual)
        d.update(changes)
        return NetworkArch(**d)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {"kind": self.kind,
             "input_shape": self.input_shape if self.kind == "dense" else list(self.input_shape),
             "conv_blocks": [{"layers": [{"filter_size": l.filter_size, "num_filters": l.num_filters,
                                          "padding": l.padding} for l in b.layers],
                              "followed_by_pool": b.followed_by_pool} for b in self.conv_blocks],
             "dense_layers": [{"units": l.units, "activation": l.activation} for l in self.dense_layers],
             "residual": list(self.residual)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkArch":
        try:
            blocks = [ConvBlockSpec([ConvLayerSpec(l["filter_size"], l["num_filters"], l.get("padding", 0))
                                     for l in b["layers"]], b.get("followed_by_pool", True))
                      for b in d.get("conv_blocks", [])]
            dense = [DenseLayerSpec(l["units"], l.get("activation", "relu")) for l in d["dense_layers"]]
            input_shape = d["input_shape"]
            return cls(d["kind"], input_shape if isinstance(input_shape, int) else tuple(input_shape),
                       blocks, dense, tuple(d.get("residual", ())))
        except (KeyError, TypeError) as exc:
            raise InvalidArch(f"malformed architecture document: {exc!r}") from exc


def dense_arch(n_in: int, hidden: Sequence[int], n_out: int, activation: str = "relu",
               residual: Sequence[bool] = ()) -> NetworkArch:
    """Shorthand for a dense chain ``n_in -> hidden... -> softmax(n_out)``."""
    layers = [DenseLayerSpec(u, activation) for u in hidden] + [DenseLayerSpec(n_out, "softmax")]
    res = tuple(residual) + (False,) * (len(layers) - len(residual))
    return NetworkArch("dense", n_in, (), layers, res)


def conv_arch(input_shape: Sequence[int], blocks: Sequence[Sequence[tuple]], hidden: Sequence[int],
              n_out: int, pools: Sequence[bool] | None = None) -> NetworkArch:
    """Shorthand: ``blocks`` is a list of blocks, each a list of (filter_size, num_filters)."""
    pools = [True] * len(blocks) if pools is None else pools
    cb = [ConvBlockSpec([ConvLayerSpec(f, k) for f, k in block], p) for block, p in zip(blocks, pools)]
    layers = [DenseLayerSpec(u, "relu") for u in hidden] + [DenseLayerSpec(n_out, "softmax")]
    return NetworkArch("conv", tuple(input_shape), cb, layers)


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple
    names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        names = tuple(self.names) if self.names else tuple(f"net{i}" for i in range(len(self.members)))
        object.__setattr__(self, "names", names)
        if not self.members:
            raise InvalidArch("an ensemble needs at least one member")
        if len(names) != len(self.members) or len(set(names)) != len(names):
            raise InvalidArch("member names must be unique and parallel to members")
        first = self.members[0]
        for m in self.members[1:]:
            if m.kind != first.kind:
                raise HeterogeneousKind("ensemble mixes dense and conv members")
            if m.input_shape != first.input_shape:
                raise InvalidArch("ensemble members must share input_shape")
            if m.output != first.output:
                raise InvalidArch("ensemble members must share the output layer")

    @property
    def kind(self) -> str:
        return self.members[0].kind

    def __len__(self):
        return len(self.members)

    def items(self):
        return zip(self.names, self.members)

    def subset(self, names: Sequence[str]) -> "EnsembleSpec":
        lookup = dict(self.items())
        return EnsembleSpec([lookup[n] for n in names], list(names))

    def to_dict(self) -> dict:
        return {"members": [m.to_dict() for m in self.members], "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleSpec":
        if "members" not in d:
            raise InvalidArch("ensemble document needs a 'members' list")
        return cls([NetworkArch.from_dict(m) for m in d["members"]], d.get("names", ()))


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# -- vectors ------------------------------------------------------------------

@dataclass(frozen=True)
class VectorLayout:
    """Padding profile shared by every vector of one ensemble."""
    kind: str
    block_depths: tuple = ()
    tail_depth: int = 0


def vector_layout(archs: Sequence[NetworkArch]) -> VectorLayout:
    kinds = {a.kind for a in archs}
    if len(kinds) > 1:
        raise HeterogeneousKind("cannot vectorize a mix of dense and conv members")
    kind = kinds.pop()
    tail = max(len(a.hidden) for a in archs)
    if kind == "dense":
        return VectorLayout("dense", (), tail)
    nblocks = max(len(a.conv_blocks) for a in archs)
    depths = tuple(max((len(a.conv_blocks[b].layers) for a in archs if b < len(a.conv_blocks)), default=0)
                   for b in range(nblocks))
    return VectorLayout("conv", depths, tail)


def arch_vector(arch: NetworkArch, layout: VectorLayout) -> list:
    if arch.kind != layout.kind:
        raise HeterogeneousKind("architecture kind does not match the vector layout")
    if arch.kind == "dense":
        units = [l.units for l in arch.hidden]
        return units + [0] * (layout.tail_depth - len(units))
    vec = []
    for b, depth in enumerate(layout.block_depths):
        layers = arch.conv_blocks[b].layers if b < len(arch.conv_blocks) else ()
        vec += [(l.filter_size, l.num_filters) for l in layers] + [(0, 0)] * (depth - len(layers))
    tail = [(0, l.units) for l in arch.hidden]
    return vec + tail + [(0, 0)] * (layout.tail_depth - len(tail))


def vectorize(ensemble: EnsembleSpec) -> list:
    layout = vector_layout(ensemble.members)
    return [arch_vector(a, layout) for a in ensemble.members]


def _entry_kind(e) -> str:
    if isinstance(e, (tuple, list)):
        if len(e) != 2:
            raise MixedEntryKind(f"pair entries must have two components, got {e!r}")
        return "pair"
    return "scalar"


def edit_distance(a: Sequence[VectorEntry], b: Sequence[VectorEntry]) -> int:
    """Levenshtein distance with unit costs and exact entry equality."""
    kinds = {_entry_kind(e) for e in a} | {_entry_kind(e) for e in b}
    if len(kinds) > 1:
        raise MixedEntryKind("cannot compare scalar entries with pair entries")
    a = [tuple(e) if isinstance(e, list) else e for e in a]
    b = [tuple(e) if isinstance(e, list) else e for e in b]
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


# -- parameter accounting ---------------------------------------------------------

def param_count(arch: NetworkArch) -> int:
    total = 0
    if arch.kind == "conv":
        c = arch.input_shape[2]
        for _, _, layer in arch.conv_layers():
            total += layer.filter_size ** 2 * c * layer.num_filters + layer.num_filters
            c = layer.num_filters
    width = arch.dense_input_width
    for layer in arch.dense_layers:
        total += width * layer.units + layer.units
        width = layer.units
    return total
