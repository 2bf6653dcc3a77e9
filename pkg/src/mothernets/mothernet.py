"""MotherNet construction for a cluster of dense or convolutional networks."""
from __future__ import annotations

from dataclasses import dataclass, field

from .archspec import (ConvBlockSpec, ConvLayerSpec, DenseLayerSpec, EnsembleSpec, NetworkArch,
                       arch_vector, edit_distance, vector_layout)
from .errors import ActivationMismatch, EmptyCluster, HeterogeneousKind, UnhatchableSpec


@dataclass(frozen=True)
class MotherNetResult:
    arch: NetworkArch
    per_member_edit: dict = field(default_factory=dict)

    @property
    def total_edit(self) -> int:
        return sum(self.per_member_edit.values())

    def to_dict(self) -> dict:
        return {"arch": self.arch.to_dict(), "per_member_edit": dict(self.per_member_edit)}

    @classmethod
    def from_dict(cls, d: dict) -> "MotherNetResult":
        return cls(NetworkArch.from_dict(d["arch"]), {k: int(v) for k, v in d["per_member_edit"].items()})


def _min_dense_chain(chains: list, residuals: list) -> tuple:
    """Per-position minimum over the common prefix of several hidden-layer chains."""
    depth = min(len(c) for c in chains)
    layers, res = [], []
    for i in range(depth):
        acts = {c[i].activation for c in chains}
        if len(acts) > 1:
            raise ActivationMismatch(f"members disagree on the activation of hidden layer {i}: {sorted(acts)}")
        layers.append(DenseLayerSpec(min(c[i].units for c in chains), acts.pop()))
        res.append(all(r[i] for r in residuals))
    return layers, res


def _as_cluster(cluster) -> EnsembleSpec:
    if isinstance(cluster, EnsembleSpec):
        return cluster
    if not cluster:
        raise EmptyCluster("cannot build a MotherNet for an empty cluster")
    return EnsembleSpec(list(cluster))


def _result(cluster: EnsembleSpec, arch: NetworkArch) -> MotherNetResult:
    layout = vector_layout(list(cluster.members) + [arch])
    mv = arch_vector(arch, layout)
    edits = {name: edit_distance(arch_vector(m, layout), mv) for name, m in cluster.items()}
    return MotherNetResult(arch, edits)


def build_fc(cluster: EnsembleSpec) -> MotherNetResult:
    cluster = _as_cluster(cluster)
    if cluster.kind != "dense":
        raise HeterogeneousKind("build_fc expects dense members")
    first = cluster.members[0]
    hidden, res = _min_dense_chain([m.hidden for m in cluster.members],
                                   [m.residual[:-1] for m in cluster.members])
    arch = NetworkArch("dense", first.input_shape, (), hidden + [first.output], tuple(res) + (False,))
    return _result(cluster, arch)


def _min_conv_layer(specs) -> ConvLayerSpec:
    """Componentwise minimum; padding is chosen so enlarging back reproduces each member's padding."""
    f = min(s.filter_size for s in specs)
    pad = max(0, min(s.padding - (s.filter_size - f) // 2 for s in specs))
    return ConvLayerSpec(f, min(s.num_filters for s in specs), pad)


def build_conv(cluster: EnsembleSpec) -> MotherNetResult:
    cluster = _as_cluster(cluster)
    if cluster.kind != "conv":
        raise HeterogeneousKind("build_conv expects conv members")
    members = cluster.members
    nblocks = min(len(m.conv_blocks) for m in members)
    blocks = []
    for b in range(nblocks):
        pools = {m.conv_blocks[b].followed_by_pool for m in members}
        if len(pools) > 1:
            raise UnhatchableSpec(f"members disagree on pooling after block {b}")
        depth = min(len(m.conv_blocks[b].layers) for m in members)
        layers = [_min_conv_layer([m.conv_blocks[b].layers[i] for m in members]) for i in range(depth)]
        blocks.append(ConvBlockSpec(layers, pools.pop()))
    hidden, res = _min_dense_chain([m.hidden for m in members], [m.residual[:-1] for m in members])
    arch = NetworkArch("conv", members[0].input_shape, blocks, hidden + [members[0].output],
                       tuple(res) + (False,))
    return _result(cluster, arch)


def build(cluster: EnsembleSpec) -> MotherNetResult:
    """Dispatch on the cluster's network kind."""
    cluster = _as_cluster(cluster)
    return build_fc(cluster) if cluster.kind == "dense" else build_conv(cluster)
