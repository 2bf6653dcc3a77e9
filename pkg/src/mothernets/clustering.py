"""Partition an ensemble into MotherNet clusters.

Two strategies:

* ``kmeans_g`` -- balanced K-means under the Levenshtein metric between member
  vectors and cluster MotherNet vectors, followed by a swap/move local search
  on the exact objective (total edit distance of members to their cluster's
  MotherNet).
* ``greedy_tau`` -- members sorted by parameter count are split into the
  fewest consecutive groups in which every member keeps
  ``|C| - |M| < tau * |C|``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .archspec import EnsembleSpec, arch_vector, edit_distance, param_count, vector_layout
from .errors import InvalidG, InvalidTau, ValidationError
from .mothernet import MotherNetResult, build

STRATEGIES = ("kmeans_g", "greedy_tau")


@dataclass(frozen=True)
class ClusterPlan:
    clusters: tuple         # of (tuple of member names, MotherNetResult)
    strategy: str
    objective: float

    def members(self) -> list:
        return [list(names) for names, _ in self.clusters]

    def cluster_of(self, name: str) -> int:
        for i, (names, _) in enumerate(self.clusters):
            if name in names:
                return i
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "objective": self.objective,
                "clusters": [{"members": list(names), "mothernet": mn.to_dict()} for names, mn in self.clusters]}

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterPlan":
        if d.get("strategy") not in STRATEGIES:
            raise ValidationError(f"unknown cluster strategy {d.get('strategy')!r}")
        clusters = tuple((tuple(c["members"]), MotherNetResult.from_dict(c["mothernet"])) for c in d["clusters"])
        obj = d["objective"]
        return cls(clusters, d["strategy"], int(obj) if float(obj).is_integer() else float(obj))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _sort_key(ensemble: EnsembleSpec):
    counts = {n: param_count(a) for n, a in ensemble.items()}
    return lambda name: (counts[name], name)


# -- balanced K-means -------------------------------------------------------------------------

class _Objective:
    """Caches MotherNets and member-to-MotherNet distances per cluster."""

    def __init__(self, ensemble: EnsembleSpec):
        self.ensemble = ensemble
        self.layout = vector_layout(ensemble.members)
        self.vectors = {n: arch_vector(a, self.layout) for n, a in ensemble.items()}
        self._cache = {}

    def mother(self, names) -> MotherNetResult:
        key = tuple(sorted(names))
        if key not in self._cache:
            self._cache[key] = build(self.ensemble.subset(key))
        return self._cache[key]

    def mother_vector(self, names) -> list:
        return arch_vector(self.mother(names).arch, self.layout)

    def cluster_cost(self, names) -> int:
        mv = self.mother_vector(names)
        return sum(edit_distance(self.vectors[n], mv) for n in names)

    def total(self, groups) -> int:
        return sum(self.cluster_cost(g) for g in groups)


def _capacities(n: int, g: int) -> tuple:
    q, r = divmod(n, g)
    return q, r


def _balanced_assign(names, dist: np.ndarray, g: int) -> list:
    """Greedy capacity-constrained assignment ordered by decreasing regret."""
    n = len(names)
    q, r = _capacities(n, g)
    if g == 1:
        return [list(names)]
    order = sorted(range(n), key=lambda i: (-(np.sort(dist[i])[1] - dist[i].min()), names[i]))
    sizes = [0] * g
    groups = [[] for _ in range(g)]
    for i in order:
        full_big = sum(1 for s in sizes if s >= q + 1)
        best = None
        for c in sorted(range(g), key=lambda c: (dist[i, c], c)):
            cap = q + 1 if (r > 0 and (sizes[c] >= q + 1 or full_big < r)) else q
            if sizes[c] < cap:
                best = c
                break
        sizes[best] += 1
        groups[best].append(names[i])
    return groups


def _local_search(obj: _Objective, groups: list) -> tuple:
    """First-improvement swaps and balance-preserving moves on the exact objective."""
    costs = [obj.cluster_cost(g) for g in groups]
    improved = True
    while improved:
        improved = False
        for a in range(len(groups)):
            for b in range(len(groups)):
                if a == b:
                    continue
                # move a member from a larger cluster into a smaller one
                if len(groups[a]) > len(groups[b]):
                    for x in list(groups[a]):
                        ga = [m for m in groups[a] if m != x]
                        gb = groups[b] + [x]
                        ca, cb = obj.cluster_cost(ga), obj.cluster_cost(gb)
                        if ca + cb < costs[a] + costs[b]:
                            groups[a], groups[b], costs[a], costs[b] = ga, gb, ca, cb
                            improved = True
                            break
                if a < b:
                    for x in list(groups[a]):
                        done = False
                        for y in list(groups[b]):
                            ga = [m for m in groups[a] if m != x] + [y]
                            gb = [m for m in groups[b] if m != y] + [x]
                            ca, cb = obj.cluster_cost(ga), obj.cluster_cost(gb)
                            if ca + cb < costs[a] + costs[b]:
                                groups[a], groups[b], costs[a], costs[b] = ga, gb, ca, cb
                                improved = done = True
                                break
                        if done:
                            break
    return groups, sum(costs)


def _kmeans_from(obj: _Objective, groups: list, names: list, max_iters: int) -> tuple:
    total = obj.total(groups)
    g = len(groups)
    for _ in range(max_iters):
        mvs = [obj.mother_vector(grp) for grp in groups]
        dist = np.array([[edit_distance(obj.vectors[n], mv) for mv in mvs] for n in names], dtype=float)
        new = _balanced_assign(names, dist, g)
        new_total = obj.total(new)
        if sorted(map(sorted, new)) == sorted(map(sorted, groups)) or new_total >= total:
            break
        groups, total = new, new_total
    return _local_search(obj, groups)


def _canonical(groups: list, key) -> list:
    groups = [sorted(grp, key=key) for grp in groups]
    return sorted(groups, key=lambda grp: key(grp[0]))


def cluster_kmeans(ensemble: EnsembleSpec, g: int, max_iters: int = 20, seed: int = 0,
                   restarts: int = 4) -> ClusterPlan:
    """Balanced K-means clustering; cluster sizes differ by at most one.

    The first run starts from size-sorted contiguous chunks; ``restarts``
    further runs start from seeded random balanced partitions.  The lowest
    total edit distance wins, earlier runs winning ties.
    """
    n = len(ensemble)
    if not isinstance(g, (int, np.integer)) or not 1 <= g <= n:
        raise InvalidG(f"g must be an integer in [1, {n}], got {g!r}")
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    key = _sort_key(ensemble)
    names = sorted(ensemble.names, key=key)
    obj = _Objective(ensemble)
    q, r = _capacities(n, g)
    chunk_sizes = [q + 1] * r + [q] * (g - r)
    starts = []
    pos = 0
    for s in chunk_sizes:
        starts.append(names[pos:pos + s])
        pos += s
    inits = [starts]
    rng = np.random.default_rng(seed)
    for _ in range(restarts if 1 < g < n else 0):
        perm = [names[i] for i in rng.permutation(n)]
        grp, pos = [], 0
        for s in chunk_sizes:
            grp.append(perm[pos:pos + s])
            pos += s
        inits.append(grp)
    best = None
    for init in inits:
        groups, total = _kmeans_from(obj, [list(x) for x in init], names, max_iters)
        if best is None or total < best[1]:
            best = (groups, total)
    groups = _canonical(best[0], key)
    clusters = tuple((tuple(grp), obj.mother(grp)) for grp in groups)
    return ClusterPlan(clusters, "kmeans_g", int(best[1]))


# -- greedy tau ----------------------------------------------------------------------------------

def satisfies_tau(ensemble: EnsembleSpec, names, tau: float) -> bool:
    """Every member keeps more than ``1 - tau`` of its parameters from the MotherNet."""
    sub = ensemble.subset(list(names))
    m = param_count(build(sub).arch)
    return all(param_count(a) - m < tau * param_count(a) for a in sub.members)


def _scan(ensemble: EnsembleSpec, names: list, tau: float) -> list:
    groups = [[names[0]]]
    for name in names[1:]:
        candidate = groups[-1] + [name]
        if satisfies_tau(ensemble, candidate, tau):
            groups[-1] = candidate
        else:
            groups.append([name])
    return groups


def _min_segments(ensemble: EnsembleSpec, names: list, tau: float) -> list:
    """Fewest consecutive segments that each satisfy the tau condition.

    ``best[i]`` is the minimum count for ``names[i:]``; walking left to right
    each segment is made as long as the optimum allows, which reproduces the
    plain scan whenever the scan is optimal.
    """
    n = len(names)
    ok = {}

    def feasible(i, j):
        if (i, j) not in ok:
            ok[i, j] = j - i == 1 or satisfies_tau(ensemble, names[i:j], tau)
        return ok[i, j]

    best = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        best[i] = min(1 + best[j] for j in range(i + 1, n + 1) if feasible(i, j))
    groups, i = [], 0
    while i < n:
        j = max(j for j in range(i + 1, n + 1) if feasible(i, j) and 1 + best[j] == best[i])
        groups.append(names[i:j])
        i = j
    return groups


def cluster_greedy_tau(ensemble: EnsembleSpec, tau: float, exact: bool = True) -> ClusterPlan:
    """Cluster size-sorted members into consecutive tau-feasible groups.

    ``exact=False`` runs the single left-to-right scan.  The scan is only
    guaranteed minimal when feasibility is inherited by sub-clusters, which
    fails when a shallower MotherNet carries a wide output layer; the default
    solves the consecutive-segment problem exactly instead.
    """
    if not 0 < tau <= 1:
        raise InvalidTau(f"tau must lie in (0, 1], got {tau!r}")
    names = sorted(ensemble.names, key=_sort_key(ensemble))
    groups = _min_segments(ensemble, names, tau) if exact else _scan(ensemble, names, tau)
    clusters = tuple((tuple(grp), build(ensemble.subset(grp))) for grp in groups)
    return ClusterPlan(clusters, "greedy_tau", len(groups))
