"""End-to-end ensemble training: MotherNets, full-data and bagging strategies."""
from __future__ import annotations

import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .archspec import EnsembleSpec
from .clustering import ClusterPlan, cluster_greedy_tau, cluster_kmeans
from .engine import Dataset, TrainConfig, TrainLog, WeightedNetwork, init_network, train
from .errors import StrategyUnsupported, ValidationError
from .transforms import hatch, perturb, plan_hatch

RUN_STRATEGIES = ("mothernets", "full_data", "bagging")


def derive_seed(base: int, *tags) -> int:
    """Stable 63-bit seed from a base seed and string/int tags."""
    words = [int(base) & 0xFFFFFFFF, (int(base) >> 32) & 0xFFFFFFFF]
    words += [zlib.crc32(str(t).encode()) for t in tags]
    state = np.random.SeedSequence(words).generate_state(2)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True)
class RunConfig:
    ensemble: EnsembleSpec
    strategy: str = "mothernets"
    g: Optional[int] = None
    tau: Optional[float] = None
    train: TrainConfig = TrainConfig()
    mother_train: TrainConfig = TrainConfig()
    # None: 0.01 x each tensor's std; 0 disables the perturbation.
    noise_sigma: Optional[float] = None
    noise_scope: str = "all_params"
    seed: int = 0
    finetune_lr_factor: float = 1.0
    bag_hatched: bool = False

    def __post_init__(self):
        if self.strategy not in RUN_STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "mothernets":
            if (self.g is None) == (self.tau is None):
                raise ValidationError("mothernets needs exactly one of g or tau")
            if self.g is not None and not 1 <= self.g <= len(self.ensemble):
                raise ValidationError(f"g must lie in [1, {len(self.ensemble)}]")
        if self.finetune_lr_factor <= 0:
            raise ValidationError("finetune_lr_factor must be positive")

    def to_dict(self) -> dict:
        return {"ensemble": self.ensemble.to_dict(), "strategy": self.strategy, "g": self.g, "tau": self.tau,
                "train": self.train.to_dict(), "mother_train": self.mother_train.to_dict(),
                "noise_sigma": self.noise_sigma, "noise_scope": self.noise_scope, "seed": self.seed,
                "finetune_lr_factor": self.finetune_lr_factor, "bag_hatched": self.bag_hatched}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if "ensemble" not in d:
            raise ValidationError("run config needs an 'ensemble'")
        train_cfg = TrainConfig.from_dict(d.get("train", {}))
        return cls(EnsembleSpec.from_dict(d["ensemble"]), d.get("strategy", "mothernets"), d.get("g"),
                   d.get("tau"), train_cfg, TrainConfig.from_dict(d.get("mother_train", d.get("train", {}))),
                   d.get("noise_sigma"), d.get("noise_scope", "all_params"), int(d.get("seed", 0)),
                   float(d.get("finetune_lr_factor", 1.0)), bool(d.get("bag_hatched", False)))


@dataclass
class RunReport:
    strategy: str
    logs: dict                          # member name -> TrainLog of its final training
    networks: dict                      # member name -> WeightedNetwork
    mother_logs: dict = field(default_factory=dict)       # cluster id -> TrainLog
    mothers: dict = field(default_factory=dict)           # cluster id -> trained WeightedNetwork
    hatched: dict = field(default_factory=dict)           # member name -> hatched, pre-noise network
    cluster_plan: Optional[ClusterPlan] = None
    wall_seconds: float = 0.0

    @property
    def member_epochs(self) -> int:
        return sum(log.epochs for log in self.logs.values())

    @property
    def mother_epochs(self) -> int:
        return sum(log.epochs for log in self.mother_logs.values())

    @property
    def total_epochs(self) -> int:
        return self.member_epochs + self.mother_epochs

    def to_dict(self) -> dict:
        """Deterministic report body (wall-clock timing is kept separately)."""
        return {"strategy": self.strategy,
                "epochs": {"total": self.total_epochs, "mothernets": self.mother_epochs,
                           "members": self.member_epochs},
                "logs": {k: self.logs[k].to_dict() for k in sorted(self.logs)},
                "mother_logs": {k: self.mother_logs[k].to_dict() for k in sorted(self.mother_logs)},
                "cluster_plan": self.cluster_plan.to_dict() if self.cluster_plan else None}


def bag_sample(data: Dataset, seed: int) -> Dataset:
    """Same-size resample with replacement."""
    idx = np.random.default_rng(seed).integers(0, len(data), len(data))
    return data.take(idx)


def cost_report(report, rate_usd_per_hour: float) -> float:
    if not rate_usd_per_hour > 0:
        raise ValidationError("rate must be positive")
    seconds = report if isinstance(report, (int, float)) else report.wall_seconds
    return seconds / 3600.0 * rate_usd_per_hour


def _train_cfg(cfg: TrainConfig, base_seed: int, tag: str, lr_factor: float = 1.0) -> TrainConfig:
    return replace(cfg, shuffle_seed=derive_seed(base_seed, cfg.shuffle_seed, "shuffle", tag),
                   learning_rate=cfg.learning_rate * lr_factor)


def _from_scratch(cfg: RunConfig, name: str, arch, data: Dataset, tcfg: TrainConfig) -> tuple:
    net = init_network(arch, derive_seed(cfg.seed, "init", name))
    return train(net, data, _train_cfg(tcfg, cfg.seed, name))


def _map(fn, items, jobs: int) -> list:
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run(cfg: RunConfig, data: Dataset, jobs: int = 1) -> RunReport:
    """Train the ensemble under ``cfg.strategy`` and account every epoch."""
    if cfg.ensemble.kind != "dense":
        raise StrategyUnsupported("only dense ensembles can be trained")
    start = time.perf_counter()
    members = dict(cfg.ensemble.items())
    names = list(cfg.ensemble.names)

    if cfg.strategy in ("full_data", "bagging"):
        def job(name):
            d = bag_sample(data, derive_seed(cfg.seed, "bag", name)) if cfg.strategy == "bagging" else data
            return _from_scratch(cfg, name, members[name], d, cfg.train)
        results = dict(zip(names, _map(job, names, jobs)))
        return RunReport(cfg.strategy, {n: r[1] for n, r in results.items()},
                         {n: r[0] for n, r in results.items()}, wall_seconds=time.perf_counter() - start)

    plan = cluster_kmeans(cfg.ensemble, cfg.g, seed=cfg.seed) if cfg.g is not None \
        else cluster_greedy_tau(cfg.ensemble, cfg.tau)

    # Step 1: train every MotherNet on the full data.  A singleton cluster's
    # MotherNet is its member, trained exactly as full_data would.
    def train_mother(item):
        cid, (cnames, mres) = item
        tag = cnames[0] if len(cnames) == 1 else "mother:" + "+".join(cnames)
        return _from_scratch(cfg, tag, mres.arch, data, cfg.mother_train if len(cnames) > 1 else cfg.train)
    mothers = _map(train_mother, list(enumerate(plan.clusters)), jobs)
    mother_nets = {f"c{i}": m[0] for i, m in enumerate(mothers)}
    mother_logs = {f"c{i}": m[1] for i, m in enumerate(mothers)}

    # Steps 2 and 3: hatch, perturb and fine-tune the remaining members.
    todo = []
    networks, logs = {}, {}
    for i, (cnames, _) in enumerate(plan.clusters):
        if len(cnames) == 1:
            networks[cnames[0]] = mother_nets[f"c{i}"]
        else:
            todo += [(n, f"c{i}") for n in cnames]

    def hatch_member(item):
        name, cid = item
        mother = mother_nets[cid]
        hp = plan_hatch(mother.arch, members[name], derive_seed(cfg.seed, "hatch", name))
        hatched = hatch(mother, hp)
        noisy = hatched if cfg.noise_sigma == 0 else perturb(hatched, cfg.noise_sigma,
                                                              derive_seed(cfg.seed, "noise", name),
                                                              cfg.noise_scope)
        d = bag_sample(data, derive_seed(cfg.seed, "bag", name)) if cfg.bag_hatched else data
        tuned, log = train(noisy, d, _train_cfg(cfg.train, cfg.seed, name, cfg.finetune_lr_factor))
        return hatched, tuned, log

    hatched = {}
    for (name, _), (h, net, log) in zip(todo, _map(hatch_member, todo, jobs)):
        hatched[name], networks[name], logs[name] = h, net, log

    # singleton members report their (only) training under their own name
    for i, (cnames, _) in enumerate(plan.clusters):
        if len(cnames) == 1:
            logs[cnames[0]] = mother_logs.pop(f"c{i}")
    return RunReport("mothernets", {n: logs[n] for n in names}, {n: networks[n] for n in names},
                     mother_logs, mother_nets, hatched, plan, time.perf_counter() - start)
