"""Command-line interface: ``mothernets <verb> [flags]``.

Exit status is 0 on success, 2 on invalid input and 1 on runtime failure.
Errors go to stderr as ``<CODE>: <message>``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .archspec import EnsembleSpec
from .clustering import ClusterPlan, cluster_greedy_tau, cluster_kmeans
from .engine import atomic_write, load_dataset, load_weights, save_weights
from .errors import MotherNetsError, ValidationError
from .mothernet import build

SEED_ENV = "MOTHERNETS_SEED"


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _load_ensemble(path) -> EnsembleSpec:
    doc = _read_json(path)
    if isinstance(doc, list):
        doc = {"members": doc}
    if "ensemble" in doc and "members" not in doc:
        doc = doc["ensemble"]
    return EnsembleSpec.from_dict(doc)


def _load_data(path):
    if not Path(path).exists():
        raise ValidationError(f"no such file: {path}")
    return load_dataset(path)


def _seed(args, fallback: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return fallback


def _emit(text: str, out) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


# -- verbs ----------------------------------------------------------------------------------

def cmd_build_mother(args) -> int:
    result = build(_load_ensemble(args.ensemble))
    _emit(_dump(result.to_dict()), args.out)
    return 0


def _cluster(ensemble, args, seed):
    if args.strategy is None:
        raise ValidationError("--strategy is required")
    if args.strategy == "kmeans":
        if args.g is None:
            raise ValidationError("kmeans needs --g")
        return cluster_kmeans(ensemble, args.g, seed=seed)
    if args.tau is None:
        raise ValidationError("greedy needs --tau")
    return cluster_greedy_tau(ensemble, args.tau)


def cmd_cluster(args) -> int:
    plan = _cluster(_load_ensemble(args.ensemble), args, _seed(args))
    _emit(_dump(plan.to_dict()), args.out)
    return 0


def cmd_hatch_plan(args) -> int:
    from .transforms import plan_hatch
    from .pipeline import derive_seed
    ensemble = _load_ensemble(args.ensemble)
    seed = _seed(args)
    if args.config:
        cplan = ClusterPlan.from_dict(_read_json(args.config))
        planned = sorted(n for names, _ in cplan.clusters for n in names)
        if planned != sorted(ensemble.names):
            raise ValidationError(f"cluster plan members {planned} do not match the ensemble")
    else:
        cplan = ClusterPlan(((tuple(ensemble.names), build(ensemble)),), "kmeans_g", 0)
    members = dict(ensemble.items())
    plans = {}
    for names, mres in cplan.clusters:
        for name in names:
            plans[name] = plan_hatch(mres.arch, members[name], derive_seed(seed, "hatch", name)).to_dict()
    _emit(_dump({"plans": plans}), args.out)
    return 0


def _run_config(args):
    from .pipeline import RunConfig
    doc = _read_json(args.config)
    if args.strategy is not None:
        raise ValidationError("run takes its strategy from --config")
    cfg = RunConfig.from_dict(doc)
    changes = {"seed": _seed(args, cfg.seed)}
    if args.g is not None:
        changes.update(strategy="mothernets", g=args.g, tau=None)
    elif args.tau is not None:
        changes.update(strategy="mothernets", tau=args.tau, g=None)
    return replace(cfg, **changes)


def cmd_run(args) -> int:
    from .pipeline import run
    if not args.out_dir:
        raise ValidationError("run needs --out-dir")
    cfg = _run_config(args)
    data = _load_data(_single(args.data, "run"))
    report = run(cfg, data, jobs=args.jobs)
    out = Path(args.out_dir)
    body = report.to_dict()
    body["config"] = cfg.to_dict()
    body["networks"] = {n: f"networks/{n}.mnwb" for n in sorted(report.networks)}
    body["mothers"] = {c: f"mothers/{c}.mnwb" for c in sorted(report.mothers)}
    body["hatched"] = {n: f"hatched/{n}.mnwb" for n in sorted(report.hatched)}
    for n, net in report.networks.items():
        save_weights(net, out / body["networks"][n])
    for c, net in report.mothers.items():
        save_weights(net, out / body["mothers"][c])
    for n, net in report.hatched.items():
        save_weights(net, out / body["hatched"][n])
    atomic_write(out / "report.json", _dump(body))
    atomic_write(out / "timing.json", _dump({"wall_seconds": report.wall_seconds}))
    print(_dump(body["epochs"]), end="")
    return 0


def _single(values, verb: str) -> str:
    if not values or len(values) != 1:
        raise ValidationError(f"{verb} needs exactly one --data")
    return values[0]


def _report_networks(path) -> tuple:
    report = _read_json(path)
    if "networks" not in report:
        raise ValidationError(f"{path} is not a run report")
    base = Path(path).parent
    return report, base, {n: load_weights(base / p) for n, p in report["networks"].items()}


def cmd_eval(args) -> int:
    from .inference import member_accuracies, oracle_accuracy, predict_average, predict_vote
    if not args.config:
        raise ValidationError("eval needs --config pointing at a run report")
    report, _, nets = _report_networks(args.config)
    data = _load_data(_single(args.data, "eval"))
    names = sorted(nets)
    members = [nets[n] for n in names]
    if args.method == "oracle":
        acc = oracle_accuracy(members, data)
    else:
        acc = (predict_vote if args.method == "vote" else predict_average)(members, data)[1]
    result = {"method": args.method, "accuracy": acc,
              "member_accuracies": dict(zip(names, member_accuracies(members, data)))}
    _emit(_dump(result), args.out)
    return 0


def cmd_share(args) -> int:
    from .inference import build_shared, shared_infer
    if not args.config:
        raise ValidationError("share needs --config pointing at a run report")
    if not (args.out_dir or args.out):
        raise ValidationError("share needs --out-dir")
    report, base, nets = _report_networks(args.config)
    if not report.get("cluster_plan"):
        raise ValidationError("share needs a mothernets run report")
    data = _load_data(_single(args.data, "share")) if args.data else None
    cplan = ClusterPlan.from_dict(report["cluster_plan"])
    plans = []
    for i, (names, _) in enumerate(cplan.clusters):
        mother = load_weights(base / report["mothers"][f"c{i}"])
        members = [nets[n] for n in names]
        if len(names) == 1:
            continue
        plans.append((f"c{i}", build_shared(mother, members, names)))
    summary = {}
    for cid, sp in plans:
        entry = sp.accounting()
        if data is not None:
            entry["average_accuracy"] = float((shared_infer(sp, data).average() == data.labels).mean())
        summary[cid] = entry
    out = Path(args.out_dir or args.out)
    for cid, sp in plans:
        sp.save(out / cid)
    atomic_write(out / "shared.json", _dump(summary))
    print(_dump(summary), end="")
    return 0


def cmd_diag(args) -> int:
    from .diagnostics import chebyshev_bound, collect_samples, covariance_report
    from .errors import AssumptionViolated
    if not args.config:
        raise ValidationError("diag needs --config")
    if not args.data or len(args.data) not in (1, 2):
        raise ValidationError("diag needs --data TRAIN [--data TEST]")
    cfg = _run_config(args)
    train = _load_data(args.data[0])
    test = _load_data(args.data[-1])
    trials = args.trials if args.trials is not None else 5
    seeds = [cfg.seed + r for r in range(trials)]
    rep = covariance_report(collect_samples(cfg, train, test, trials, seeds, jobs=args.jobs))
    body = rep.to_dict()
    try:
        body["chebyshev_bound"] = chebyshev_bound(rep.ensemble_mean, rep.ensemble_variance)
    except AssumptionViolated:
        body["chebyshev_bound"] = None
    body["decomposition_residual"] = abs(rep.decomposition() - rep.ensemble_variance)
    text = _dump(body)
    if args.out:
        atomic_write(args.out, text)
        atomic_write(Path(str(args.out) + ".csv"), rep.to_csv())
    else:
        sys.stdout.write(text)
    return 0


def cmd_cost(args) -> int:
    from .pipeline import cost_report
    if not args.report:
        raise ValidationError("cost needs --report")
    if args.rate is None:
        raise ValidationError("cost needs --rate")
    timing_path = Path(args.report).with_name("timing.json")
    doc = _read_json(timing_path if timing_path.exists() else args.report)
    if "wall_seconds" not in doc:
        raise ValidationError("no wall-clock timing next to the report")
    usd = cost_report(float(doc["wall_seconds"]), args.rate)
    report = _read_json(args.report)
    out = {"usd": usd, "rate_usd_per_hour": args.rate, "wall_seconds": doc["wall_seconds"],
           "epochs": report.get("epochs")}
    _emit(_dump(out), args.out)
    return 0


VERBS = {"build-mother": cmd_build_mother, "cluster": cmd_cluster, "hatch-plan": cmd_hatch_plan,
         "run": cmd_run, "eval": cmd_eval, "share": cmd_share, "diag": cmd_diag, "cost": cmd_cost}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mothernets", description="Train ensembles through MotherNets.")
    p.add_argument("verb", choices=sorted(VERBS))
    p.add_argument("--ensemble")
    p.add_argument("--strategy", choices=["kmeans", "greedy"])
    p.add_argument("--g", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--data", action="append")
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.add_argument("--rate", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--method", choices=["average", "vote", "oracle"], default="average")
    p.add_argument("--trials", type=int)
    p.add_argument("--report")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    needs_ensemble = args.verb in ("build-mother", "cluster", "hatch-plan")
    try:
        if needs_ensemble and not args.ensemble:
            raise ValidationError(f"{args.verb} needs --ensemble")
        if args.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        return VERBS[args.verb](args)
    except MotherNetsError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValidationError) else 1
    except (OSError, KeyError) as exc:
        print(f"E_RUNTIME: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
