"""Train a 3-member dense ensemble with full_data and with mothernets(g=1); compare epochs and accuracy."""
import argparse
import json

from mothernets.experiments import DeskSetup, speedup


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--json", action="store_true", help="print a JSON summary")
    args = p.parse_args()
    res = speedup(DeskSetup(), seed=args.seed)
    rows = [res["full_data"], res["mothernets"]]
    if args.json:
        print(json.dumps({o.label: vars(o) for o in rows} | {"epoch_ratio": res["epoch_ratio"]}, indent=2))
        return
    print(f"{'strategy':<16}{'epochs':>8}{'mother':>8}{'accuracy':>10}{'seconds':>9}")
    for o in rows:
        print(f"{o.label:<16}{o.total_epochs:>8}{o.mother_epochs:>8}{o.accuracy:>10.3f}{o.wall_seconds:>9.1f}")
    print(f"epoch ratio {res['epoch_ratio']:.3f}, accuracy gap {res['accuracy_gap']:.3f}")


if __name__ == "__main__":
    main()
