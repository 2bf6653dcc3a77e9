"""Sweep the number of MotherNets g over several seeds and report mean epochs and accuracy."""
import argparse

from mothernets.experiments import DeskSetup, g_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=10, help="use seeds 1..N")
    p.add_argument("--g", type=int, nargs="+", default=[1, 2, 3])
    args = p.parse_args()
    rows = g_sweep(DeskSetup(), seeds=range(1, args.seeds + 1), gs=tuple(args.g))
    print(f"{'g':>3}{'mean epochs':>14}{'mean accuracy':>16}")
    for g, r in rows.items():
        print(f"{g:>3}{r['mean_epochs']:>14.1f}{r['mean_accuracy']:>16.4f}")


if __name__ == "__main__":
    main()
