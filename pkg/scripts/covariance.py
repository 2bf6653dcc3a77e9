"""Repeat trainings under each strategy and report member covariance and the misclassification bound."""
import argparse

from mothernets.diagnostics import chebyshev_bound, collect_samples, covariance_report
from mothernets.errors import AssumptionViolated
from mothernets.experiments import DeskSetup


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--trials", type=int, default=5)
    args = p.parse_args()
    setup = DeskSetup()
    train, test = setup.data()
    print(f"{'strategy':<14}{'mean var':>10}{'mean cov':>10}{'var(Yhat)':>11}{'E[Yhat]':>9}{'bound':>8}")
    for label, strategy, g in (("mothernets", "mothernets", 1), ("bagging", "bagging", None),
                               ("full_data", "full_data", None)):
        rep = covariance_report(collect_samples(setup.config(strategy, g), train, test, args.trials,
                                                seeds=range(1, args.trials + 1)))
        try:
            bound = f"{chebyshev_bound(rep.ensemble_mean, rep.ensemble_variance):8.3f}"
        except AssumptionViolated:
            bound = "     n/a"
        print(f"{label:<14}{rep.variances.mean():>10.5f}{rep.mean_pairwise_covariance:>10.5f}"
              f"{rep.ensemble_variance:>11.5f}{rep.ensemble_mean:>9.3f}{bound}")


if __name__ == "__main__":
    main()
