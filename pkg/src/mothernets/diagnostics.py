"""Variance/covariance of correct-class probabilities across repeated trainings."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .engine import Dataset, forward
from .errors import AssumptionViolated, InsufficientTrials, ShapeMismatch, ValidationError


@dataclass(frozen=True)
class SoftmaxSamples:
    y: np.ndarray           # [model][trial][example] correct-class probability
    names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 3:
            raise ShapeMismatch("samples must be indexed [model][trial][example]")
        if y.shape[1] < 2:
            raise InsufficientTrials(f"need at least 2 trials, got {y.shape[1]}")
        if np.any((y < 0) | (y > 1)) or not np.all(np.isfinite(y)):
            raise ValidationError("samples must be probabilities")
        names = tuple(self.names) or tuple(f"net{i}" for i in range(y.shape[0]))
        if len(names) != y.shape[0]:
            raise ValidationError("one name per model")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", names)

    @property
    def models(self) -> int:
        return self.y.shape[0]

    @property
    def trials(self) -> int:
        return self.y.shape[1]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "y": self.y.tolist()}


def correct_class_probs(net, data: Dataset) -> np.ndarray:
    p = forward(net, data.features)
    return p[np.arange(len(data)), data.labels]


def collect_samples(cfg, train: Dataset, test: Dataset, trials: int, seeds: Optional[Sequence[int]] = None,
                    jobs: int = 1) -> SoftmaxSamples:
    """Run ``cfg`` once per seed and record each member's correct-class softmax on ``test``."""
    from .pipeline import run
    seeds = list(range(trials)) if seeds is None else list(seeds)
    if trials < 2:
        raise InsufficientTrials(f"need at least 2 trials, got {trials}")
    if len(seeds) != trials:
        raise ValidationError("one seed per trial")
    names = list(cfg.ensemble.names)
    y = np.empty((len(names), trials, len(test)))
    for r, seed in enumerate(seeds):
        report = run(replace(cfg, seed=int(seed)), train, jobs=jobs)
        for i, name in enumerate(names):
            y[i, r] = correct_class_probs(report.networks[name], test)
    return SoftmaxSamples(y, tuple(names))


def ensemble_variance(variances, covariance) -> float:
    """(1/m^2) * (sum of variances + sum of off-diagonal covariances)."""
    variances = np.asarray(variances, dtype=np.float64)
    cov = np.array(covariance, dtype=np.float64)
    m = variances.size
    if np.ndim(cov) == 0:
        cov = np.full((m, m), float(cov))
    off = cov.sum() - np.trace(cov)
    return float((variances.sum() + off) / m ** 2)


@dataclass(frozen=True)
class CovarianceReport:
    names: tuple
    variances: np.ndarray       # Var(Y_i), averaged over examples
    covariance: np.ndarray      # Cov(Y_i, Y_i'), averaged over examples (diagonal = variances)
    ensemble_variance: float    # Var(Y_hat)
    ensemble_mean: float        # E[Y_hat]
    trials: int
    examples: int

    @property
    def mean_pairwise_covariance(self) -> float:
        m = len(self.names)
        if m < 2:
            return 0.0
        return float((self.covariance.sum() - np.trace(self.covariance)) / (m * (m - 1)))

    def decomposition(self) -> float:
        return ensemble_variance(self.variances, self.covariance)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "variances": self.variances.tolist(),
                "covariance": self.covariance.tolist(), "ensemble_variance": self.ensemble_variance,
                "ensemble_mean": self.ensemble_mean, "mean_pairwise_covariance": self.mean_pairwise_covariance,
                "trials": self.trials, "examples": self.examples}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(self.names))
        for name, row in zip(self.names, self.covariance):
            w.writerow([name] + [repr(float(v)) for v in row])
        return buf.getvalue()


def covariance_report(s: SoftmaxSamples) -> CovarianceReport:
    """Per-example statistics over trials (divisor R-1), then averaged over examples."""
    if s.trials < 2:
        raise InsufficientTrials("need at least 2 trials")
    y = s.y
    dev = y - y.mean(axis=1, keepdims=True)                          # m, R, n
    cov = np.einsum("arn,brn->abn", dev, dev) / (s.trials - 1)       # m, m, n
    cov = cov.mean(axis=2)
    yhat = y.mean(axis=0)                                            # R, n
    var_hat = yhat.var(axis=0, ddof=1).mean()
    return CovarianceReport(s.names, np.diag(cov).copy(), cov, float(var_hat), float(yhat.mean()),
                            s.trials, y.shape[2])


def chebyshev_bound(e_yhat: float, var_yhat: float) -> float:
    """Upper bound on P(Y_hat <= 1/2); values above 1 are returned as they are."""
    if not e_yhat > 0.5:
        raise AssumptionViolated(f"the bound needs E[Y_hat] > 1/2, got {e_yhat}")
    if var_yhat < 0:
        raise ValidationError("variance must be nonnegative")
    return var_yhat / (e_yhat - 0.5) ** 2
