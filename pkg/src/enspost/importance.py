"""Permutation feature importance.

Each input feature is shuffled on its own over all validation samples, with
one permutation shared by every feature, and the increase of the mean CRPS
over the unshuffled baseline is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ForecastDataset
from .errors import FeatureMismatch, LengthMismatch


@dataclass(frozen=True)
class PermutationPlan:
    seed: int
    perm: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        if not np.array_equal(np.sort(p), np.arange(len(p))):
            raise LengthMismatch("permutation is not a bijection on sample indices")
        object.__setattr__(self, "perm", p)

    @classmethod
    def from_seed(cls, n: int, seed: int = 0) -> "PermutationPlan":
        return cls(seed, np.random.default_rng(seed).permutation(n))

    @classmethod
    def identity(cls, n: int) -> "PermutationPlan":
        return cls(-1, np.arange(n))


@dataclass(frozen=True)
class ImportanceReport:
    model: str
    features: tuple
    values: np.ndarray         # mean CRPS increase per feature, same order as ``features``
    baseline: float
    seed: int

    def ranked(self) -> list:
        """(feature, importance) pairs, largest first."""
        order = np.argsort(-self.values, kind="stable")
        return [(self.features[i], float(self.values[i])) for i in order]


def permutation_importance(model, valid: ForecastDataset, plan: PermutationPlan) -> ImportanceReport:
    """Importance of every input feature of a fitted ``model``.

    ``model`` needs ``features`` (input names), ``crps(dataset)`` returning
    per-sample scores and a ``name``.
    """
    missing = [f for f in model.features if f not in valid.feature_spec.names]
    if missing:
        raise FeatureMismatch(f"validation data lacks model features {missing}")
    if len(plan.perm) != valid.n:
        raise LengthMismatch(f"plan covers {len(plan.perm)} samples, data has {valid.n}")
    baseline = float(np.mean(model.crps(valid)))
    values = np.empty(len(model.features))
    X = valid.X
    for k, name in enumerate(model.features):
        j = valid.feature_spec.index(name)
        Xp = X.copy()
        Xp[:, j] = X[plan.perm, j]
        values[k] = float(np.mean(model.crps(valid.with_X(Xp)))) - baseline
    return ImportanceReport(getattr(model, "name", type(model).__name__), tuple(model.features),
                            values, baseline, plan.seed)
