"""AUC, accuracy, RMSE and MAE over valid prediction/target pairs."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError


def auc(scores, labels) -> float:
    """Exact Mann-Whitney AUC; tied scores earn half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("undefined AUC: labels contain a single class")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction correct when predicting 1 for scores strictly above ``threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractError("accuracy of an empty set")
    return float(((scores > threshold).astype(int) == np.asarray(labels)).mean())


def rmse(scores, labels) -> float:
    diff = np.asarray(scores, dtype=np.float64) - np.asarray(labels, dtype=np.float64)
    if diff.size == 0:
        raise ContractError("rmse of an empty set")
    return math.sqrt(float((diff**2).mean()))


def mae(scores, labels) -> float:
    diff = np.asarray(scores, dtype=np.float64) - np.asarray(labels, dtype=np.float64)
    if diff.size == 0:
        raise ContractError("mae of an empty set")
    return float(np.abs(diff).mean())


@dataclass
class MetricsReport:
    auc: float
    acc: float
    rmse: float
    mae: float
    n_pairs: int

    @classmethod
    def compute(cls, scores, labels) -> "MetricsReport":
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels)
        return cls(
            auc=auc(scores, labels),
            acc=accuracy(scores, labels),
            rmse=rmse(scores, labels),
            mae=mae(scores, labels),
            n_pairs=int(scores.size),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
