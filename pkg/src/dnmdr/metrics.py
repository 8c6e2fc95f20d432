"""Visit-level recommendation metrics: Jaccard, F1, PRAUC, DDI rate, drug count.

Precision and recall follow the printed definitions, where precision divides
the overlap by the *true* set size and recall by the *predicted* set size.
F1 is symmetric in the two so only ``precision_recall`` exposes the swap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

METRIC_NAMES = ("jaccard", "f1", "prauc", "ddi_rate", "avg_drugs")


@dataclass(frozen=True)
class VisitEval:
    truth: frozenset[int]
    predicted: frozenset[int]
    probs: np.ndarray | None = None

    @classmethod
    def from_probs(cls, truth: Iterable[int], probs: np.ndarray, threshold: float = 0.5) -> "VisitEval":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(frozenset(int(i) for i in truth), frozenset(np.flatnonzero(probs >= threshold).tolist()), probs)


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def visit_jaccard(v: VisitEval) -> float:
    union = v.truth | v.predicted
    if not union:
        return 1.0
    return len(v.truth & v.predicted) / len(union)


def jaccard(evals: Sequence[VisitEval]) -> float:
    return _mean([visit_jaccard(v) for v in evals])


def precision_recall(v: VisitEval, conventional: bool = False) -> tuple[float, float]:
    hit = len(v.truth & v.predicted)
    by_truth = hit / len(v.truth) if v.truth else 0.0
    by_pred = hit / len(v.predicted) if v.predicted else 0.0
    return (by_pred, by_truth) if conventional else (by_truth, by_pred)


def visit_f1(v: VisitEval, conventional: bool = False) -> float:
    p, r = precision_recall(v, conventional)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def f1(evals: Sequence[VisitEval], conventional: bool = False) -> float:
    return _mean([visit_f1(v, conventional) for v in evals])


def visit_prauc(v: VisitEval) -> float:
    """Rank-walk average precision; ties broken by ascending drug index."""
    if v.probs is None:
        raise ValueError("PRAUC needs predicted probabilities")
    if not v.truth:
        return 0.0
    order = np.argsort(-np.asarray(v.probs, dtype=np.float64), kind="stable")
    hits = np.isin(order, list(v.truth))
    cum = np.cumsum(hits)
    ranks = np.arange(1, len(order) + 1)
    return float(np.sum((cum / ranks) * hits) / len(v.truth))


def prauc(evals: Sequence[VisitEval]) -> float:
    return _mean([visit_prauc(v) for v in evals])


def ddi_pair_count(drugs: Iterable[int], a_ddi: np.ndarray) -> int:
    return sum(1 for i, j in combinations(sorted(drugs), 2) if a_ddi[i, j] > 0)


def ddi_rate(predicted: Sequence[Iterable[int]], a_ddi: np.ndarray) -> float:
    """Interacting unordered pairs across visits over total predicted drugs."""
    predicted = [frozenset(p) for p in predicted]
    total = sum(len(p) for p in predicted)
    if total == 0:
        return 0.0
    return sum(ddi_pair_count(p, a_ddi) for p in predicted) / total


def avg_drugs(predicted: Sequence[Iterable[int]]) -> float:
    return _mean([len(frozenset(p)) for p in predicted])


def score_visits(evals: Sequence[VisitEval], a_ddi: np.ndarray, conventional_pr: bool = False) -> dict[str, float]:
    predicted = [v.predicted for v in evals]
    return {
        "jaccard": jaccard(evals),
        "f1": f1(evals, conventional_pr),
        "prauc": prauc(evals),
        "ddi_rate": ddi_rate(predicted, a_ddi),
        "avg_drugs": avg_drugs(predicted),
    }


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float


@dataclass(frozen=True)
class MetricReport:
    jaccard: MetricSummary
    f1: MetricSummary
    prauc: MetricSummary
    ddi_rate: MetricSummary
    avg_drugs: MetricSummary
    rounds: int = 1

    @classmethod
    def from_rounds(cls, per_round: Sequence[dict[str, float]]) -> "MetricReport":
        if not per_round:
            raise ValueError("need at least one round")
        fields = {}
        for name in METRIC_NAMES:
            vals = np.array([r[name] for r in per_round], dtype=np.float64)
            fields[name] = MetricSummary(float(vals.mean()), float(vals.std()) if len(vals) > 1 else 0.0)
        return cls(**fields, rounds=len(per_round))

    def to_dict(self) -> dict:
        return {name: {"mean": getattr(self, name).mean, "std": getattr(self, name).std} for name in METRIC_NAMES}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def summary_line(self) -> str:
        """Single line in results-table column order."""
        parts = []
        for name in METRIC_NAMES:
            s = getattr(self, name)
            fmt = "{:.2f} ± {:.4f}" if name == "avg_drugs" else ("{:.5f} ± {:.4f}" if name == "ddi_rate" else "{:.4f} ± {:.4f}")
            parts.append(fmt.format(s.mean, s.std))
        return " | ".join(parts)
