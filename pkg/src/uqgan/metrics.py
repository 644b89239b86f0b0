"""Evaluation metrics for OoD detection, failure detection and calibration.

Conventions used throughout: a higher score means "more positive", and a
threshold ``t`` classifies ``score >= t`` as positive.  Ties in AUROC are
resolved with midranks.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError, UndefinedMetricError
from .ova_core import UncertaintyReport

ECE_BINS = 15


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).astype(bool).ravel()
        if self.scores.shape != self.labels.shape:
            raise InvalidArgumentError("scores and labels must have equal length")

    @classmethod
    def from_in_out(cls, in_scores, out_scores) -> "ScoredSet":
        """In-distribution scores become positives, OoD scores negatives."""
        in_scores = np.asarray(in_scores, dtype=np.float64).ravel()
        out_scores = np.asarray(out_scores, dtype=np.float64).ravel()
        return cls(
            np.concatenate([in_scores, out_scores]),
            np.concatenate([np.ones(in_scores.size, bool), np.zeros(out_scores.size, bool)]),
        )

    def flipped(self) -> "ScoredSet":
        """Swap the roles of positives and negatives, negating scores."""
        return ScoredSet(-self.scores, ~self.labels)


@dataclass
class MetricsReport:
    accuracy: float
    auroc_sf: float
    ece: float
    auroc_ood: float
    aupr_in: float
    aupr_out: float
    fpr_at_95_tpr: float
    per_ood_dataset: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _require_both(s: ScoredSet):
    n_pos = int(s.labels.sum())
    if n_pos == 0 or n_pos == s.labels.size:
        raise UndefinedMetricError("metric needs at least one positive and one negative")


def auroc(s: ScoredSet) -> float:
    """``P(score_pos > score_neg) + ½ P(tie)``."""
    _require_both(s)
    ranks = rankdata(s.scores)
    n_pos = int(s.labels.sum())
    n_neg = s.labels.size - n_pos
    return float((ranks[s.labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _threshold_counts(s: ScoredSet):
    """True/false positive counts at each distinct threshold, descending."""
    order = np.argsort(-s.scores, kind="mergesort")
    scores = s.scores[order]
    labels = s.labels[order]
    last_of_group = np.r_[scores[1:] != scores[:-1], True]
    tp = np.cumsum(labels)[last_of_group]
    fp = np.cumsum(~labels)[last_of_group]
    return scores[last_of_group], tp, fp


def aupr(s: ScoredSet, positive: str = "in") -> float:
    """Average precision ``Σ (R_k - R_{k-1}) P_k`` over distinct thresholds.

    ``positive="out"`` evaluates the negatives as the positive class with
    negated scores.
    """
    if positive == "out":
        s = s.flipped()
    elif positive != "in":
        raise InvalidArgumentError("positive must be 'in' or 'out'")
    _require_both(s)
    _, tp, fp = _threshold_counts(s)
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def fpr_at_tpr(s: ScoredSet, tpr_level: float = 0.95) -> float:
    """FPR at the largest threshold reaching ``TPR >= tpr_level``."""
    _require_both(s)
    _, tp, fp = _threshold_counts(s)
    tpr = tp / s.labels.sum()
    k = int(np.argmax(tpr >= tpr_level))
    return float(fp[k] / (~s.labels).sum())


def fpr_at_95_tpr(s: ScoredSet) -> float:
    return fpr_at_tpr(s, 0.95)


def ece(posteriors, true_labels, bins: int = ECE_BINS) -> float:
    """Expected calibration error with equal-width confidence bins ``(lo, hi]``."""
    p = np.asarray(posteriors, dtype=np.float64)
    y = np.asarray(true_labels).ravel()
    if p.ndim != 2 or p.shape[0] != y.size:
        raise InvalidArgumentError("posteriors must be (N, n) with N labels")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise InvalidArgumentError("posterior rows must sum to 1")
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == y).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    nz = counts > 0
    gaps = np.abs(acc_sum[nz] / counts[nz] - conf_sum[nz] / counts[nz])
    return float(np.sum(counts[nz] / y.size * gaps))


def accuracy(predictions, true_labels) -> float:
    predictions = np.asarray(predictions).ravel()
    return float(np.mean(predictions == np.asarray(true_labels).ravel()))


def _entropies(reports) -> np.ndarray:
    if isinstance(reports, UncertaintyReport):
        return np.atleast_1d(reports.aleatoric_raw)
    return np.array([float(r.aleatoric_raw) for r in reports])


def auroc_success_failure(reports, predictions, true_labels) -> float:
    """AUROC separating correct from wrong predictions by negative entropy."""
    correct = np.asarray(predictions).ravel() == np.asarray(true_labels).ravel()
    return auroc(ScoredSet(-_entropies(reports), correct))


def ood_metrics(in_scores, out_scores) -> dict:
    s = ScoredSet.from_in_out(in_scores, out_scores)
    return {
        "auroc_ood": auroc(s),
        "aupr_in": aupr(s, "in"),
        "aupr_out": aupr(s, "out"),
        "fpr_at_95_tpr": fpr_at_95_tpr(s),
    }


def evaluate_scores(
    posteriors,
    true_labels,
    in_ood_scores,
    in_sf_scores,
    ood_scores: dict[str, np.ndarray],
) -> MetricsReport:
    """Assemble a :class:`MetricsReport` from precomputed scores.

    ``in_ood_scores`` rank in-distribution test inputs for OoD detection
    (higher = more in-distribution); ``in_sf_scores`` rank them for success
    versus failure (higher = more likely correct).  The aggregate OoD numbers
    pool all OoD sets as they are, without rebalancing.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    preds = posteriors.argmax(axis=1)
    correct = preds == np.asarray(true_labels).ravel()
    try:
        sf = auroc(ScoredSet(in_sf_scores, correct))
    except UndefinedMetricError:
        sf = float("nan")
    per = {name: ood_metrics(in_ood_scores, sc) for name, sc in ood_scores.items()}
    if ood_scores:
        pooled = ood_metrics(in_ood_scores, np.concatenate([np.ravel(v) for v in ood_scores.values()]))
    else:
        pooled = dict.fromkeys(("auroc_ood", "aupr_in", "aupr_out", "fpr_at_95_tpr"), float("nan"))
    return MetricsReport(
        accuracy=accuracy(preds, true_labels),
        auroc_sf=sf,
        ece=ece(posteriors, true_labels),
        per_ood_dataset=per,
        **pooled,
    )
