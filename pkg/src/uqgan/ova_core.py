"""Closed-form one-vs-all probability calculus.

Raw sigmoid outputs ``C(i|x,y)`` of a one-vs-all classifier are turned into
class posteriors, an in-distribution probability (epistemic score) and the
posterior entropy (aleatoric score).  All functions are vectorised over any
leading batch dimensions; the class axis is always the last one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

EPS = 1e-7


@dataclass(frozen=True)
class ClassPriors:
    """Estimated relative class frequencies ``p̂(y)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise InvalidArgumentError("priors must be a vector with at least 2 entries")
        if np.any(p <= 0):
            raise InvalidArgumentError("priors must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError(f"priors must sum to 1, got {p.sum()!r}")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n: int) -> "ClassPriors":
        return cls(np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class UncertaintyReport:
    """Per-input uncertainty quantities.

    Fields are arrays with the batch shape of the input (0-d for a single
    example); ``posterior`` carries a trailing class axis.
    """

    posterior: np.ndarray
    in_dist_prob: np.ndarray
    epistemic: np.ndarray
    aleatoric_raw: np.ndarray
    aleatoric_masked: np.ndarray

    def __len__(self):
        return int(np.shape(self.in_dist_prob)[0]) if np.ndim(self.in_dist_prob) else 1

    @property
    def prediction(self) -> np.ndarray:
        return np.argmax(self.posterior, axis=-1)


def as_priors(priors) -> ClassPriors:
    if isinstance(priors, ClassPriors):
        return priors
    return ClassPriors(np.asarray(priors, dtype=np.float64))


def _check_probs(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0 or c.shape[-1] < 2:
        raise InvalidArgumentError("need at least 2 class outputs")
    if np.any(c < 0) or np.any(c > 1) or np.any(~np.isfinite(c)):
        raise InvalidArgumentError("in-class probabilities must lie in [0, 1]")
    return c


def transform_in_class(c, n: int):
    """Rebalance a one-vs-all output from the 1:1 training balance to 1:(n-1).

    ``(c/n) / (c/n + (n-1)(1-c)/n)``, with the denominator floored at ``EPS``.
    """
    if n < 2:
        raise InvalidArgumentError(f"class count must be >= 2, got {n}")
    c = np.asarray(c, dtype=np.float64)
    if np.any(c < 0) or np.any(c > 1):
        raise InvalidArgumentError("in-class probabilities must lie in [0, 1]")
    num = c / n
    den = num + (n - 1) * (1.0 - c) / n
    return num / np.maximum(den, EPS)


def _transformed(in_class_probs, priors: ClassPriors):
    c = _check_probs(in_class_probs)
    if c.shape[-1] != priors.n:
        raise InvalidArgumentError(
            f"got {c.shape[-1]} class outputs but {priors.n} priors"
        )
    return np.maximum(transform_in_class(c, priors.n), EPS)


def class_posterior(in_class_probs, priors) -> np.ndarray:
    """``p̂(y|x) ∝ C̃(i|x,y) p̂(y)``.

    ``C̃`` is floored at ``EPS`` so an all-zero output row yields the priors.
    """
    priors = as_priors(priors)
    ct = _transformed(in_class_probs, priors)
    w = ct * priors.probs
    return w / w.sum(axis=-1, keepdims=True)


def in_distribution_score(in_class_probs, priors) -> np.ndarray:
    """``C̃(i|x) = Σ C̃(i|x,y)² p̂(y) / Σ C̃(i|x,y') p̂(y')``; epistemic is ``1 - C̃(i|x)``."""
    priors = as_priors(priors)
    ct = _transformed(in_class_probs, priors)
    num = (ct**2 * priors.probs).sum(axis=-1)
    den = (ct * priors.probs).sum(axis=-1)
    return num / den


def predictive_entropy(posterior) -> np.ndarray:
    """Shannon entropy in nats, ``0·log 0 := 0``."""
    p = np.asarray(posterior, dtype=np.float64)
    if np.any(p < -1e-12) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise InvalidArgumentError("posterior rows must be normalised probability vectors")
    p = np.clip(p, 0.0, 1.0)
    return -(p * np.log(np.maximum(p, EPS))).sum(axis=-1)


def uncertainty_report(in_class_probs, priors) -> UncertaintyReport:
    priors = as_priors(priors)
    post = class_posterior(in_class_probs, priors)
    in_dist = in_distribution_score(in_class_probs, priors)
    ent = predictive_entropy(post)
    return UncertaintyReport(
        posterior=post,
        in_dist_prob=in_dist,
        epistemic=1.0 - in_dist,
        aleatoric_raw=ent,
        # aleatoric estimates are only meaningful where the input is in-distribution
        aleatoric_masked=in_dist * ent,
    )
