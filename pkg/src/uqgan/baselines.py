"""Reference scorers and oracle classifiers.

* ``max_softmax`` / ``softmax_entropy``: a softmax network trained with cross
  entropy, scored by its maximum probability or negative entropy.
* ``ova_baseline``: the one-vs-all classifier trained without any GAN.
* ``entropy_oracle`` / ``ova_oracle``: trained with real OoD examples.
"""
from __future__ import annotations

from dataclasses import replace
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F

from . import losses
from .data import DatasetSplit
from .errors import InvalidArgumentError
from .models import ArchitectureSpec, IdentityCodec, build_classifier
from .trainer import TrainingConfig, TrainResult, UQGANModels, fit_classifier, train_uqgan


class BaselineKind(str, Enum):
    max_softmax = "max_softmax"
    softmax_entropy = "softmax_entropy"
    ova_baseline = "ova_baseline"
    entropy_oracle = "entropy_oracle"
    ova_oracle = "ova_oracle"

    @property
    def needs_ood(self) -> bool:
        return self in (BaselineKind.entropy_oracle, BaselineKind.ova_oracle)


def softmax_scores(logits) -> tuple[np.ndarray, np.ndarray]:
    """Maximum softmax probability and softmax entropy (nats) per row."""
    logits = torch.as_tensor(logits, dtype=torch.float64)
    logp = torch.log_softmax(logits, dim=-1)
    p = logp.exp()
    entropy = -(p * logp).sum(dim=-1)
    return p.max(dim=-1).values.numpy(), entropy.clamp_min(0.0).numpy()


def train_ova_baseline(split: DatasetSplit, spec: ArchitectureSpec, config: TrainingConfig,
                       classifier=None) -> TrainResult:
    """One-vs-all training on real data only: the GAN-free path of :func:`train_uqgan`.

    ``lambda_real`` is forced to 1 so the loss is the plain prior-weighted
    one-vs-all cross entropy whatever the GAN weights in ``config`` are.
    """
    clf = classifier if classifier is not None else build_classifier(spec, seed=config.seed)
    models = UQGANModels(clf, IdentityCodec(), IdentityCodec())
    config = replace(config, h=replace(config.h, lambda_real=1.0))
    return train_uqgan(split, models, config, spec)


def _cross_entropy(model, x, y, x_ood):
    return F.cross_entropy(model.logits(x), y)


def train_softmax_baseline(split: DatasetSplit, spec: ArchitectureSpec, config: TrainingConfig) -> TrainResult:
    model = build_classifier(spec, head="softmax", seed=config.seed)
    return fit_classifier(split, model, config, _cross_entropy)


def entropy_oracle_loss(ood_weight: float = 1.0):
    """Cross entropy on in-distribution data plus cross entropy to uniform on OoD data."""

    def loss(model, x, y, x_ood):
        out = F.cross_entropy(model.logits(x), y)
        if x_ood is not None and ood_weight > 0:
            out = out + ood_weight * (-torch.log_softmax(model.logits(x_ood), dim=1).mean(dim=1)).mean()
        return out

    return loss


def ova_oracle_loss(priors, h: losses.GanHyperparams):
    """Joint one-vs-all loss with real OoD inputs as out-of-class for every class output."""
    priors_t = torch.as_tensor(priors.probs, dtype=torch.float32)

    def loss(model, x, y, x_ood):
        out = losses.classifier_joint_loss(model(x), y, None, None, priors_t.to(x.device), h)
        if x_ood is not None:
            c_ood = model(x_ood)
            out = out + (1.0 - h.lambda_real) * (-torch.log((1.0 - c_ood).clamp_min(losses.EPS))).mean()
        return out

    return loss


def train_oracle(split: DatasetSplit, ood_train, kind, spec: ArchitectureSpec, config: TrainingConfig,
                 ood_weight: float = 1.0) -> TrainResult:
    kind = BaselineKind(kind)
    if not kind.needs_ood:
        raise InvalidArgumentError(f"{kind.value} is not an oracle")
    if ood_train is None or len(ood_train) == 0:
        raise InvalidArgumentError("oracle training needs real OoD training examples")
    ood_train = np.asarray(ood_train, dtype=np.float32)
    if kind is BaselineKind.entropy_oracle:
        model = build_classifier(spec, head="softmax", seed=config.seed)
        return fit_classifier(split, model, config, entropy_oracle_loss(ood_weight), ood_train)
    model = build_classifier(spec, seed=config.seed)
    return fit_classifier(split, model, config, ova_oracle_loss(split.priors, config.h), ood_train)
