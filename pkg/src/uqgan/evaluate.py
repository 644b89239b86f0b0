"""Turn trained models into :class:`~uqgan.metrics.MetricsReport` objects."""
from __future__ import annotations

import numpy as np
import torch

from .baselines import softmax_scores
from .data import DatasetSplit
from .metrics import MetricsReport, evaluate_scores
from .models import mc_dropout_wrap
from .ova_core import UncertaintyReport, uncertainty_report
from .trainer import predict_ova


def ova_report(classifier, x, priors, mc_passes: int = 0, mc_rate: float = 0.5, mc_seed: int = 0) -> UncertaintyReport:
    """Uncertainty report for a one-vs-all classifier.

    With ``mc_passes > 0`` the raw in-class probabilities are averaged over
    dropout samples before the posterior transformation.  Dropout masks are
    drawn from a private stream seeded with ``mc_seed``.
    """
    if mc_passes > 0:
        wrapped = mc_dropout_wrap(classifier, mc_passes, mc_rate)
        with torch.no_grad(), torch.random.fork_rng(devices=[]):
            torch.manual_seed(mc_seed)
            c = np.concatenate([
                wrapped(torch.as_tensor(x[i:i + 2048]))[0].double().numpy()
                for i in range(0, len(x), 2048)
            ]) if len(x) else np.zeros((0, priors.n))
    else:
        c = predict_ova(classifier, x, priors)
    return uncertainty_report(np.clip(c, 0.0, 1.0), priors)


def evaluate_ova(classifier, split: DatasetSplit, mc_passes: int = 0, mc_rate: float = 0.5) -> MetricsReport:
    """OoD score: in-distribution probability; success/failure score: negative entropy."""
    rep = ova_report(classifier, split.test.x, split.priors, mc_passes, mc_rate)
    ood = {name: ova_report(classifier, x, split.priors, mc_passes, mc_rate).in_dist_prob
           for name, x in split.ood_test.items()}
    return evaluate_scores(rep.posterior, split.test.y, rep.in_dist_prob, -rep.aleatoric_raw, ood)


@torch.no_grad()
def _logits(model, x, batch_size=4096):
    model.eval()
    x = torch.as_tensor(x)
    return torch.cat([model.logits(x[i:i + batch_size]).double() for i in range(0, x.shape[0], batch_size)])


def evaluate_softmax(model, split: DatasetSplit, score: str = "max_softmax") -> MetricsReport:
    """Softmax baselines use one score for both OoD and success/failure ranking."""

    def scores(x):
        max_p, ent = softmax_scores(_logits(model, x))
        return max_p if score == "max_softmax" else -ent

    logits = _logits(model, split.test.x)
    post = torch.softmax(logits, dim=1).numpy()
    s_in = scores(split.test.x)
    ood = {name: scores(x) for name, x in split.ood_test.items()}
    return evaluate_scores(post, split.test.y, s_in, s_in, ood)
