"""Differentiable training objectives.

Every loss takes probabilities (not logits) to keep the contracts identical to
the closed-form calculus in :mod:`uqgan.ova_core`; logarithms are clamped at
``EPS`` so all losses stay finite on the closed unit interval.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Literal

import torch

from .errors import InvalidArgumentError, UnsupportedModelError

EPS = 1e-7
ANGLE_CLAMP = 1e-6


@dataclass
class GanHyperparams:
    lambda_gp: float = 10.0
    lambda_cl: float = 2.0
    lambda_real: float = 0.6
    lambda_R: float = 32.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_real <= 1.0:
            raise InvalidArgumentError(f"lambda_real must be in [0, 1], got {self.lambda_real}")
        for name in ("lambda_gp", "lambda_cl", "lambda_R"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0")


@dataclass
class LatentBatch:
    codes: torch.Tensor
    labels: torch.Tensor
    source: Literal["encoded", "generated"] = "encoded"

    def __post_init__(self):
        if self.codes.shape[0] != self.labels.shape[0]:
            raise InvalidArgumentError("codes and labels must have the same length")


def _log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp_min(EPS))


def _priors_tensor(priors, like: torch.Tensor) -> torch.Tensor:
    probs = getattr(priors, "probs", priors)
    return torch.as_tensor(probs, dtype=like.dtype, device=like.device)


def _check_labels(labels: torch.Tensor, n: int):
    if labels.numel() and (labels.min() < 0 or labels.max() >= n):
        raise InvalidArgumentError(f"labels must lie in [0, {n})")


def ooc_weights(labels: torch.Tensor, priors: torch.Tensor) -> torch.Tensor:
    """Row ``i`` holds ``p̂(y_i)/p̂(y') / (n-1)`` for ``y' != y_i`` and 0 at ``y_i``."""
    n = priors.shape[0]
    w = priors[labels][:, None] / priors[None, :] / (n - 1)
    return w.masked_fill(torch.nn.functional.one_hot(labels, n).bool(), 0.0)


def _real_terms(in_class_probs, labels, priors):
    n = in_class_probs.shape[1]
    _check_labels(labels, n)
    p = _priors_tensor(priors, in_class_probs)
    in_term = -_log(in_class_probs.gather(1, labels[:, None]).squeeze(1))
    ooc_term = -(ooc_weights(labels, p) * _log(1.0 - in_class_probs)).sum(dim=1)
    return in_term, ooc_term


def ova_loss(in_class_probs: torch.Tensor, labels: torch.Tensor, priors) -> torch.Tensor:
    """Prior-weighted one-vs-all binary cross entropy."""
    in_term, ooc_term = _real_terms(in_class_probs, labels, priors)
    return (in_term + ooc_term).mean()


def classifier_joint_loss(
    real_probs: torch.Tensor,
    real_labels: torch.Tensor,
    gen_probs: torch.Tensor | None,
    gen_labels: torch.Tensor | None,
    priors,
    h: GanHyperparams,
) -> torch.Tensor:
    """One-vs-all loss where real out-of-class data is interpolated with generated examples.

    ``gen_probs`` are classifier outputs on decoded generated examples; only the
    column of their conditioning label enters, as an out-of-class target.
    """
    in_term, ooc_term = _real_terms(real_probs, real_labels, priors)
    loss = (in_term + h.lambda_real * ooc_term).mean()
    if gen_probs is not None and gen_probs.shape[0] > 0:
        _check_labels(gen_labels, gen_probs.shape[1])
        c_gen = gen_probs.gather(1, gen_labels[:, None]).squeeze(1)
        loss = loss + (1.0 - h.lambda_real) * (-_log(1.0 - c_gen)).mean()
    return loss


def cae_loss(reconstruction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Pixel-wise binary cross entropy averaged over pixels, then examples."""
    if reconstruction.shape != target.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {tuple(reconstruction.shape)} vs {tuple(target.shape)}"
        )
    bce = -(target * _log(reconstruction) + (1.0 - target) * _log(1.0 - reconstruction))
    return bce.reshape(bce.shape[0], -1).mean(dim=1).mean()


def gradient_penalty(
    critic: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    real_codes: torch.Tensor,
    gen_codes: torch.Tensor,
    labels: torch.Tensor,
    lambda_gp: float,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """WGAN-GP penalty ``λ_gp · E[(‖∇_ẑ D(ẑ|y)‖ - 1)²]`` on random interpolates.

    The returned value is already scaled by ``lambda_gp``.
    """
    if real_codes.shape != gen_codes.shape:
        raise InvalidArgumentError("real and generated code batches must have the same shape")
    u = torch.rand(
        (real_codes.shape[0],) + (1,) * (real_codes.dim() - 1),
        generator=generator,
        dtype=real_codes.dtype,
        device=real_codes.device,
    )
    interp = (u * real_codes.detach() + (1.0 - u) * gen_codes.detach()).requires_grad_(True)
    out = critic(interp, labels)
    try:
        (grads,) = torch.autograd.grad(out.sum(), interp, create_graph=True)
    except RuntimeError as exc:
        raise UnsupportedModelError(f"critic is not differentiable w.r.t. its input: {exc}") from exc
    if torch.is_grad_enabled() and not grads.requires_grad and any(
        p.requires_grad for p in getattr(critic, "parameters", lambda: [])()
    ):
        raise UnsupportedModelError("critic input-gradient is not differentiable (no second order)")
    norms = grads.reshape(grads.shape[0], -1).norm(2, dim=1)
    return lambda_gp * ((norms - 1.0) ** 2).mean()


def gan_objectives(
    critic_real: torch.Tensor,
    critic_gen: torch.Tensor,
    gp: torch.Tensor,
    cls_term: torch.Tensor,
    reg_term: torch.Tensor,
    h: GanHyperparams,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(critic_loss, generator_loss)``, both to be minimised.

    ``gp`` is the already-weighted penalty from :func:`gradient_penalty`;
    ``cls_term`` is the mean of ``-log C(o|x̃,y)`` and only enters the generator.
    """
    critic_loss = critic_gen - critic_real + gp
    generator_loss = -critic_gen + h.lambda_cl * cls_term + h.lambda_R * reg_term
    return critic_loss, generator_loss


def generator_classifier_term(gen_probs: torch.Tensor, gen_labels: torch.Tensor) -> torch.Tensor:
    """Mean of ``-log C(o|x̃,y)`` at the conditioning labels."""
    c = gen_probs.gather(1, gen_labels[:, None]).squeeze(1)
    return (-_log(1.0 - c)).mean()


def _pairwise_angular(diffs: torch.Tensor) -> torch.Tensor:
    """``diffs``: (..., k, d) direction vectors -> (...,) mean pairwise loss over i < j."""
    k = diffs.shape[-2]
    unit = diffs / diffs.norm(dim=-1, keepdim=True).clamp_min(EPS)
    cos = (unit @ unit.transpose(-1, -2)).clamp(-1.0 + ANGLE_CLAMP, 1.0 - ANGLE_CLAMP)
    iu = torch.triu_indices(k, k, offset=1, device=diffs.device)
    angles = torch.arccos(cos[..., iu[0], iu[1]]) / math.pi
    return (-torch.log(angles)).mean(dim=-1)


def angular_reg_single(anchor: torch.Tensor, gen_codes: torch.Tensor) -> torch.Tensor:
    """Mean of ``-log(angle/π)`` over all pairs of generated codes seen from ``anchor``."""
    if gen_codes.shape[0] < 2:
        warnings.warn("angular regulariser needs at least 2 generated codes; returning 0",
                      RuntimeWarning, stacklevel=2)
        return gen_codes.new_zeros(())
    return _pairwise_angular(gen_codes - anchor[None, :])


def angular_reg_total(encoded: LatentBatch, generated: LatentBatch) -> torch.Tensor:
    """Class-averaged angular regulariser using batch-local anchors and generated codes.

    Classes without encoded anchors are skipped; classes with fewer than two
    generated codes contribute 0.
    """
    per_class = []
    for y in torch.unique(encoded.labels).tolist():
        anchors = encoded.codes[encoded.labels == y]
        gen = generated.codes[generated.labels == y]
        if gen.shape[0] < 2:
            per_class.append(encoded.codes.new_zeros(()))
            continue
        diffs = gen[None, :, :] - anchors[:, None, :]
        per_class.append(_pairwise_angular(diffs).mean())
    if not per_class:
        return encoded.codes.new_zeros(())
    return torch.stack(per_class).mean()
