"""cAE pretraining and the alternating critic / classifier / generator loop.

Randomness is split into independent ``torch.Generator`` streams (data order,
GAN noise, OoD batches) so that switching the GAN on or off never changes the
sequence of real batches the classifier sees.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np
import torch
from torch import nn

from . import losses
from .data import DatasetSplit, LabeledData
from .errors import InvalidArgumentError, InvalidInputError, TrainingDivergedError
from .losses import GanHyperparams, LatentBatch
from .models import ArchitectureSpec, build_cae, freeze, save_checkpoint
from .ova_core import transform_in_class

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    h: GanHyperparams = field(default_factory=GanHyperparams)
    batch_size: int = 256
    generator_iters: int = 2000
    inner_steps: int = 5
    lr_classifier: float = 1e-3
    lr_gan: float = 2e-4
    lr_floor: float = 1e-5
    lr_cae: float = 1e-3
    cae_epochs: int = 10
    seed: int = 0
    val_fraction: float = 0.2
    eval_every: int = 50
    selection: Literal["best_val", "last"] = "best_val"
    hflip: bool = False
    device: str = "cpu"

    def __post_init__(self):
        if isinstance(self.h, dict):
            self.h = GanHyperparams(**self.h)
        if self.inner_steps < 1:
            raise InvalidArgumentError("inner_steps must be >= 1")
        if min(self.lr_classifier, self.lr_gan, self.lr_floor, self.lr_cae) <= 0:
            raise InvalidArgumentError("learning rates must be > 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidArgumentError("val_fraction must lie in (0, 1)")
        if self.selection not in ("best_val", "last"):
            raise InvalidArgumentError("selection must be 'best_val' or 'last'")


def linear_lr(start: float, floor: float, iteration: int, total: int) -> float:
    """Linear decay from ``start`` at iteration 0 to ``floor`` at ``total - 1``."""
    if total <= 1:
        return floor
    return start + (floor - start) * iteration / (total - 1)


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


class BatchStream:
    """Endless reshuffled minibatches drawn with a private generator."""

    def __init__(self, data: LabeledData, batch_size: int, seed: int, hflip: bool = False, device="cpu"):
        self.x = torch.from_numpy(data.x).to(device)
        self.y = torch.from_numpy(data.y).to(device)
        self.batch_size = min(batch_size, len(data))
        self.gen = torch.Generator().manual_seed(seed)
        self.hflip = hflip
        self._perm = torch.empty(0, dtype=torch.long)
        self._pos = 0

    def next(self) -> tuple[torch.Tensor, torch.Tensor]:
        if self._pos + self.batch_size > self._perm.numel():
            self._perm = torch.randperm(self.y.numel(), generator=self.gen)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        x, y = self.x[idx], self.y[idx]
        if self.hflip and x.dim() == 4:
            flip = torch.rand(x.shape[0], generator=self.gen) < 0.5
            x = torch.where(flip[:, None, None, None].to(x.device), x.flip(-1), x)
        return x, y


def _check_finite(name, value, iteration):
    if not math.isfinite(value):
        raise TrainingDivergedError(f"{name} became non-finite at iteration {iteration}", iteration)


# ---------------------------------------------------------------- cAE


def pretrain_cae(data: LabeledData, spec: ArchitectureSpec, config: TrainingConfig,
                 encoder: nn.Module | None = None, decoder: nn.Module | None = None):
    """Train the conditional autoencoder on in-distribution data and freeze it.

    Returns ``(encoder, decoder, losses_per_epoch)``.  For 2D toy data the
    identity codec is returned untrained.
    """
    if encoder is None or decoder is None:
        encoder, decoder = build_cae(spec, seed=config.seed)
    if not spec.is_image:
        return freeze(encoder), freeze(decoder), []
    if len(data) == 0:
        raise InvalidArgumentError("cannot pretrain on an empty dataset")
    if data.x.min() < 0 or data.x.max() > 1:
        raise InvalidInputError("pixel values must lie in [0, 1]")
    encoder.to(config.device).train()
    decoder.to(config.device).train()
    params = list(encoder.parameters()) + list(decoder.parameters())
    opt = torch.optim.Adam(params, lr=config.lr_cae)
    stream = BatchStream(data, config.batch_size, config.seed + 11, config.hflip, config.device)
    steps_per_epoch = max(len(data) // stream.batch_size, 1)
    epoch_losses = []
    for epoch in range(config.cae_epochs):
        total = 0.0
        for _ in range(steps_per_epoch):
            x, y = stream.next()
            opt.zero_grad(set_to_none=True)
            loss = losses.cae_loss(decoder(encoder(x, y), y), x)
            loss.backward()
            opt.step()
            total += loss.item()
        epoch_losses.append(total / steps_per_epoch)
        _check_finite("cae loss", epoch_losses[-1], epoch)
        log.info("cae epoch %d loss %.4f", epoch, epoch_losses[-1])
    return freeze(encoder), freeze(decoder), epoch_losses


# ---------------------------------------------------------------- main loop


@dataclass
class UQGANModels:
    classifier: nn.Module
    encoder: nn.Module
    decoder: nn.Module
    generator: nn.Module | None = None
    critic: nn.Module | None = None

    @property
    def gan_enabled(self) -> bool:
        return self.generator is not None


@dataclass
class TrainResult:
    models: UQGANModels
    history: list[dict]
    classifier_losses: list[float]
    best_val_accuracy: float
    best_iteration: int

    def write_history(self, path):
        with open(path, "w") as f:
            for rec in self.history:
                f.write(json.dumps(rec) + "\n")


@torch.no_grad()
def predict_ova(classifier: nn.Module, x, priors, batch_size: int = 4096) -> np.ndarray:
    """Raw in-class probabilities ``C(i|x,y)`` as a float64 array."""
    classifier.eval()
    x = torch.as_tensor(x)
    dev = next(classifier.parameters()).device
    outs = [classifier(x[i:i + batch_size].to(dev)).double().cpu() for i in range(0, x.shape[0], batch_size)]
    return torch.cat(outs).numpy() if outs else np.zeros((0, priors.n))


def validation_accuracy(classifier: nn.Module, data: LabeledData, priors) -> float:
    c = predict_ova(classifier, data.x, priors)
    if getattr(classifier, "head", "sigmoid") == "sigmoid":
        c = np.maximum(transform_in_class(c, priors.n), 1e-7) * priors.probs
    return float(np.mean(c.argmax(axis=1) == data.y))


def _snapshot(models: UQGANModels) -> dict:
    out = {"classifier": copy.deepcopy(models.classifier.state_dict())}
    if models.gan_enabled:
        out["generator"] = copy.deepcopy(models.generator.state_dict())
        out["critic"] = copy.deepcopy(models.critic.state_dict())
    return out


def _restore(models: UQGANModels, snap: dict):
    models.classifier.load_state_dict(snap["classifier"])
    if models.gan_enabled:
        models.generator.load_state_dict(snap["generator"])
        models.critic.load_state_dict(snap["critic"])


def _requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


def train_uqgan(split: DatasetSplit, models: UQGANModels, config: TrainingConfig,
                spec: ArchitectureSpec | None = None, checkpoint_path=None,
                progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Jointly train the one-vs-all classifier and the latent conditional GAN.

    Per generator iteration, on one real batch: ``inner_steps`` critic updates,
    then ``inner_steps`` classifier updates (fresh generated examples each
    step), then one generator update.  With ``models.generator is None`` only
    the classifier updates run, which is the plain one-vs-all baseline.
    """
    if any(p.requires_grad for p in models.encoder.parameters()):
        raise InvalidArgumentError("the autoencoder must be frozen before GAN training")
    h = config.h
    dev = config.device
    priors = split.priors
    n = split.n_classes
    T = config.generator_iters

    clf = models.classifier.to(dev)
    enc, dec = models.encoder.to(dev), models.decoder.to(dev)
    opt_c = torch.optim.Adam(clf.parameters(), lr=config.lr_classifier)
    if models.gan_enabled:
        gen, critic = models.generator.to(dev), models.critic.to(dev)
        opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr_gan)
        opt_d = torch.optim.Adam(critic.parameters(), lr=config.lr_gan)
    stream = BatchStream(split.train, config.batch_size, config.seed, config.hflip, dev)
    noise_gen = torch.Generator().manual_seed(config.seed + 1)
    priors_t = torch.as_tensor(priors.probs, dtype=torch.float32, device=dev)

    history, clf_losses = [], []
    best_acc, best_it, best_snap = -1.0, -1, None

    def sample_latent(y):
        e = gen.sample_noise(y.shape[0], generator=noise_gen).to(dev)
        return gen(e, y)

    for it in range(T):
        x, y = stream.next()
        _set_lr(opt_c, linear_lr(config.lr_classifier, config.lr_floor, it, T))
        rec = {"iteration": it, "loss_D": None, "loss_G": None, "loss_C": None, "val_accuracy": None}

        if models.gan_enabled:
            lr_g = linear_lr(config.lr_gan, config.lr_floor, it, T)
            _set_lr(opt_g, lr_g)
            _set_lr(opt_d, lr_g)
            with torch.no_grad():
                z = enc(x, y)
            gen.train()
            critic.train()
            for _ in range(config.inner_steps):
                with torch.no_grad():
                    z_gen = sample_latent(y)
                opt_d.zero_grad(set_to_none=True)
                gp = losses.gradient_penalty(critic, z, z_gen, y, h.lambda_gp, generator=noise_gen)
                loss_d, _ = losses.gan_objectives(critic(z, y).mean(), critic(z_gen, y).mean(), gp,
                                                  gp.new_zeros(()), gp.new_zeros(()), h)
                loss_d.backward()
                opt_d.step()
                rec["loss_D"] = loss_d.item()
                _check_finite("critic loss", rec["loss_D"], it)

        clf.train()
        step_losses = []
        for _ in range(config.inner_steps):
            gen_probs = None
            if models.gan_enabled:
                with torch.no_grad():
                    x_gen = dec(sample_latent(y), y)
            opt_c.zero_grad(set_to_none=True)
            real_probs = clf(x)
            if models.gan_enabled:
                gen_probs = clf(x_gen)
            loss_c = losses.classifier_joint_loss(real_probs, y, gen_probs, y, priors_t, h)
            loss_c.backward()
            opt_c.step()
            step_losses.append(loss_c.item())
            _check_finite("classifier loss", step_losses[-1], it)
        clf_losses.extend(step_losses)
        rec["loss_C"] = float(np.mean(step_losses))

        if models.gan_enabled:
            _requires_grad(critic, False)
            _requires_grad(clf, False)
            opt_g.zero_grad(set_to_none=True)
            z_gen = sample_latent(y)
            critic_gen = critic(z_gen, y).mean()
            cls_term = z_gen.new_zeros(())
            if h.lambda_cl > 0:
                cls_term = losses.generator_classifier_term(clf(dec(z_gen, y)), y)
            reg = z_gen.new_zeros(())
            if h.lambda_R > 0:
                reg = losses.angular_reg_total(LatentBatch(z, y), LatentBatch(z_gen, y, "generated"))
            _, loss_g = losses.gan_objectives(critic_gen.detach(), critic_gen, critic_gen.new_zeros(()),
                                              cls_term, reg, h)
            loss_g.backward()
            opt_g.step()
            _requires_grad(critic, True)
            _requires_grad(clf, True)
            rec["loss_G"] = loss_g.item()
            _check_finite("generator loss", rec["loss_G"], it)

        if (it + 1) % config.eval_every == 0 or it == T - 1:
            acc = validation_accuracy(clf, split.val, priors)
            rec["val_accuracy"] = acc
            if acc > best_acc:
                best_acc, best_it = acc, it
                if config.selection == "best_val":
                    best_snap = _snapshot(models)
                    if checkpoint_path is not None and spec is not None:
                        _save(checkpoint_path, models, spec, config, extra={"iteration": it, "val_accuracy": acc})
        history.append(rec)
        if progress is not None:
            progress(rec)

    if config.selection == "best_val" and best_snap is not None:
        _restore(models, best_snap)
    elif checkpoint_path is not None and spec is not None:
        _save(checkpoint_path, models, spec, config, extra={"iteration": T - 1, "val_accuracy": best_acc})
    clf.eval()
    if models.gan_enabled:
        models.generator.eval()
    return TrainResult(models, history, clf_losses, best_acc, best_it)


def _save(path, models: UQGANModels, spec, config, extra):
    mods = {"classifier": models.classifier, "encoder": models.encoder, "decoder": models.decoder}
    if models.gan_enabled:
        mods.update(generator=models.generator, critic=models.critic)
    save_checkpoint(path, mods, spec, config, config.seed, extra)


# ---------------------------------------------------------------- generic fitting


def fit_classifier(split: DatasetSplit, model: nn.Module, config: TrainingConfig,
                   loss_fn: Callable, ood_train: np.ndarray | None = None) -> TrainResult:
    """Same schedule as :func:`train_uqgan` for a classifier with a custom loss.

    ``loss_fn(model, x, y, x_ood)`` returns the scalar loss; ``x_ood`` is a batch
    from ``ood_train`` (or ``None``).
    """
    dev = config.device
    model.to(dev)
    T = config.generator_iters
    opt = torch.optim.Adam(model.parameters(), lr=config.lr_classifier)
    stream = BatchStream(split.train, config.batch_size, config.seed, config.hflip, dev)
    ood_stream = None
    if ood_train is not None:
        ood = LabeledData(ood_train, np.zeros(len(ood_train), dtype=np.int64))
        ood_stream = BatchStream(ood, config.batch_size, config.seed + 2, config.hflip, dev)
    history, step_losses_all = [], []
    best_acc, best_it, best_state = -1.0, -1, None
    for it in range(T):
        x, y = stream.next()
        x_ood = ood_stream.next()[0] if ood_stream is not None else None
        _set_lr(opt, linear_lr(config.lr_classifier, config.lr_floor, it, T))
        model.train()
        step_losses = []
        for _ in range(config.inner_steps):
            opt.zero_grad(set_to_none=True)
            loss = loss_fn(model, x, y, x_ood)
            loss.backward()
            opt.step()
            step_losses.append(loss.item())
            _check_finite("classifier loss", step_losses[-1], it)
        step_losses_all.extend(step_losses)
        rec = {"iteration": it, "loss_D": None, "loss_G": None, "loss_C": float(np.mean(step_losses)),
               "val_accuracy": None}
        if (it + 1) % config.eval_every == 0 or it == T - 1:
            acc = validation_accuracy(model, split.val, split.priors)
            rec["val_accuracy"] = acc
            if acc > best_acc:
                best_acc, best_it = acc, it
                if config.selection == "best_val":
                    best_state = copy.deepcopy(model.state_dict())
        history.append(rec)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(UQGANModels(model, nn.Identity(), nn.Identity()), history, step_losses_all,
                       best_acc, best_it)


# ---------------------------------------------------------------- sampling


@torch.no_grad()
def generate_ooc_samples(generator: nn.Module, decoder: nn.Module, label: int, count: int,
                         seed: int = 0, n_classes: int | None = None) -> torch.Tensor:
    """Decode ``count`` generated out-of-class examples for class ``label``."""
    n = n_classes if n_classes is not None else getattr(generator, "n", None)
    if n is not None and not 0 <= label < n:
        raise InvalidArgumentError(f"label {label} outside [0, {n})")
    generator.eval()
    decoder.eval()
    dev = next(generator.parameters()).device
    if count == 0:
        z = torch.zeros(0, generator.net[-1].out_features, device=dev)
        return decoder(z, torch.zeros(0, dtype=torch.long, device=dev))
    g = torch.Generator().manual_seed(seed)
    e = generator.sample_noise(count, generator=g).to(dev)
    y = torch.full((count,), label, dtype=torch.long, device=dev)
    return decoder(generator(e, y), y)


def critic_gradient_norms(critic: nn.Module, real: torch.Tensor, fake: torch.Tensor, labels: torch.Tensor,
                          seed: int = 0) -> torch.Tensor:
    """Input-gradient norms of the critic at random interpolates of real and generated codes."""
    g = torch.Generator().manual_seed(seed)
    u = torch.rand(real.shape[0], 1, generator=g)
    interp = (u * real + (1 - u) * fake).detach().requires_grad_(True)
    (grad,) = torch.autograd.grad(critic(interp, labels).sum(), interp)
    return grad.norm(dim=1)


def save_history(path, history: list[dict]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for rec in history:
            f.write(json.dumps(rec) + "\n")
