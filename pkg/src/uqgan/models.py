"""Network constructors, the MC-Dropout wrapper and checkpoint I/O.

Label conditioning everywhere is a one-hot vector concatenated to the input
(as constant feature maps for convolutional inputs).
"""
from __future__ import annotations

import copy
import io
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidArgumentError, UnsupportedModelError

Kind = Literal["mlp_toy", "lenet5", "small_resnet"]


@dataclass
class ArchitectureSpec:
    kind: Kind = "mlp_toy"
    input_shape: tuple = (2,)
    n_classes: int = 2
    latent_dim: int = 32
    noise_dim: int | None = None
    dropout_rate: float = 0.0
    gen_hidden: tuple = (1024, 512, 256)
    critic_hidden: tuple = (512, 512, 512)
    toy_hidden: tuple = (128, 128, 128)
    cae_channels: tuple = (32, 64)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.gen_hidden = tuple(self.gen_hidden)
        self.critic_hidden = tuple(self.critic_hidden)
        self.toy_hidden = tuple(self.toy_hidden)
        self.cae_channels = tuple(self.cae_channels)
        if self.kind == "mlp_toy":
            # the toy setting has no autoencoder: latent space == feature space
            self.latent_dim = self.input_shape[0]
        if self.noise_dim is None:
            self.noise_dim = self.latent_dim
        if self.latent_dim < 1 or self.noise_dim < 1:
            raise InvalidArgumentError("latent_dim and noise_dim must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidArgumentError("dropout_rate must lie in [0, 1)")

    @property
    def is_image(self) -> bool:
        return len(self.input_shape) == 3


def _one_hot(y: torch.Tensor, n: int, like: torch.Tensor) -> torch.Tensor:
    return F.one_hot(y, n).to(like.dtype)


# ---------------------------------------------------------------- classifiers


def _mlp_backbone(in_dim, hidden, dropout):
    layers = []
    for width in hidden:
        layers += [nn.Linear(in_dim, width), nn.LeakyReLU(0.2), nn.Dropout(dropout)]
        in_dim = width
    return nn.Sequential(*layers), in_dim


class LeNet5(nn.Module):
    def __init__(self, input_shape, dropout):
        super().__init__()
        c, h, w = input_shape
        pad = 2 if h == 28 else 0
        self.features = nn.Sequential(
            nn.Conv2d(c, 6, 5, padding=pad), nn.ReLU(), nn.Dropout(dropout), nn.MaxPool2d(2),
            nn.Conv2d(6, 16, 5), nn.ReLU(), nn.Dropout(dropout), nn.MaxPool2d(2),
            nn.Flatten(),
        )
        with torch.no_grad():
            flat = self.features(torch.zeros(1, c, h, w)).shape[1]
        self.fc = nn.Sequential(
            nn.Linear(flat, 120), nn.ReLU(), nn.Dropout(dropout),
            nn.Linear(120, 84), nn.ReLU(), nn.Dropout(dropout),
        )
        self.out_dim = 84

    def forward(self, x):
        return self.fc(self.features(x))


class _Block(nn.Module):
    # no normalisation layers in the classifier
    def __init__(self, cin, cout, stride, dropout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1)
        self.drop = nn.Dropout(dropout)
        self.skip = nn.Conv2d(cin, cout, 1, stride) if (stride != 1 or cin != cout) else nn.Identity()

    def forward(self, x):
        out = self.drop(F.relu(self.conv1(x)))
        return self.drop(F.relu(self.conv2(out) + self.skip(x)))


class SmallResNet(nn.Module):
    def __init__(self, input_shape, dropout, widths=(32, 64, 128)):
        super().__init__()
        c = input_shape[0]
        self.stem = nn.Conv2d(c, widths[0], 3, 1, 1)
        blocks, cin = [], widths[0]
        for i, w in enumerate(widths):
            blocks += [_Block(cin, w, 1 if i == 0 else 2, dropout), _Block(w, w, 1, dropout)]
            cin = w
        self.blocks = nn.Sequential(*blocks)
        self.out_dim = cin

    def forward(self, x):
        x = self.blocks(F.relu(self.stem(x)))
        return F.adaptive_avg_pool2d(x, 1).flatten(1)


class Classifier(nn.Module):
    """Backbone plus a linear head.

    ``head="sigmoid"`` gives the one-vs-all model whose forward returns the
    independent in-class probabilities ``C(i|x,y)``; ``head="softmax"`` is the
    conventional baseline whose forward returns softmax probabilities.
    """

    def __init__(self, backbone: nn.Module, out_dim: int, n_classes: int, head="sigmoid"):
        super().__init__()
        self.backbone = backbone
        self.linear = nn.Linear(out_dim, n_classes)
        self.head = head
        self.n_classes = n_classes

    def logits(self, x):
        return self.linear(self.backbone(x))

    def forward(self, x):
        z = self.logits(x)
        return torch.sigmoid(z) if self.head == "sigmoid" else torch.softmax(z, dim=1)


@contextmanager
def _seeded(seed):
    if seed is None:
        yield
        return
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        yield


def build_classifier(spec: ArchitectureSpec, head: str = "sigmoid", seed: int | None = None) -> Classifier:
    if spec.n_classes < 2:
        raise InvalidArgumentError("a one-vs-all classifier needs n_classes >= 2")
    with _seeded(seed):
        if spec.kind == "mlp_toy":
            backbone, out = _mlp_backbone(spec.input_shape[0], spec.toy_hidden, spec.dropout_rate)
        elif spec.kind == "lenet5":
            backbone = LeNet5(spec.input_shape, spec.dropout_rate)
            out = backbone.out_dim
        elif spec.kind == "small_resnet":
            backbone = SmallResNet(spec.input_shape, spec.dropout_rate)
            out = backbone.out_dim
        else:
            raise InvalidArgumentError(f"unknown architecture kind {spec.kind!r}")
        return Classifier(backbone, out, spec.n_classes, head)


# ---------------------------------------------------------------- autoencoder


class IdentityCodec(nn.Module):
    """Stand-in encoder/decoder for 2D toy data: latent space is feature space."""

    def forward(self, x, y):
        return x


class ConvEncoder(nn.Module):
    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        c, h, w = spec.input_shape
        c1, c2 = spec.cae_channels
        self.n = spec.n_classes
        self.net = nn.Sequential(
            nn.Conv2d(c + self.n, c1, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(c1, c2, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Flatten(),
            nn.Linear(c2 * (h // 4) * (w // 4), spec.latent_dim),
        )

    def forward(self, x, y):
        maps = _one_hot(y, self.n, x)[:, :, None, None].expand(-1, -1, *x.shape[2:])
        return self.net(torch.cat([x, maps], dim=1))


class ConvDecoder(nn.Module):
    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        c, h, w = spec.input_shape
        c1, c2 = spec.cae_channels
        self.n = spec.n_classes
        self.shape = (c2, h // 4, w // 4)
        self.fc = nn.Sequential(nn.Linear(spec.latent_dim + self.n, c2 * (h // 4) * (w // 4)), nn.LeakyReLU(0.2))
        self.net = nn.Sequential(
            nn.ConvTranspose2d(c2, c1, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.ConvTranspose2d(c1, c, 4, 2, 1), nn.Sigmoid(),
        )

    def forward(self, z, y):
        h = self.fc(torch.cat([z, _one_hot(y, self.n, z)], dim=1))
        return self.net(h.view(-1, *self.shape))


def build_cae(spec: ArchitectureSpec, seed: int | None = None) -> tuple[nn.Module, nn.Module]:
    if not spec.is_image:
        return IdentityCodec(), IdentityCodec()
    c, h, w = spec.input_shape
    if h % 4 or w % 4:
        raise InvalidArgumentError("image side lengths must be divisible by 4")
    with _seeded(seed):
        return ConvEncoder(spec), ConvDecoder(spec)


# ---------------------------------------------------------------- GAN


class Generator(nn.Module):
    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.n = spec.n_classes
        self.noise_dim = spec.noise_dim
        layers, d = [], spec.noise_dim + self.n
        for width in spec.gen_hidden:
            layers += [nn.Linear(d, width), nn.BatchNorm1d(width), nn.LeakyReLU(0.2)]
            d = width
        layers.append(nn.Linear(d, spec.latent_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, e, y):
        return self.net(torch.cat([e, _one_hot(y, self.n, e)], dim=1))

    def sample_noise(self, count, generator=None, device=None):
        return torch.rand(count, self.noise_dim, generator=generator, device=device)


class Critic(nn.Module):
    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.n = spec.n_classes
        layers, d = [], spec.latent_dim + self.n
        for width in spec.critic_hidden:
            layers += [nn.Linear(d, width), nn.LeakyReLU(0.2)]
            d = width
        layers.append(nn.Linear(d, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, z, y):
        return self.net(torch.cat([z, _one_hot(y, self.n, z)], dim=1)).squeeze(1)


def build_gan(spec: ArchitectureSpec, seed: int | None = None) -> tuple[Generator, Critic]:
    with _seeded(seed):
        return Generator(spec), Critic(spec)


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


# ---------------------------------------------------------------- MC-Dropout


class MCDropout:
    """Averages ``passes`` stochastic forward passes with dropout active."""

    def __init__(self, model: nn.Module, passes: int = 50, rate: float = 0.5):
        if passes < 1:
            raise InvalidArgumentError("passes must be >= 1")
        if not 0.0 <= rate < 1.0:
            raise InvalidArgumentError("dropout rate must lie in [0, 1)")
        self.model = copy.deepcopy(model)
        self.passes = passes
        self.rate = rate
        drops = [m for m in self.model.modules() if isinstance(m, nn.Dropout)]
        if rate > 0 and not drops:
            raise UnsupportedModelError("model has no dropout layers to sample")
        for m in drops:
            m.p = rate

    @torch.no_grad()
    def __call__(self, x) -> tuple[torch.Tensor, torch.Tensor]:
        self.model.eval()
        for m in self.model.modules():
            if isinstance(m, nn.Dropout):
                m.train()
        out = torch.stack([self.model(x) for _ in range(self.passes)])
        return out.mean(dim=0), out.std(dim=0, unbiased=False)


def mc_dropout_wrap(model: nn.Module, passes: int = 50, rate: float = 0.5) -> MCDropout:
    return MCDropout(model, passes, rate)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, models: dict[str, nn.Module], spec: ArchitectureSpec,
                    config=None, seed: int | None = None, extra: dict | None = None):
    payload = {
        "state_dicts": {k: m.state_dict() for k, m in models.items()},
        "arch": asdict(spec),
        "config": asdict(config) if hasattr(config, "__dataclass_fields__") else config,
        "seed": seed,
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(payload, buf)
    path.write_bytes(buf.getvalue())


def load_checkpoint(path) -> dict:
    return torch.load(Path(path), map_location="cpu", weights_only=False)


def models_from_checkpoint(ckpt: dict) -> tuple[ArchitectureSpec, dict[str, nn.Module]]:
    """Rebuild every module stored in a checkpoint and load its weights."""
    spec = ArchitectureSpec(**ckpt["arch"])
    builders = {
        "classifier": lambda: build_classifier(spec),
        "softmax_classifier": lambda: build_classifier(spec, head="softmax"),
        "encoder": lambda: build_cae(spec)[0],
        "decoder": lambda: build_cae(spec)[1],
        "generator": lambda: build_gan(spec)[0],
        "critic": lambda: build_gan(spec)[1],
    }
    out = {}
    for name, state in ckpt["state_dicts"].items():
        if name not in builders:
            raise InvalidArgumentError(f"unknown module {name!r} in checkpoint")
        m = builders[name]()
        m.load_state_dict(state)
        m.eval()
        out[name] = m
    return spec, out
