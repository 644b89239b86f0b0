"""Experiment configuration: flat ``key = value`` text with a typed schema.

Blank lines and ``#`` comments are ignored.  Lists are comma separated.
Unknown keys, duplicate keys and values of the wrong type are rejected with
the offending line number and field name.  Relative paths are resolved
against the working directory.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import BaselineKind
from .errors import ConfigError, UQGANError
from .losses import GanHyperparams
from .models import ArchitectureSpec
from .trainer import TrainingConfig

DATASETS = ("two_gaussians", "two_moons", "gaussian_grid", "mnist", "cifar10")
IMAGE_DATASETS = ("mnist", "cifar10")
METHODS = ("uqgan", "uqgan_mc") + tuple(k.value for k in BaselineKind)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _list(item):
    def parse(text):
        return tuple(item(t.strip()) for t in text.split(",") if t.strip())
    return parse


def _str(text):
    return text


def _opt_int(text):
    return None if text.lower() == "none" else int(text)


# key -> (parser, default)
SCHEMA = {
    "name": (_str, "experiment"),
    "out_dir": (_str, "results"),
    "seeds": (_list(int), (0, 1, 2)),
    "methods": (_list(_str), ("uqgan",)),
    "device": (_str, "cpu"),
    # data
    "dataset": (_str, "two_gaussians"),
    "data_root": (_str, "data"),
    "data_seed": (int, 0),
    "n_per_class": (int, 1000),
    "separation": (float, 4.0),
    "variance": (float, 1.0),
    "noise_std": (float, 0.1),
    "classes_mode": (_str, "per_blob_9"),
    "n_per_blob": (int, 300),
    "extra_ood": (_list(_str), ()),
    "oracle_ood": (_str, "ring"),
    # model
    "model": (_str, "mlp_toy"),
    "latent_dim": (int, 32),
    "noise_dim": (_opt_int, None),
    "dropout_rate": (float, 0.0),
    "gen_hidden": (_list(int), (1024, 512, 256)),
    "critic_hidden": (_list(int), (512, 512, 512)),
    "toy_hidden": (_list(int), (128, 128, 128)),
    "cae_channels": (_list(int), (32, 64)),
    # loss weights
    "lambda_gp": (float, 10.0),
    "lambda_cl": (float, 2.0),
    "lambda_real": (float, 0.6),
    "lambda_R": (float, 32.0),
    # schedule
    "batch_size": (int, 256),
    "generator_iters": (int, 2000),
    "inner_steps": (int, 5),
    "lr_classifier": (float, 1e-3),
    "lr_gan": (float, 2e-4),
    "lr_floor": (float, 1e-5),
    "lr_cae": (float, 1e-3),
    "cae_epochs": (int, 10),
    "val_fraction": (float, 0.2),
    "eval_every": (int, 50),
    "selection": (_str, "best_val"),
    "hflip": (_bool, False),
    # evaluation and figures
    "mc_passes": (int, 50),
    "mc_rate": (float, 0.5),
    "heatmap_resolution": (int, 200),
    "heatmap_extent": (float, 8.0),
    "samples_per_class": (int, 8),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def replace(self, **kw) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in kw.items():
            if k not in SCHEMA:
                raise ConfigError("unknown key", field=k)
            vals[k] = v
        return ExperimentConfig(vals, self.source)

    @property
    def out(self) -> Path:
        return Path(self.values["out_dir"])

    @property
    def is_image(self) -> bool:
        return self.values["dataset"] in IMAGE_DATASETS

    def architecture(self, input_shape, n_classes) -> ArchitectureSpec:
        v = self.values
        return ArchitectureSpec(kind=v["model"], input_shape=tuple(input_shape), n_classes=n_classes,
                                latent_dim=v["latent_dim"], noise_dim=v["noise_dim"],
                                dropout_rate=v["dropout_rate"], gen_hidden=v["gen_hidden"],
                                critic_hidden=v["critic_hidden"], toy_hidden=v["toy_hidden"],
                                cae_channels=v["cae_channels"])

    def training(self, seed: int) -> TrainingConfig:
        v = self.values
        h = GanHyperparams(lambda_gp=v["lambda_gp"], lambda_cl=v["lambda_cl"], lambda_real=v["lambda_real"],
                           lambda_R=v["lambda_R"])
        keys = [f.name for f in dataclasses.fields(TrainingConfig) if f.name not in ("h", "seed")]
        return TrainingConfig(h=h, seed=seed, **{k: v[k] for k in keys})

    def dumps(self) -> str:
        lines = []
        for k in SCHEMA:
            val = self.values[k]
            if isinstance(val, tuple):
                val = ", ".join(str(x) for x in val)
            elif isinstance(val, bool):
                val = str(val).lower()
            lines.append(f"{k} = {val}")
        return "\n".join(lines) + "\n"


def _validate(vals: dict, lines: dict):
    def fail(key, msg):
        raise ConfigError(msg, line=lines.get(key), field=key)

    if vals["dataset"] not in DATASETS:
        fail("dataset", f"must be one of {', '.join(DATASETS)}")
    for m in vals["methods"]:
        if m not in METHODS:
            fail("methods", f"unknown method {m!r}")
    if not vals["methods"]:
        fail("methods", "at least one method is required")
    if not vals["seeds"]:
        fail("seeds", "at least one seed is required")
    if len(set(vals["seeds"])) != len(vals["seeds"]):
        fail("seeds", "seeds must be distinct")
    image_model = vals["model"] != "mlp_toy"
    if image_model != (vals["dataset"] in IMAGE_DATASETS):
        fail("model", f"model {vals['model']!r} does not fit dataset {vals['dataset']!r}")
    if vals["dataset"] in IMAGE_DATASETS and not Path(vals["data_root"]).is_dir():
        fail("data_root", f"directory {vals['data_root']!r} does not exist")
    if vals["heatmap_resolution"] < 2:
        fail("heatmap_resolution", "must be >= 2")
    if vals["samples_per_class"] < 1:
        fail("samples_per_class", "must be >= 1")
    if vals["mc_passes"] < 1:
        fail("mc_passes", "must be >= 1")
    if not 0.0 < vals["mc_rate"] < 1.0:
        fail("mc_rate", "must lie in (0, 1)")


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    vals = {k: d for k, (_, d) in SCHEMA.items()}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", line=lineno, field=key)
        if key in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", line=lineno, field=key)
        try:
            vals[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ConfigError(str(exc), line=lineno, field=key) from None
        lines[key] = lineno
    _validate(vals, lines)
    cfg = ExperimentConfig(vals, source)
    try:
        # ranges of schedule and loss weights are checked by the dataclasses
        cfg.training(vals["seeds"][0])
    except UQGANError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    return parse_config(path.read_text(), str(path))
