"""Seeded multi-run orchestration and aggregate tables.

Output layout under ``out_dir``::

    config.cfg                 resolved configuration
    seed_<s>/metrics.json      one MetricsReport per method
    seed_<s>/<method>.pt       checkpoint
    seed_<s>/<method>.history.jsonl
    table.json, table.md       mean (std) over seeds, computed from the JSONs only
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .baselines import train_oracle, train_ova_baseline, train_softmax_baseline
from .config import ExperimentConfig, load_config
from .errors import DataMissingError, TrainingDivergedError
from .evaluate import evaluate_ova, evaluate_softmax
from .models import build_classifier, build_gan, load_checkpoint, models_from_checkpoint, save_checkpoint
from .trainer import UQGANModels, pretrain_cae, train_uqgan

log = logging.getLogger(__name__)

TABLE_SECTIONS = {
    "in_distribution": ("accuracy", "auroc_sf", "ece"),
    "out_of_distribution": ("auroc_ood", "aupr_in", "aupr_out", "fpr_at_95_tpr"),
}
TABLE_HEADERS = {
    "accuracy": "Accuracy", "auroc_sf": "AUROC S/F", "ece": "ECE", "auroc_ood": "AUROC",
    "aupr_in": "AUPR-In", "aupr_out": "AUPR-Out", "fpr_at_95_tpr": "FPR@95% TPR",
}
METHOD_LABELS = {
    "uqgan": "UQGAN", "uqgan_mc": "UQGAN + MC-Dropout", "ova_baseline": "One-vs-All Baseline",
    "max_softmax": "Max. Softmax", "softmax_entropy": "Entropy", "entropy_oracle": "Entropy Oracle",
    "ova_oracle": "One-vs-All Oracle",
}


# ---------------------------------------------------------------- data


def build_split(cfg: ExperimentConfig) -> data_mod.DatasetSplit:
    v = cfg.values
    ds, seed = v["dataset"], v["data_seed"]
    if ds == "two_gaussians":
        return data_mod.make_two_gaussians(v["n_per_class"], v["separation"], v["variance"], seed, v["val_fraction"])
    if ds == "two_moons":
        return data_mod.make_two_moons(v["n_per_class"], v["noise_std"], seed, v["val_fraction"])
    if ds == "gaussian_grid":
        return data_mod.make_gaussian_grid(classes_mode=v["classes_mode"], seed=seed, n_per_blob=v["n_per_blob"],
                                           val_fraction=v["val_fraction"])
    loader = data_mod.mnist_split if ds == "mnist" else data_mod.cifar10_split
    return loader(v["data_root"], seed, v["val_fraction"], v["extra_ood"])


def oracle_ood_train(cfg: ExperimentConfig, split: data_mod.DatasetSplit, seed: int) -> np.ndarray:
    """Real OoD training inputs for the oracles.

    Toy data: points uniform in angle with radius uniform between one and two
    times the largest training radius around the centroid.  Image data: the
    training split of the dataset named by ``oracle_ood``.
    """
    name = cfg.values["oracle_ood"]
    if not cfg.is_image:
        if name != "ring":
            raise DataMissingError(f"toy datasets only support oracle_ood = ring, got {name!r}")
        x = split.train.x
        center = x.mean(axis=0)
        r_max = float(np.linalg.norm(x - center, axis=1).max())
        rng = np.random.default_rng(seed + 101)
        count = len(x)
        phi = rng.uniform(0, 2 * np.pi, count)
        r = rng.uniform(r_max, 2 * r_max, count)
        return (center + np.stack([np.cos(phi), np.sin(phi)], 1) * r[:, None]).astype(np.float32)
    train, _ = data_mod.load_image_arrays(cfg.values["data_root"], name)
    return data_mod.conform_images(train.x, split.train.x.shape[1:])


# ---------------------------------------------------------------- single runs


def _train_uqgan(cfg, split, spec, tc, ckpt):
    enc, dec, _ = pretrain_cae(split.train, spec, tc)
    gen, critic = build_gan(spec, seed=tc.seed + 1)
    models = UQGANModels(build_classifier(spec, seed=tc.seed), enc, dec, gen, critic)
    return train_uqgan(split, models, tc, spec, checkpoint_path=ckpt)


def run_method(cfg: ExperimentConfig, method: str, split, seed: int, run_dir: Path, cache: dict):
    """Train and evaluate one method for one seed; returns a MetricsReport."""
    spec = cfg.architecture(split.input_shape, split.n_classes)
    tc = cfg.training(seed)
    ckpt = run_dir / f"{method}.pt"
    if method == "uqgan":
        res = _train_uqgan(cfg, split, spec, tc, ckpt)
        report = evaluate_ova(res.models.classifier, split)
    elif method == "uqgan_mc":
        spec = replace(spec, dropout_rate=cfg.values["mc_rate"])
        res = _train_uqgan(cfg, split, spec, tc, ckpt)
        report = evaluate_ova(res.models.classifier, split, cfg.values["mc_passes"], cfg.values["mc_rate"])
    elif method == "ova_baseline":
        res = train_ova_baseline(split, spec, tc)
        save_checkpoint(ckpt, {"classifier": res.models.classifier}, spec, tc, seed)
        report = evaluate_ova(res.models.classifier, split)
    elif method in ("max_softmax", "softmax_entropy"):
        if "softmax" not in cache:
            cache["softmax"] = train_softmax_baseline(split, spec, tc)
        res = cache["softmax"]
        save_checkpoint(ckpt, {"softmax_classifier": res.models.classifier}, spec, tc, seed)
        report = evaluate_softmax(res.models.classifier, split, method)
    else:
        res = train_oracle(split, oracle_ood_train(cfg, split, seed), method, spec, tc)
        if method == "entropy_oracle":
            save_checkpoint(ckpt, {"softmax_classifier": res.models.classifier}, spec, tc, seed)
            report = evaluate_softmax(res.models.classifier, split, "softmax_entropy")
        else:
            save_checkpoint(ckpt, {"classifier": res.models.classifier}, spec, tc, seed)
            report = evaluate_ova(res.models.classifier, split)
    res.write_history(run_dir / f"{method}.history.jsonl")
    return report


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


def run_seed(cfg: ExperimentConfig, seed: int, split=None) -> Path:
    split = split if split is not None else build_split(cfg)
    run_dir = cfg.out / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    results, cache = {}, {}
    for method in cfg.values["methods"]:
        log.info("seed %d: %s", seed, method)
        try:
            results[method] = run_method(cfg, method, split, seed, run_dir, cache).to_dict()
        except TrainingDivergedError as exc:
            exc.seed = seed
            exc.args = (f"seed {seed}, {method}: {exc}",)
            raise
    write_json(run_dir / "metrics.json", {"seed": seed, "dataset": split.name, "methods": results})
    return run_dir


def run_experiment(cfg, seeds=None) -> Path:
    """Train and evaluate every method for every seed, then write the aggregate table.

    ``cfg`` is an :class:`ExperimentConfig` or the path of a config file.
    """
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    seeds = tuple(seeds) if seeds is not None else cfg.values["seeds"]
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "config.cfg").write_text(cfg.dumps())
    split = build_split(cfg)
    for seed in seeds:
        run_seed(cfg, seed, split)
    write_table(cfg.out)
    return cfg.out


def load_run(cfg: ExperimentConfig, seed: int, method: str):
    """Rebuild the modules saved by a finished run: ``(spec, modules, checkpoint)``."""
    path = cfg.out / f"seed_{seed}" / f"{method}.pt"
    if not path.is_file():
        raise DataMissingError(f"no checkpoint {str(path)!r}; run 'train' first")
    ckpt = load_checkpoint(path)
    spec, mods = models_from_checkpoint(ckpt)
    return spec, mods, ckpt


def evaluate_seed(cfg: ExperimentConfig, seed: int, split=None) -> Path:
    """Recompute ``metrics.json`` for one seed from saved checkpoints."""
    split = split if split is not None else build_split(cfg)
    results = {}
    for method in cfg.values["methods"]:
        _, mods, _ = load_run(cfg, seed, method)
        if "softmax_classifier" in mods:
            score = "softmax_entropy" if method in ("softmax_entropy", "entropy_oracle") else "max_softmax"
            report = evaluate_softmax(mods["softmax_classifier"], split, score)
        elif method == "uqgan_mc":
            report = evaluate_ova(mods["classifier"], split, cfg.values["mc_passes"], cfg.values["mc_rate"])
        else:
            report = evaluate_ova(mods["classifier"], split)
        results[method] = report.to_dict()
    run_dir = cfg.out / f"seed_{seed}"
    write_json(run_dir / "metrics.json", {"seed": seed, "dataset": split.name, "methods": results})
    return run_dir


# ---------------------------------------------------------------- tables


def load_seed_metrics(out_dir) -> dict[int, dict]:
    out = {}
    for path in sorted(Path(out_dir).glob("seed_*/metrics.json")):
        rec = json.loads(path.read_text())
        out[int(rec["seed"])] = rec
    return out


def aggregate(per_seed: dict[int, dict]) -> dict:
    """Mean and sample standard deviation of every table metric, in percent."""
    found = {m for rec in per_seed.values() for m in rec["methods"]}
    methods = [m for m in METHOD_LABELS if m in found] + sorted(found - set(METHOD_LABELS))
    rows = {}
    for m in methods:
        row = {}
        for sec, keys in TABLE_SECTIONS.items():
            for k in keys:
                vals = [rec["methods"][m][k] for rec in per_seed.values() if m in rec["methods"]]
                vals = np.array([np.nan if v is None else v for v in vals], dtype=np.float64) * 100.0
                std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                row[k] = {"mean": float(np.mean(vals)), "std": std, "n": int(len(vals))}
        rows[m] = row
    return {"seeds": sorted(per_seed), "sections": {k: list(v) for k, v in TABLE_SECTIONS.items()},
            "rows": rows}


def format_markdown(table: dict) -> str:
    keys = [k for ks in TABLE_SECTIONS.values() for k in ks]
    sections = "; ".join(f"{name.replace('_', '-')}: {', '.join(TABLE_HEADERS[k] for k in ks)}"
                         for name, ks in TABLE_SECTIONS.items())
    head = "| Method | " + " | ".join(TABLE_HEADERS[k] for k in keys) + " |"
    lines = [f"Seeds: {', '.join(str(s) for s in table['seeds'])}; values in percent, mean (std).",
             f"Sections: {sections}.", "", head, "|" + "---|" * (len(keys) + 1)]
    for m, row in table["rows"].items():
        cells = [f"{row[k]['mean']:.2f} ({row[k]['std']:.2f})" for k in keys]
        lines.append(f"| {METHOD_LABELS.get(m, m)} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_table(out_dir) -> dict:
    out_dir = Path(out_dir)
    per_seed = load_seed_metrics(out_dir)
    if not per_seed:
        raise DataMissingError(f"no seed_*/metrics.json under {str(out_dir)!r}")
    table = aggregate(per_seed)
    write_json(out_dir / "table.json", table)
    (out_dir / "table.md").write_text(format_markdown(table))
    return table
