"""Train UQGAN on a 2D toy config and report shielding statistics per seed.

    python3 scripts/toy_shielding.py --config configs/two_gaussians.cfg --seeds 0 1 2

Prints ring epistemic uncertainty, midpoint aleatoric entropy, the fraction of
generated out-of-class points outside the 99% contour (two-Gaussians only) and
the critic gradient norm, and writes heatmaps under ``<out_dir>/shielding``.
"""
import argparse
import json
import math

import numpy as np
import torch

from uqgan.config import load_config
from uqgan.data import CONTOUR_99, ring
from uqgan.evaluate import ova_report
from uqgan.experiment import build_split
from uqgan.figures import GridSpec, emit_heatmaps
from uqgan.models import build_classifier, build_gan
from uqgan.trainer import UQGANModels, critic_gradient_norms, generate_ooc_samples, pretrain_cae, train_uqgan


def shielding_stats(split, models, seed):
    center = split.train.x.mean(axis=0)
    radius = float(np.linalg.norm(split.train.x - center, axis=1).max())
    out = {"ring_radius": radius}
    if split.name == "two_gaussians":
        radius = 6.0 * math.sqrt(split.meta["variance"])
        out["ring_radius"] = radius
    out["ring_epistemic"] = float(ova_report(models.classifier, ring(radius, 2000, center, seed=seed),
                                             split.priors).epistemic.mean())
    ooc = [generate_ooc_samples(models.generator, models.decoder, c, 2000, seed=seed + c).numpy()
           for c in range(split.n_classes)]
    if split.name == "two_gaussians":
        means = np.array(split.meta["means"])
        std = math.sqrt(split.meta["variance"])
        mid = means.mean(axis=0, keepdims=True).astype(np.float32)
        out["midpoint_aleatoric_over_log2"] = float(
            ova_report(models.classifier, mid, split.priors).aleatoric_raw[0] / math.log(2))
        out["ooc_outside_99"] = [float((np.linalg.norm(o - means[c], axis=1) / std > CONTOUR_99).mean())
                                 for c, o in enumerate(ooc)]
    x = torch.from_numpy(split.train.x[:2000])
    y = torch.from_numpy(split.train.y[:2000])
    with torch.no_grad():
        fake = models.generator(models.generator.sample_noise(len(y), torch.Generator().manual_seed(seed)), y)
    out["critic_grad_norm"] = float(critic_gradient_norms(models.critic, x, fake, y, seed=seed).mean())
    return out, np.concatenate(ooc)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--config", default="configs/two_gaussians.cfg")
    p.add_argument("--seeds", type=int, nargs="*")
    p.add_argument("--out", default=None)
    args = p.parse_args()
    torch.set_num_threads(1)
    cfg = load_config(args.config)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    split = build_split(cfg)
    for seed in args.seeds or cfg.seeds:
        spec = cfg.architecture(split.input_shape, split.n_classes)
        tc = cfg.training(seed)
        enc, dec, _ = pretrain_cae(split.train, spec, tc)
        gen, critic = build_gan(spec, seed=seed + 1)
        models = UQGANModels(build_classifier(spec, seed=seed), enc, dec, gen, critic)
        train_uqgan(split, models, tc, spec)
        stats, ooc = shielding_stats(split, models, seed + 100)
        grid = GridSpec.square(cfg.heatmap_extent, cfg.heatmap_resolution, tuple(split.train.x.mean(axis=0)))
        emit_heatmaps(models.classifier, split.priors, grid, cfg.out / "shielding" / f"seed_{seed}", spec,
                      (split.train.x, split.train.y), ooc[::4])
        print(json.dumps({"seed": seed, **stats}))


if __name__ == "__main__":
    main()
