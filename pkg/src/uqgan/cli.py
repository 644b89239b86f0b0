"""Command line entry point.

    uqgan train     --config C [--seed S] [--out DIR] [--device D]
    uqgan evaluate  --config C [--seed S] [--out DIR] [--device D]
    uqgan heatmap   --config C [--seed S] [--out DIR]
    uqgan samples   --config C [--seed S] [--out DIR]
    uqgan table     --out DIR

On success a JSON summary goes to stdout and the exit code is 0.  On failure
a JSON object ``{"error": <category>, "message": ...}`` goes to stderr and the
exit code identifies the category (see :mod:`uqgan.errors`).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np
import torch

from . import experiment
from .config import load_config
from .errors import ConfigError, UnsupportedModelError, UQGANError
from .figures import GridSpec, emit_heatmaps, emit_sample_grid
from .trainer import generate_ooc_samples

VERBS = ("train", "evaluate", "heatmap", "samples", "table")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uqgan", description="One-vs-all classifier with latent OoC GAN: experiments and reports.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in VERBS:
        s = sub.add_parser(verb)
        s.add_argument("--config", required=verb != "table", help="flat key = value experiment config")
        s.add_argument("--seed", type=int, default=None, help="restrict to one seed")
        s.add_argument("--out", default=None, help="results directory (overrides out_dir)")
        s.add_argument("--device", default=None, help="torch device (overrides device)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args):
    cfg = load_config(args.config)
    over = {}
    if args.out is not None:
        over["out_dir"] = args.out
    if args.device is not None:
        over["device"] = args.device
    return cfg.replace(**over) if over else cfg


def _seeds(cfg, args):
    return (args.seed,) if args.seed is not None else cfg.values["seeds"]


def cmd_train(args):
    cfg = _config(args)
    out = experiment.run_experiment(cfg, _seeds(cfg, args))
    return {"out": str(out), "seeds": list(_seeds(cfg, args)), "table": str(out / "table.md")}


def cmd_evaluate(args):
    cfg = _config(args)
    split = experiment.build_split(cfg)
    dirs = [str(experiment.evaluate_seed(cfg, s, split)) for s in _seeds(cfg, args)]
    experiment.write_table(cfg.out)
    return {"runs": dirs}


def cmd_heatmap(args):
    cfg = _config(args)
    seed = _seeds(cfg, args)[0]
    method = "uqgan" if "uqgan" in cfg.values["methods"] else cfg.values["methods"][0]
    spec, mods, ckpt = experiment.load_run(cfg, seed, method)
    if "classifier" not in mods:
        raise UnsupportedModelError("heatmaps need a one-vs-all classifier")
    if tuple(spec.input_shape) != (2,):
        raise UnsupportedModelError(f"heatmaps need a 2D model, got input shape {spec.input_shape}")
    split = experiment.build_split(cfg)
    center = split.train.x.mean(axis=0) if split.train.x.ndim == 2 and split.train.x.shape[1] == 2 else (0.0, 0.0)
    grid = GridSpec.square(cfg.values["heatmap_extent"], cfg.values["heatmap_resolution"], tuple(center))
    ooc = None
    if "generator" in mods:
        ooc = np.concatenate([generate_ooc_samples(mods["generator"], mods["decoder"], c, 200, seed=seed + c).numpy()
                              for c in range(split.n_classes)])
    paths = emit_heatmaps(mods["classifier"], split.priors, grid, cfg.out / f"seed_{seed}" / "figures", spec,
                          (split.train.x, split.train.y), ooc)
    return {k: str(v) for k, v in paths.items()}


def cmd_samples(args):
    cfg = _config(args)
    seed = _seeds(cfg, args)[0]
    spec, mods, _ = experiment.load_run(cfg, seed, "uqgan")
    out = cfg.out / f"seed_{seed}" / "figures" / "ooc_samples.png"
    emit_sample_grid(mods["generator"], mods["decoder"], range(spec.n_classes), cfg.values["samples_per_class"],
                     out, seed=seed, spec=spec)
    return {"samples": str(out)}


def cmd_table(args):
    out = args.out
    if out is None:
        if args.config is None:
            raise ConfigError("table needs --out or --config")
        out = load_config(args.config).out_dir
    table = experiment.write_table(out)
    return {"table": f"{out}/table.md", "seeds": table["seeds"], "methods": list(table["rows"])}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        torch.set_num_threads(1)
        result = globals()[f"cmd_{args.verb}"](args)
        print(json.dumps({"status": "ok", "verb": args.verb, **result}))
        return 0
    except UQGANError as exc:
        payload = {"error": exc.category, "message": str(exc)}
        for attr in ("line", "field", "iteration", "seed"):
            if getattr(exc, attr, None) is not None:
                payload[attr] = getattr(exc, attr)
        print(json.dumps(payload), file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print(json.dumps({"error": "interrupted", "message": "interrupted"}), file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001
        print(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
