"""MNIST 0-4 vs 5-9: train all configured methods, write the table and an OoC sample grid.

    python3 scripts/mnist_experiment.py --config configs/mnist_cpu.cfg --data-root /path/to/data

``--data-root`` must contain ``mnist.npz`` (x_train, y_train, x_test, y_test)
or the four MNIST IDX files, optionally gzipped, under ``mnist/``.
"""
import argparse
import json

import torch

from uqgan.config import load_config, parse_config
from uqgan.experiment import load_run, run_experiment
from uqgan.figures import emit_sample_grid


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--config", default="configs/mnist_cpu.cfg")
    p.add_argument("--data-root", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seeds", type=int, nargs="*")
    args = p.parse_args()
    torch.set_num_threads(1)
    text = open(args.config).read()
    if args.data_root:
        text = "\n".join(l for l in text.splitlines() if not l.strip().startswith("data_root"))
        text += f"\ndata_root = {args.data_root}\n"
    cfg = parse_config(text, args.config) if args.data_root else load_config(args.config)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    out = run_experiment(cfg, args.seeds)
    for seed in args.seeds or cfg.seeds:
        if "uqgan" in cfg.methods:
            spec, mods, _ = load_run(cfg, seed, "uqgan")
            emit_sample_grid(mods["generator"], mods["decoder"], range(spec.n_classes), cfg.samples_per_class,
                             out / f"seed_{seed}" / "figures" / "ooc_samples.png", seed=seed, spec=spec)
    print((out / "table.md").read_text())
    print(json.dumps(json.loads((out / "table.json").read_text())["rows"], indent=1))


if __name__ == "__main__":
    main()
