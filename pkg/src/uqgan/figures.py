"""Uncertainty heatmaps for 2D models and grids of generated OoC images."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InvalidArgumentError, UnsupportedModelError
from .models import ArchitectureSpec, IdentityCodec
from .ova_core import uncertainty_report
from .trainer import generate_ooc_samples, predict_ova


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -8.0
    x_max: float = 8.0
    y_min: float = -8.0
    y_max: float = 8.0
    resolution: int = 200

    def __post_init__(self):
        if self.resolution < 2 or self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise InvalidArgumentError("grid needs resolution >= 2 and a non-empty extent")

    @classmethod
    def square(cls, extent: float, resolution: int = 200, center=(0.0, 0.0)):
        cx, cy = center
        return cls(cx - extent, cx + extent, cy - extent, cy + extent, resolution)

    def points(self) -> np.ndarray:
        """Row-major grid points, rows running along y."""
        xs = np.linspace(self.x_min, self.x_max, self.resolution)
        ys = np.linspace(self.y_min, self.y_max, self.resolution)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float32)


def _input_dim(classifier) -> int | None:
    for m in classifier.modules():
        if isinstance(m, torch.nn.Linear):
            return m.in_features
        if isinstance(m, torch.nn.Conv2d):
            return None
    return None


def heatmap_values(classifier, priors, grid: GridSpec, spec: ArchitectureSpec | None = None) -> dict:
    if spec is not None and tuple(spec.input_shape) != (2,):
        raise UnsupportedModelError(f"heatmaps need a 2D model, got input shape {spec.input_shape}")
    if spec is None and _input_dim(classifier) != 2:
        raise UnsupportedModelError("heatmaps need a 2D model")
    pts = grid.points()
    rep = uncertainty_report(predict_ova(classifier, pts, priors), priors)
    shape = (grid.resolution, grid.resolution)
    return {"points": pts, "epistemic": rep.epistemic.reshape(shape), "aleatoric": rep.aleatoric_raw.reshape(shape)}


def emit_heatmaps(classifier, priors, grid: GridSpec, output_dir, spec: ArchitectureSpec | None = None,
                  train_points=None, ooc_points=None) -> dict[str, Path]:
    """Write epistemic and aleatoric heatmaps plus the raw grid as ``x1 x2 epistemic aleatoric`` text.

    Colour limits are fixed (``[0, 1]`` and ``[0, log n]``) so that maps from
    different models are comparable.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    vals = heatmap_values(classifier, priors, grid, spec)
    table = np.column_stack([vals["points"].astype(np.float64), vals["epistemic"].ravel(), vals["aleatoric"].ravel()])
    paths = {"grid": out / "heatmap_grid.txt"}
    np.savetxt(paths["grid"], table, fmt="%.9g", header="x1 x2 epistemic aleatoric", comments="")
    extent = (grid.x_min, grid.x_max, grid.y_min, grid.y_max)
    limits = {"epistemic": (0.0, 1.0), "aleatoric": (0.0, float(np.log(priors.n)))}
    for key, title in (("epistemic", "epistemic uncertainty"), ("aleatoric", "aleatoric uncertainty (nats)")):
        fig, ax = plt.subplots(figsize=(5, 4.2), dpi=100)
        im = ax.imshow(vals[key], origin="lower", extent=extent, cmap="inferno", vmin=limits[key][0],
                       vmax=limits[key][1], aspect="auto", interpolation="nearest")
        fig.colorbar(im, ax=ax)
        if train_points is not None:
            x, y = train_points
            ax.scatter(x[:, 0], x[:, 1], c=y, s=2, cmap="tab10", vmin=0, vmax=9, alpha=0.6, linewidths=0)
        if ooc_points is not None:
            ax.scatter(ooc_points[:, 0], ooc_points[:, 1], s=2, c="cyan", alpha=0.6, linewidths=0)
        ax.set_xlim(grid.x_min, grid.x_max)
        ax.set_ylim(grid.y_min, grid.y_max)
        ax.set_title(title)
        paths[key] = out / f"heatmap_{key}.png"
        fig.savefig(paths[key], metadata={"Software": None})
        plt.close(fig)
    return paths


def tile_images(images: np.ndarray, rows: int, cols: int, pad: int = 2) -> np.ndarray:
    """Arrange ``rows * cols`` images of shape (C, H, W) in [0, 1] into one uint8 canvas."""
    c, h, w = images.shape[1:]
    canvas = np.ones((rows * (h + pad) + pad, cols * (w + pad) + pad, c), dtype=np.float64)
    for i, img in enumerate(images):
        r, k = divmod(i, cols)
        top, left = pad + r * (h + pad), pad + k * (w + pad)
        canvas[top:top + h, left:left + w] = np.transpose(img, (1, 2, 0))
    canvas = np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)
    return canvas[:, :, 0] if c == 1 else canvas


def emit_sample_grid(generator, decoder, classes, samples_per_class: int, output, seed: int = 0,
                     spec: ArchitectureSpec | None = None) -> np.ndarray:
    """One row of generated OoC examples per conditioning class; returns the uint8 canvas."""
    if isinstance(decoder, IdentityCodec) or (spec is not None and not spec.is_image):
        raise UnsupportedModelError("sample grids need an image-domain model")
    classes = list(classes)
    if not classes or samples_per_class < 1:
        raise InvalidArgumentError("need at least one class and one sample per class")
    rows = [generate_ooc_samples(generator, decoder, c, samples_per_class, seed=seed + c).cpu().numpy()
            for c in classes]
    canvas = tile_images(np.concatenate(rows), len(classes), samples_per_class)
    Path(output).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas).save(output, format="PNG")
    return canvas
