"""Toy distributions, image-dataset adapters and the class-split OoD protocol.

Image containers on disk
------------------------
``load_image_arrays(root, name)`` looks for, in order:

* ``<root>/<name>.npz`` holding ``x_train, y_train, x_test, y_test``; images
  are ``(N, H, W)`` or ``(N, C, H, W)``, ``uint8`` (scaled by 1/255) or float
  already in [0, 1]; labels are integer vectors.
* the four MNIST IDX files (``train-images-idx3-ubyte`` etc., optionally
  ``.gz``) in ``<root>/<name>/`` or ``<root>/<name>/raw/``.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.datasets import make_moons
from sklearn.model_selection import train_test_split

from .errors import DataMissingError, InvalidArgumentError, InvalidInputError
from .ova_core import ClassPriors

# 99% mass radius of a 2D standard normal: sqrt(chi2_2.ppf(0.99)) = sqrt(-2 ln 0.01)
CONTOUR_99 = float(np.sqrt(-2.0 * np.log(0.01)))


@dataclass
class LabeledData:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise InvalidArgumentError("features and labels differ in length")

    def __len__(self):
        return self.y.shape[0]

    def subset(self, idx) -> "LabeledData":
        return LabeledData(self.x[idx], self.y[idx])


@dataclass
class DatasetSplit:
    train: LabeledData
    val: LabeledData
    test: LabeledData
    ood_test: dict[str, np.ndarray]
    priors: ClassPriors
    n_classes: int
    name: str = ""
    # toy sets expose their analytic p(y|x) and generating parameters
    analytic_posterior: Callable[[np.ndarray], np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.train.x.shape[1:])


def estimate_priors(labels, n_classes: int) -> ClassPriors:
    counts = np.bincount(np.asarray(labels), minlength=n_classes).astype(np.float64)
    if np.any(counts == 0):
        raise InvalidArgumentError("every class needs at least one training example")
    return ClassPriors(counts / counts.sum())


def stratified_split(data: LabeledData, val_fraction: float, seed: int) -> tuple[LabeledData, LabeledData]:
    if not 0.0 < val_fraction < 1.0:
        raise InvalidArgumentError("val_fraction must lie in (0, 1)")
    idx = np.arange(len(data))
    tr, va = train_test_split(idx, test_size=val_fraction, random_state=seed, stratify=data.y)
    return data.subset(np.sort(tr)), data.subset(np.sort(va))


def _finish(train_pool, test, ood, n, seed, val_fraction, name, **kw) -> DatasetSplit:
    train, val = stratified_split(train_pool, val_fraction, seed)
    return DatasetSplit(train, val, test, ood, estimate_priors(train.y, n), n, name, **kw)


def ring(radius: float, count: int, center=(0.0, 0.0), jitter: float = 0.0, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0, 2 * np.pi, count)
    r = radius + jitter * rng.standard_normal(count)
    return (np.stack([np.cos(phi), np.sin(phi)], 1) * r[:, None] + np.asarray(center)).astype(np.float32)


# ---------------------------------------------------------------- toy data


def two_gaussian_posterior(separation: float, variance: float, prior0: float = 0.5):
    """Closed-form ``p(y|x)`` for isotropic Gaussians at ``(∓separation/2, 0)``."""
    m0 = np.array([-separation / 2, 0.0])
    m1 = -m0

    def posterior(x):
        x = np.asarray(x, dtype=np.float64)
        d0 = ((x - m0) ** 2).sum(axis=-1)
        d1 = ((x - m1) ** 2).sum(axis=-1)
        logit0 = (d1 - d0) / (2 * variance) + np.log(prior0 / (1 - prior0))
        p0 = 1.0 / (1.0 + np.exp(-logit0))
        return np.stack([p0, 1 - p0], axis=-1)

    return posterior


def make_two_gaussians(n_per_class: int = 1000, separation: float = 4.0, variance: float = 1.0,
                       seed: int = 0, val_fraction: float = 0.2, n_test_per_class: int | None = None,
                       ood_radius: float = 6.0) -> DatasetSplit:
    """Two isotropic Gaussians at ``(±separation/2, 0)``.

    The OoD test set is a ring of radius ``ood_radius`` standard deviations
    around the centroid.
    """
    if n_per_class < 1:
        raise InvalidArgumentError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    std = np.sqrt(variance)
    means = np.array([[-separation / 2, 0.0], [separation / 2, 0.0]])
    n_test = n_test_per_class if n_test_per_class is not None else max(n_per_class // 4, 1)

    def draw(k):
        x = np.concatenate([means[c] + std * rng.standard_normal((k, 2)) for c in (0, 1)])
        return LabeledData(x, np.repeat([0, 1], k))

    pool, test = draw(n_per_class), draw(n_test)
    ood = {"ring": ring(ood_radius * std, 2 * n_test, seed=seed + 1)}
    return _finish(pool, test, ood, 2, seed, val_fraction, "two_gaussians",
                   analytic_posterior=two_gaussian_posterior(separation, variance),
                   meta={"means": means.tolist(), "std": float(std), "separation": separation,
                         "variance": variance})


MOONS_LOW_NOISE = 0.1
MOONS_HIGH_NOISE = 0.25


def make_two_moons(n_per_class: int = 1000, noise_std: float = MOONS_LOW_NOISE, seed: int = 0,
                   val_fraction: float = 0.2, n_test_per_class: int | None = None) -> DatasetSplit:
    n_test = n_test_per_class if n_test_per_class is not None else max(n_per_class // 4, 1)
    # sklearn consumes one RandomState; separate seeds keep pool and test independent
    xp, yp = make_moons((n_per_class, n_per_class), noise=noise_std or None, random_state=seed)
    xt, yt = make_moons((n_test, n_test), noise=noise_std or None, random_state=seed + 10_000)
    center = np.array([0.5, 0.25])
    ood = {"ring": ring(3.0, 2 * n_test, center=center, seed=seed + 1)}
    return _finish(LabeledData(xp, yp), LabeledData(xt, yt), ood, 2, seed, val_fraction, "two_moons",
                   meta={"noise_std": noise_std})


def gaussian_grid_labels(grid: int, classes_mode: str) -> np.ndarray:
    """Class of each blob in row-major order."""
    rows, cols = np.divmod(np.arange(grid * grid), grid)
    if classes_mode == "per_blob_9":
        return np.arange(grid * grid)
    if classes_mode == "grouped_3":
        # equal labels never share a grid edge, so each class is disconnected
        return (rows + cols) % 3
    raise InvalidArgumentError(f"unknown classes_mode {classes_mode!r}")


def make_gaussian_grid(grid: int = 3, classes_mode: str = "per_blob_9", seed: int = 0,
                       n_per_blob: int = 300, spacing: float = 4.0, std: float = 0.5,
                       val_fraction: float = 0.2) -> DatasetSplit:
    rng = np.random.default_rng(seed)
    rows, cols = np.divmod(np.arange(grid * grid), grid)
    centers = np.stack([cols, rows], 1) * spacing - spacing * (grid - 1) / 2
    labels = gaussian_grid_labels(grid, classes_mode)
    n = int(labels.max()) + 1

    def draw(k):
        x = np.concatenate([c + std * rng.standard_normal((k, 2)) for c in centers])
        return LabeledData(x, np.repeat(labels, k))

    pool, test = draw(n_per_blob), draw(max(n_per_blob // 4, 1))
    ood = {"ring": ring(spacing * grid, len(test), seed=seed + 1)}
    return _finish(pool, test, ood, n, seed, val_fraction, f"gaussian_grid_{classes_mode}",
                   meta={"centers": centers.tolist(), "std": std})


def save_columnar(path, data: LabeledData):
    """Write 2D points as whitespace-separated ``x1 x2 label`` rows."""
    if data.x.ndim != 2 or data.x.shape[1] != 2:
        raise InvalidArgumentError("columnar export is for 2D toy data")
    table = np.column_stack([data.x.astype(np.float64), data.y])
    np.savetxt(path, table, fmt=["%.9g", "%.9g", "%d"], header="x1 x2 label", comments="")


def load_columnar(path) -> LabeledData:
    table = np.loadtxt(path, skiprows=1, ndmin=2)
    return LabeledData(table[:, :2], table[:, 2].astype(np.int64))


# ---------------------------------------------------------------- images


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        _, dtype_code, ndim = struct.unpack(">HBB", f.read(4))
        shape = struct.unpack(">" + "I" * ndim, f.read(4 * ndim))
        if dtype_code != 0x08:
            raise InvalidInputError(f"{path}: only unsigned-byte IDX files are supported")
        return np.frombuffer(f.read(), dtype=np.uint8).reshape(shape)


def _find_idx(folder: Path, stem: str) -> Path | None:
    for d in (folder, folder / "raw"):
        for suffix in ("", ".gz"):
            p = d / (stem + suffix)
            if p.exists():
                return p
    return None


def _to_unit_images(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[:, None]
    elif x.ndim == 4 and x.shape[-1] in (1, 3) and x.shape[1] not in (1, 3):
        x = x.transpose(0, 3, 1, 2)
    if x.dtype == np.uint8:
        return x.astype(np.float32) / 255.0
    x = x.astype(np.float32)
    if x.min() < 0 or x.max() > 1:
        raise InvalidInputError("float images must already lie in [0, 1]")
    return x


def load_image_arrays(root, name: str) -> tuple[LabeledData, LabeledData]:
    """Return ``(train, test)`` for a dataset stored under ``root``."""
    root = Path(root)
    npz = root / f"{name}.npz"
    if npz.exists():
        with np.load(npz) as f:
            return (LabeledData(_to_unit_images(f["x_train"]), f["y_train"]),
                    LabeledData(_to_unit_images(f["x_test"]), f["y_test"]))
    folder = root / name
    stems = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
    paths = [_find_idx(folder, s) for s in stems]
    if all(paths):
        xtr, ytr, xte, yte = (_read_idx(p) for p in paths)
        return (LabeledData(_to_unit_images(xtr), ytr), LabeledData(_to_unit_images(xte), yte))
    raise DataMissingError(f"no '{name}' dataset under {root} (expected {npz.name} or IDX files)")


def conform_images(x: np.ndarray, shape: tuple) -> np.ndarray:
    """Match channel count (grey average or replication) and centre crop/pad to ``shape``."""
    c, h, w = shape
    if x.shape[1] != c:
        x = x.mean(axis=1, keepdims=True) if c == 1 else np.repeat(x[:, :1], c, axis=1)
    out = np.zeros((x.shape[0], c, h, w), dtype=np.float32)
    sh, sw = x.shape[2], x.shape[3]
    ch, cw = min(h, sh), min(w, sw)
    oy, ox = (h - ch) // 2, (w - cw) // 2
    iy, ix = (sh - ch) // 2, (sw - cw) // 2
    out[:, :, oy:oy + ch, ox:ox + cw] = x[:, :, iy:iy + ch, ix:ix + cw]
    return out


def load_ood_images(root, name: str, shape: tuple | None = None) -> np.ndarray:
    """External OoD sets are evaluated on their test split, unbalanced."""
    x = load_image_arrays(root, name)[1].x
    return conform_images(x, shape) if shape is not None else x


def class_split(train: LabeledData, test: LabeledData, in_classes, ood_named_sets: dict | None = None,
                held_out_name: str = "held_out", val_fraction: float = 0.2, seed: int = 0,
                name: str = "") -> DatasetSplit:
    """Keep ``in_classes`` (relabelled to 0..n-1) as in-distribution data.

    Test examples of the remaining classes become the OoD set ``held_out_name``;
    external OoD sets are attached as given.
    """
    in_classes = sorted(set(int(c) for c in in_classes))
    if not in_classes:
        raise InvalidArgumentError("in_classes must not be empty")
    relabel = {c: i for i, c in enumerate(in_classes)}
    lut = np.full(max(int(train.y.max()), int(test.y.max()), in_classes[-1]) + 1, -1)
    for c, i in relabel.items():
        lut[c] = i

    def keep(d):
        mask = lut[d.y] >= 0
        return LabeledData(d.x[mask], lut[d.y[mask]]), d.x[~mask]

    tr, _ = keep(train)
    te, held_out = keep(test)
    ood = {}
    if held_out.shape[0]:
        ood[held_out_name] = held_out
    ood.update(ood_named_sets or {})
    return _finish(tr, te, ood, len(in_classes), seed, val_fraction, name,
                   meta={"in_classes": in_classes})


def _half_split(root, base, seed, val_fraction, extra_ood):
    train, test = load_image_arrays(root, base)
    n_total = int(max(train.y.max(), test.y.max())) + 1
    half = n_total // 2
    extra = {}
    for other in extra_ood:
        try:
            extra[other] = load_ood_images(root, other, train.x.shape[1:])
        except DataMissingError:
            # optional OoD extras are skipped when not on disk
            continue
    return class_split(train, test, range(half), extra, f"{base}_{half}_{n_total - 1}",
                       val_fraction, seed, f"{base}_0_{half - 1}")


def mnist_split(root, seed: int = 0, val_fraction: float = 0.2, extra_ood: tuple = ()) -> DatasetSplit:
    """MNIST 0-4 in-distribution; MNIST 5-9 plus any ``extra_ood`` sets found on disk as OoD."""
    return _half_split(root, "mnist", seed, val_fraction, extra_ood)


def cifar10_split(root, seed: int = 0, val_fraction: float = 0.2, extra_ood: tuple = ()) -> DatasetSplit:
    return _half_split(root, "cifar10", seed, val_fraction, extra_ood)
