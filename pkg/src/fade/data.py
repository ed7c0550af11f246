"""Datasets: CIFAR-10 binary reader, stratified splits and synthetic tasks."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
DATA_ROOT_ENV = "FADE_DATA_ROOT"


@dataclass
class LabeledSet:
    images: np.ndarray  # (N, C, H, W), values in [0, 1]
    labels: np.ndarray  # (N,), int64

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConfigError("images and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.images[idx], self.labels[idx])

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


@dataclass
class DatasetSplits:
    test: LabeledSet
    arch_train: LabeledSet
    weight_train: LabeledSet
    class_count: int

    @property
    def image_shape(self) -> tuple[int, ...]:
        return self.test.images.shape[1:]

    def training(self) -> LabeledSet:
        """Both training parts joined; used when training discrete networks."""
        return LabeledSet(
            np.concatenate([self.weight_train.images, self.arch_train.images]),
            np.concatenate([self.weight_train.labels, self.arch_train.labels]),
        )


# --- CIFAR-10 -----------------------------------------------------------------


def read_cifar_batch(path) -> LabeledSet:
    """Parse one CIFAR-10 binary batch: 1 label byte + 3072 channel-planar pixel bytes per record."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise FormatError(f"{path}: {raw.size} bytes is not a positive multiple of {CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if (labels >= 10).any():
        raise FormatError(f"{path}: label {int(labels.max())} out of range")
    images = (records[:, 1:].astype(np.float32) / 255.0).reshape(-1, *CIFAR_SHAPE)
    return LabeledSet(images, labels)


def write_cifar_batch(data: LabeledSet, path) -> None:
    pixels = np.rint(np.asarray(data.images, dtype=np.float64) * 255).astype(np.uint8).reshape(len(data), -1)
    records = np.concatenate([data.labels.astype(np.uint8)[:, None], pixels], axis=1)
    records.tofile(path)


def load_cifar10(directory=None) -> LabeledSet:
    """All ``*.bin`` batches of a CIFAR-10 binary directory, concatenated in name order.

    ``directory`` defaults to ``$FADE_DATA_ROOT/cifar-10-batches-bin``.
    """
    if directory is None:
        root = os.environ.get(DATA_ROOT_ENV)
        if not root:
            raise ConfigError(f"no CIFAR-10 directory given and {DATA_ROOT_ENV} is unset")
        directory = Path(root) / "cifar-10-batches-bin"
    files = sorted(Path(directory).glob("*.bin"))
    files = [f for f in files if f.name != "batches.meta.bin"] if files else files
    if not files:
        raise FormatError(f"no .bin batch files in {directory}")
    parts = [read_cifar_batch(f) for f in files]
    return LabeledSet(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]))


def downsample(images: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool ``factor x factor`` blocks."""
    n, c, h, w = images.shape
    h2, w2 = h // factor, w // factor
    x = images[:, :, :h2 * factor, :w2 * factor]
    return x.reshape(n, c, h2, factor, w2, factor).mean(axis=(3, 5))


def cifar_subset(data: LabeledSet, classes=(0, 1), size: int = 8, limit: int | None = None) -> LabeledSet:
    """Desk-scale CIFAR: keep ``classes`` (relabelled 0..k-1) and shrink images to ``size``."""
    keep = np.isin(data.labels, classes)
    images, labels = data.images[keep], data.labels[keep]
    relabel = {c: i for i, c in enumerate(classes)}
    labels = np.array([relabel[int(l)] for l in labels], dtype=np.int64)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    factor = images.shape[-1] // size
    return LabeledSet(downsample(images, factor).astype(np.float64), labels)


# --- splitting ----------------------------------------------------------------


def _allocate(count: int, ratios) -> list[int]:
    """Largest-remainder apportionment of ``count`` items to ``ratios``."""
    ratios = np.asarray(ratios, dtype=np.float64)
    exact = count * ratios / ratios.sum()
    sizes = np.floor(exact).astype(int)
    order = np.argsort(-(exact - sizes), kind="stable")
    for i in order[: count - sizes.sum()]:
        sizes[i] += 1
    return sizes.tolist()


def split(data: LabeledSet, ratios=(1, 1, 4), rng: np.random.Generator | None = None) -> DatasetSplits:
    """Stratified random test / architecture-train / weight-train partition."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError("split needs three positive ratios")
    rng = rng or np.random.default_rng(0)
    k = data.class_count
    parts: list[list[int]] = [[], [], []]
    for c in range(k):
        idx = np.flatnonzero(data.labels == c)
        if len(idx) < len(ratios):
            raise ConfigError(f"class {c} has {len(idx)} samples, fewer than {len(ratios)} parts")
        idx = rng.permutation(idx)
        start = 0
        for part, size in zip(parts, _allocate(len(idx), ratios)):
            part.extend(idx[start:start + size].tolist())
            start += size
    test, arch, weight = (data.subset(np.sort(np.array(p, dtype=np.int64))) for p in parts)
    return DatasetSplits(test, arch, weight, k)


# --- synthetic tasks ------------------------------------------------------------


def concave_oracle(optimum=(0.5, 0.5, 0.5)):
    """``f(x) = 1 - ||x - optimum||^2``, maximal (1.0) at ``optimum``."""
    opt = np.asarray(optimum, dtype=np.float64)

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        return 1.0 - ((x - opt) ** 2).sum(axis=-1)

    f.optimum = opt
    return f


def xor_patterns(n: int = 600, size: int = 8, noise: float = 0.1, rng: np.random.Generator | None = None) -> LabeledSet:
    """Two-class 1-channel images: label is the XOR of the signs of two quadrant patches."""
    rng = rng or np.random.default_rng(0)
    half = size // 2
    a = rng.integers(0, 2, n)
    b = rng.integers(0, 2, n)
    images = rng.normal(0.5, noise, size=(n, 1, size, size))
    images[:, 0, :half, :half] += np.where(a, 0.35, -0.35)[:, None, None]
    images[:, 0, half:, half:] += np.where(b, 0.35, -0.35)[:, None, None]
    return LabeledSet(np.clip(images, 0.0, 1.0), (a ^ b).astype(np.int64))


def planted_cell_quality(n: int = 3000, size: int = 8, width: int = 24, boundary: int = 16, noise: float = 0.1,
                         rng: np.random.Generator | None = None) -> LabeledSet:
    """Near/far markers: label is 1 iff two bright pixels lie at most ``boundary`` columns apart.

    Each noisy ``size x width`` image carries two unit markers in random rows.
    Positives are 1 to ``boundary`` columns apart, negatives ``boundary + 1``
    to ``width - 1``.  Telling the classes apart near the boundary needs a
    receptive field spanning about ``boundary`` columns.  The stem and every
    convolution on the longest path of a row widen the field, and each row
    transition doubles the stride, so accuracy grows with the depth of the
    cell variant placed in each row, and an early row counts as much as a
    later one.
    """
    if not 1 <= boundary < width - 1:
        raise ConfigError(f"boundary must be in [1, {width - 2}] for width {width}")
    rng = rng or np.random.default_rng(0)
    images = rng.normal(0.0, noise, size=(n, 1, size, width))
    labels = rng.integers(0, 2, n)
    sep = np.where(labels == 1, rng.integers(1, boundary + 1, n), rng.integers(boundary + 1, width, n))
    x0 = rng.integers(0, width - sep)
    y0 = rng.integers(0, size, n)
    y1 = rng.integers(0, size, n)
    idx = np.arange(n)
    images[idx, 0, y0, x0] += 1.0
    images[idx, 0, y1, x0 + sep] += 1.0
    return LabeledSet(images, labels.astype(np.int64))


SYNTHETIC_TASKS = ("planted-cell-quality", "xor-patterns", "concave-oracle")


def make_synthetic(task: str, params: dict | None = None, rng: np.random.Generator | None = None):
    """Labeled set for the two image tasks, a callable for ``concave-oracle``."""
    params = dict(params or {})
    if task == "planted-cell-quality":
        return planted_cell_quality(rng=rng, **params)
    if task == "xor-patterns":
        return xor_patterns(rng=rng, **params)
    if task == "concave-oracle":
        return concave_oracle(**params)
    raise ConfigError(f"unknown synthetic task {task!r}; expected one of {SYNTHETIC_TASKS}")
