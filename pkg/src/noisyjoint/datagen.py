"""Procedural two-task datasets (one class label, one correlated continuous label).

``blobs``: Gaussian clusters around mutually orthogonal centres.
``patterns``: small binary template images with pixel noise, flattened.

The continuous label of a sample of class ``c`` is ``anchor_c`` plus Gaussian
jitter, clipped to [-1, 1]^d, so it carries class information. Generation is a
pure function of ``(spec, noise)``: train, test and label noise use
independent child streams of ``spec.seed``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _container
from .noise import NoiseConfig, corrupt_continuous, corrupt_discrete, uniform_flip_matrix

DATASET_MAGIC = "NOISYJOINT-DATASET"
DATASET_VERSION = 1


@dataclass
class DatasetSpec:
    generator: str = "blobs"
    n_train: int = 512
    n_test: int = 2000
    n_classes: int | None = None  # 4 for blobs, 10 for patterns
    input_dim: int = 16
    side: int = 16
    continuous_dim: int = 2
    class_anchors: list[list[float]] | None = None
    anchor_jitter: float = 0.1
    blob_spread: float = 0.25
    center_separation: float = 6.0  # pairwise centre distance in units of blob_spread
    pattern_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_classes is None:
            self.n_classes = 10 if self.generator == "patterns" else 4
        if self.class_anchors is None:
            self.class_anchors = default_anchors(self.n_classes, self.continuous_dim).tolist()

    @property
    def feature_dim(self) -> int:
        return self.side * self.side if self.generator == "patterns" else self.input_dim

    def validate(self) -> None:
        if self.generator not in ("blobs", "patterns"):
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_train < self.n_classes or self.n_test < self.n_classes:
            raise ValueError("n_train and n_test must be >= n_classes")
        if self.continuous_dim < 1:
            raise ValueError("continuous_dim must be >= 1")
        anchors = np.asarray(self.class_anchors, dtype=np.float64)
        if anchors.shape != (self.n_classes, self.continuous_dim):
            raise ValueError(f"class_anchors must have shape {(self.n_classes, self.continuous_dim)}")
        if np.any(np.abs(anchors) > 1):
            raise ValueError("class_anchors must lie in [-1, 1]^d")
        gap = _min_pairwise(anchors)
        if gap < 4 * self.anchor_jitter or gap == 0:
            raise ValueError(f"anchors too close: min distance {gap:.4f} < 4 * anchor_jitter")
        if self.generator == "blobs":
            if self.center_separation < 6.0:
                raise ValueError("center_separation must be >= 6 blob spreads")
            if self.n_classes > self.input_dim:
                raise ValueError(f"cannot place {self.n_classes} orthogonal centres in {self.input_dim} dimensions")
        else:
            if self.side < 8:
                raise ValueError("pattern side length must be >= 8")
            if self.n_classes > N_TEMPLATES:
                raise ValueError(f"only {N_TEMPLATES} pattern templates exist, asked for {self.n_classes}")


@dataclass
class Dataset:
    spec: DatasetSpec
    noise: NoiseConfig
    prototypes: np.ndarray  # class centres or templates, (K, D)
    x_train: np.ndarray
    y_train: np.ndarray
    c_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    c_test: np.ndarray
    noisy_discrete: list[np.ndarray] = field(default_factory=list)
    flip_masks: list[np.ndarray] = field(default_factory=list)
    noisy_continuous: list[np.ndarray] = field(default_factory=list)
    outlier_masks: list[np.ndarray] = field(default_factory=list)

    def noise_stats(self) -> dict:
        return {
            "discrete": [{"nominal": float(r), "realized": float(m.mean())}
                         for r, m in zip(self.noise.discrete_rates, self.flip_masks)],
            "continuous": [{"nominal": float(r), "realized": float(m.mean())}
                           for r, m in zip(self.noise.continuous_rates, self.outlier_masks)],
        }


def _min_pairwise(points: np.ndarray) -> float:
    if len(points) < 2:
        return math.inf
    return min(float(np.linalg.norm(a - b)) for a, b in itertools.combinations(points, 2))


def default_anchors(K: int, d: int, radius: float = 0.7) -> np.ndarray:
    """Evenly spaced anchors: on a line for d = 1, on a circle in the first two axes otherwise."""
    if d == 1:
        return np.linspace(-0.75, 0.75, K).reshape(K, 1)
    angles = math.pi / 4 + 2 * math.pi * np.arange(K) / K
    out = np.zeros((K, d))
    out[:, 0] = radius * np.cos(angles)
    out[:, 1] = radius * np.sin(angles)
    return out


def _continuous_labels(spec: DatasetSpec, y: np.ndarray, rng) -> np.ndarray:
    anchors = np.asarray(spec.class_anchors, dtype=np.float64)
    c = anchors[y] + spec.anchor_jitter * rng.standard_normal((y.shape[0], spec.continuous_dim))
    return np.clip(c, -1.0, 1.0)


# ---------------------------------------------------------------- blobs

def blob_centers(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    # orthonormal directions scaled so every pair is center_separation * spread apart
    q, _ = np.linalg.qr(rng.standard_normal((spec.input_dim, spec.n_classes)))
    scale = spec.center_separation * spec.blob_spread / math.sqrt(2.0)
    return scale * q.T


def _blob_split(spec, centers, n, rng):
    y = rng.integers(spec.n_classes, size=n)
    x = centers[y] + spec.blob_spread * rng.standard_normal((n, spec.input_dim))
    return x, y.astype(np.int64), _continuous_labels(spec, y, rng)


def gen_blobs(spec: DatasetSpec, rng: np.random.Generator):
    """Clean blobs data: ``(centers, (x, y, c)_train, (x, y, c)_test)``."""
    spec.validate()
    geo, tr, te = (np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(3))
    centers = blob_centers(spec, geo)
    return centers, _blob_split(spec, centers, spec.n_train, tr), _blob_split(spec, centers, spec.n_test, te)


# ------------------------------------------------------------- patterns

def _templates(side: int) -> list[np.ndarray]:
    i, j = np.indices((side, side))
    h = side // 2
    c0, c1 = side // 4, side - side // 4
    mid = (i >= h - 1) & (i <= h) | (j >= h - 1) & (j <= h)
    return [
        (i // 2) % 2 == 0,                       # horizontal stripes
        (j // 2) % 2 == 0,                       # vertical stripes
        ((i // 2) + (j // 2)) % 2 == 0,          # checkerboard
        ((i + j) // 2) % 2 == 0,                 # diagonal stripes
        ((i - j) // 2) % 2 == 0,                 # anti-diagonal stripes
        (i < h) & (j < h),                       # top-left corner
        (i < h) & (j >= h),                      # top-right corner
        (i >= h) & (j < h),                      # bottom-left corner
        (i >= h) & (j >= h),                     # bottom-right corner
        (i < 2) | (i >= side - 2) | (j < 2) | (j >= side - 2),  # frame
        (i >= c0) & (i < c1) & (j >= c0) & (j < c1),             # centre square
        mid,                                     # cross
    ]


N_TEMPLATES = 12


def pattern_templates(side: int, n_classes: int) -> np.ndarray:
    return np.stack([t.astype(np.float64).reshape(-1) for t in _templates(side)[:n_classes]])


def _pattern_split(spec, templates, n, rng):
    y = rng.integers(spec.n_classes, size=n)
    x = templates[y] + spec.pattern_noise * rng.standard_normal((n, templates.shape[1]))
    return np.clip(x, 0.0, 1.0), y.astype(np.int64), _continuous_labels(spec, y, rng)


def gen_patterns(spec: DatasetSpec, rng: np.random.Generator):
    """Clean pattern data: ``(templates, (x, y, c)_train, (x, y, c)_test)``."""
    spec.validate()
    tr, te = (np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(2))
    templates = pattern_templates(spec.side, spec.n_classes)
    return templates, _pattern_split(spec, templates, spec.n_train, tr), _pattern_split(spec, templates, spec.n_test, te)


# -------------------------------------------------------------- assembly

def make_dataset(spec: DatasetSpec, noise: NoiseConfig | None = None) -> Dataset:
    """Generate clean data and corrupt the training labels; test labels stay clean."""
    noise = noise or NoiseConfig()
    spec.validate()
    noise.validate()
    data_ss, noise_ss = np.random.SeedSequence(spec.seed).spawn(2)
    gen = gen_blobs if spec.generator == "blobs" else gen_patterns
    protos, (xtr, ytr, ctr), (xte, yte, cte) = gen(spec, np.random.default_rng(data_ss))
    ds = Dataset(spec, noise, protos, xtr, ytr, ctr, xte, yte, cte)
    set_streams = noise_ss.spawn(len(noise.discrete_rates) + len(noise.continuous_rates))
    for rate, ss in zip(noise.discrete_rates, set_streams):
        noisy, mask = corrupt_discrete(ytr, uniform_flip_matrix(spec.n_classes, rate), np.random.default_rng(ss))
        ds.noisy_discrete.append(noisy)
        ds.flip_masks.append(mask)
    for rate, ss in zip(noise.continuous_rates, set_streams[len(noise.discrete_rates):]):
        noisy, mask = corrupt_continuous(ctr, rate, np.random.default_rng(ss))
        ds.noisy_continuous.append(noisy)
        ds.outlier_masks.append(mask)
    return ds


_ARRAYS = ("prototypes", "x_train", "y_train", "c_train", "x_test", "y_test", "c_test")


def save_dataset(ds: Dataset, path) -> None:
    arrays = {name: getattr(ds, name) for name in _ARRAYS}
    for i, (n, m) in enumerate(zip(ds.noisy_discrete, ds.flip_masks)):
        arrays[f"noisy_discrete.{i}"] = n
        arrays[f"flip_mask.{i}"] = m
    for i, (n, m) in enumerate(zip(ds.noisy_continuous, ds.outlier_masks)):
        arrays[f"noisy_continuous.{i}"] = n
        arrays[f"outlier_mask.{i}"] = m
    meta = {"spec": asdict(ds.spec), "noise": asdict(ds.noise)}
    _container.write(path, DATASET_MAGIC, DATASET_VERSION, meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arrays = _container.read(path, DATASET_MAGIC, DATASET_VERSION)
    spec = DatasetSpec(**meta["spec"])
    noise = NoiseConfig(**meta["noise"])
    try:
        ds = Dataset(spec, noise, *(arrays[name] for name in _ARRAYS))
        for i in range(len(noise.discrete_rates)):
            ds.noisy_discrete.append(arrays[f"noisy_discrete.{i}"])
            ds.flip_masks.append(arrays[f"flip_mask.{i}"])
        for i in range(len(noise.continuous_rates)):
            ds.noisy_continuous.append(arrays[f"noisy_continuous.{i}"])
            ds.outlier_masks.append(arrays[f"outlier_mask.{i}"])
    except KeyError as exc:
        raise _container.FormatError(f"{path}: missing array {exc}") from None
    return ds
