"""Datasets of spatial feature maps with full and partial multi-label targets.

On disk a dataset is a directory::

    manifest.json        {"n", "c", "l", "d", "names", "precision"}
    features.f32         little-endian float32, row-major N x L x D
    labels_full.i8       int8 in {-1, +1}, N x C (optional)
    labels_partial.i8    int8 in {0, +1}, N x C
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

MANIFEST = "manifest.json"
FEATURES = "features.f32"
LABELS_FULL = "labels_full.i8"
LABELS_PARTIAL = "labels_partial.i8"


class DatasetFormatError(ValueError):
    """Raised when files on disk disagree with the manifest."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class Dataset:
    features: np.ndarray  # N x L x D, float32
    partial_labels: np.ndarray  # N x C, int8 in {0, 1}
    full_labels: Optional[np.ndarray] = None  # N x C, int8 in {-1, 1}
    category_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.partial_labels = np.ascontiguousarray(self.partial_labels, dtype=np.int8)
        if self.full_labels is not None:
            self.full_labels = np.ascontiguousarray(self.full_labels, dtype=np.int8)
        if not self.category_names:
            self.category_names = [f"class_{i}" for i in range(self.num_categories)]
        self.validate()

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_locations(self) -> int:
        return self.features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    @property
    def num_categories(self) -> int:
        return self.partial_labels.shape[1]

    def validate(self) -> None:
        if self.features.ndim != 3:
            raise DatasetFormatError("features", f"expected 3 dims (N, L, D), got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.partial_labels.ndim != 2 or self.partial_labels.shape[0] != n:
            raise DatasetFormatError("partial_labels", f"expected shape ({n}, C), got {self.partial_labels.shape}")
        if not np.all(np.isin(self.partial_labels, (0, 1))):
            raise DatasetFormatError("partial_labels", "values must be 0 or 1")
        if not np.all(np.isfinite(self.features)):
            raise DatasetFormatError("features", "non-finite values")
        if len(self.category_names) != self.num_categories:
            raise DatasetFormatError(
                "names", f"expected {self.num_categories} category names, got {len(self.category_names)}"
            )
        if self.full_labels is not None:
            if self.full_labels.shape != self.partial_labels.shape:
                raise DatasetFormatError(
                    "full_labels", f"shape {self.full_labels.shape} != partial shape {self.partial_labels.shape}"
                )
            if not np.all(np.isin(self.full_labels, (-1, 1))):
                raise DatasetFormatError("full_labels", "values must be -1 or +1")
            if np.any((self.partial_labels == 1) & (self.full_labels != 1)):
                raise DatasetFormatError("partial_labels", "observed positive where full label is -1")

    def with_partial(self, partial: np.ndarray) -> "Dataset":
        return Dataset(self.features, partial, self.full_labels, list(self.category_names))

    def subset(self, idx) -> "Dataset":
        full = None if self.full_labels is None else self.full_labels[idx]
        return Dataset(self.features[idx], self.partial_labels[idx], full, list(self.category_names))

    def equals(self, other: "Dataset") -> bool:
        same_full = (self.full_labels is None and other.full_labels is None) or (
            self.full_labels is not None
            and other.full_labels is not None
            and np.array_equal(self.full_labels, other.full_labels)
        )
        return (
            same_full
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.partial_labels, other.partial_labels)
            and self.category_names == other.category_names
        )


@dataclass
class SynthConfig:
    n: int = 2000
    c: int = 10
    l: int = 16
    d: int = 32
    prototypes_seed: int = 0
    noise_sigma: float = 0.3
    max_labels_per_image: int = 3
    category_correlation: float = 0.0

    def validate(self) -> None:
        for name in ("n", "c", "l", "d", "max_labels_per_image"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.max_labels_per_image > self.c:
            raise ValueError(f"max_labels_per_image ({self.max_labels_per_image}) exceeds c ({self.c})")
        if not 0.0 <= self.category_correlation <= 1.0:
            raise ValueError(f"category_correlation must lie in [0, 1], got {self.category_correlation}")


def make_prototypes(config: SynthConfig) -> np.ndarray:
    """C unit-norm prototypes; categories (0,1), (2,3), ... are pulled together by the correlation."""
    rng = np.random.default_rng(config.prototypes_seed)
    protos = rng.standard_normal((config.c, config.d))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    rho = config.category_correlation
    if rho > 0:
        blended = protos.copy()
        for a in range(0, config.c - 1, 2):
            b = a + 1
            blended[a] = (1 - rho / 2) * protos[a] + (rho / 2) * protos[b]
            blended[b] = (1 - rho / 2) * protos[b] + (rho / 2) * protos[a]
        norms = np.linalg.norm(blended, axis=1, keepdims=True)
        protos = blended / norms
    return protos


def generate_synthetic(config: SynthConfig, seed: int) -> Dataset:
    """Draw a dataset whose feature maps contain noisy copies of category prototypes.

    Each sample picks k categories (k uniform in 1..max_labels_per_image).
    Locations are shuffled and dealt round-robin to the chosen categories, so
    each category occupies ceil(L/k) or floor(L/k) of them.
    """
    config.validate()
    if config.max_labels_per_image > config.l:
        raise ValueError(
            f"cannot place up to {config.max_labels_per_image} categories in {config.l} locations"
        )
    protos = make_prototypes(config)
    rng = np.random.default_rng(seed)
    n, c, l, d = config.n, config.c, config.l, config.d
    feats = np.empty((n, l, d), dtype=np.float64)
    full = -np.ones((n, c), dtype=np.int8)
    for i in range(n):
        k = int(rng.integers(1, config.max_labels_per_image + 1))
        cats = rng.choice(c, size=k, replace=False)
        order = rng.permutation(l)
        owner = np.empty(l, dtype=np.int64)
        owner[order] = cats[np.arange(l) % k]
        feats[i] = protos[owner] + (config.noise_sigma / np.sqrt(d)) * rng.standard_normal((l, d))
        full[i, cats] = 1
    partial = (full == 1).astype(np.int8)
    return Dataset(feats.astype(np.float32), partial, full, [f"class_{i}" for i in range(c)])


def _kept_count(keep_proportion: float, positives: int) -> int:
    # round first so that e.g. 0.3 * 10 does not ceil to 4
    return int(math.ceil(round(keep_proportion * positives, 9)))


def drop_labels(full: np.ndarray, keep_proportion: float, seed: int, per_image: bool = False) -> np.ndarray:
    """Keep a random ceil(keep * P) of the P positive entries; everything else becomes 0.

    By default the draw is over all positive (n, c) entries of the dataset;
    ``per_image`` applies the same rule within each row instead.
    """
    if not 0.0 < keep_proportion <= 1.0:
        raise ValueError(f"keep_proportion must lie in (0, 1], got {keep_proportion}")
    full = np.asarray(full)
    if not np.all(np.isin(full, (-1, 1))):
        raise ValueError("full labels must be -1 or +1")
    rng = np.random.default_rng(seed)
    partial = np.zeros(full.shape, dtype=np.int8)
    if per_image:
        for i in range(full.shape[0]):
            pos = np.flatnonzero(full[i] == 1)
            keep = rng.choice(pos, size=_kept_count(keep_proportion, pos.size), replace=False)
            partial[i, keep] = 1
        return partial
    pos = np.flatnonzero(full.reshape(-1) == 1)
    keep = rng.choice(pos, size=_kept_count(keep_proportion, pos.size), replace=False)
    partial.reshape(-1)[keep] = 1
    return partial


def save_dataset(ds: Dataset, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    manifest = {
        "n": ds.num_samples,
        "c": ds.num_categories,
        "l": ds.num_locations,
        "d": ds.feature_dim,
        "names": list(ds.category_names),
        "precision": "f32",
    }
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    ds.features.astype("<f4").tofile(os.path.join(path, FEATURES))
    ds.partial_labels.astype("i1").tofile(os.path.join(path, LABELS_PARTIAL))
    full_path = os.path.join(path, LABELS_FULL)
    if ds.full_labels is not None:
        ds.full_labels.astype("i1").tofile(full_path)
    elif os.path.exists(full_path):
        os.remove(full_path)


def _read_exact(path: str, dtype: str, count: int, field: str) -> np.ndarray:
    expected = count * np.dtype(dtype).itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise DatasetFormatError(field, f"expected {expected} bytes, found {actual} in {os.path.basename(path)}")
    return np.fromfile(path, dtype=dtype)


def load_dataset(path: str) -> Dataset:
    manifest_path = os.path.join(path, MANIFEST)
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    for key in ("n", "c", "l", "d", "names"):
        if key not in manifest:
            raise DatasetFormatError(key, "missing from manifest")
    n, c, l, d = (int(manifest[k]) for k in ("n", "c", "l", "d"))
    if manifest.get("precision", "f32") != "f32":
        raise DatasetFormatError("precision", f"unsupported precision {manifest['precision']!r}")
    if len(manifest["names"]) != c:
        raise DatasetFormatError("names", f"manifest has c={c} but {len(manifest['names'])} names")
    feats = _read_exact(os.path.join(path, FEATURES), "<f4", n * l * d, "features").reshape(n, l, d)
    partial = _read_exact(os.path.join(path, LABELS_PARTIAL), "i1", n * c, "labels_partial").reshape(n, c)
    full = None
    full_path = os.path.join(path, LABELS_FULL)
    if os.path.exists(full_path):
        full = _read_exact(full_path, "i1", n * c, "labels_full").reshape(n, c)
    return Dataset(feats.astype(np.float32), partial, full, list(manifest["names"]))
