"""Synthetic class data and per-device non-IID shards.

Two archetype families are supported:

* hierarchical: labels are grouped into meta-archetypes; a device sees only the
  labels of its meta-archetype, with a fraction ``bias`` of its data from one
  focus label and the rest split evenly over the other labels of the group.
* hypergeometric: the label distribution is the hypergeometric pmf over the
  label index, so archetypes with different success counts lean toward low or
  high labels.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Sequence, Union

import numpy as np

from .model import LabeledBatch
from .seeding import stream


@dataclass(frozen=True)
class Hierarchical:
    meta_labels: tuple[int, ...]
    focus_label: int
    bias: float

    def __post_init__(self):
        object.__setattr__(self, "meta_labels", tuple(sorted(int(x) for x in self.meta_labels)))
        if self.focus_label not in self.meta_labels:
            raise ValueError("focus label must belong to the meta-archetype")
        if not 0.0 <= self.bias <= 1.0:
            raise ValueError(f"bias must lie in [0, 1], got {self.bias}")

    @property
    def tag(self) -> str:
        return f"hier:{self.focus_label}"


@dataclass(frozen=True)
class Hypergeometric:
    N: int
    K: int
    n: int

    def __post_init__(self):
        if not (0 <= self.K <= self.N and 0 <= self.n <= self.N):
            raise ValueError(f"invalid hypergeometric parameters N={self.N} K={self.K} n={self.n}")

    @property
    def tag(self) -> str:
        return f"hyper:K{self.K}"


ArchetypeSpec = Union[Hierarchical, Hypergeometric]


@dataclass
class GlobalDataset:
    """Per-class pools of feature vectors; ``pools[c]`` holds class ``c``."""

    pools: list[np.ndarray]

    @property
    def n_classes(self) -> int:
        return len(self.pools)

    @property
    def dim(self) -> int:
        return self.pools[0].shape[1]

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(p) for p in self.pools])])


@dataclass
class DeviceShard:
    device_id: int
    archetype: ArchetypeSpec
    train: LabeledBatch
    val: LabeledBatch
    test: LabeledBatch
    # global example ids (pool offset + index) backing each split
    ids: dict[str, np.ndarray] = field(default_factory=dict)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.archetype).encode())
        for b in (self.train, self.val, self.test):
            h.update(b.features.tobytes())
            h.update(b.labels.tobytes())
        return h.hexdigest()


def gen_synthetic_classes(
    n_classes: int, dim: int, per_class: int, spread: float, rng: np.random.Generator
) -> GlobalDataset:
    """Isotropic unit-variance Gaussian blobs, one per class.

    Class means are random directions scaled so the typical distance between
    two means is ``spread`` noise standard deviations.
    """
    if n_classes < 2 or dim < 2 or per_class < 1:
        raise ValueError("need n_classes >= 2, dim >= 2, per_class >= 1")
    dirs = rng.normal(size=(n_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = dirs * (spread / np.sqrt(2.0))
    pools = [means[c] + rng.normal(size=(per_class, dim)) for c in range(n_classes)]
    return GlobalDataset(pools)


def load_csv_dataset(path) -> GlobalDataset:
    """Read comma-separated rows of features with the integer label last."""
    feats, labels = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            feats.append([float(v) for v in row[:-1]])
            labels.append(int(float(row[-1])))
    X = np.asarray(feats, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_classes = int(y.max()) + 1
    return GlobalDataset([X[y == c] for c in range(n_classes)])


def hypergeom_pmf_exact(N: int, K: int, n: int, k: int) -> Fraction:
    if k < 0 or k > n or k > K or n - k > N - K:
        return Fraction(0)
    return Fraction(comb(K, k) * comb(N - K, n - k), comb(N, n))


def hypergeom_pmf(N: int, K: int, n: int, k: int) -> float:
    """P(k successes in n draws without replacement from N items with K successes)."""
    return float(hypergeom_pmf_exact(N, K, n, k))


def sample_hypergeom(N: int, K: int, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw success counts by simulating the urn one draw at a time."""
    good = np.full(size, K, dtype=np.int64)
    total = N
    hits = np.zeros(size, dtype=np.int64)
    for _ in range(n):
        u = rng.random(size)
        hit = u * total < good
        hits += hit
        good -= hit
        total -= 1
    return hits


def archetype_label_weights(a: ArchetypeSpec, n_classes: int) -> np.ndarray:
    w = np.zeros(n_classes)
    if isinstance(a, Hierarchical):
        others = [c for c in a.meta_labels if c != a.focus_label]
        w[a.focus_label] = a.bias
        if others:
            w[others] = (1.0 - a.bias) / len(others)
        else:
            w[a.focus_label] = 1.0
        return w
    exact = [Fraction(0)] * n_classes
    for k in range(0, a.n + 1):
        exact[min(k, n_classes - 1)] += hypergeom_pmf_exact(a.N, a.K, a.n, k)
    total = sum(exact)
    return np.array([float(x / total) for x in exact])


def largest_remainder_counts(weights: Sequence[float], total: int) -> np.ndarray:
    """Integer counts proportional to ``weights`` that sum exactly to ``total``.

    Floors first, then hands the leftover units to the largest fractional
    remainders (lowest index first among equal remainders).
    """
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    raw = w * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        rem = raw - counts
        order = np.lexsort((np.arange(len(w)), -rem))
        counts[order[:short]] += 1
    return counts


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def build_device_shards(
    g: GlobalDataset,
    specs: Sequence[ArchetypeSpec],
    samples_per_device: int,
    val_frac: float,
    test_frac: float,
    seed: int,
) -> list[DeviceShard]:
    if not (0 < val_frac < 1 and 0 < test_frac < 1 and val_frac + test_frac < 1):
        raise ValueError("val_frac and test_frac must be in (0, 1) with sum < 1")
    offsets = g.offsets()
    shards = []
    for dev, spec in enumerate(specs):
        rng = stream(seed, "shard", dev)
        counts = largest_remainder_counts(archetype_label_weights(spec, g.n_classes), samples_per_device)
        parts = {"train": [], "val": [], "test": []}
        for label, cnt in enumerate(counts):
            cnt = int(cnt)
            if cnt == 0:
                continue
            pool = g.pools[label]
            if cnt > len(pool):
                raise ValueError(
                    f"device {dev}: needs {cnt} examples of label {label}, pool has {len(pool)}"
                )
            picked = rng.choice(len(pool), size=cnt, replace=False)
            n_val = _half_up(val_frac * cnt)
            n_test = _half_up(test_frac * cnt)
            splits = {
                "val": picked[:n_val],
                "test": picked[n_val:n_val + n_test],
                "train": picked[n_val + n_test:],
            }
            for name, idx in splits.items():
                parts[name].append((label, idx))
        batches, ids = {}, {}
        for name, chunks in parts.items():
            X = [g.pools[lab][idx] for lab, idx in chunks]
            y = [np.full(len(idx), lab, dtype=np.int64) for lab, idx in chunks]
            gid = [offsets[lab] + idx for lab, idx in chunks]
            if not chunks or sum(len(i) for _, i in chunks) == 0:
                raise ValueError(f"device {dev}: empty {name} split; raise samples_per_device")
            batches[name] = LabeledBatch(np.concatenate(X), np.concatenate(y))
            ids[name] = np.concatenate(gid).astype(np.int64)
        shards.append(DeviceShard(dev, spec, batches["train"], batches["val"], batches["test"], ids))
    return shards


def hierarchical_specs(
    n_classes: int = 10,
    n_meta: int = 2,
    devices_per_archetype: int = 3,
    bias: float | None = None,
    bias_range: tuple[float, float] = (0.6, 0.7),
    seed: int = 0,
) -> list[ArchetypeSpec]:
    """One archetype per label, labels split into ``n_meta`` contiguous groups.

    Each device draws its bias from ``Unif(bias_range)`` unless ``bias`` is fixed.
    """
    groups = np.array_split(np.arange(n_classes), n_meta)
    rng = stream(seed, "bias")
    specs: list[ArchetypeSpec] = []
    for group in groups:
        for focus in group:
            for _ in range(devices_per_archetype):
                b = float(bias) if bias is not None else float(rng.uniform(*bias_range))
                specs.append(Hierarchical(tuple(int(x) for x in group), int(focus), b))
    return specs


def hypergeometric_specs(
    N: int = 110,
    Ks: Sequence[int] = (5, 25, 45, 65, 85, 105),
    n: int = 10,
    devices_per_archetype: int = 5,
) -> list[ArchetypeSpec]:
    return [Hypergeometric(N, int(K), n) for K in Ks for _ in range(devices_per_archetype)]
