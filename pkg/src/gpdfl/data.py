"""Synthetic 8x8 digit-like data, client partitioners and poisoning transforms."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError, PartitionError
from .model import Batch

SIDE = 8
N_PIXELS = SIDE * SIDE
N_CLASSES = 10
PARTITION_KINDS = ("iid", "non_overlap", "label_dirichlet", "quantity_dirichlet")
_PROTOTYPE_SEED = 20240101
_MAX_PARTITION_TRIES = 10


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    prototypes: np.ndarray | None = field(default=None, repr=False)
    # positions in the parent dataset; None for generated or augmented data
    index: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        parent = self.index[idx] if self.index is not None else idx
        return Dataset(self.images[idx], self.labels[idx], self.prototypes, parent)

    def with_labels(self, *classes: int) -> "Dataset":
        return self.subset(np.flatnonzero(np.isin(self.labels, classes)))

    def as_batch(self) -> Batch:
        return Batch(self.images, self.labels)


@dataclass(frozen=True)
class PartitionSpec:
    kind: str = "iid"
    alpha: float = 0.1

    def __post_init__(self):
        if self.kind not in PARTITION_KINDS:
            raise ConfigurationError(
                f"unknown partition {self.kind!r}; expected one of {PARTITION_KINDS}", "partition.kind"
            )
        if self.kind.endswith("dirichlet") and not self.alpha > 0:
            raise ConfigurationError("Dirichlet alpha must be positive", "partition.alpha")


@dataclass(frozen=True)
class TriggerSpec:
    pixel_indices: tuple[int, ...]
    trigger_value: float = 1.0
    target_label: int = 0

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.pixel_indices)))
        if not idx:
            raise ConfigurationError("a trigger needs at least one pixel", "attack.trigger")
        if idx[0] < 0 or idx[-1] >= N_PIXELS:
            raise ConfigurationError("trigger pixel outside the 8x8 image", "attack.trigger")
        if not 0.0 <= self.trigger_value <= 1.0:
            raise ConfigurationError("trigger value must lie in [0, 1]", "attack.trigger_value")
        if not 0 <= self.target_label < N_CLASSES:
            raise ConfigurationError("target label out of range", "attack.target_label")
        object.__setattr__(self, "pixel_indices", idx)

    @classmethod
    def nine_pixel(cls, target_label: int = 0, value: float = 1.0) -> "TriggerSpec":
        """3x3 block in the top-left corner."""
        return cls(tuple(r * SIDE + c for r in range(3) for c in range(3)), value, target_label)

    @classmethod
    def one_pixel(cls, target_label: int = 0, value: float = 1.0) -> "TriggerSpec":
        return cls((0,), value, target_label)


def prototypes(n_on: int = 30, background: float = 0.15) -> np.ndarray:
    """The ten fixed class templates, shape (10, 64).

    Each class lights ``n_on`` pixels at 0.7-1.0 over a faint background. The
    top-left 3x3 block stays dark so triggers are out of distribution.
    """
    rng = np.random.default_rng(_PROTOTYPE_SEED)
    reserved = np.zeros((SIDE, SIDE), dtype=bool)
    reserved[:3, :3] = True
    pool = np.flatnonzero(~reserved.ravel())
    order = rng.permutation(pool)
    protos = np.zeros((N_CLASSES, N_PIXELS))
    for k in range(N_CLASSES):
        on = rng.choice(pool, size=n_on, replace=False)
        protos[k, order] = rng.uniform(0.0, background, size=pool.size)
        protos[k, on] = rng.uniform(0.7, 1.0, size=n_on)
    return protos


def generate_dataset(seed: int, n_per_class: int, noise_sigma: float = 0.1) -> Dataset:
    """Prototype-plus-Gaussian-noise images, clipped to [0, 1], in class-major order."""
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be >= 1", "data.n_per_class")
    if noise_sigma < 0:
        raise ConfigurationError("noise_sigma must be >= 0", "data.noise_sigma")
    protos = prototypes()
    labels = np.repeat(np.arange(N_CLASSES), n_per_class)
    images = protos[labels].copy()
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        images += rng.normal(0.0, noise_sigma, size=images.shape)
    np.clip(images, 0.0, 1.0, out=images)
    return Dataset(images, labels, protos)


def _split_by_proportions(idx: np.ndarray, props: np.ndarray) -> list[np.ndarray]:
    cuts = np.round(np.cumsum(props)[:-1] * len(idx)).astype(int)
    return np.split(idx, cuts)


def partition(dataset: Dataset, spec: PartitionSpec, n_clients: int, seed: int) -> list[Dataset]:
    """Split ``dataset`` into ``n_clients`` shards according to ``spec``."""
    if n_clients < 2:
        raise ConfigurationError("need at least two clients", "n_clients")
    classes = np.unique(dataset.labels)
    rng = np.random.default_rng(seed)

    if spec.kind == "non_overlap":
        if n_clients > len(classes):
            raise ConfigurationError(
                f"non_overlap needs n_clients <= {len(classes)} classes", "n_clients"
            )
        groups = np.array_split(classes, n_clients)
        return [
            dataset.subset(rng.permutation(np.flatnonzero(np.isin(dataset.labels, g))))
            for g in groups
        ]

    for _ in range(_MAX_PARTITION_TRIES):
        if spec.kind == "iid":
            parts = np.array_split(rng.permutation(len(dataset)), n_clients)
        elif spec.kind == "quantity_dirichlet":
            # every client is guaranteed one example; the rest follow Dir(alpha)
            props = rng.dirichlet(np.full(n_clients, spec.alpha))
            order = rng.permutation(len(dataset))
            floor, rest = order[:n_clients], order[n_clients:]
            parts = [np.concatenate([floor[k:k + 1], chunk])
                     for k, chunk in enumerate(_split_by_proportions(rest, props))]
        else:
            buckets: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
            for c in classes:
                members = rng.permutation(np.flatnonzero(dataset.labels == c))
                props = rng.dirichlet(np.full(n_clients, spec.alpha))
                for k, chunk in enumerate(_split_by_proportions(members, props)):
                    buckets[k].append(chunk)
            parts = [rng.permutation(np.concatenate(b)) for b in buckets]
        if all(len(p) > 0 for p in parts):
            return [dataset.subset(p) for p in parts]
    raise PartitionError(
        f"{spec.kind} partition left a client empty after {_MAX_PARTITION_TRIES} draws"
    )


def _poison_count(fraction: float, n: int) -> int:
    return int(np.floor(fraction * n + 0.5))


def apply_backdoor(shard: Dataset, trigger: TriggerSpec, poison_fraction: float, seed: int) -> Dataset:
    """Stamp the trigger on round(fraction * N) random examples and relabel them."""
    if not 0.0 <= poison_fraction <= 1.0:
        raise ConfigurationError("poison_fraction must lie in [0, 1]", "attack.poison_fraction")
    k = _poison_count(poison_fraction, len(shard))
    if k == 0:
        return shard
    chosen = np.random.default_rng(seed).choice(len(shard), size=k, replace=False)
    images = shard.images.copy()
    labels = shard.labels.copy()
    rows = chosen[:, None]
    images[rows, np.asarray(trigger.pixel_indices)[None, :]] = trigger.trigger_value
    labels[chosen] = trigger.target_label
    return replace(shard, images=images, labels=labels)


def inject_single_image(shard: Dataset, source_class: int, wrong_label: int, copies: int,
                        seed: int) -> Dataset:
    """Append ``copies`` duplicates of one source_class image, all labelled ``wrong_label``."""
    if copies < 1:
        raise ConfigurationError("copies must be >= 1", "attack.copies")
    candidates = np.flatnonzero(shard.labels == source_class)
    if candidates.size == 0:
        raise InputError(f"shard holds no example of class {source_class}")
    pick = candidates[np.random.default_rng(seed).integers(candidates.size)]
    images = np.vstack([shard.images, np.repeat(shard.images[pick][None, :], copies, axis=0)])
    labels = np.concatenate([shard.labels, np.full(copies, wrong_label, dtype=shard.labels.dtype)])
    return Dataset(images, labels, shard.prototypes, None)


def make_triggered_testset(dataset: Dataset, trigger: TriggerSpec) -> Dataset:
    """Triggered copies of every test image whose label differs from the target.

    Original labels are kept so that attack success can be bookkept per class.
    """
    keep = np.flatnonzero(dataset.labels != trigger.target_label)
    out = dataset.subset(keep)
    images = out.images.copy()
    images[:, np.asarray(trigger.pixel_indices)] = trigger.trigger_value
    return replace(out, images=images)


# Binary export: magic "GPDD", version u32, n_examples u32, n_pixels u32,
# n_classes u32, then images (float64, row-major), labels (int64),
# prototypes (float64; all little-endian).
_MAGIC = b"GPDD"
_HEADER = struct.Struct("<4sIIII")


def save_dataset(dataset: Dataset, path) -> None:
    protos = dataset.prototypes if dataset.prototypes is not None else prototypes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, len(dataset), dataset.images.shape[1], protos.shape[0]))
        fh.write(np.ascontiguousarray(dataset.images, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(protos, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    magic, version, n, p, k = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise InputError(f"{path} is not a dataset file")
    off = _HEADER.size
    images = np.frombuffer(raw, "<f8", n * p, off).reshape(n, p).astype(np.float64)
    off += 8 * n * p
    labels = np.frombuffer(raw, "<i8", n, off).astype(np.int64)
    off += 8 * n
    protos = np.frombuffer(raw, "<f8", k * p, off).reshape(k, p).astype(np.float64)
    return Dataset(images, labels, protos)
