"""Dataset ingestion, synthetic data generation, and sample/feature partitioners."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError
from .numerics import SeededRng

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801
_DATA_STREAM = 1_000_002


@dataclass
class RawDataset:
    """Feature matrix (N x P, values in [0, 1]) with one-hot labels (N x L)."""

    features: np.ndarray
    labels: np.ndarray
    provenance: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("features and labels must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"row count mismatch: {self.features.shape[0]} features vs {self.labels.shape[0]} labels"
            )
        if self.features.size and (self.features.min() < 0.0 or self.features.max() > 1.0):
            raise ValueError("feature values must lie in [0, 1]")
        onehot = np.isin(self.labels, (0.0, 1.0)).all() and np.all(self.labels.sum(axis=1) == 1.0)
        if not onehot:
            raise ValueError("labels must be exactly one-hot")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def p_features(self) -> int:
        return self.features.shape[1]

    @property
    def l_classes(self) -> int:
        return self.labels.shape[1]


def _read_file(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(str(exc), path=str(path), offset=0) from exc


def _read_header(raw: bytes, path, expect_magic: int, n_dims: int) -> tuple[int, ...]:
    need = 4 * (1 + n_dims)
    if len(raw) < need:
        raise IngestionError(
            f"truncated header: need {need} bytes, file has {len(raw)}", path=str(path), offset=len(raw)
        )
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expect_magic:
        raise IngestionError(
            f"bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}", path=str(path), offset=0
        )
    return struct.unpack_from(f">{n_dims}I", raw, 4)


def load_idx(images_path, labels_path) -> RawDataset:
    """Load an IDX image/label file pair into a normalized dataset.

    Pixel bytes are scaled by 1/255; labels are one-hot encoded with the
    class count inferred as max label + 1.
    """
    img_raw = _read_file(images_path)
    count, rows, cols = _read_header(img_raw, images_path, _IMAGE_MAGIC, 3)
    pixel_bytes = count * rows * cols
    if len(img_raw) < 16 + pixel_bytes:
        raise IngestionError(
            f"truncated pixel data: need {16 + pixel_bytes} bytes, file has {len(img_raw)}",
            path=str(images_path),
            offset=len(img_raw),
        )
    if count == 0:
        raise IngestionError("image file declares zero samples", path=str(images_path), offset=4)
    features = np.frombuffer(img_raw, np.uint8, pixel_bytes, 16).reshape(count, rows * cols) / 255.0

    lbl_raw = _read_file(labels_path)
    (lbl_count,) = _read_header(lbl_raw, labels_path, _LABEL_MAGIC, 1)
    if lbl_count != count:
        raise IngestionError(
            f"image/label count mismatch: {count} images vs {lbl_count} labels",
            path=str(labels_path),
            offset=4,
        )
    if len(lbl_raw) < 8 + lbl_count:
        raise IngestionError(
            f"truncated label data: need {8 + lbl_count} bytes, file has {len(lbl_raw)}",
            path=str(labels_path),
            offset=len(lbl_raw),
        )
    raw_labels = np.frombuffer(lbl_raw, np.uint8, lbl_count, 8)
    l_classes = int(raw_labels.max()) + 1
    labels = np.eye(l_classes)[raw_labels]
    return RawDataset(features, labels, provenance=f"idx({images_path}, {labels_path})")


def synth_dataset(
    seed: int, n_samples: int, p_features: int, l_classes: int, separation: float
) -> tuple[RawDataset, RawDataset]:
    """Gaussian class clusters squashed into [0, 1]; returns (train, test).

    Class l is centered at separation times the l-th coordinate direction
    before unit-variance noise and a logistic squash. Labels are balanced and
    the whole construction is deterministic per seed. The train split has
    exactly n_samples rows; the test split holds out an extra n_samples // 4
    rows (20 percent of the total).
    """
    if min(n_samples, p_features, l_classes) < 1:
        raise ValueError("n_samples, p_features, l_classes must all be >= 1")
    if l_classes > p_features:
        raise ValueError(
            f"need one coordinate direction per class: l_classes={l_classes} > p_features={p_features}"
        )
    gen = SeededRng(seed, _DATA_STREAM).gen
    total = n_samples + n_samples // 4
    label_ids = np.arange(total) % l_classes
    means = separation * np.eye(l_classes, p_features)
    raw = means[label_ids] + gen.normal(size=(total, p_features))
    squashed = 1.0 / (1.0 + np.exp(-raw))
    perm = gen.permutation(total)
    squashed, label_ids = squashed[perm], label_ids[perm]
    onehot = np.eye(l_classes)[label_ids]
    tag = f"synthetic(seed={seed}, n={n_samples}, p={p_features}, l={l_classes}, separation={separation})"
    train = RawDataset(squashed[:n_samples], onehot[:n_samples], provenance=tag)
    test = RawDataset(squashed[n_samples:], onehot[n_samples:], provenance=tag + " test")
    return train, test


def _balanced_blocks(total: int, n_parts: int) -> list[int]:
    base, extra = divmod(total, n_parts)
    return [base + 1 if i < extra else base for i in range(n_parts)]


def partition_samples(
    n_total: int, n_clients: int, sizes: list[int] | None = None
) -> list[np.ndarray]:
    """Contiguous disjoint sample-index blocks, one per client.

    Balanced by default (sizes differ by at most one, remainder to the
    lowest-id clients); explicit sizes must be positive and sum to n_total.
    """
    if n_clients < 1 or n_clients > n_total:
        raise ValueError(f"need 1 <= n_clients <= n_total, got {n_clients} clients for {n_total}")
    if sizes is None:
        sizes = _balanced_blocks(n_total, n_clients)
    else:
        sizes = [int(s) for s in sizes]
        if len(sizes) != n_clients:
            raise ValueError(f"expected {n_clients} sizes, got {len(sizes)}")
        if any(s < 1 for s in sizes):
            raise ValueError("every client needs at least one sample")
        if sum(sizes) != n_total:
            raise ValueError(f"sizes sum to {sum(sizes)}, expected {n_total}")
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [np.arange(edges[i], edges[i + 1], dtype=np.int64) for i in range(n_clients)]


def partition_features(p_total: int, n_clients: int) -> list[np.ndarray]:
    """Contiguous disjoint feature-index blocks, balanced with remainder to low ids."""
    if n_clients < 1 or n_clients > p_total:
        raise ValueError(f"need 1 <= n_clients <= p_total, got {n_clients} clients for {p_total}")
    sizes = _balanced_blocks(p_total, n_clients)
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [np.arange(edges[i], edges[i + 1], dtype=np.int64) for i in range(n_clients)]
