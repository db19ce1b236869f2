"""MNIST IDX ingestion and synthetic classification data."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import rng_for

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class DatasetError(Exception):
    pass


class IdxMagicError(DatasetError):
    pass


class IdxTruncatedError(DatasetError):
    pass


class IdxCountMismatchError(DatasetError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (count, rows, cols) in [0, 1]
    labels: np.ndarray  # (count,) int64
    n_classes: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise IdxCountMismatchError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DatasetError("label outside [0, n_classes)")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def features(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], self.n_classes)


@dataclass
class Splits:
    train: Dataset
    test: Dataset


def _read_bytes(path) -> bytes:
    path = Path(path)
    with (gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")) as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise IdxTruncatedError(f"{what}: file shorter than the magic number")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxMagicError(f"{what}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{what}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxTruncatedError(f"{what}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Parse a big-endian IDX image file and its label file (optionally gzipped)."""
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, str(images_path))
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), n_classes)


def idx_bytes(dataset: Dataset) -> tuple[bytes, bytes]:
    """Serialize back to IDX (pixels are re-quantized to bytes)."""
    pix = np.rint(np.clip(dataset.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    if pix.ndim != 3:
        raise ValueError("IDX images need shape (count, rows, cols)")
    img = struct.pack(">I3I", IMAGES_MAGIC, *pix.shape) + pix.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, len(dataset)) + dataset.labels.astype(np.uint8).tobytes()
    return img, lab


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    img, lab = idx_bytes(dataset)
    for path, data in ((images_path, img), (labels_path, lab)):
        path = Path(path)
        if path.suffix == ".gz":
            # mtime=0 keeps the archive byte-reproducible
            with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
                fh.write(data)
        else:
            path.write_bytes(data)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def data_dir(explicit=None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get("HEMP_DATA_DIR")
    if env:
        return Path(env)
    return Path("data")


def _find(root: Path, stem: str) -> Path:
    for cand in (root / stem, root / f"{stem}.gz", root / "mnist" / stem, root / "mnist" / f"{stem}.gz"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"{stem}[.gz] not found under {root}")


def stratified_subset(dataset: Dataset, count: int, seed: int, name: str) -> Dataset:
    """Seeded class-balanced subsample (as balanced as the class sizes allow)."""
    if count >= len(dataset):
        return dataset
    rng = rng_for(seed, name)
    per_class = [rng.permutation(np.flatnonzero(dataset.labels == c)) for c in range(dataset.n_classes)]
    chosen: list[int] = []
    take = [0] * dataset.n_classes
    # round-robin so the per-class quota differs by at most one
    while len(chosen) < count:
        progressed = False
        for c, pool in enumerate(per_class):
            if len(chosen) >= count:
                break
            if take[c] < pool.size:
                chosen.append(int(pool[take[c]]))
                take[c] += 1
                progressed = True
        if not progressed:
            break
    return dataset.subset(np.sort(np.asarray(chosen)))


def load_mnist(root=None, n_train: int = 2000, n_test: int = 1000, seed: int = 0) -> Splits:
    root = data_dir(root)
    train = load_idx(*(_find(root, f) for f in MNIST_FILES["train"]))
    test = load_idx(*(_find(root, f) for f in MNIST_FILES["test"]))
    return Splits(
        stratified_subset(train, n_train, seed, "mnist.train"),
        stratified_subset(test, n_test, seed, "mnist.test"),
    )


def synth_gaussian_blobs(
    classes: int,
    per_class: int,
    dim: int,
    seed: int,
    spread: float = 0.1,
    center_distance: float = 4.0,
) -> Dataset:
    """Isotropic Gaussian clusters around well-separated random centers.

    Centers are random directions scaled so that every pair is at least
    roughly ``center_distance`` apart; features are returned as images of
    shape (1, dim). Values are not restricted to [0, 1].
    """
    if classes <= 0 or per_class <= 0 or dim <= 0:
        raise ValueError("classes, per_class and dim must be positive")
    rng = rng_for(seed, "synth.blobs")
    if classes <= dim:
        # orthogonal directions: pairwise distance exactly center_distance
        centers = np.eye(dim)[:classes] * (center_distance / np.sqrt(2.0))
    else:
        dirs = rng.normal(size=(classes, dim))
        centers = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * center_distance
    labels = np.repeat(np.arange(classes), per_class)
    x = centers[labels] + spread * rng.normal(size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(x[order].reshape(-1, 1, dim), labels[order].astype(np.int64), classes)


def synth_splits(classes: int = 10, per_class: int = 100, dim: int = 16, seed: int = 0, spread: float = 0.5) -> Splits:
    full = synth_gaussian_blobs(classes, 2 * per_class, dim, seed, spread=spread)
    half = len(full) // 2
    return Splits(full.subset(np.arange(half)), full.subset(np.arange(half, len(full))))
