"""Dataset ingestion: CIFAR-10 binary batches and MNIST IDX files.

Both loaders validate the wire format strictly (sizes, magics, label ranges)
before use. Batching is epoch-deterministic from a seed, and augmentation
(pad-4 reflect, random crop, horizontal flip) runs on its own generator so
two runs with the same seed see identical pixel streams.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .errors import FormatError

CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)
MNIST_MEAN = (0.1307,)
MNIST_STD = (0.3081,)

_CIFAR_RECORD = 3073
_CIFAR_PER_FILE = 10000
_CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
_CIFAR_TEST_FILES = ["test_batch.bin"]


@dataclass(frozen=True)
class DatasetSpec:
    format: str                    # cifar10 | mnist
    root: str
    split: str                     # train | test
    mean: tuple
    std: tuple
    augment: bool = False


@dataclass
class Batch:
    images: Tensor
    labels: np.ndarray


def data_root(explicit: str | None = None) -> str:
    root = explicit or os.environ.get("DYNSHUFFLE_DATA", "")
    if not root:
        raise FormatError("no dataset root: pass --data-root or set DYNSHUFFLE_DATA")
    return root


def load_cifar10_binary(root: str, split: str):
    """Raw CIFAR-10 records → (images uint8 N×3×32×32, labels int64).

    Each record is 1 label byte + 3072 pixel bytes (R, G, B planes row-major);
    each file holds exactly 10000 records.
    """
    names = _CIFAR_TRAIN_FILES if split == "train" else _CIFAR_TEST_FILES
    images, labels = [], []
    for name in names:
        path = os.path.join(root, name)
        if not os.path.exists(path):
            alt = os.path.join(root, "cifar-10-batches-bin", name)
            if os.path.exists(alt):
                path = alt
            else:
                raise FormatError(f"missing CIFAR-10 file {path}")
        size = os.path.getsize(path)
        if size != _CIFAR_RECORD * _CIFAR_PER_FILE:
            raise FormatError(f"{path}: expected {_CIFAR_RECORD * _CIFAR_PER_FILE} "
                              f"bytes, found {size}")
        raw = np.fromfile(path, dtype=np.uint8).reshape(_CIFAR_PER_FILE, _CIFAR_RECORD)
        lab = raw[:, 0]
        bad = np.where(lab > 9)[0]
        if bad.size:
            offset = int(bad[0]) * _CIFAR_RECORD
            raise FormatError(f"{path}: label byte {int(lab[bad[0]])} > 9 "
                              f"at offset {offset}")
        images.append(raw[:, 1:].reshape(-1, 3, 32, 32))
        labels.append(lab.astype(np.int64))
    return np.concatenate(images), np.concatenate(labels)


def _read_idx(path: str, want_magic: int) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) != 4:
            raise FormatError(f"{path}: truncated IDX header")
        (magic,) = struct.unpack(">I", head)
        if magic != want_magic:
            raise FormatError(f"{path}: bad magic 0x{magic:08x}, "
                              f"expected 0x{want_magic:08x}")
        ndim = magic & 0xFF
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise FormatError(f"{path}: payload {data.size} != header {dims}")
    return data.reshape(dims)


def load_mnist_idx(root: str, split: str):
    """MNIST IDX pair → (images uint8 N×1×28×28, labels int64)."""
    prefix = "train" if split == "train" else "t10k"
    img_path = os.path.join(root, f"{prefix}-images-idx3-ubyte")
    lab_path = os.path.join(root, f"{prefix}-labels-idx1-ubyte")
    images = _read_idx(img_path, 0x00000803)
    labels = _read_idx(lab_path, 0x00000801)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{img_path}: {images.shape[0]} images vs "
                          f"{labels.shape[0]} labels")
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise FormatError(f"{img_path}: expected N×28×28, got {images.shape}")
    if labels.max(initial=0) > 9:
        raise FormatError(f"{lab_path}: label > 9")
    return images[:, None, :, :].copy(), labels.astype(np.int64)


def load_dataset(spec: DatasetSpec):
    if spec.format == "cifar10":
        return load_cifar10_binary(spec.root, spec.split)
    if spec.format == "mnist":
        return load_mnist_idx(spec.root, spec.split)
    raise FormatError(f"unknown dataset format {spec.format!r}")


def default_spec(fmt: str, root: str, split: str, augment: bool) -> DatasetSpec:
    mean, std = (CIFAR_MEAN, CIFAR_STD) if fmt == "cifar10" else (MNIST_MEAN, MNIST_STD)
    return DatasetSpec(format=fmt, root=root, split=split, mean=mean, std=std,
                       augment=augment)


def normalize_augment(images: np.ndarray, labels: np.ndarray, spec: DatasetSpec,
                      rng: np.random.Generator | None = None) -> Batch:
    """uint8 pixels → normalized float batch, with train-time augmentation.

    Augmentation: reflect-pad 4, random crop back to the original extent,
    horizontal flip with probability one half.
    """
    x = images.astype(np.float32) / 255.0
    n, c, h, w = x.shape
    if spec.augment:
        if rng is None:
            raise FormatError("augmentation requires a random generator")
        pad = 4
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
        rows = rng.integers(0, 2 * pad + 1, size=n)
        cols = rng.integers(0, 2 * pad + 1, size=n)
        flips = rng.random(n) < 0.5
        out = np.empty((n, c, h, w), dtype=np.float32)
        for i in range(n):
            crop = x[i, :, rows[i]:rows[i] + h, cols[i]:cols[i] + w]
            out[i] = crop[:, :, ::-1] if flips[i] else crop
        x = out
    mean = np.asarray(spec.mean, dtype=np.float32).reshape(1, c, 1, 1)
    std = np.asarray(spec.std, dtype=np.float32).reshape(1, c, 1, 1)
    x = (x - mean) / std
    return Batch(images=Tensor(x), labels=labels)


def batch_iterator(count: int, batch_size: int, seed: int, shuffle_order: bool):
    """Deterministic index batches; the last partial batch is kept."""
    if batch_size < 1:
        raise FormatError(f"batch size must be ≥ 1, got {batch_size}")
    order = np.arange(count)
    if shuffle_order:
        np.random.default_rng(seed).shuffle(order)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


class ArrayDataset:
    """Images+labels with a deterministic per-epoch batch stream."""

    def __init__(self, images: np.ndarray, labels: np.ndarray, spec: DatasetSpec,
                 seed: int = 0, limit: int | None = None):
        if limit is not None:
            images, labels = images[:limit], labels[:limit]
        self.images = images
        self.labels = labels
        self.spec = spec
        self.seed = seed

    def __len__(self):
        return len(self.labels)

    def steps(self, batch_size: int) -> int:
        return -(-len(self.labels) // batch_size)

    def batches(self, batch_size: int, epoch: int = 0, shuffle_order: bool = True):
        mix = np.random.default_rng((self.seed, epoch, 0xA5)).integers(2 << 30)
        aug_rng = np.random.default_rng((self.seed, epoch, 0x5A))
        for idx in batch_iterator(len(self), batch_size, mix, shuffle_order):
            batch = normalize_augment(self.images[idx], self.labels[idx],
                                      self.spec, aug_rng)
            yield batch.images, batch.labels
