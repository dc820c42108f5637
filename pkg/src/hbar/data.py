"""MNIST IDX ingestion, deterministic subsets and synthetic Gaussian data."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray          # (n, d) float
    labels: np.ndarray     # (n,) int
    k: int = 10
    split: str = "train"
    clamp: tuple[float, float] = (0.0, 1.0)
    gaussian: bool = False  # drawn from N(0, sigma^2 I)

    def __post_init__(self):
        if len(self.x) != len(self.labels):
            raise ValueError(f"{len(self.x)} inputs but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ValueError(f"labels outside 0..{self.k - 1}")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def y_onehot(self) -> np.ndarray:
        return onehot(self.labels, self.k, self.x.dtype)

    def take(self, idx: np.ndarray, split: str | None = None) -> "Dataset":
        return Dataset(self.x[idx], self.labels[idx], self.k, split or self.split,
                       self.clamp, self.gaussian)

    def astype(self, dtype) -> "Dataset":
        return Dataset(self.x.astype(dtype), self.labels, self.k, self.split, self.clamp, self.gaussian)


def onehot(labels: np.ndarray, k: int, dtype=np.float64) -> np.ndarray:
    out = np.zeros((len(labels), k), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except (OSError, EOFError) as e:
        raise IdxFormatError(f"{path}: {e}") from None


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    if len(raw) < 4 + 4 * ndim:
        raise IdxFormatError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    need = int(np.prod(dims))
    if len(body) != need:
        raise IdxFormatError(f"{path}: expected {need} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, k: int = 10, split: str = "train") -> Dataset:
    """Pixels scaled to [0, 1] by /255, images flattened to rows."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), k=k, split=split)


def write_idx(ds: Dataset, images_path, labels_path, side: tuple[int, int] | None = None) -> None:
    """Inverse of :func:`load_idx` for [0, 1] data that was produced by /255."""
    n, d = ds.x.shape
    if side is None:
        r = int(round(np.sqrt(d)))
        side = (r, d // r) if r * (d // r) == d else (1, d)
    pix = np.rint(ds.x * 255.0)
    if pix.min() < 0 or pix.max() > 255:
        raise ValueError("pixel values outside [0, 1]")
    for path, magic, dims, payload in (
        (images_path, IMAGE_MAGIC, (n, *side), pix.astype(np.uint8).tobytes()),
        (labels_path, LABEL_MAGIC, (n,), ds.labels.astype(np.uint8).tobytes()),
    ):
        blob = struct.pack(">I", magic) + struct.pack(">" + "I" * len(dims), *dims) + payload
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as f:
            f.write(blob)


def subset_indices(labels: np.ndarray, n_take: int, seed: int, stratified: bool = True,
                   k: int | None = None, exclude: np.ndarray | None = None) -> np.ndarray:
    n = len(labels)
    pool = np.arange(n)
    if exclude is not None and len(exclude):
        pool = np.setdiff1d(pool, exclude)
    if n_take > len(pool):
        raise ValueError(f"cannot take {n_take} of {len(pool)} samples")
    rng = np.random.default_rng(seed)
    if not stratified:
        return np.sort(rng.permutation(pool)[:n_take])
    k = k if k is not None else int(labels.max()) + 1
    base, extra = divmod(n_take, k)
    # classes that get the +1 are chosen by the same rng
    bonus = set(rng.permutation(k)[:extra].tolist())
    picks = []
    for c in range(k):
        members = pool[labels[pool] == c]
        want = base + (1 if c in bonus else 0)
        if want > len(members):
            raise ValueError(f"class {c} has only {len(members)} samples, need {want}")
        picks.append(rng.permutation(members)[:want])
    return np.sort(np.concatenate(picks))


def subset(ds: Dataset, n_take: int, seed: int, stratified: bool = True,
           split: str | None = None, exclude: np.ndarray | None = None) -> Dataset:
    idx = subset_indices(ds.labels, n_take, seed, stratified, ds.k, exclude)
    return ds.take(idx, split)


def sign_first_coordinate(x: np.ndarray) -> np.ndarray:
    return (x[:, 0] > 0).astype(np.int64)


def synth_gaussian(n: int, d: int, sigma: float = 1.0, labeler=sign_first_coordinate,
                   seed: int = 0, k: int = 2) -> Dataset:
    """X ~ N(0, sigma^2 I), labels from ``labeler``; inputs are not range-limited."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, sigma, size=(n, d))
    return Dataset(x, np.asarray(labeler(x), dtype=np.int64), k=k, split="synthetic",
                   clamp=(-np.inf, np.inf), gaussian=True)


@dataclass
class Splits:
    train: Dataset
    test: Dataset
    probe: Dataset


def default_data_dir() -> Path:
    return Path(os.environ.get("HBAR_DATA_DIR", "data/mnist"))


def _find(directory: Path, name: str) -> Path:
    for cand in (directory / name, directory / (name + ".gz")):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"{name}[.gz] not found in {directory}")


def load_mnist(directory: str | Path | None = None) -> tuple[Dataset, Dataset]:
    directory = Path(directory) if directory else default_data_dir()
    train = load_idx(_find(directory, TRAIN_IMAGES), _find(directory, TRAIN_LABELS), split="train")
    test = load_idx(_find(directory, TEST_IMAGES), _find(directory, TEST_LABELS), split="test")
    return train, test


def desk_splits(train_full: Dataset, test_full: Dataset, n_train: int = 8000, n_test: int = 2000,
                n_probe: int = 512, seed: int = 0, stratified: bool = True) -> Splits:
    """Train subset and a disjoint probe subset from the training file; test from the test file."""
    tr_idx = subset_indices(train_full.labels, n_train, seed, stratified, train_full.k)
    pr_idx = subset_indices(train_full.labels, n_probe, seed + 1, stratified, train_full.k, exclude=tr_idx)
    te_idx = subset_indices(test_full.labels, n_test, seed + 2, stratified, test_full.k)
    return Splits(train_full.take(tr_idx, "train"), test_full.take(te_idx, "test"),
                  train_full.take(pr_idx, "probe"))
