import os
from pathlib import Path

import numpy as np
import pytest

from hbar.data import Dataset
from hbar.model import init

DATA_DIR = Path(os.environ.get("HBAR_DATA_DIR", "/root/data/mnist"))


def mnist_available() -> bool:
    return (DATA_DIR / "train-images-idx3-ubyte").exists() or (DATA_DIR / "train-images-idx3-ubyte.gz").exists()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_net():
    return init([4, 8, 5, 3], seed=7)


def blobs(n: int, d: int = 2, k: int = 2, seed: int = 0, spread: float = 3.0) -> Dataset:
    """Well-separated Gaussian blobs for toy training runs."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, spread, size=(k, d))
    labels = np.arange(n) % k
    x = centers[labels] + rng.normal(0, 0.3, size=(n, d))
    return Dataset(x, labels, k=k, clamp=(-np.inf, np.inf))


def layers_of(net):
    """(W, b, activation) triples in plain numpy for the oracles."""
    return [(l.weight.data, l.bias.data, l.activation) for l in net.layers]
