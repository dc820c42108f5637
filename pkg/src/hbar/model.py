"""Feedforward classifier with per-layer latent taps, plus checkpoint I/O."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

CKPT_MAGIC = b"HBAR-CKPT-v1\n"


class CheckpointError(ValueError):
    pass


@dataclass
class Layer:
    weight: Tensor  # (d_in, d_out)
    bias: Tensor    # (d_out,)
    activation: str = "relu"

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class Network:
    layers: list[Layer]
    seed: int | None = None
    epoch: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.d_out != b.d_in:
                raise ShapeError(f"layer dims do not chain: {a.d_out} -> {b.d_in}")
        if self.layers[-1].activation != "identity":
            raise ValueError("final layer must be linear (logits)")
        for layer in self.layers:
            if layer.activation not in ("relu", "identity"):
                raise ValueError(f"unknown activation {layer.activation!r}")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].d_in] + [l.d_out for l in self.layers]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def copy(self) -> "Network":
        layers = [Layer(Tensor(l.weight.data.copy(), requires_grad=True),
                        Tensor(l.bias.data.copy(), requires_grad=True), l.activation)
                  for l in self.layers]
        return Network(layers, seed=self.seed, epoch=self.epoch)

    def astype(self, dtype) -> "Network":
        layers = [Layer(Tensor(l.weight.data.astype(dtype), requires_grad=True),
                        Tensor(l.bias.data.astype(dtype), requires_grad=True), l.activation)
                  for l in self.layers]
        return Network(layers, seed=self.seed, epoch=self.epoch)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


@dataclass
class ForwardTrace:
    logits: Tensor
    latents: list[Tensor] = field(default_factory=list)


def init(dims: list[int], seed: int, dtype=np.float64) -> Network:
    """He-uniform weights (bound sqrt(6/d_in)), zero biases, ReLU hidden layers."""
    if len(dims) < 2:
        raise ValueError(f"need at least input and output dims, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for j, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        bound = np.sqrt(6.0 / d_in)
        w = rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)
        act = "identity" if j == len(dims) - 2 else "relu"
        layers.append(Layer(Tensor(w, requires_grad=True),
                            Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True), act))
    return Network(layers, seed=seed)


def forward(net: Network, x, track_params: bool = True) -> ForwardTrace:
    """Run the network, keeping every post-activation output.

    With ``track_params=False`` the weights enter the graph as constants, so
    only gradients w.r.t. ``x`` are recorded (used by the attacks).
    """
    h = T.flatten_rows(T.as_tensor(x))
    if h.shape[1] != net.layers[0].d_in:
        raise ShapeError(f"input has {h.shape[1]} features, network expects {net.layers[0].d_in}")
    latents = []
    for layer in net.layers:
        w, b = layer.weight, layer.bias
        if not track_params:
            w, b = Tensor(w.data), Tensor(b.data)
        h = T.add_rowvec(T.matmul(h, w), b)
        if layer.activation == "relu":
            h = T.relu(h)
        latents.append(h)
    return ForwardTrace(logits=latents[-1], latents=latents)


def predict_labels(logits) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(z, axis=1)


def logits_of(net: Network, x: np.ndarray, batch: int = 2048) -> np.ndarray:
    out = [forward(net, x[i:i + batch], track_params=False).logits.data
           for i in range(0, len(x), batch)]
    return np.concatenate(out, axis=0)


def accuracy(net: Network, x: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict_labels(logits_of(net, x)) == labels))


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(net: Network, path: str | Path) -> None:
    """Magic line, one JSON header line, then the parameters as little-endian float64."""
    header = {
        "dims": net.dims,
        "activations": [l.activation for l in net.layers],
        "seed": net.seed,
        "epoch": net.epoch,
        "arrays": [list(p.shape) for p in net.params],
    }
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for p in net.params:
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Network:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: not an HBAR-CKPT-v1 checkpoint")
    rest = raw[len(CKPT_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing header")
    try:
        header = json.loads(rest[:nl])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: bad header ({e})") from None
    body = rest[nl + 1:]
    shapes = [tuple(s) for s in header["arrays"]]
    need = sum(int(np.prod(s)) for s in shapes) * 8
    if len(body) != need:
        raise CheckpointError(f"{path}: expected {need} parameter bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f8")
    arrays, off = [], 0
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(flat[off:off + n].reshape(s).astype(np.float64))
        off += n
    layers = [Layer(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True), act)
              for w, b, act in zip(arrays[::2], arrays[1::2], header["activations"])]
    return Network(layers, seed=header.get("seed"), epoch=header.get("epoch", 0))

