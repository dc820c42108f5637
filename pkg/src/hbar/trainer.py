"""Minibatch HBaR training, optionally on PGD adversarial examples."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, pgd, robust_accuracy
from .data import Dataset
from .kernels import HsicSpecs, gram, hsic
from .model import Network, accuracy, forward
from .objectives import HbarConfig, hbar_adv_objective, hbar_objective
from .tensor import Tensor

log = logging.getLogger(__name__)


class NumericAbort(FloatingPointError):
    def __init__(self, epoch: int, batch: int, term: str):
        super().__init__(f"non-finite {term} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.term = epoch, batch, term


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 256
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    lr_schedule: tuple[tuple[int, float], ...] = ()
    seed: int = 0
    hbar: HbarConfig = HbarConfig()
    kernels: HsicSpecs = HsicSpecs()
    adversarial: AttackConfig | None = None
    eval_attack: AttackConfig | None = None  # per-epoch robust accuracy, optional
    dtype: str = "float64"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (HSIC needs pairs)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        eps = [e for e, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise ValueError("lr_schedule epochs must be strictly increasing")


@dataclass
class EpochLog:
    epoch: int
    ce: float
    hsic_xz_sum: float
    hsic_yz_sum: float
    total: float
    natural_acc: float
    hsic_xz_M_probe: float
    hsic_yz_M_probe: float
    robust_acc: float | None = None

    def row(self) -> dict:
        out = {k: getattr(self, k) for k in ("epoch", "ce", "hsic_xz_sum", "hsic_yz_sum", "total",
                                            "natural_acc", "hsic_xz_M_probe", "hsic_yz_M_probe")}
        if self.robust_acc is not None:
            out["robust_acc"] = self.robust_acc
        return out


def lr_at(schedule, epoch: int, base: float) -> float:
    lr = base
    for at, mult in schedule:
        if at <= epoch:
            lr *= mult
    return lr


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    for p, g in zip(params, grads):
        p -= lr * g


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class ProbeHsic:
    """HSIC(X, Z_M) and HSIC(Y, Z_M) on a fixed probe batch."""

    def __init__(self, probe: Dataset, specs: HsicSpecs):
        self.x = probe.x
        self.specs = specs
        self.kx = gram(Tensor(probe.x), specs.x)
        self.ky = gram(Tensor(probe.y_onehot), specs.y)

    def __call__(self, net: Network) -> tuple[float, float]:
        net = net if net.layers[0].weight.dtype == self.x.dtype else net.astype(self.x.dtype)
        z = forward(net, self.x, track_params=False).logits
        kz = gram(z, self.specs.z)
        return hsic(self.kx, kz).item(), hsic(self.ky, kz).item()


def _finite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.data)))


def train(net: Network, train_set: Dataset, cfg: TrainConfig, test_set: Dataset | None = None,
          probe_set: Dataset | None = None, callback=None) -> tuple[Network, list[EpochLog]]:
    """Run ``cfg.epochs`` epochs; returns the last-epoch network and one log per epoch."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if cfg.epochs == 0:
        return net, []
    dtype = np.dtype(cfg.dtype)
    net = net.astype(dtype)
    train_set = train_set.astype(dtype)
    test_set = (test_set or train_set).astype(dtype)
    probe = ProbeHsic((probe_set or test_set).astype(dtype), cfg.kernels)
    shuffle_rng = np.random.default_rng(cfg.seed)
    attack_rng = np.random.default_rng([cfg.seed, 1])
    adam = AdamState()
    x_all, y_all, lab_all = train_set.x, train_set.y_onehot, train_set.labels
    n = len(train_set)
    logs: list[EpochLog] = []

    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(cfg.lr_schedule, epoch, cfg.learning_rate)
        order = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for b, start in enumerate(range(0, n, cfg.batch_size), start=1):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            xb, yb = x_all[idx], y_all[idx]
            if cfg.adversarial is not None:
                x_adv = pgd(net, xb, lab_all[idx], cfg.adversarial, attack_rng)
                if np.max(np.abs(x_adv - xb)) > cfg.adversarial.radius:
                    raise AssertionError("adversarial batch left the l-inf ball")
                out = hbar_adv_objective(net, xb, yb, x_adv, cfg.hbar, cfg.kernels)
            else:
                out = hbar_objective(net, xb, yb, cfg.hbar, cfg.kernels)
            if not _finite(out.ce):
                raise NumericAbort(epoch, b, "ce")
            if not (_finite(out.sum_hsic_xz) and _finite(out.sum_hsic_yz)):
                raise NumericAbort(epoch, b, "hsic")
            if not _finite(out.total):
                raise NumericAbort(epoch, b, "total")
            params = net.params
            grads = T.grad(out.total, params)
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise NumericAbort(epoch, b, "gradient")
            arrays = [p.data for p in params]
            if cfg.optimizer == "adam":
                adam_step(arrays, grads, adam, lr)
            else:
                sgd_step(arrays, grads, lr)
            v = out.values()
            sums += (v["ce"], v["hsic_xz_sum"], v["hsic_yz_sum"], v["total"])
            batches += 1
        net.epoch = epoch
        means = sums / max(batches, 1)
        hx, hy = probe(net)
        rob = None
        if cfg.eval_attack is not None:
            rob = robust_accuracy(net, test_set.x, test_set.labels, cfg.eval_attack)
        entry = EpochLog(epoch, *map(float, means), accuracy(net, test_set.x, test_set.labels), hx, hy, rob)
        log.info("epoch %d: ce=%.4f acc=%.4f hsic_xz_M=%.3g hsic_yz_M=%.3g", epoch, entry.ce,
                 entry.natural_acc, hx, hy)
        logs.append(entry)
        if callback is not None:
            callback(entry)
    return net, logs
