"""White-box l-infinity attacks: FGSM, PGD and CW-margin PGD."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .model import Network, forward, predict_labels
from .objectives import cross_entropy
from .tensor import Tensor


@dataclass(frozen=True)
class AttackConfig:
    radius: float = 0.3
    step_size: float = 0.01
    steps: int = 40
    loss: str = "cross_entropy"  # or "cw_margin"
    random_start: bool = True
    clamp: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.loss not in ("cross_entropy", "cw_margin"):
            raise ValueError(f"unknown attack loss {self.loss!r}")
        lo, hi = self.clamp
        if not lo <= hi:
            raise ValueError(f"bad clamp range {self.clamp}")

    @classmethod
    def fgsm(cls, radius: float = 0.3, **kw) -> "AttackConfig":
        return cls(radius=radius, step_size=max(radius, 1e-12), steps=1,
                   random_start=False, **kw)


def cw_margin_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of (best wrong logit - true logit)."""
    m, k = logits.shape
    if k < 2:
        raise ValueError("cw_margin_loss needs at least two classes")
    onehot = _onehot(np.asarray(labels), k, logits.dtype)
    true = T.sum_rows(T.mul(logits, Tensor(onehot)))
    # push the true class out of the running for the max
    shift = np.finfo(logits.dtype).max / 4
    others = T.rowmax(T.sub(logits, Tensor(onehot * shift)))
    return T.mean_all(T.sub(others, true))


def _onehot(labels: np.ndarray, k: int, dtype) -> np.ndarray:
    out = np.zeros((len(labels), k), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def attack_loss(net: Network, x_adv: np.ndarray, labels: np.ndarray, loss: str) -> tuple[float, np.ndarray]:
    """Loss value and its gradient w.r.t. the inputs; network weights are constants."""
    xt = Tensor(x_adv, requires_grad=True)
    logits = forward(net, xt, track_params=False).logits
    if loss == "cross_entropy":
        value = cross_entropy(logits, _onehot(labels, logits.shape[1], logits.dtype))
    else:
        value = cw_margin_loss(logits, labels)
    (g,) = T.grad(value, [xt])
    return value.item(), g


def project(x_adv: np.ndarray, x: np.ndarray, radius: float, clamp: tuple[float, float]) -> np.ndarray:
    """Clip into the l-inf ball around ``x`` and the valid range.

    The result satisfies ``abs(out - x) <= radius`` when evaluated in
    floating point, not just in exact arithmetic.
    """
    delta = np.clip(x_adv - x, -radius, radius)
    return _finish(x, delta, radius, clamp)


def _finish(x: np.ndarray, delta: np.ndarray, radius, clamp) -> np.ndarray:
    out = np.clip(x + delta, clamp[0], clamp[1])
    bad = np.abs(out - x) > radius
    while bad.any():
        out[bad] = np.nextafter(out[bad], x[bad])
        bad = np.abs(out - x) > radius
    return out


def _pgd_core(x, value_and_grad, cfg: AttackConfig, rng: np.random.Generator | None) -> np.ndarray:
    x = np.asarray(x)
    r = x.dtype.type(cfg.radius)
    alpha = x.dtype.type(cfg.step_size)
    if cfg.random_start and r > 0:
        delta = rng.uniform(-cfg.radius, cfg.radius, size=x.shape).astype(x.dtype)
        x_adv = _finish(x, delta, r, cfg.clamp)
    else:
        x_adv = np.clip(x, cfg.clamp[0], cfg.clamp[1]).astype(x.dtype, copy=True)
    if r == 0:
        return x_adv
    delta = x_adv - x
    for _ in range(cfg.steps):
        _, g = value_and_grad(x_adv)
        delta = np.clip(delta + alpha * np.sign(g), -r, r)
        x_adv = _finish(x, delta, r, cfg.clamp)
        delta = x_adv - x
    return x_adv


def maximize(net: Network, x: np.ndarray, objective, cfg: AttackConfig,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Projected sign ascent on ``objective(logits_tensor) -> scalar Tensor``."""
    def value_and_grad(x_adv):
        xt = Tensor(x_adv, requires_grad=True)
        value = objective(forward(net, xt, track_params=False).logits)
        (g,) = T.grad(value, [xt])
        return value.item(), g
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return _pgd_core(x, value_and_grad, cfg, rng)


def fgsm(net: Network, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """x + r * sign(grad), clamped to the valid range; sign(0) = 0."""
    one = replace(cfg, steps=1, step_size=max(cfg.radius, 1e-12), random_start=False)
    return _pgd_core(x, lambda xa: attack_loss(net, xa, labels, one.loss), one, None)


def pgd(net: Network, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
        rng: np.random.Generator | None = None) -> np.ndarray:
    """Sign-gradient ascent projected onto the l-inf ball and the valid range."""
    if cfg.steps < 1:
        raise ValueError("pgd needs at least one step")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return _pgd_core(x, lambda xa: attack_loss(net, xa, labels, cfg.loss), cfg, rng)


def attack(net: Network, x, labels, cfg: AttackConfig, rng=None) -> np.ndarray:
    if cfg.steps == 0:
        return np.asarray(x).copy()
    return pgd(net, x, labels, cfg, rng)


def robust_accuracy(net: Network, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
                    batch: int = 500) -> float:
    """Fraction of points still classified correctly after a per-sample attack."""
    x = np.asarray(x)
    if len(x) == 0:
        raise ValueError("robust_accuracy on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    correct = 0
    for i in range(0, len(x), batch):
        xb, yb = x[i:i + batch], labels[i:i + batch]
        if cfg.radius == 0 or cfg.steps == 0:
            xa = xb
        else:
            xa = attack(net, xb, yb, cfg, rng)
        correct += int(np.sum(predict_labels(forward(net, xa, track_params=False).logits) == yb))
    return correct / len(x)
