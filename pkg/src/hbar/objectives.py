"""Cross-entropy, the HSIC-bottleneck objective and its adversarial variant."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .kernels import BatchTooSmallError, HsicSpecs, gram, hsic_layers
from .model import Network, forward
from .tensor import ShapeError, Tensor


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class HbarConfig:
    lambda_x: float = 0.0
    lambda_y: float = 0.0
    layer_mask: tuple[int, ...] | None = None  # 1-based layer ids, None = all
    use_ce: bool = True  # False only for the "HSIC terms only" ablation row

    def __post_init__(self):
        if self.lambda_x < 0 or self.lambda_y < 0:
            raise ValueError(f"lambdas must be nonnegative, got ({self.lambda_x}, {self.lambda_y})")
        if self.layer_mask is not None and any(j < 1 for j in self.layer_mask):
            raise ValueError(f"layer ids are 1-based, got {self.layer_mask}")

    def layers(self, depth: int) -> list[int]:
        if self.layer_mask is None:
            return list(range(1, depth + 1))
        bad = [j for j in self.layer_mask if j > depth]
        if bad:
            raise ValueError(f"layer_mask {self.layer_mask} exceeds network depth {depth}")
        return sorted(set(self.layer_mask))


@dataclass
class ObjectiveBreakdown:
    total: Tensor
    ce: Tensor
    sum_hsic_xz: Tensor
    sum_hsic_yz: Tensor
    per_layer_xz: list[float] = field(default_factory=list)
    per_layer_yz: list[float] = field(default_factory=list)
    logits: Tensor | None = None

    def values(self) -> dict[str, float]:
        return {"ce": self.ce.item(), "hsic_xz_sum": self.sum_hsic_xz.item(),
                "hsic_yz_sum": self.sum_hsic_yz.item(), "total": self.total.item()}


def _check_onehot(y: np.ndarray) -> None:
    if y.ndim != 2 or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
        raise ContractError("labels must be one-hot rows")


def cross_entropy(logits: Tensor, y_onehot) -> Tensor:
    """Batch mean of -log softmax(logits)[true class]."""
    y = y_onehot.data if isinstance(y_onehot, Tensor) else np.asarray(y_onehot, dtype=logits.dtype)
    _check_onehot(y)
    if y.shape != logits.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {y.shape}")
    logp = T.log_softmax_rows(logits)
    picked = T.mul(logp, Tensor(y.astype(logits.dtype)))
    return T.scale(T.sum_all(picked), -1.0 / logits.shape[0])


def _zero(dtype) -> Tensor:
    return Tensor(np.zeros(1, dtype=dtype))


def _combine(ce: Tensor | None, hx: list[Tensor], hy: list[Tensor], cfg: HbarConfig,
             dtype) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    sx = _sum(hx, dtype)
    sy = _sum(hy, dtype)
    ce_t = ce if ce is not None else _zero(dtype)
    total = ce_t if ce is not None else None
    if cfg.lambda_x != 0:
        term = T.scale(sx, cfg.lambda_x)
        total = term if total is None else T.add(total, term)
    if cfg.lambda_y != 0:
        term = T.scale(sy, -cfg.lambda_y)
        total = term if total is None else T.add(total, term)
    if total is None:
        total = _zero(dtype)
    return total, ce_t, sx, sy


def _sum(terms: list[Tensor], dtype) -> Tensor:
    if not terms:
        return _zero(dtype)
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return acc


def _hsic_terms(x: np.ndarray, y: np.ndarray, latents: list[Tensor], net: Network,
                cfg: HbarConfig, specs: HsicSpecs):
    ids = cfg.layers(net.depth)
    chosen = [latents[j - 1] for j in ids]
    kx = gram(Tensor(x), specs.x)
    ky = gram(Tensor(y), specs.y)
    return hsic_layers(Tensor(x), Tensor(y), chosen, specs, kx=kx, ky=ky)


def hbar_objective(net: Network, x: np.ndarray, y_onehot: np.ndarray, cfg: HbarConfig,
                   specs: HsicSpecs = HsicSpecs()) -> ObjectiveBreakdown:
    """CE + lambda_x * sum_j HSIC(X, Z_j) - lambda_y * sum_j HSIC(Y, Z_j) on one batch."""
    x = np.asarray(x)
    y_onehot = np.asarray(y_onehot, dtype=x.dtype)
    if x.shape[0] < 2:
        raise BatchTooSmallError(f"HBaR objective needs a batch of at least 2, got {x.shape[0]}")
    trace = forward(net, x)
    ce = cross_entropy(trace.logits, y_onehot) if cfg.use_ce else None
    hx, hy = _hsic_terms(x, y_onehot, trace.latents, net, cfg, specs)
    total, ce_t, sx, sy = _combine(ce, hx, hy, cfg, x.dtype)
    return ObjectiveBreakdown(total, ce_t, sx, sy, [h.item() for h in hx], [h.item() for h in hy],
                              logits=trace.logits)


def hbar_adv_objective(net: Network, x: np.ndarray, y_onehot: np.ndarray, x_adv: np.ndarray,
                       cfg: HbarConfig, specs: HsicSpecs = HsicSpecs()) -> ObjectiveBreakdown:
    """CE on the adversarial batch, HSIC terms on the natural batch and its latents."""
    x = np.asarray(x)
    x_adv = np.asarray(x_adv, dtype=x.dtype)
    y_onehot = np.asarray(y_onehot, dtype=x.dtype)
    if x_adv.shape != x.shape:
        raise ShapeError(f"adversarial batch {x_adv.shape} does not match natural {x.shape}")
    if x.shape[0] < 2:
        raise BatchTooSmallError(f"HBaR objective needs a batch of at least 2, got {x.shape[0]}")
    adv_trace = forward(net, x_adv)
    ce = cross_entropy(adv_trace.logits, y_onehot) if cfg.use_ce else None
    nat_trace = forward(net, x)
    hx, hy = _hsic_terms(x, y_onehot, nat_trace.latents, net, cfg, specs)
    total, ce_t, sx, sy = _combine(ce, hx, hy, cfg, x.dtype)
    return ObjectiveBreakdown(total, ce_t, sx, sy, [h.item() for h in hx], [h.item() for h in hy],
                              logits=adv_trace.logits)
