"""Kernel Gram matrices and the biased empirical HSIC estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class BatchTooSmallError(ValueError):
    pass


class KernelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """``kind`` is "gaussian" or "linear".

    For gaussian kernels the bandwidth is either ``sigma`` (fixed) or
    ``scale * sqrt(d)`` with ``d`` the flattened feature dimension of the
    input, resolved at call time.
    """

    kind: str = "gaussian"
    sigma: float | None = None
    scale: float | None = 5.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear"):
            raise KernelConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian":
            if (self.sigma is None) == (self.scale is None):
                raise KernelConfigError("gaussian kernel needs exactly one of sigma / scale")
            if self.sigma is not None and not self.sigma > 0:
                raise KernelConfigError(f"sigma must be > 0, got {self.sigma}")
            if self.scale is not None and not self.scale > 0:
                raise KernelConfigError(f"sigma scale must be > 0, got {self.scale}")

    @classmethod
    def gaussian_fixed(cls, sigma: float) -> "KernelSpec":
        return cls("gaussian", sigma=sigma, scale=None)

    @classmethod
    def gaussian_scaled(cls, c: float = 5.0) -> "KernelSpec":
        return cls("gaussian", sigma=None, scale=c)

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls("linear", sigma=None, scale=None)

    def resolve_sigma(self, d: int) -> float:
        if self.kind != "gaussian":
            raise KernelConfigError("linear kernels have no bandwidth")
        sigma = self.sigma if self.sigma is not None else self.scale * math.sqrt(d)
        if not sigma > 0:
            raise KernelConfigError(f"resolved sigma must be > 0, got {sigma}")
        return sigma

    def describe(self) -> str:
        if self.kind == "linear":
            return "linear"
        if self.sigma is not None:
            return f"fixed:{self.sigma!r}"
        return f"scaled_sqrt_dim:{self.scale!r}"


@dataclass
class GramMatrix:
    values: Tensor
    spec: KernelSpec
    m: int

    def numpy(self) -> np.ndarray:
        return self.values.data


def gram(samples: Tensor, spec: KernelSpec) -> GramMatrix:
    samples = T.flatten_rows(T.as_tensor(samples))
    m, d = samples.shape
    if m < 2:
        raise BatchTooSmallError(f"kernel matrices need at least 2 samples, got {m}")
    if spec.kind == "linear":
        k = T.matmul(samples, T.transpose(samples))
    else:
        sigma = spec.resolve_sigma(d)
        k = T.exp(T.scale(T.sq_dists(samples), -1.0 / (2.0 * sigma * sigma)))
    return GramMatrix(k, spec, m)


def centering(m: int, dtype=np.float64) -> Tensor:
    if m < 1:
        raise ValueError(f"centering matrix needs m >= 1, got {m}")
    return Tensor(np.eye(m, dtype=dtype) - np.full((m, m), 1.0 / m, dtype=dtype))


def hsic(ka: GramMatrix | Tensor, kb: GramMatrix | Tensor) -> Tensor:
    """``tr(Ka H Kb H) / (m-1)^2``.

    Evaluated as the elementwise inner product of the two double-centred
    Grams (H is idempotent), which keeps the cost at O(m^2) and makes the
    result exactly symmetric in its arguments.
    """
    a = ka.values if isinstance(ka, GramMatrix) else ka
    b = kb.values if isinstance(kb, GramMatrix) else kb
    if a.shape != b.shape or a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"hsic: Gram shapes {a.shape} and {b.shape} do not match")
    m = a.shape[0]
    if m < 2:
        raise BatchTooSmallError(f"HSIC needs at least 2 samples, got {m}")
    inner = T.sum_all(T.mul(T.center(a), T.center(b)))
    return T.scale(inner, 1.0 / (m - 1) ** 2)


@dataclass(frozen=True)
class HsicSpecs:
    """Kernels for inputs, labels and latents (Gaussian / linear / Gaussian by default)."""

    x: KernelSpec = KernelSpec.gaussian_scaled(5.0)
    y: KernelSpec = KernelSpec.linear()
    z: KernelSpec = KernelSpec.gaussian_scaled(5.0)


def hsic_layers(x, y, latents, specs: HsicSpecs = HsicSpecs(),
                kx: GramMatrix | None = None, ky: GramMatrix | None = None):
    """Per-layer HSIC(X, Z_j) and HSIC(Y, Z_j).

    ``kx``/``ky`` may be passed in when the caller already has them (the
    input and label Grams do not depend on the parameters).
    """
    if not latents:
        raise ValueError("hsic_layers needs at least one latent")
    x = T.as_tensor(x)
    y = T.as_tensor(y)
    m = x.shape[0]
    if y.shape[0] != m or any(z.shape[0] != m for z in latents):
        raise ShapeError("hsic_layers: batch dimensions differ")
    if kx is None:
        kx = gram(x, specs.x)
    if ky is None:
        ky = gram(y, specs.y)
    hx, hy = [], []
    for z in latents:
        kz = gram(z, specs.z)
        hx.append(hsic(kx, kz))
        hy.append(hsic(ky, kz))
    return hx, hy
