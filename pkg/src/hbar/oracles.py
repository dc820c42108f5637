"""Brute-force reference computations for tests.

Nothing here imports the production modules: kernels, centring, traces,
forward passes and losses are re-derived with explicit Python loops so that
agreement between the two paths means something.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


@dataclass
class OracleResult:
    value: float | np.ndarray
    method: str
    tolerance: float | None = None


def _kernel(kind: str, a, b, sigma: float | None) -> float:
    if kind == "linear":
        return float(sum(ai * bi for ai, bi in zip(a, b)))
    sq = sum((ai - bi) ** 2 for ai, bi in zip(a, b))
    return math.exp(-sq / (2.0 * sigma * sigma))


def _sigma(spec: dict, d: int) -> float | None:
    if spec["kind"] == "linear":
        return None
    if spec.get("sigma") is not None:
        return float(spec["sigma"])
    return float(spec["scale"]) * math.sqrt(d)


def hsic_naive(x, z, spec_x: dict, spec_z: dict) -> OracleResult:
    """Biased HSIC by explicit loops.

    ``spec_*`` are plain dicts: ``{"kind": "gaussian", "sigma": s}``,
    ``{"kind": "gaussian", "scale": c}`` or ``{"kind": "linear"}``.
    """
    x = [list(map(float, np.ravel(r))) for r in x]
    z = [list(map(float, np.ravel(r))) for r in z]
    m = len(x)
    sx, sz = _sigma(spec_x, len(x[0])), _sigma(spec_z, len(z[0]))
    K = [[_kernel(spec_x["kind"], x[i], x[j], sx) for j in range(m)] for i in range(m)]
    L = [[_kernel(spec_z["kind"], z[i], z[j], sz) for j in range(m)] for i in range(m)]
    H = [[(1.0 if i == j else 0.0) - 1.0 / m for j in range(m)] for i in range(m)]

    def mm(A, B):
        return [[sum(A[i][t] * B[t][j] for t in range(m)) for j in range(m)] for i in range(m)]

    P = mm(mm(mm(K, H), L), H)
    tr = sum(P[i][i] for i in range(m))
    return OracleResult(tr / (m - 1) ** 2, "explicit-loop trace")


def grad_fd(f, x, h: float = 1e-5) -> OracleResult:
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return OracleResult(g, "central-difference", h)


def _forward_loops(layers, xrow):
    """layers: list of (W as nested lists d_in x d_out, b list, activation)."""
    h = list(xrow)
    for W, b, act in layers:
        d_out = len(b)
        out = []
        for j in range(d_out):
            s = b[j]
            for i, hi in enumerate(h):
                s += hi * W[i][j]
            out.append(max(s, 0.0) if act == "relu" else s)
        h = out
    return h


def _ce(logits, label):
    mx = max(logits)
    lse = mx + math.log(sum(math.exp(v - mx) for v in logits))
    return lse - logits[label]


def exhaustive_corner_attack(layers, x, label: int, r: float, clamp=(-math.inf, math.inf)) -> OracleResult:
    """Max cross-entropy over the 2^d sign corners of the r-box (plus delta = 0).

    A lower bound on the true sup for nonlinear nets; exact for losses that
    are monotone in a linear score.
    """
    x = [float(v) for v in np.ravel(x)]
    d = len(x)
    if d > 12:
        raise ValueError(f"corner enumeration refused for d={d} > 12")
    layers = [(np.asarray(W).tolist(), np.asarray(b).tolist(), act) for W, b, act in layers]
    best = _ce(_forward_loops(layers, x), label)
    if r > 0:
        for signs in itertools.product((-1.0, 1.0), repeat=d):
            xp = [min(max(xi + s * r, clamp[0]), clamp[1]) for xi, s in zip(x, signs)]
            best = max(best, _ce(_forward_loops(layers, xp), label))
    return OracleResult(best, "corner-enumeration")


def relative_error(a, b, floor: float = 1e-6) -> float:
    """max|a - b| / max(max|a|, max|b|, floor).

    Measured against the scale of the whole gradient rather than entry by
    entry, so entries that are zero analytically do not turn finite-difference
    roundoff into a large ratio.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / den)
