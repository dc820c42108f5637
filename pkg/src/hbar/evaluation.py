"""Experiment harness: ablation rows, lambda sweeps, robustness tables and
empirical checks of the HSIC-sensitivity theorems."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from . import tensor as T
from .attacks import AttackConfig, maximize, robust_accuracy
from .data import Dataset, Splits
from .kernels import HsicSpecs, gram, hsic
from .model import Network, accuracy, init, logits_of
from .tensor import Tensor
from .trainer import EpochLog, ProbeHsic, TrainConfig, train

log = logging.getLogger(__name__)

# (row id, description, uses CE, uses X-term, uses Y-term)
ABLATION_ROWS = (
    ("i", "L", True, False, False),
    ("ii", "lx*HSIC(X,Z) - ly*HSIC(Y,Z)", False, True, True),
    ("iii", "L + lx*HSIC(X,Z)", True, True, False),
    ("iv", "L - ly*HSIC(Y,Z)", True, False, True),
    ("v", "L + lx*HSIC(X,Z) - ly*HSIC(Y,Z)", True, True, True),
)


def config_snapshot(dims, cfg: TrainConfig, attacks: dict[str, AttackConfig] | None = None) -> dict:
    snap = {"dims": list(dims), "train": _plain(asdict(cfg))}
    if attacks:
        snap["attacks"] = {k: _plain(asdict(v)) for k, v in attacks.items()}
    return snap


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def config_hash(snapshot: dict) -> str:
    blob = json.dumps(snapshot, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SeedResult:
    seed: int
    natural_acc: float
    robust: dict[str, float]
    hsic_xz_M: float
    hsic_yz_M: float
    trace: list[EpochLog] = field(default_factory=list)
    net: Network | None = None


@dataclass
class ExperimentReport:
    name: str
    config: dict
    runs: list[SeedResult]

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.runs]

    def values(self, key: str) -> np.ndarray:
        if key.startswith("robust:"):
            return np.array([r.robust[key[7:]] for r in self.runs])
        return np.array([getattr(r, key) for r in self.runs])

    def mean(self, key: str) -> float:
        return float(np.mean(self.values(key)))

    def std(self, key: str) -> float | None:
        v = self.values(key)
        return float(np.std(v, ddof=1)) if len(v) >= 2 else None

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def robustness_table(net: Network, dataset: Dataset, attacks: dict[str, AttackConfig]) -> list[dict]:
    """Natural accuracy plus one row per configured attack."""
    rows = [{"attack_name": "natural", "r": 0.0, "steps": 0, "step_size": 0.0,
             "loss_variant": "none", "robust_acc": accuracy(net, dataset.x, dataset.labels)}]
    for name, cfg in attacks.items():
        cfg = replace(cfg, clamp=dataset.clamp) if dataset.gaussian else cfg
        rows.append({"attack_name": name, "r": cfg.radius, "steps": cfg.steps,
                     "step_size": cfg.step_size, "loss_variant": cfg.loss,
                     "robust_acc": robust_accuracy(net, dataset.x, dataset.labels, cfg)})
    return rows


def run_experiment(name: str, dims, cfg: TrainConfig, splits: Splits, attacks: dict[str, AttackConfig],
                   seeds, workers: int = 1, keep_nets: bool = False) -> ExperimentReport:
    """Train + evaluate once per seed (network init and shuffling both follow the seed)."""
    def one(seed: int) -> SeedResult:
        run_cfg = replace(cfg, seed=seed)
        net, trace = train(init(dims, seed), splits.train, run_cfg, splits.test, splits.probe)
        table = robustness_table(net, splits.test, attacks)
        hx, hy = ProbeHsic(splits.probe.astype(np.dtype(cfg.dtype)), cfg.kernels)(net)
        log.info("%s seed %d: natural %.4f %s", name, seed, table[0]["robust_acc"],
                 {r["attack_name"]: r["robust_acc"] for r in table[1:]})
        return SeedResult(seed, table[0]["robust_acc"], {r["attack_name"]: r["robust_acc"] for r in table[1:]},
                          hx, hy, trace, net if keep_nets else None)

    seeds = list(seeds)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(one, seeds))
    else:
        runs = [one(s) for s in seeds]
    snap = config_snapshot(dims, cfg, attacks)
    snap["seeds"] = seeds
    return ExperimentReport(name, snap, runs)


def ablation_configs(base: TrainConfig) -> list[tuple[str, str, TrainConfig]]:
    lx, ly = base.hbar.lambda_x, base.hbar.lambda_y
    out = []
    for row, desc, ce, use_x, use_y in ABLATION_ROWS:
        h = replace(base.hbar, lambda_x=lx if use_x else 0.0, lambda_y=ly if use_y else 0.0, use_ce=ce)
        out.append((row, desc, replace(base, hbar=h)))
    return out


def run_ablation(dims, base: TrainConfig, splits: Splits, attacks, seeds, workers: int = 1) -> list[ExperimentReport]:
    """The five objective variants, sharing data, seeds and architecture."""
    reports = []
    for row, desc, cfg in ablation_configs(base):
        rep = run_experiment(row, dims, cfg, splits, attacks, seeds, workers)
        rep.config["objective"] = desc
        reports.append(rep)
    return reports


def run_sensitivity(grid, dims, base: TrainConfig, splits: Splits, attacks, seeds,
                    workers: int = 1) -> list[ExperimentReport]:
    reports = []
    for lx, ly in grid:
        cfg = replace(base, hbar=replace(base.hbar, lambda_x=float(lx), lambda_y=float(ly)))
        reports.append(run_experiment(f"lx={lx!r},ly={ly!r}", dims, cfg, splits, attacks, seeds, workers))
    return reports


# ---------------------------------------------------------------- theorem checks

def _rank_corr(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return float("nan")
    return float(spearmanr(a, b).statistic)


def probe_hsic_xz(net: Network, probe: Dataset, specs: HsicSpecs = HsicSpecs()) -> float:
    kx = gram(Tensor(probe.x), specs.x)
    kz = gram(Tensor(logits_of(net, probe.x)), specs.z)
    return hsic(kx, kz).item()


def output_variance(net: Network, probe: Dataset) -> float:
    """Sum over logit coordinates of the probe-set variance."""
    return float(np.var(logits_of(net, probe.x), axis=0).sum())


def validate_theorem1(models: list[Network], probe: Dataset, specs: HsicSpecs = HsicSpecs(),
                      threshold: float = 0.5) -> dict:
    if len(models) < 3:
        raise ValueError("theorem 1 check needs at least 3 models")
    hs = [probe_hsic_xz(m, probe, specs) for m in models]
    vs = [output_variance(m, probe) for m in models]
    rho = _rank_corr(hs, vs)
    return {"check": "thm1", "hsic_xz_M": hs, "output_variance": vs, "spearman": rho,
            "verdict": "PASS" if rho >= threshold else "FAIL"}


def output_sensitivity(net: Network, data: Dataset, radius: float, steps: int = 20,
                       seed: int = 0) -> float:
    """E|h(x + delta) - h(x)| averaged over logit coordinates, delta found by PGD."""
    if radius == 0:
        return 0.0
    base = logits_of(net, data.x)
    cfg = AttackConfig(radius=radius, step_size=2.5 * radius / steps, steps=steps,
                       random_start=True, clamp=data.clamp, seed=seed)

    def change(logits: Tensor) -> Tensor:
        return T.mean_all(T.absolute(T.sub(logits, Tensor(base))))
    x_adv = maximize(net, data.x, change, cfg)
    return float(np.mean(np.abs(logits_of(net, x_adv) - base)))


def validate_theorem2(models: list[Network], data: Dataset, radii, r_fixed: float = 0.1,
                      specs: HsicSpecs = HsicSpecs(), steps: int = 20, threshold: float = 0.5) -> dict:
    if not data.gaussian:
        raise ValueError("theorem 2 check needs data drawn from synth_gaussian")
    if len(models) < 3:
        raise ValueError("theorem 2 check needs at least 3 models")
    radii = sorted(set([0.0, *radii, r_fixed]))
    sens = [[output_sensitivity(m, data, r, steps) for r in radii] for m in models]
    hs = [probe_hsic_xz(m, data, specs) for m in models]
    col = radii.index(r_fixed)
    rho = _rank_corr(hs, [s[col] for s in sens])
    zero_at_zero = all(s[0] == 0.0 for s in sens)
    monotone = all(all(b >= a for a, b in zip(s, s[1:])) for s in sens)
    ok = rho >= threshold and zero_at_zero and monotone
    return {"check": "thm2", "radii": radii, "sensitivity": sens, "hsic_xz_M": hs,
            "spearman": rho, "zero_at_zero": zero_at_zero, "monotone": monotone,
            "verdict": "PASS" if ok else "FAIL"}
