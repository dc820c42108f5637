"""Experiment configuration files.

INI-style ``key = value`` lines grouped into sections; ``#`` starts a
comment.  Unknown sections and keys are rejected so that typos fail loudly.
See ``presets/`` for complete examples and README.md for the key reference.
"""

from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .attacks import AttackConfig
from .kernels import KernelSpec, HsicSpecs
from .objectives import HbarConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, key: str | None = None):
        where = f"line {line}: " if line else ""
        super().__init__(where + msg)
        self.line, self.key = line, key


# key -> (parser, default).  A default of ``None`` means optional.
def _int(v): return int(v)
def _float(v): return float(v)
def _str(v): return v.strip()


def _bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v):
    return [int(p) for p in v.replace(" ", "").split(",") if p]


def _floats(v):
    return [float(p) for p in v.replace(" ", "").split(",") if p]


def _pairs(v):
    out = []
    for item in v.replace(" ", "").split(","):
        if not item:
            continue
        a, b = item.split(":")
        out.append((float(a), float(b)))
    return out


def _schedule(v):
    return [(int(e), m) for e, m in _pairs(v)]


def _mask(v):
    return None if v.strip().lower() == "all" else _ints(v)


def _kernel(v):
    s = v.strip()
    if s == "linear":
        return KernelSpec.linear()
    kind, _, num = s.partition(":")
    if kind == "scaled_sqrt_dim":
        return KernelSpec.gaussian_scaled(float(num))
    if kind == "fixed":
        return KernelSpec.gaussian_fixed(float(num))
    raise ValueError(f"kernel must be linear, fixed:<sigma> or scaled_sqrt_dim:<c>, got {v!r}")


SCHEMA: dict[str, dict[str, tuple]] = {
    "data": {
        "source": (_str, "mnist"),
        "dir": (_str, ""),
        "n_train": (_int, 8000),
        "n_test": (_int, 2000),
        "n_probe": (_int, 512),
        "seed": (_int, 0),
        "stratified": (_bool, True),
        "synth_dim": (_int, 10),
        "synth_sigma": (_float, 1.0),
    },
    "model": {"dims": (_ints, [784, 256, 128, 10])},
    "train": {
        "epochs": (_int, 30),
        "batch_size": (_int, 256),
        "optimizer": (_str, "adam"),
        "learning_rate": (_float, 1e-4),
        "lr_schedule": (_schedule, []),
        "seed": (_int, 0),
        "seeds": (_ints, None),
        "dtype": (_str, "float64"),
        "eval_attack": (_str, None),
    },
    "hbar": {
        "lambda_x": (_float, 0.0),
        "lambda_y": (_float, 0.0),
        "layer_mask": (_mask, None),
        "use_ce": (_bool, True),
        "kernel_x": (_kernel, KernelSpec.gaussian_scaled(5.0)),
        "kernel_y": (_kernel, KernelSpec.linear()),
        "kernel_z": (_kernel, KernelSpec.gaussian_scaled(5.0)),
    },
    "attack": {
        "radius": (_float, 0.3),
        "step_size": (_float, 0.01),
        "steps": (_int, 40),
        "loss": (_str, "cross_entropy"),
        "random_start": (_bool, True),
        "seed": (_int, 0),
    },
    "output": {"dir": (_str, "runs"), "run_name": (_str, "run")},
    "sweep": {"grid": (_pairs, [(1.0, 50.0)])},
    "ablation": {},
    "theorems": {
        "low": (_pairs, [(0.01, 0.5)]),
        "high": (_pairs, [(1.0, 50.0)]),
        "radii": (_floats, [0.05, 0.1, 0.2]),
        "r_fixed": (_float, 0.1),
        "sens_steps": (_int, 20),
        "synth_n_train": (_int, 2000),
        "synth_n_probe": (_int, 512),
        "synth_dims": (_ints, [10, 64, 32, 2]),
        "synth_epochs": (_int, 20),
        "synth_learning_rate": (_float, 1e-3),
    },
}


@dataclass
class ExperimentConfig:
    data: dict
    dims: list[int]
    train: TrainConfig
    seeds: list[int]
    train_attack: AttackConfig | None
    eval_attacks: dict[str, AttackConfig]
    output_dir: Path
    run_name: str
    sweep_grid: list[tuple[float, float]]
    theorems: dict
    source_text: str = ""
    raw: dict = field(default_factory=dict)

    @property
    def data_dir(self) -> Path:
        d = self.data["dir"] or os.environ.get("HBAR_DATA_DIR", "data/mnist")
        return Path(d)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    cur = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return n
            continue
        if key is not None and cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return n
    return None


def _schema_for(section: str) -> dict:
    if section.startswith("attack."):
        return SCHEMA["attack"]
    if section in SCHEMA and section != "attack":
        return SCHEMA[section]
    raise KeyError(section)


def _section_values(cp, text, section) -> dict:
    schema = _schema_for(section)
    out = {}
    present = cp[section] if cp.has_section(section) else {}
    for key in present:
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{section}]",
                              _line_of(text, section, key), key)
    for key, (parse, default) in schema.items():
        if key in present:
            try:
                out[key] = parse(present[key])
            except (ValueError, TypeError) as e:
                raise ConfigError(f"bad value for {section}.{key}: {e}",
                                  _line_of(text, section, key), key) from None
        else:
            out[key] = default
    return out


def resolve_path(spec: str) -> tuple[str, str]:
    """Accepts a file path or ``preset:<name>``; returns (text, label)."""
    if spec.startswith("preset:"):
        name = spec[7:]
        try:
            text = resources.files("hbar.presets").joinpath(f"{name}.cfg").read_text()
        except FileNotFoundError:
            raise ConfigError(f"no preset named {name!r}") from None
        return text, spec
    p = Path(spec)
    try:
        return p.read_text(), str(p)
    except OSError as e:
        raise ConfigError(f"cannot read config {spec}: {e}") from None


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("hbar.presets").iterdir()
                  if p.name.endswith(".cfg"))


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   comment_prefixes=("#", ";"), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise ConfigError(f"syntax error: {e.message if hasattr(e, 'message') else e}", line) from None
    for section in cp.sections():
        try:
            _schema_for(section)
        except KeyError:
            raise ConfigError(f"unknown section [{section}]", _line_of(text, section)) from None

    vals = {s: _section_values(cp, text, s) for s in SCHEMA if s != "attack"}
    attacks = {}
    for section in cp.sections():
        if section.startswith("attack."):
            a = _section_values(cp, text, section)
            try:
                attacks[section[7:]] = AttackConfig(radius=a["radius"], step_size=a["step_size"],
                                                    steps=a["steps"], loss=a["loss"],
                                                    random_start=a["random_start"], seed=a["seed"])
            except ValueError as e:
                raise ConfigError(f"[{section}]: {e}", _line_of(text, section)) from None

    if vals["data"]["source"] not in ("mnist", "synthetic"):
        raise ConfigError("data.source must be mnist or synthetic", _line_of(text, "data", "source"), "source")
    if vals["data"]["source"] == "synthetic":
        for a in list(attacks):
            attacks[a] = AttackConfig(**{**attacks[a].__dict__, "clamp": (float("-inf"), float("inf"))})

    train_attack = attacks.pop("train", None)
    t, h = vals["train"], vals["hbar"]
    if t["eval_attack"] is not None and t["eval_attack"] not in attacks:
        raise ConfigError(f"train.eval_attack names unknown section [attack.{t['eval_attack']}]",
                          _line_of(text, "train", "eval_attack"), "eval_attack")
    dims = vals["model"]["dims"]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ConfigError(f"model.dims must list >= 2 positive sizes, got {dims}",
                          _line_of(text, "model", "dims"), "dims")
    if t["dtype"] not in ("float32", "float64"):
        raise ConfigError("train.dtype must be float32 or float64", _line_of(text, "train", "dtype"), "dtype")
    try:
        hbar = HbarConfig(h["lambda_x"], h["lambda_y"],
                          tuple(h["layer_mask"]) if h["layer_mask"] else None, h["use_ce"])
        if hbar.layer_mask:
            hbar.layers(len(dims) - 1)
        tc = TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"], optimizer=t["optimizer"],
                         learning_rate=t["learning_rate"], lr_schedule=tuple(t["lr_schedule"]),
                         seed=t["seed"], hbar=hbar,
                         kernels=HsicSpecs(h["kernel_x"], h["kernel_y"], h["kernel_z"]),
                         adversarial=train_attack,
                         eval_attack=attacks.get(t["eval_attack"]) if t["eval_attack"] else None,
                         dtype=t["dtype"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    d = vals["data"]
    if d["n_train"] < 2 or d["n_test"] < 1 or d["n_probe"] < 2:
        raise ConfigError("data sizes too small (n_train >= 2, n_test >= 1, n_probe >= 2)")
    return ExperimentConfig(
        data=d, dims=dims, train=tc,
        seeds=t["seeds"] if t["seeds"] else [t["seed"]],
        train_attack=train_attack, eval_attacks=attacks,
        output_dir=Path(vals["output"]["dir"]), run_name=vals["output"]["run_name"],
        sweep_grid=vals["sweep"]["grid"], theorems=vals["theorems"],
        source_text=text, raw=vals,
    )


def load_config(spec: str) -> ExperimentConfig:
    text, _ = resolve_path(spec)
    return parse_config(text)
