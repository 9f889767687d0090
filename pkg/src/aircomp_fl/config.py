"""System configuration, learning-rate schedule and validation."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.field}: {self.message}"


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-mixture classification data used when no MNIST files are present."""

    n_features: int = 20
    n_classes: int = 10
    n_train: int = 16000
    n_test: int = 2000
    separation: float = 3.0
    noise: float = 1.0


@dataclass(frozen=True)
class SystemConfig:
    """All scalars of one wireless FL run.

    Budgets left as ``None`` resolve against the model dimension once it is
    known (``with_dimension``): downlink ``10*d``, per-device uplink ``5*d``,
    sum uplink ``K*5*d``. ``eta0=None`` resolves to ``1/(20*E*L)``.
    """

    K: int = 20
    d: int | None = None
    E: int = 5
    B: int = 100
    L: float = 10.0
    eta0: float | None = None
    eta_decay: float = 0.995
    decay_period: int = 30
    sigma_d2: float = 0.01
    sigma_u2: float = 0.01
    p_dl_max: float | None = None
    p_k_max: tuple[float, ...] | None = None
    p_tot: float | None = None
    constraint_mode: str = "individual"
    T: int = 100
    seed: int = 0
    strict_convergence: bool = True

    # learning task and data
    task: str = "logistic"
    hidden: int = 32
    dataset: str = "synthetic"
    mnist_dir: str | None = None
    train_size: int = 16000
    partition: str = "iid"
    sizes: str = "balanced"
    local_size: int = 800
    size_range: tuple[int, int] = (500, 1000)
    num_shards: int = 5
    classes_per_shard: int = 2
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    init_scale: float = 0.01

    # engine / baselines / bound reporting
    skip_unselected: bool = False
    mse_threshold: float | None = None
    inversion_threshold: float = 0.2
    mu2: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.eta0 is None:
            object.__setattr__(self, "eta0", 1.0 / (20.0 * self.E * self.L) if self.E > 0 and self.L > 0 else 0.0)
        if self.p_k_max is not None:
            pk = self.p_k_max
            if np.isscalar(pk):
                pk = (float(pk),) * max(self.K, 0)
            object.__setattr__(self, "p_k_max", tuple(float(v) for v in pk))
        object.__setattr__(self, "size_range", tuple(int(v) for v in self.size_range))
        if isinstance(self.synthetic, dict):
            object.__setattr__(self, "synthetic", SyntheticSpec(**self.synthetic))
        if self.d is not None:
            d = self.d
            if self.p_dl_max is None:
                object.__setattr__(self, "p_dl_max", 10.0 * d)
            if self.p_k_max is None:
                object.__setattr__(self, "p_k_max", (5.0 * d,) * max(self.K, 0))
            if self.p_tot is None:
                object.__setattr__(self, "p_tot", 5.0 * d * self.K)

    def with_dimension(self, d: int) -> "SystemConfig":
        if self.d == d:
            return self
        return dataclasses.replace(self, d=d)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    @property
    def p_k_array(self) -> np.ndarray:
        if self.p_k_max is None:
            raise ConfigError("uplink budgets unresolved: model dimension not set")
        return np.asarray(self.p_k_max, dtype=float)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["p_k_max"] = list(self.p_k_max) if self.p_k_max is not None else None
        out["size_range"] = list(self.size_range)
        return out


def learning_rate(cfg: SystemConfig, t: int) -> float:
    """Step size for round ``t`` (1-based): ``eta0 * decay**floor((t-1)/period)``."""
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    return cfg.eta0 * cfg.eta_decay ** ((t - 1) // cfg.decay_period)


def validate(cfg: SystemConfig) -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    def err(name, msg):
        diags.append(Diagnostic("error", name, msg))

    for name in ("K", "E", "B", "decay_period", "T"):
        if getattr(cfg, name) < 1:
            err(name, "must be an integer >= 1")
    if cfg.d is not None and cfg.d < 1:
        err("d", "must be an integer >= 1")
    if not (cfg.L > 0 and math.isfinite(cfg.L)):
        err("L", "must be positive and finite")
    if not (cfg.eta0 > 0 and math.isfinite(cfg.eta0)):
        err("eta0", "must be positive and finite")
    if not (0 < cfg.eta_decay <= 1):
        err("eta_decay", "must lie in (0, 1]")
    for name in ("sigma_d2", "sigma_u2"):
        v = getattr(cfg, name)
        if not (math.isfinite(v) and v >= 0):
            err(name, "noise power must be finite and >= 0")
    for name in ("p_dl_max", "p_tot"):
        v = getattr(cfg, name)
        if v is not None and not (math.isfinite(v) and v > 0):
            err(name, "power budget must be finite and > 0")
    if cfg.p_k_max is not None:
        pk = np.asarray(cfg.p_k_max, dtype=float)
        if pk.shape != (cfg.K,):
            err("p_k_max", f"expected {cfg.K} budgets, got {pk.size}")
        elif not (np.all(np.isfinite(pk)) and np.all(pk > 0)):
            err("p_k_max", "power budgets must be finite and > 0")
    if cfg.constraint_mode not in ("individual", "sum"):
        err("constraint_mode", "must be 'individual' or 'sum'")
    if cfg.partition not in ("iid", "noniid"):
        err("partition", "must be 'iid' or 'noniid'")
    if cfg.sizes not in ("balanced", "unbalanced"):
        err("sizes", "must be 'balanced' or 'unbalanced'")
    if cfg.task not in ("logistic", "mlp", "quadratic"):
        err("task", "must be 'logistic', 'mlp' or 'quadratic'")
    if cfg.dataset not in ("synthetic", "mnist"):
        err("dataset", "must be 'synthetic' or 'mnist'")
    if cfg.inversion_threshold <= 0:
        err("inversion_threshold", "must be > 0")
    if cfg.mse_threshold is not None and cfg.mse_threshold <= 0:
        err("mse_threshold", "must be > 0")

    if not any(x.level == "error" for x in diags) and cfg.strict_convergence:
        if cfg.eta0 > 1.0 / (20.0 * cfg.E * cfg.L) * (1 + 1e-12):
            diags.append(Diagnostic(
                "warning", "eta0",
                f"eta0={cfg.eta0:g} exceeds 1/(20*E*L)={1.0 / (20 * cfg.E * cfg.L):g}; "
                "contraction factor A(t) < 1 is not guaranteed",
            ))
    return diags


def _field_names() -> set[str]:
    return {f.name for f in dataclasses.fields(SystemConfig)}


def config_from_dict(doc: dict[str, Any]) -> SystemConfig:
    unknown = set(doc) - _field_names()
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    doc = dict(doc)
    if isinstance(doc.get("synthetic"), dict):
        extra = set(doc["synthetic"]) - {f.name for f in dataclasses.fields(SyntheticSpec)}
        if extra:
            raise ConfigError(f"unknown synthetic keys: {sorted(extra)}")
        doc["synthetic"] = SyntheticSpec(**doc["synthetic"])
    for key in ("p_k_max", "size_range"):
        if isinstance(doc.get(key), list):
            doc[key] = tuple(doc[key])
    return SystemConfig(**doc)


def load_config(path: str | Path) -> SystemConfig:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return config_from_dict(doc)
