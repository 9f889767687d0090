"""One communication round of wireless federated averaging, and the outer loop.

A round is: broadcast the global model over the noisy downlink, run E local
SGD steps on every device, then aggregate over the air with weights
proportional to ``a_k p_k``. Every random draw comes from a keyed stream
(see ``rng``), so the same seed gives the same channels, noise and batches
for every scheme.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import optimizer
from .channels import ChannelDraw, gaussian_vector, round_channels
from .config import ConfigError, SystemConfig, learning_rate
from .data import (
    Dataset, Partition, balanced_sizes, load_mnist, partition_iid, partition_noniid,
    sample_minibatch, stratified_subset, synthetic_classification, unbalanced_sizes,
)
from .rng import SERVER, Purpose, stream
from .tasks import LearningTask, QuadraticTask, logistic_task, quadratic_task, tiny_mlp_task

SCHEMES = ("proposed", "fedavg-ideal", "mse-threshold", "truncated-inversion")

# relative slack on power checks; covers rounding in p^2 ||w||^2 / |h|^2
POWER_RTOL = 1e-8


class EngineError(RuntimeError):
    pass


class DivergenceError(EngineError):
    pass


class PowerBudgetError(EngineError):
    pass


@dataclass
class LocalUpdate:
    w_E: np.ndarray
    norm2: float

    @classmethod
    def of(cls, w: np.ndarray) -> "LocalUpdate":
        return cls(w_E=w, norm2=float(w @ w))


@dataclass
class PowerDecision:
    p_s: float
    p: np.ndarray
    a: np.ndarray

    @property
    def sum_ap(self) -> float:
        return float(np.sum(self.a * self.p))

    @property
    def rho(self) -> np.ndarray:
        ap = self.a * self.p
        if not ap.sum() > 0:
            raise EngineError("no device transmits: sum of a_k p_k is zero")
        # normalise by the largest term first so equal powers give exactly 1/n, as q_k does
        ap = ap / ap.max()
        return ap / ap.sum()


@dataclass
class RoundRecord:
    round: int
    test_acc: float
    train_loss: float
    num_selected: int
    ps: float
    sum_ap: float
    sdp_obj: float
    term_a: float
    term_b: float
    term_c: float
    term_d: float
    A_t: float
    wall_ms: float = 0.0
    skipped: bool = False

    @property
    def G(self) -> float:
        return self.term_a + self.term_b + self.term_c + self.term_d


@dataclass
class FederatedSetup:
    """Everything a run needs besides the scheme: config, task, data and partition."""

    cfg: SystemConfig
    task: LearningTask
    train: Dataset
    test: Dataset
    partition: Partition
    mu2: float = 0.0
    delta: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def q(self) -> np.ndarray:
        return self.partition.q


def worker_count() -> int:
    try:
        n = int(os.environ.get("AIRCOMP_FL_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


# --- building a setup -------------------------------------------------------

def quadratic_dataset(n: int, d: int, rng: np.random.Generator, spread: float = 1.0) -> Dataset:
    """Sample offsets for the quadratic task, centred so their mean is exactly zero."""
    X = spread * rng.standard_normal((n, d))
    X -= X.mean(axis=0)
    return Dataset(X, np.zeros(n, dtype=np.int64))


def _local_sizes(cfg: SystemConfig) -> np.ndarray:
    if cfg.sizes == "balanced":
        return balanced_sizes(cfg.K, cfg.local_size)
    lo, hi = cfg.size_range
    return unbalanced_sizes(cfg.K, lo, hi, stream(cfg.seed, Purpose.PARTITION, 0, 1))


def build_setup(cfg: SystemConfig) -> FederatedSetup:
    """Load or generate data, partition it and instantiate the task.

    The returned config has ``d`` (and hence default budgets) resolved.
    """
    sizes = _local_sizes(cfg)
    data_rng = stream(cfg.seed, Purpose.DATA)
    if cfg.task == "quadratic":
        d = cfg.synthetic.n_features
        task = quadratic_task(d, data_rng)
        train = quadratic_dataset(int(sizes.sum()), d, data_rng)
        test = quadratic_dataset(max(cfg.synthetic.n_test, 2), d, data_rng)
    else:
        if cfg.dataset == "mnist":
            if cfg.mnist_dir is None:
                raise ConfigError("dataset 'mnist' needs mnist_dir")
            full, test = load_mnist(cfg.mnist_dir)
            train = stratified_subset(full, min(cfg.train_size, full.size), data_rng)
            n_classes = 10
        else:
            sp = cfg.synthetic
            train, centers = synthetic_classification(
                sp.n_train, sp.n_features, sp.n_classes, data_rng, sp.separation, sp.noise)
            test, _ = synthetic_classification(
                sp.n_test, sp.n_features, sp.n_classes, data_rng, sp.separation, sp.noise, centers)
            n_classes = sp.n_classes
        n = train.inputs.shape[1]
        task = logistic_task(n, n_classes) if cfg.task == "logistic" else tiny_mlp_task(n, cfg.hidden, n_classes)
    part_rng = stream(cfg.seed, Purpose.PARTITION)
    if cfg.partition == "iid":
        part = partition_iid(train, cfg.K, sizes, part_rng)
    else:
        part = partition_noniid(train, cfg.K, sizes, part_rng, cfg.num_shards, cfg.classes_per_shard)
    cfg = cfg.with_dimension(task.dim)
    mu2 = cfg.mu2 if cfg.mu2 is not None else 0.0
    delta = cfg.delta if cfg.delta is not None else 0.0
    return FederatedSetup(cfg=cfg, task=task, train=train, test=test, partition=part, mu2=mu2, delta=delta)


# --- round primitives ---------------------------------------------------------

def downlink_amplitude(w: np.ndarray, cfg: SystemConfig) -> float:
    """Broadcast at full power: ``p_s^2 = P_dl / ||w||^2``."""
    n2 = float(w @ w)
    if not n2 > 0:
        raise EngineError("cannot broadcast an all-zero global model at finite power")
    return float(np.sqrt(cfg.p_dl_max / n2))


def broadcast_and_estimate(w: np.ndarray, p_s: float, h_dl_k: complex, a_k: int,
                           cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Device-side estimate of the global model after the noisy downlink.

    The received signal is descaled by ``p_s h``; what remains is ``w`` plus a
    real Gaussian vector with per-entry variance ``sigma_d^2 / (p_s^2 |h|^2)``.
    An idle device (``a_k = 0``) gets ``w`` back and consumes no randomness.
    """
    if p_s * p_s * float(w @ w) > cfg.p_dl_max * (1.0 + POWER_RTOL):
        raise PowerBudgetError(f"downlink power {p_s * p_s * float(w @ w):.6g} exceeds {cfg.p_dl_max:.6g}")
    if not a_k:
        return w.copy()
    g = abs(h_dl_k) ** 2
    if not (p_s > 0 and g > 0):
        raise EngineError("selected device needs p_s > 0 and a nonzero downlink channel")
    return w + gaussian_vector(rng, w.size, cfg.sigma_d2 / (p_s * p_s * g))


def local_sgd(w0: np.ndarray, task: LearningTask, dataset: Dataset, partition: Partition, k: int,
              E: int, B: int, eta: float, rng: np.random.Generator) -> LocalUpdate:
    """Exactly ``E`` mini-batch SGD steps on device ``k``, each with a fresh batch."""
    if E < 1 or B < 1:
        raise ValueError("E and B must be >= 1")
    w = np.array(w0, dtype=float, copy=True)
    for _ in range(E):
        idx = sample_minibatch(partition, k, B, rng)
        X, y = dataset.take(idx)
        g = task.gradient(w, X, y)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient on device {k}")
        w = w - eta * g
    if not np.all(np.isfinite(w)):
        raise DivergenceError(f"local model on device {k} diverged")
    return LocalUpdate.of(w)


def _weighted_sum(weights: np.ndarray, vectors) -> np.ndarray:
    # fixed left-to-right order, shared by every scheme so equal weights give equal sums
    out = np.zeros_like(vectors[0], dtype=float)
    for wk, v in zip(weights, vectors):
        if wk != 0:
            out += wk * v
    return out


def check_uplink_power(decision: PowerDecision, norm2: np.ndarray, gain_up: np.ndarray,
                       cfg: SystemConfig) -> np.ndarray:
    """Per-mode power usage; raises if any budget is exceeded beyond ``POWER_RTOL``."""
    ap = decision.a * decision.p
    used = ap * ap * norm2 / gain_up
    if cfg.constraint_mode == "individual":
        budget = cfg.p_k_array
        if np.any(used > budget * (1.0 + POWER_RTOL)):
            k = int(np.argmax(used / budget))
            raise PowerBudgetError(f"device {k} uses {used[k]:.6g} of budget {budget[k]:.6g}")
        return used
    tot = float(used.sum())
    if tot > cfg.p_tot * (1.0 + POWER_RTOL):
        raise PowerBudgetError(f"sum uplink power {tot:.6g} exceeds {cfg.p_tot:.6g}")
    return used


def aircomp_aggregate(updates: list[LocalUpdate], decision: PowerDecision, channels: ChannelDraw,
                      cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """``sum_k rho_k w_k^E`` plus uplink noise of per-entry variance ``sigma_u^2 / (sum a p)^2``."""
    if decision.sum_ap <= 0:
        raise EngineError("all-zero selection: nothing to aggregate")
    norm2 = np.array([u.norm2 for u in updates])
    check_uplink_power(decision, norm2, channels.gain_up, cfg)
    rho = decision.rho
    out = _weighted_sum(rho, [u.w_E for u in updates])
    sap = decision.sum_ap
    return out + gaussian_vector(rng, out.size, cfg.sigma_u2 / (sap * sap))


# --- rounds --------------------------------------------------------------------

def local_round(w: np.ndarray, t: int, setup: FederatedSetup, p_s: float | None,
                channels: ChannelDraw | None, active=None) -> list[LocalUpdate | None]:
    """Broadcast to every device (or only ``active`` ones) and run local SGD.

    With ``p_s=None`` the downlink is ideal. Devices outside ``active`` get
    ``None`` and draw nothing.
    """
    cfg = setup.cfg
    eta = learning_rate(cfg, t)
    K = cfg.K
    active = np.ones(K, dtype=bool) if active is None else np.asarray(active, dtype=bool)

    def one(k):
        if not active[k]:
            return None
        if p_s is None:
            start = w.copy()
        else:
            start = broadcast_and_estimate(w, p_s, channels.h_dl[k], 1, cfg,
                                           stream(cfg.seed, Purpose.NOISE_DL, t, k))
        return local_sgd(start, setup.task, setup.train, setup.partition, k, cfg.E, cfg.B, eta,
                         stream(cfg.seed, Purpose.BATCH, t, k))

    n = min(worker_count(), K)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(one, range(K)))
    return [one(k) for k in range(K)]


def evaluate(w: np.ndarray, setup: FederatedSetup) -> tuple[float, float]:
    """Test accuracy on the held-out split and loss on the union of device data."""
    X, y = setup.train.take(setup.partition.all_indices())
    loss = setup.task.loss(w, X, y)
    acc = setup.task.accuracy(w, setup.test.inputs, setup.test.labels)
    return float(acc), float(loss)


def make_record(t: int, w_new: np.ndarray, setup: FederatedSetup, decision: PowerDecision | None,
                channels: ChannelDraw | None, sdp_obj: float, wall_ms: float = 0.0,
                skipped: bool = False) -> RoundRecord:
    from .bounds import A_of_t, G_of_t  # local import: bounds reads engine types

    cfg = setup.cfg
    eta = learning_rate(cfg, t)
    acc, loss = evaluate(w_new, setup)
    if decision is None:
        gb = G_of_t(eta, cfg, setup.q, setup.mu2, setup.delta)
        ps = sum_ap = 0.0
        nsel = 0 if skipped else cfg.K
    else:
        gb = G_of_t(eta, cfg, setup.q, setup.mu2, setup.delta, rho=decision.rho,
                    gain_dl=channels.gain_dl, p_s=decision.p_s, sum_ap=decision.sum_ap)
        ps, sum_ap = decision.p_s, decision.sum_ap
        nsel = int(np.sum(decision.a))
    return RoundRecord(
        round=t, test_acc=acc, train_loss=loss, num_selected=nsel, ps=float(ps), sum_ap=float(sum_ap),
        sdp_obj=float(sdp_obj), term_a=gb.term_a, term_b=gb.term_b, term_c=gb.term_c, term_d=gb.term_d,
        A_t=A_of_t(eta, cfg.E, cfg.L), wall_ms=wall_ms, skipped=skipped,
    )


DecisionHook = Callable[[optimizer.GapProblem, float], PowerDecision]


def proposed_round(w: np.ndarray, t: int, setup: FederatedSetup,
                   decide: DecisionHook | None = None) -> tuple[np.ndarray, PowerDecision, ChannelDraw, float]:
    """Broadcast, local SGD, gap minimisation and over-the-air aggregation.

    ``decide`` replaces the optimiser (used by equivalence tests); it receives
    the round's problem and ``p_s``.
    """
    cfg = setup.cfg
    eta = learning_rate(cfg, t)
    ch = round_channels(cfg.seed, t, cfg.K)
    p_s = downlink_amplitude(w, cfg)
    updates = local_round(w, t, setup, p_s, ch)
    gp = optimizer.build_problem(ch.gain_dl, ch.gain_up, [u.norm2 for u in updates], cfg, eta, float(w @ w))
    if decide is None:
        sol = optimizer.solve(gp)
        decision = PowerDecision(p_s=p_s, p=sol.p, a=sol.a)
        obj = sol.objective
    else:
        decision = decide(gp, p_s)
        obj = gp.objective(decision.a * decision.p)
    w_new = aircomp_aggregate(updates, decision, ch, cfg, stream(cfg.seed, Purpose.NOISE_UP, t, SERVER))
    return w_new, decision, ch, obj


def run_round(w: np.ndarray, t: int, setup: FederatedSetup, scheme: str = "proposed",
              decide: DecisionHook | None = None, timing: bool = False) -> tuple[np.ndarray, RoundRecord]:
    """Advance the global model by one round under ``scheme`` and report the metrics row."""
    from . import baselines

    t0 = time.perf_counter()
    skipped = False
    if scheme == "proposed":
        w_new, decision, ch, obj = proposed_round(w, t, setup, decide)
    elif scheme == "fedavg-ideal":
        w_new = baselines.ideal_fedavg_round(w, t, setup)
        decision, ch, obj = None, None, 0.0
    elif scheme == "mse-threshold":
        w_new, decision, ch, obj = baselines.mse_threshold_round(w, t, setup)
    elif scheme == "truncated-inversion":
        w_new, decision, ch, obj = baselines.truncated_inversion_round(w, t, setup)
        skipped = decision is None
    else:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if not np.all(np.isfinite(w_new)):
        raise DivergenceError(f"global model diverged in round {t}")
    wall = (time.perf_counter() - t0) * 1e3 if timing else 0.0
    return w_new, make_record(t, w_new, setup, decision, ch, obj, wall, skipped)


def initial_model(setup: FederatedSetup) -> np.ndarray:
    rng = stream(setup.cfg.seed, Purpose.INIT)
    if isinstance(setup.task, QuadraticTask):
        return setup.task.init(rng, 1.0)
    return setup.task.init(rng, setup.cfg.init_scale)


def run_training(setup: FederatedSetup, scheme: str = "proposed", T: int | None = None,
                 decide: DecisionHook | None = None, timing: bool = False,
                 on_round: Callable[[RoundRecord, np.ndarray], None] | None = None,
                 w0: np.ndarray | None = None) -> tuple[list[RoundRecord], np.ndarray]:
    """Run rounds ``1..T`` from the seeded initial model; returns records and the final model."""
    T = setup.cfg.T if T is None else T
    w = initial_model(setup) if w0 is None else np.array(w0, dtype=float)
    records: list[RoundRecord] = []
    for t in range(1, T + 1):
        w, rec = run_round(w, t, setup, scheme, decide, timing)
        records.append(rec)
        if on_round is not None:
            on_round(rec, w)
    return records, w


# --- checkpoints -----------------------------------------------------------------

def write_checkpoint(path, w: np.ndarray, round_: int, seed: int) -> None:
    """Raw little-endian float64 payload plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    np.asarray(w, dtype="<f8").tofile(path)
    with open(str(path) + ".json", "w") as fh:
        json.dump({"dimension": int(w.size), "round": int(round_), "seed": int(seed)}, fh, indent=1)


def read_checkpoint(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    w = np.fromfile(path, dtype="<f8")
    if w.size != meta["dimension"]:
        raise EngineError(f"checkpoint holds {w.size} values, sidecar says {meta['dimension']}")
    return w.astype(float), meta
