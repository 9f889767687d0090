"""Experiment runner: metrics CSV, bound report and run manifest per scheme."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import bound_report, estimate_mu_delta, write_bound_report
from .channels import round_channels, write_channel_trace
from .config import SystemConfig
from .engine import SCHEMES, FederatedSetup, RoundRecord, build_setup, initial_model, run_training
from .rng import SERVER, Purpose, stream
from .tasks import QuadraticTask

CSV_HEADER = [
    "round", "test_acc", "train_loss", "num_selected", "ps", "sum_ap", "sdp_obj",
    "term_a", "term_b", "term_c", "term_d", "A_t", "wall_ms",
]
SUMMARY_WINDOW = 20


class HarnessError(RuntimeError):
    pass


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def record_row(rec: RoundRecord) -> list[str]:
    return [
        str(rec.round), fmt(rec.test_acc), fmt(rec.train_loss), str(rec.num_selected), fmt(rec.ps),
        fmt(rec.sum_ap), fmt(rec.sdp_obj), fmt(rec.term_a), fmt(rec.term_b), fmt(rec.term_c),
        fmt(rec.term_d), fmt(rec.A_t), fmt(rec.wall_ms),
    ]


def write_metrics(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in records:
            w.writerow(record_row(rec))


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise HarnessError(f"{path}: unexpected header {reader.fieldnames}")
        return [{k: float(v) for k, v in row.items()} for row in reader]


def bound_models(setup: FederatedSetup, n: int = 100, spread: float = 0.1) -> list[np.ndarray]:
    """Random models around the seeded initial point, used to estimate the assumption constants."""
    w0 = initial_model(setup)
    rng = stream(setup.cfg.seed, Purpose.AUDIT, 0, SERVER)
    return [w0 + spread * rng.standard_normal(w0.size) for _ in range(n)]


def prepare(cfg: SystemConfig, models: int = 100) -> FederatedSetup:
    """Build data and task; estimate ``mu2``/``delta`` unless the config fixes them."""
    setup = build_setup(cfg)
    if cfg.mu2 is None or cfg.delta is None:
        mu2, delta = estimate_mu_delta(setup.task, setup.train, setup.partition,
                                       bound_models(setup, models), setup.cfg.B, seed=cfg.seed)
        setup.mu2 = cfg.mu2 if cfg.mu2 is not None else mu2
        setup.delta = cfg.delta if cfg.delta is not None else delta
    return setup


def source_revision() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        out = None
    rev = out.stdout.strip() if out is not None and out.returncode == 0 else "unknown"
    return f"aircomp_fl {__version__} ({rev})"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


@dataclass
class Manifest:
    path: Path
    doc: dict

    @classmethod
    def start(cls, out_dir: Path, cfg: SystemConfig, schemes, outputs) -> "Manifest":
        doc = {
            "config": cfg.to_dict(), "schemes": list(schemes), "revision": source_revision(),
            "seed": cfg.seed, "started": _now(), "finished": None, "status": "running",
            "outputs": [str(p) for p in outputs],
        }
        m = cls(out_dir / "manifest.json", doc)
        m.write()
        return m

    def write(self) -> None:
        with open(self.path, "w") as fh:
            json.dump(self.doc, fh, indent=1)

    def finish(self, status: str = "complete", **extra) -> None:
        self.doc.update(finished=_now(), status=status, **extra)
        self.write()


def delta1_of(setup: FederatedSetup) -> float | None:
    task = setup.task
    if isinstance(task, QuadraticTask):
        return task.objective(initial_model(setup)) - task.f_star
    return None


def run_experiment(cfg: SystemConfig, schemes, out_dir, timing: bool = False,
                   dump_channels: bool = False, setup: FederatedSetup | None = None) -> dict[str, Path]:
    """Run each scheme on one shared setup and write its outputs; returns CSV paths by scheme."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for s in schemes:
        if s not in SCHEMES:
            raise HarnessError(f"unknown scheme {s!r}")
    setup = prepare(cfg) if setup is None else setup
    csvs = {s: out_dir / f"metrics_{s}.csv" for s in schemes}
    reports = {s: out_dir / f"bounds_{s}.json" for s in schemes}
    outputs = list(csvs.values()) + list(reports.values())
    if dump_channels:
        outputs.append(out_dir / "channels.csv")
    manifest = Manifest.start(out_dir, setup.cfg, schemes, outputs)
    try:
        if dump_channels:
            write_channel_trace(out_dir / "channels.csv",
                                (round_channels(setup.cfg.seed, t, setup.cfg.K) for t in range(1, setup.cfg.T + 1)))
        d1 = delta1_of(setup)
        for s in schemes:
            records, _ = run_training(setup, s, timing=timing)
            write_metrics(csvs[s], records)
            write_bound_report(reports[s], bound_report(records, setup.mu2, setup.delta, d1))
    except Exception as exc:
        manifest.finish("failed", error=f"{type(exc).__name__}: {exc}")
        raise
    manifest.finish(extras={k: v for k, v in setup.extras.items()})
    return csvs


def summarize(paths, window: int = SUMMARY_WINDOW) -> list[dict]:
    """Mean accuracy, selected count and G(t) over the final ``window`` rounds of each CSV."""
    out = []
    for p in paths:
        rows = read_metrics(p)
        if len(rows) < window:
            raise HarnessError(f"{p}: {len(rows)} rows, need at least {window}")
        tail = rows[-window:]
        name = Path(p).stem
        out.append({
            "scheme": name[len("metrics_"):] if name.startswith("metrics_") else name,
            "path": str(p),
            "final_acc": float(np.mean([r["test_acc"] for r in tail])),
            "mean_selected": float(np.mean([r["num_selected"] for r in tail])),
            "mean_G": float(np.mean([r["term_a"] + r["term_b"] + r["term_c"] + r["term_d"] for r in tail])),
        })
    return out


def ordering_line(summary: list[dict]) -> str:
    ranked = sorted(summary, key=lambda r: -r["final_acc"])
    return " >= ".join(f"{r['scheme']}({r['final_acc']:.4f})" for r in ranked)


def format_summary(summary: list[dict]) -> str:
    lines = [f"{'scheme':<22}{'acc(last20)':>12}{'selected':>10}{'mean G':>14}"]
    for r in summary:
        lines.append(f"{r['scheme']:<22}{r['final_acc']:>12.4f}{r['mean_selected']:>10.2f}{r['mean_G']:>14.6g}")
    lines.append("ordering: " + ordering_line(summary))
    return "\n".join(lines)


def ordering_experiment(cfg: SystemConfig, seeds, schemes=SCHEMES, window: int = SUMMARY_WINDOW) -> dict:
    """Paired runs: every scheme trains on the same setup and seed; returns mean final accuracy per scheme.

    ``mu2``/``delta`` are taken from the config (0 if unset) since only accuracy is compared.
    """
    finals = {s: [] for s in schemes}
    for seed in seeds:
        setup = build_setup(cfg.replace(seed=seed))
        for s in schemes:
            records, _ = run_training(setup, s)
            if len(records) < window:
                raise HarnessError(f"{len(records)} rounds, need at least {window}")
            finals[s].append(float(np.mean([r.test_acc for r in records[-window:]])))
    return {s: float(np.mean(v)) for s, v in finals.items()} | {"per_seed": finals}
