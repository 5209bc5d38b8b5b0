"""Sweeps over the adversarial weight ``lam`` and the noise-blind plateau selector."""
from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field

from .datagen import Dataset
from .trainer import ExperimentConfig, run_many

DEFAULT_LAMBDAS = (0.2, 0.4, 0.6, 0.8, 1.0)
STRATEGIES = ("best_median_accuracy", "loss_plateau")
REPORT_COLUMNS = ("lambda", "seed", "final_accuracy", "final_ccc", "g_joint_loss", "d_joint_loss")


@dataclass
class SweepSpec:
    base: ExperimentConfig
    lambdas: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])

    def validate(self) -> None:
        if not self.lambdas:
            raise ValueError("at least one lambda value is required")
        if len(set(self.lambdas)) != len(self.lambdas):
            raise ValueError(f"lambda values must be distinct: {self.lambdas}")
        if any(l < 0 for l in self.lambdas):
            raise ValueError("lambda values must be non-negative")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be a non-empty list of distinct integers")
        self.base.validate()

    def configs(self) -> list[ExperimentConfig]:
        return [self.base.replace(mode="proposed", lam=float(l), seed=int(s))
                for l in self.lambdas for s in self.seeds]


@dataclass(frozen=True)
class SweepRow:
    lam: float
    seed: int
    final_accuracy: float | None
    final_ccc: float | None
    g_joint_loss: float | None
    d_joint_loss: float | None


@dataclass
class SweepReport:
    rows: list[SweepRow]

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: (r.lam, r.seed))

    @property
    def lambdas(self) -> list[float]:
        return sorted({r.lam for r in self.rows})

    def _median(self, lam: float, key: str) -> float | None:
        vals = [getattr(r, key) for r in self.rows if r.lam == lam and getattr(r, key) is not None]
        return statistics.median(vals) if vals else None

    def median_accuracy(self) -> dict[float, float | None]:
        return {l: self._median(l, "final_accuracy") for l in self.lambdas}

    def median_g_joint_loss(self) -> dict[float, float | None]:
        return {l: self._median(l, "g_joint_loss") for l in self.lambdas}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow(["" if v is None else repr(float(v)) if isinstance(v, float) else v
                        for v in (r.lam, r.seed, r.final_accuracy, r.final_ccc, r.g_joint_loss, r.d_joint_loss)])
        return buf.getvalue()


def run_sweep(spec: SweepSpec, ds: Dataset, jobs: int = 1) -> SweepReport:
    """Train one proposed model per (lambda, seed) on ``ds``."""
    spec.validate()
    configs = spec.configs()
    rows = []
    for cfg, res in zip(configs, run_many(configs, ds, jobs)):
        last = res.runlog[-1]
        rows.append(SweepRow(cfg.lam, cfg.seed, res.metrics["accuracy"], res.metrics["ccc"],
                             last["g_joint_loss"], last["d_joint_loss"]))
    return SweepReport(rows)


def select_lambda(report: SweepReport, strategy: str = "loss_plateau") -> float:
    """Pick a lambda from a finished sweep.

    ``best_median_accuracy`` reads clean test accuracy (an oracle). ``loss_plateau``
    only looks at training losses: it takes the lambda whose median terminal
    generator joint loss is closest to the median over the whole sweep.
    """
    if not report.rows:
        raise ValueError("empty sweep report")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy == "best_median_accuracy":
        acc = {l: a for l, a in report.median_accuracy().items() if a is not None}
        if not acc:
            raise ValueError("no accuracy values in report")
        best = max(acc.values())
        return min(l for l, a in acc.items() if a == best)
    losses = [r.g_joint_loss for r in report.rows if r.g_joint_loss is not None]
    if not losses:
        # lambda = 0 runs have no adversarial game; nothing to read a plateau from
        return report.lambdas[0]
    target = statistics.median(losses)
    per_lam = {l: g for l, g in report.median_g_joint_loss().items() if g is not None}
    return min(per_lam, key=lambda l: (abs(per_lam[l] - target), l))
