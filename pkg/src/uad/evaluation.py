"""Batch experiments and empirical ROC curves."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .detector import DetectorModel, GaussianChi2Cdf, NormalCdf, k1_scores
from .io import atomic_write, dump_kv, matrix_to_csv, short
from .scenarios import (AttackSpec, DcGridModel, gaussian_batches, grid_batches, j_statistic,
                        measure, sample_states)
from .wigan import TrainConfig, train

log = logging.getLogger(__name__)

SCENARIOS = ("case1", "case2", "grid")


class RocCurve(NamedTuple):
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self) -> str:
        body = matrix_to_csv(np.column_stack([self.fpr, self.tpr]), ["fpr", "tpr"])
        return body + f"auc={short(self.auc)}\n"


def roc(h0_scores, h1_scores, high_is_anomalous: bool = True) -> RocCurve:
    """Empirical ROC over every achievable threshold; tied scores form one step."""
    s0 = np.asarray(h0_scores, dtype=float).ravel()
    s1 = np.asarray(h1_scores, dtype=float).ravel()
    if s0.size == 0 or s1.size == 0:
        raise ValueError("both score lists must be non-empty")
    if not high_is_anomalous:
        s0, s1 = -s0, -s1
    levels = np.unique(np.concatenate([s0, s1]))[::-1]
    # flag "anomalous" when score >= level, sweeping level downward
    fp = np.searchsorted(np.sort(-s0), -levels, side="right")
    tp = np.searchsorted(np.sort(-s1), -levels, side="right")
    fpr = np.concatenate([[0.0], fp / s0.size])
    tpr = np.concatenate([[0.0], tp / s1.size])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, auc)


@dataclass
class ExperimentPlan:
    scenario: str = "case1"
    batches_per_class: int = 2000
    batch_N: int = 50
    seed: int = 0
    # case 1: pinned |mu|; case 2: pinned sigma; None draws per batch
    nuisance: float | None = None
    grid: DcGridModel = field(default_factory=DcGridModel)
    attack: AttackSpec = field(default_factory=AttackSpec)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.batches_per_class < 1 or self.batch_N < 1:
            raise ValueError("batches_per_class and batch_N must be positive")

    def batches(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """H0 batches, H1 batches, and the per-batch nuisance values of H1."""
        ss0, ss1 = np.random.SeedSequence([self.seed, 7]).spawn(2)
        r0, r1 = np.random.default_rng(ss0), np.random.default_rng(ss1)
        B, N = self.batches_per_class, self.batch_N
        if self.scenario == "grid":
            return (grid_batches(self.grid, B, N, r0), grid_batches(self.grid, B, N, r1, self.attack),
                    np.zeros(B))
        case = 1 if self.scenario == "case1" else 2
        z0, _ = gaussian_batches(case, B, N, r0, anomalous=False)
        z1, par = gaussian_batches(case, B, N, r1, anomalous=True, nuisance=self.nuisance)
        return z0, z1, par

    def training_data(self, n: int = 10000) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 11]))
        if self.scenario == "grid":
            return measure(self.grid, sample_states(self.grid, n, rng), rng=rng)
        return rng.standard_normal((n, 1))

    def oracle_generator(self):
        if self.scenario == "grid":
            return GaussianChi2Cdf(self.grid.measurement_mean(), self.grid.measurement_cov())
        return NormalCdf(0.0, 1.0)


JTEST = "jtest"


@dataclass
class Scores:
    h0: dict[str, np.ndarray]
    h1: dict[str, np.ndarray]
    nuisance: np.ndarray

    def high_is_anomalous(self, name: str) -> bool:
        return name == JTEST


def score_batches(plan: ExperimentPlan, detectors: dict[str, DetectorModel | str]) -> Scores:
    """One score per batch and class: K1 for models (low = anomalous), summed J for the J test."""
    if not detectors:
        raise ValueError("no detectors given")
    z0, z1, par = plan.batches()
    h0, h1 = {}, {}
    for name, det in detectors.items():
        if det is None:
            raise ValueError(f"detector {name!r} has no model")
        if det == JTEST:
            if plan.scenario != "grid":
                raise ValueError("the J test needs the grid scenario")
            h0[name] = j_statistic(z0, plan.grid).sum(axis=1)
            h1[name] = j_statistic(z1, plan.grid).sum(axis=1)
        else:
            h0[name] = k1_scores(det, z0)
            h1[name] = k1_scores(det, z1)
    return Scores(h0, h1, par)


def curves(scores: Scores) -> dict[str, RocCurve]:
    return {name: roc(scores.h0[name], scores.h1[name], scores.high_is_anomalous(name))
            for name in scores.h0}


@dataclass
class ReproduceConfig:
    scenario: str = "case1"
    seed: int = 0
    batches_per_class: int = 2000
    batch_N: int = 50
    alphabet_M: int = 200
    fp_level: float = 0.05
    train_samples: int = 10000
    train_iters: int = 2000
    critic_input_scale: float = TrainConfig.critic_input_scale
    nuisance: float | None = None
    learned: bool = True

    def plan(self) -> ExperimentPlan:
        return ExperimentPlan(self.scenario, self.batches_per_class, self.batch_N, self.seed,
                              self.nuisance)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["nuisance"] = "none" if self.nuisance is None else self.nuisance
        return d


def reproduce(cfg: ReproduceConfig, out_dir) -> dict[str, RocCurve]:
    """Run one experiment and write its ROC curves, ``summary.csv`` and the resolved config.

    Each detector gets ``roc_<name>.csv`` (``fpr,tpr`` plus an ``auc=`` footer);
    ``roc.csv`` holds all curves in long form keyed by detector.
    """
    plan = cfg.plan()
    oracle = DetectorModel(plan.oracle_generator(), cfg.alphabet_M, cfg.batch_N, cfg.fp_level,
                           seed=cfg.seed)
    detectors: dict[str, DetectorModel | str] = {"uad_oracle": oracle}
    if cfg.learned:
        tcfg = TrainConfig(seed=cfg.seed, total_generator_iters=cfg.train_iters,
                           critic_input_scale=cfg.critic_input_scale,
                           validation_M=cfg.alphabet_M, validation_N=cfg.batch_N)
        gen, trace = train(plan.training_data(cfg.train_samples), tcfg)
        log.info("trained generator: best iteration %d, validation K1 %.3f",
                 trace.best_iteration, trace.best_val_k1)
        detectors["uad"] = DetectorModel(gen, cfg.alphabet_M, cfg.batch_N, cfg.fp_level,
                                         seed=cfg.seed, config_hash=tcfg.fingerprint())
    if cfg.scenario == "grid":
        detectors[JTEST] = JTEST
    result = curves(score_batches(plan, detectors))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = io.StringIO()
    summary.write("detector,scenario,auc,batches\n")
    combined = io.StringIO()
    combined.write("detector,fpr,tpr\n")
    for name, curve in result.items():
        atomic_write(out / f"roc_{name}.csv", curve.to_csv())
        summary.write(f"{name},{cfg.scenario},{short(curve.auc)},{cfg.batches_per_class}\n")
        for f, t in zip(curve.fpr, curve.tpr):
            combined.write(f"{name},{short(f)},{short(t)}\n")
    atomic_write(out / "roc.csv", combined.getvalue())
    atomic_write(out / "summary.csv", summary.getvalue())
    atomic_write(out / "config.resolved", dump_kv(cfg.as_dict()))
    return result
