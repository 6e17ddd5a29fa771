"""Multiply-imputed counterfactual replications and their pooling.

One replication = fresh parameter draws -> tier reassignment -> sequential
outcome imputation.  Replication ``r`` gets its own generator derived from
``(master_seed, r)`` so serial and parallel runs agree.

Per-replication counts and rates are treated as complete-data statistics
(within-imputation variance 0), so the pooled variance is
``(1 + 1/m) * B`` with ``B`` the between-replication sample variance.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import bayes_logit as bl
from .dataset import TIERS, AnalysisPopulation, OutcomeClass, nearest_rank_quantile
from .enrollment import ENROLLMENT_PREDICTORS, EnrollmentCascade, fit_enrollment_cascade
from .outcomes import OUTCOME_PREDICTORS, OutcomeModelSet, fit_outcome_models, impute_outcomes
from .reassignment import QuotaTable, TierAssignment, compute_quotas, reassign
from .ses_scoring import SesAssignment, ses_assignment

DEFAULT_M = 40
GROUPS = ("all", "black", "white", "low_ses", "high_ses")
QUANTILES = {"q25": 0.25, "q50": 0.5, "q75": 0.75,
             **{f"d{k}0": k / 10 for k in range(1, 10)}}


class SimulationError(RuntimeError):
    """A replication failed; the message names its index."""


@dataclass(frozen=True)
class FittedPipeline:
    population: AnalysisPopulation
    ses: SesAssignment
    cascade: EnrollmentCascade
    outcome_models: OutcomeModelSet
    quotas: QuotaTable

    @property
    def low_ses(self) -> np.ndarray:
        return self.ses.low_ses


def fit_pipeline(population: AnalysisPopulation, score_kind: str = "pc",
                 spec: Optional[bl.LogitSpec] = None) -> FittedPipeline:
    """Score SES, fit the enrollment cascade and the outcome models."""
    ses = ses_assignment(population, score_kind)
    enroll_spec = outcome_spec = None
    if spec is not None:
        enroll_spec = bl.LogitSpec(ENROLLMENT_PREDICTORS, spec.prior_scale,
                                   spec.prior_scale_intercept, spec.prior_df)
        outcome_spec = bl.LogitSpec(OUTCOME_PREDICTORS, spec.prior_scale,
                                    spec.prior_scale_intercept, spec.prior_df)
    cascade = fit_enrollment_cascade(population, "race", spec=enroll_spec)
    models = fit_outcome_models(population, ses.low_ses, spec=outcome_spec)
    return FittedPipeline(population, ses, cascade, models, compute_quotas(population))


def group_masks(population: AnalysisPopulation, low_ses) -> dict:
    black = population.black
    low = np.asarray(low_ses, dtype=bool)
    return {"all": np.ones(black.shape[0], dtype=bool), "black": black, "white": ~black,
            "low_ses": low, "high_ses": ~low}


def replication_statistics(population: AnalysisPopulation, low_ses, tiers, outcomes) -> dict:
    """Counts, unconditional outcome rates and LSAT quantiles for one assignment.

    Keys are tuples:
    ``("count", group, tier)``, ``("rate", group, outcome)``,
    ``("tier_rate", group, tier, outcome)``, ``("lsat", group, tier, quantile)``.
    """
    tiers = np.asarray(tiers)
    outcomes = np.asarray(outcomes)
    masks = group_masks(population, low_ses)
    stats: dict = {}
    for g, mask in masks.items():
        for t in TIERS:
            stats[("count", g, t)] = float(np.sum(mask & (tiers == t)))
    for g, mask in masks.items():
        n = mask.sum()
        for c in OutcomeClass:
            stats[("rate", g, c.token)] = float(np.sum(outcomes[mask] == c) / n) if n else math.nan
    for g, mask in masks.items():
        for t in TIERS:
            cell = mask & (tiers == t)
            n = cell.sum()
            for c in OutcomeClass:
                stats[("tier_rate", g, t, c.token)] = (float(np.sum(outcomes[cell] == c) / n)
                                                       if n else math.nan)
    lsat = population.lsat
    for g, mask in masks.items():
        for t in TIERS:
            vals = lsat[mask & (tiers == t)]
            for name, q in QUANTILES.items():
                stats[("lsat", g, t, name)] = nearest_rank_quantile(vals, q) if vals.size else math.nan
    return stats


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    assignment: TierAssignment
    outcomes: np.ndarray
    stats: dict


SIMULATION_STREAM = 0
SELF_CHECK_STREAM = 1


def replication_rng(master_seed: int, index: int, stream: int = SIMULATION_STREAM
                    ) -> np.random.Generator:
    """Independent generator for replication ``index``; depends only on its arguments."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(stream, index)))


def run_replication(fitted: FittedPipeline, mode: str, index: int, master_seed: int
                    ) -> ReplicationResult:
    rng = replication_rng(master_seed, index)
    assignment = reassign(fitted.population, fitted.cascade, fitted.quotas, fitted.low_ses, rng, mode)
    outcomes = impute_outcomes(fitted.outcome_models, assignment.tiers, fitted.population,
                               fitted.low_ses, rng)
    stats = replication_statistics(fitted.population, fitted.low_ses, assignment.tiers, outcomes)
    return ReplicationResult(index, assignment, outcomes, stats)


def _run_one(args):
    return run_replication(*args)


def run_replications(fitted: FittedPipeline, mode: str = "quota", m: int = DEFAULT_M,
                     master_seed: int = 0, n_jobs: int = 1) -> list[ReplicationResult]:
    if m < 2:
        raise ValueError("need at least two replications")
    jobs = [(fitted, mode, r, master_seed) for r in range(m)]
    if n_jobs == 1:
        results = []
        for job in jobs:
            try:
                results.append(_run_one(job))
            except Exception as exc:
                raise SimulationError(f"replication {job[2]} failed: {exc}") from exc
        return results
    results = []
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        futures = [ex.submit(_run_one, job) for job in jobs]
        for r, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except Exception as exc:
                raise SimulationError(f"replication {r} failed: {exc}") from exc
    return results


@dataclass(frozen=True)
class PooledEstimate:
    point: float
    between: float
    within: float
    total: float
    m: int

    @property
    def se(self) -> float:
        return math.sqrt(self.total)


def pool(values: Sequence[float], within: Optional[Sequence[float]] = None) -> PooledEstimate:
    """Combine per-replication estimates: T = W + (1 + 1/m) B."""
    q = np.asarray(values, dtype=float)
    q = q[~np.isnan(q)]
    m = q.shape[0]
    if m < 2:
        return PooledEstimate(float(q.mean()) if m else math.nan, math.nan, math.nan, math.nan, m)
    qbar = float(q.mean())
    b = float(q.var(ddof=1))
    w = 0.0 if within is None else float(np.mean(within))
    return PooledEstimate(qbar, b, w, w + (1 + 1 / m) * b, m)


def pool_statistic(extract: Callable[[ReplicationResult], float],
                   replications: Sequence[ReplicationResult]) -> PooledEstimate:
    return pool([extract(r) for r in replications])


def pool_all(replications: Sequence[ReplicationResult]) -> dict:
    keys = replications[0].stats.keys()
    return {k: pool([r.stats[k] for r in replications]) for k in keys}


def observed_rates(population: AnalysisPopulation, low_ses) -> dict:
    out = population.outcome
    return {(g, c.token): float(np.mean(out[mask] == c))
            for g, mask in group_masks(population, low_ses).items() for c in OutcomeClass}


SELF_CHECK_GROUPS = ("black", "white", "low_ses", "high_ses")


def self_check(population: AnalysisPopulation, low_ses, outcome_models: OutcomeModelSet,
               m: int = DEFAULT_M, master_seed: int = 0, z: float = 1.96) -> list[dict]:
    """Re-impute outcomes under the observed tiers and compare with observed rates.

    A cell is flagged when the observed rate lies outside fitted +/- z * se.
    """
    masks = group_masks(population, low_ses)
    draws = {(g, c.token): [] for g in SELF_CHECK_GROUPS for c in OutcomeClass}
    for r in range(m):
        rng = replication_rng(master_seed, r, SELF_CHECK_STREAM)
        imputed = impute_outcomes(outcome_models, population.tier, population, low_ses, rng)
        for g in SELF_CHECK_GROUPS:
            sub = imputed[masks[g]]
            for c in OutcomeClass:
                draws[(g, c.token)].append(float(np.mean(sub == c)))
    obs = observed_rates(population, low_ses)
    rows = []
    for (g, token), vals in draws.items():
        est = pool(vals)
        original = obs[(g, token)]
        within = abs(original - est.point) <= z * est.se + 1e-15
        rows.append(dict(group=g, outcome=token, original=original, fitted=est.point,
                         se=est.se, within_95=within))
    return rows
