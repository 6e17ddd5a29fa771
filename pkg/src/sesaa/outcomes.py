"""Per-tier academic-outcome regressions and sequential outcome imputation.

Stages, each conditional on the previous ones:

    DROPOUT     all students              y = dropped out
    SKIP_BAR    graduates                 y = did not attempt the bar
    PASS_FIRST  bar attempters            y = passed on the first try
    PASS_LATER  first-try failures        y = passed on a later try
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping, Optional

import numpy as np

from . import bayes_logit as bl
from .dataset import TIERS, AnalysisPopulation, OutcomeClass


class Stage(IntEnum):
    DROPOUT = 0
    SKIP_BAR = 1
    PASS_FIRST = 2
    PASS_LATER = 3


OUTCOME_PREDICTORS = ("female", "lsat", "lsat_perc", "ugpa", "black", "low_ses",
                      "lsat_perc_x_black", "lsat_perc_x_low_ses")

D, G, P1, P2, F = (int(c) for c in OutcomeClass)

# (students at risk, event) for each stage, as outcome-code sets
_STAGE_RISK = {
    Stage.DROPOUT: (D, G, P1, P2, F),
    Stage.SKIP_BAR: (G, P1, P2, F),
    Stage.PASS_FIRST: (P1, P2, F),
    Stage.PASS_LATER: (P2, F),
}
_STAGE_EVENT = {Stage.DROPOUT: D, Stage.SKIP_BAR: G, Stage.PASS_FIRST: P1, Stage.PASS_LATER: P2}


def recompute_lsat_percentiles(tiers, lsat) -> np.ndarray:
    """Midrank LSAT percentile within each tier: (#lower + 0.5 * #equal) / tier size."""
    tiers = np.asarray(tiers)
    lsat = np.asarray(lsat, dtype=float)
    out = np.empty(lsat.shape[0])
    for t in np.unique(tiers):
        rows = tiers == t
        ref = np.sort(lsat[rows])
        lo = np.searchsorted(ref, lsat[rows], side="left")
        hi = np.searchsorted(ref, lsat[rows], side="right")
        out[rows] = (lo + 0.5 * (hi - lo)) / ref.shape[0]
    return out


def outcome_design(female, lsat, lsat_perc, ugpa, black, low_ses) -> np.ndarray:
    black = np.asarray(black, dtype=float)
    low_ses = np.asarray(low_ses, dtype=float)
    return np.column_stack([female, lsat, lsat_perc, ugpa, black, low_ses,
                            lsat_perc * black, lsat_perc * low_ses]).astype(float)


@dataclass(frozen=True)
class OutcomeModelSet:
    models: Mapping[tuple[Stage, int], bl.LogitModel]

    def coef(self, stage: Stage, tier: int) -> np.ndarray:
        return self.models[(stage, tier)].coef


def fit_outcome_models(population: AnalysisPopulation, low_ses, tiers=None, outcome=None,
                       spec: Optional[bl.LogitSpec] = None) -> OutcomeModelSet:
    """Fit the 4 stages x 5 tiers models on observed tiers and outcomes."""
    spec = spec or bl.LogitSpec(OUTCOME_PREDICTORS)
    tiers = population.tier if tiers is None else np.asarray(tiers)
    outcome = population.outcome if outcome is None else np.asarray(outcome)
    perc = recompute_lsat_percentiles(tiers, population.lsat)
    X = outcome_design(population.female, population.lsat, perc, population.ugpa,
                       population.black, low_ses)
    models = {}
    for stage in Stage:
        at_risk = np.isin(outcome, _STAGE_RISK[stage])
        for t in TIERS:
            rows = at_risk & (tiers == t)
            if not rows.any():
                raise bl.FitError(f"empty conditioning set (stage={stage.name}, tier={t})")
            y = (outcome[rows] == _STAGE_EVENT[stage]).astype(float)
            models[(stage, t)] = bl.fit(spec, X[rows], y)
    return OutcomeModelSet(models)


def stage_counts(outcome, tiers) -> dict:
    """Number of students each stage model conditions on, per tier."""
    outcome, tiers = np.asarray(outcome), np.asarray(tiers)
    return {(stage, t): int(np.sum(np.isin(outcome, _STAGE_RISK[stage]) & (tiers == t)))
            for stage in Stage for t in TIERS}


def impute_outcomes(models: OutcomeModelSet, tiers, population: AnalysisPopulation, low_ses,
                    rng: np.random.Generator, draw: bool = True) -> np.ndarray:
    """Sequential Bernoulli imputation of the five outcome classes under ``tiers``.

    Percentiles are recomputed within the assigned tiers.  Each (stage, tier)
    model contributes one posterior draw (or its point estimate when
    ``draw`` is false); students are visited in ascending id order.
    """
    tiers = np.asarray(tiers)
    perc = recompute_lsat_percentiles(tiers, population.lsat)
    X = outcome_design(population.female, population.lsat, perc, population.ugpa,
                       population.black, low_ses)
    order = population.id_order
    t_ord = tiers[order]
    out = np.full(tiers.shape[0], -1)
    open_ = np.ones(tiers.shape[0], dtype=bool)
    for stage in Stage:
        for t in TIERS:
            idx = order[open_[order] & (t_ord == t)]
            m = models.models[(stage, t)]
            coef = bl.draw_posterior(m, rng) if draw else m.coef
            if idx.shape[0] == 0:
                continue
            event = rng.random(idx.shape[0]) < bl.predict_prob(coef, X[idx])
            out[idx[event]] = _STAGE_EVENT[stage]
            open_[idx[event]] = False
            if stage is Stage.PASS_LATER:
                out[idx[~event]] = F
                open_[idx[~event]] = False
    return out


def class_probabilities(stage_probs) -> np.ndarray:
    """Unconditional class probabilities from the four conditional stage probabilities."""
    d, s, f, later = np.moveaxis(np.atleast_2d(stage_probs), -1, 0)
    grad = 1 - d
    attempt = grad * (1 - s)
    fail_first = attempt * (1 - f)
    return np.stack([d, grad * s, attempt * f, fail_first * later, fail_first * (1 - later)], axis=-1)


def outcome_rows(models: OutcomeModelSet) -> list[dict]:
    rows = []
    for stage in Stage:
        for t in TIERS:
            rows += bl.coefficient_rows(models.models[(stage, t)], stage=stage.name.lower(), tier=t)
    return rows
