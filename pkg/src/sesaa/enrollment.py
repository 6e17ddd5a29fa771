"""Conditional tier-enrollment cascade and the race-screening regressions.

For a group, the tier-``t`` model is fitted on the group's students still in
tiers ``t..5`` with outcome ``tier == t``; Tier 5 has conditional
probability 1.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import bayes_logit as bl
from .dataset import TIERS, AnalysisPopulation, Race, StudentRecord

log = logging.getLogger(__name__)

CASCADE_TIERS = (1, 2, 3, 4)
ENROLLMENT_PREDICTORS = ("lsat", "ugpa")


@dataclass(frozen=True)
class EnrollmentCascade:
    models: Mapping[tuple[str, int], bl.LogitModel]
    groups: tuple[str, str]

    def coef(self, group: str, tier: int) -> np.ndarray:
        return self.models[(group, tier)].coef

    def draw(self, group: str, tier: int, rng: np.random.Generator) -> np.ndarray:
        return bl.draw_posterior(self.models[(group, tier)], rng)


def fit_cascade_arrays(lsat, ugpa, tier, group_labels, groups, spec: Optional[bl.LogitSpec] = None
                       ) -> EnrollmentCascade:
    spec = spec or bl.LogitSpec(ENROLLMENT_PREDICTORS)
    X = np.column_stack([lsat, ugpa]).astype(float)
    tier = np.asarray(tier)
    group_labels = np.asarray(group_labels)
    models = {}
    for g in groups:
        remaining = group_labels == g
        for t in CASCADE_TIERS:
            rows = remaining & (tier >= t)
            if not rows.any() or not np.any(tier[rows] == t):
                raise bl.FitError(f"empty enrollment cell (group={g}, tier={t})")
            m = bl.fit(spec, X[rows], (tier[rows] == t).astype(float))
            if not m.converged:
                log.warning("enrollment model (%s, tier %d) did not converge", g, t)
            models[(g, t)] = m
            remaining = remaining & (tier != t)
    return EnrollmentCascade(models, tuple(groups))


def fit_enrollment_cascade(population: AnalysisPopulation, grouping: str = "race",
                           low_ses=None, spec: Optional[bl.LogitSpec] = None) -> EnrollmentCascade:
    """Fit the 8 conditional models (2 groups x tiers 1-4).

    ``grouping`` is ``"race"`` (black/white) or ``"ses"`` (low/high, needs
    ``low_ses``).
    """
    if grouping == "race":
        labels = np.where(population.black, "black", "white")
        groups = ("black", "white")
    elif grouping == "ses":
        if low_ses is None:
            raise ValueError("ses grouping needs low_ses flags")
        labels = np.where(low_ses, "low_ses", "high_ses")
        groups = ("low_ses", "high_ses")
    else:
        raise ValueError(f"unknown grouping {grouping!r}")
    return fit_cascade_arrays(population.lsat, population.ugpa, population.tier, labels, groups, spec)


def conditional_probs(cascade: EnrollmentCascade, lsat, ugpa, group: str,
                      coefs: Optional[Mapping[int, np.ndarray]] = None) -> np.ndarray:
    """(n, 5) conditional probabilities p_1..p_4 from the group's models, p_5 = 1.

    ``coefs`` optionally maps tier -> coefficient draw replacing the point
    estimates.
    """
    X = np.column_stack([np.atleast_1d(lsat), np.atleast_1d(ugpa)]).astype(float)
    out = np.ones((X.shape[0], len(TIERS)))
    for t in CASCADE_TIERS:
        b = coefs[t] if coefs is not None else cascade.coef(group, t)
        out[:, t - 1] = bl.predict_prob(b, X)
    return out


def unconditional_probs(cond: np.ndarray) -> np.ndarray:
    """q_t = p_t * prod_{s<t} (1 - p_s); rows sum to one when p_5 = 1."""
    cond = np.atleast_2d(cond)
    survive = np.cumprod(np.column_stack([np.ones(cond.shape[0]), 1.0 - cond[:, :-1]]), axis=1)
    return cond * survive


def cascade_rows(cascade: EnrollmentCascade) -> list[dict]:
    rows = []
    for g in cascade.groups:
        for t in CASCADE_TIERS:
            rows += bl.coefficient_rows(cascade.models[(g, t)], group=g, tier=t)
    return rows


SCREEN_RACES = (Race.ASIAN, Race.BLACK, Race.HISPANIC, Race.OTHER)


def screen_race_effects(records, spec: Optional[bl.LogitSpec] = None) -> list[dict]:
    """Unconditional tier-membership logits on LSAT plus race dummies (white = reference).

    Uses every Tier 1-5 record regardless of race.  Returns one row per
    (tier, term).
    """
    if isinstance(records, AnalysisPopulation):
        records = records.records
    recs: list[StudentRecord] = [r for r in records if r.tier in TIERS]
    races = np.array([r.race.value for r in recs])
    present = []
    for race in SCREEN_RACES:
        if np.any(races == race.value):
            present.append(race)
        else:
            warnings.warn(f"no {race.value} students; dropping the {race.value} indicator", stacklevel=2)
    names = ("lsat",) + tuple(r.value for r in present)
    spec = spec or bl.LogitSpec(names)
    if spec.names != names:
        spec = bl.LogitSpec(names, spec.prior_scale, spec.prior_scale_intercept, spec.prior_df)
    lsat = np.array([r.lsat for r in recs], dtype=float)
    X = np.column_stack([lsat] + [(races == r.value).astype(float) for r in present])
    tier = np.array([r.tier for r in recs])
    rows = []
    for t in TIERS:
        m = bl.fit(spec, X, (tier == t).astype(float))
        rows += bl.coefficient_rows(m, tier=t)
    return rows
