"""SES component imputation, principal-component SES score and SES groups.

Components are ordered ``(occ_mom, occ_dad, ed_mom, ed_dad, fam_inc)``.  The
"parental score" is the part of the score built from the first four.

Imputation, per student:

1. a parent's missing occupation (or a homemaker occupation) takes that
   parent's education value, and a missing education takes the occupation;
2. a parent with neither value copies the other parent's pair;
3. a missing ``fam_inc`` is set to the ``fam_inc`` quantile at the
   percentile of the student's parental score;
4. when both parents are missing, the parental score itself is set to the
   parental-score quantile at the percentile of the student's ``fam_inc``.

Percentiles are "fraction of students strictly below"; quantiles are
linearly interpolated.  Step 3 needs a parental score before the final
principal component exists, so it uses a preliminary component fitted on
students whose five values are all known after steps 1-2.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .dataset import HOMEMAKER, SES_FIELDS, AnalysisPopulation, SesProfile

OCC_MOM, OCC_DAD, ED_MOM, ED_DAD, FAM_INC = range(5)
PARENTS = ((OCC_MOM, ED_MOM), (OCC_DAD, ED_DAD))


class SesError(ValueError):
    pass


@dataclass(frozen=True)
class SesScoreModel:
    loadings: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    variance_explained: float

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.means) / self.sds

    def score(self, X) -> np.ndarray:
        return self.standardize(X) @ self.loadings

    def parental_score(self, X) -> np.ndarray:
        Z = self.standardize(X)
        return Z[..., :FAM_INC] @ self.loadings[:FAM_INC]


def fit_ses_score_model(X) -> SesScoreModel:
    """First principal component of the standardized, completed components."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 5 or X.shape[0] < 2:
        raise SesError("need an (n >= 2, 5) matrix of completed components")
    if not np.all(np.isfinite(X)):
        raise SesError("components must be completed before fitting")
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1)
    for name, s in zip(SES_FIELDS, sds):
        if not s > 0:
            raise SesError(f"component {name} has zero variance")
    R = np.corrcoef(X, rowvar=False)
    vals, vecs = np.linalg.eigh(R)
    v = vecs[:, -1]
    if v.sum() < 0:
        v = -v
    if np.any(v <= 0):
        warnings.warn("first principal component has mixed-sign loadings", stacklevel=2)
    return SesScoreModel(v, means, sds, float(vals[-1] / 5.0))


def percentile_below(sorted_ref: np.ndarray, x) -> np.ndarray:
    """Fraction of ``sorted_ref`` strictly less than ``x``."""
    return np.searchsorted(sorted_ref, x, side="left") / sorted_ref.size


def quantile(sorted_ref: np.ndarray, q) -> np.ndarray:
    return np.quantile(sorted_ref, q, method="linear")


def _numeric(v) -> float:
    return math.nan if v is None or v == HOMEMAKER else float(v)


def complete_parents(profile: SesProfile) -> np.ndarray:
    """Apply the within-parent and across-parent rules.

    Returns the five components as floats; parental entries stay NaN when
    neither parent has any information, ``fam_inc`` stays NaN if missing.
    """
    raw = profile.values()
    x = np.array([_numeric(v) for v in raw])
    for occ, ed in PARENTS:
        if raw[occ] == HOMEMAKER or np.isnan(x[occ]):
            x[occ] = x[ed]
        elif np.isnan(x[ed]):
            x[ed] = x[occ]
    (om, em), (od, edd) = PARENTS
    if np.isnan(x[om]) and not np.isnan(x[od]):
        x[om], x[em] = x[od], x[edd]
    elif np.isnan(x[od]) and not np.isnan(x[om]):
        x[od], x[edd] = x[om], x[em]
    return x


@dataclass(frozen=True)
class SesContext:
    """Population tables consulted by the percentile rules."""

    model: SesScoreModel
    fam_inc: np.ndarray       # sorted observed fam_inc values
    parental: np.ndarray      # sorted parental scores under ``model``
    parental_alt: np.ndarray  # sorted occ*ed sums


class CompletedSes(NamedTuple):
    values: np.ndarray
    parental_score: Optional[float]   # set only when both parents were missing
    parental_alt: Optional[float]


def impute_ses_components(profile: SesProfile, context: SesContext) -> CompletedSes:
    if profile.all_missing:
        raise SesError("all SES components missing")
    x = complete_parents(profile)
    parents_known = not np.isnan(x[OCC_MOM])
    if parents_known:
        if np.isnan(x[FAM_INC]):
            pct = percentile_below(context.parental, context.model.parental_score(x))
            x[FAM_INC] = quantile(context.fam_inc, pct)
        return CompletedSes(x, None, None)
    pct = percentile_below(context.fam_inc, x[FAM_INC])
    return CompletedSes(x, float(quantile(context.parental, pct)),
                        float(quantile(context.parental_alt, pct)))


def _alt_parental(X) -> np.ndarray:
    return X[:, OCC_MOM] * X[:, ED_MOM] + X[:, OCC_DAD] * X[:, ED_DAD]


def alt_score(X) -> np.ndarray:
    """``fam_inc**2 + occ_mom*ed_mom + occ_dad*ed_dad`` on the 1-5 scale."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X[:, FAM_INC] ** 2 + _alt_parental(X)


def compute_ses_score(values, model: SesScoreModel) -> float:
    return float(model.score(np.asarray(values, dtype=float)))


def compute_alt_score(values) -> float:
    return float(alt_score(values)[0])


@dataclass(frozen=True)
class SesScores:
    """Per-student scores aligned with the population order."""

    completed: np.ndarray        # NaN parental columns where both parents were missing
    score: np.ndarray
    alt_score: np.ndarray
    parental_imputed: np.ndarray
    fam_inc_imputed: np.ndarray
    model: SesScoreModel
    preliminary_model: SesScoreModel


def score_population(population: AnalysisPopulation) -> SesScores:
    X = np.array([complete_parents(r.ses) for r in population.records]).reshape(-1, 5)
    if np.any(np.isnan(X[:, OCC_MOM]) & np.isnan(X[:, FAM_INC])):
        raise SesError("student with no SES information; filter the population first")
    parents = ~np.isnan(X[:, OCC_MOM])
    has_inc = ~np.isnan(X[:, FAM_INC])
    fam_sorted = np.sort(X[has_inc, FAM_INC])

    complete = parents & has_inc
    prelim = fit_ses_score_model(X[complete])
    par_prelim = prelim.parental_score(X[parents])
    par_sorted = np.sort(par_prelim)
    need_inc = parents & ~has_inc
    if need_inc.any():
        pct = percentile_below(par_sorted, prelim.parental_score(X[need_inc]))
        X[need_inc, FAM_INC] = quantile(fam_sorted, pct)

    model = fit_ses_score_model(X[parents])
    score = np.empty(len(X))
    score[parents] = model.score(X[parents])
    alt = np.empty(len(X))
    alt[parents] = alt_score(X[parents])
    orphan = ~parents
    if orphan.any():
        pct = percentile_below(fam_sorted, X[orphan, FAM_INC])
        par = quantile(np.sort(model.parental_score(X[parents])), pct)
        inc_z = (X[orphan, FAM_INC] - model.means[FAM_INC]) / model.sds[FAM_INC]
        score[orphan] = par + model.loadings[FAM_INC] * inc_z
        par_alt = quantile(np.sort(_alt_parental(X[parents])), pct)
        alt[orphan] = X[orphan, FAM_INC] ** 2 + par_alt
    return SesScores(X, score, alt, orphan, need_inc, model, prelim)


def population_contexts(scores: SesScores) -> tuple[SesContext, SesContext]:
    """Contexts reproducing :func:`score_population` profile by profile.

    The first (preliminary component) serves missing ``fam_inc``; the second
    (final component) serves students with no parental information.
    """
    X = scores.completed
    parents = ~scores.parental_imputed
    fam_sorted = np.sort(X[~scores.fam_inc_imputed, FAM_INC])
    alt_sorted = np.sort(_alt_parental(X[parents]))
    return tuple(
        SesContext(model, fam_sorted, np.sort(model.parental_score(X[parents])), alt_sorted)
        for model in (scores.preliminary_model, scores.model)
    )


def assign_ses_groups(ids, scores, n_low: int) -> np.ndarray:
    """Boolean low-SES flags: the ``n_low`` lowest scores, ties by ascending id."""
    ids = np.asarray(ids)
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((ids, scores))
    low = np.zeros(scores.shape[0], dtype=bool)
    low[order[:n_low]] = True
    return low


@dataclass(frozen=True)
class SesAssignment:
    scores: SesScores
    low_ses: np.ndarray
    score_kind: str


def ses_assignment(population: AnalysisPopulation, score_kind: str = "pc") -> SesAssignment:
    """Score everyone and size the low-SES group to the number of black students."""
    scores = score_population(population)
    if score_kind == "pc":
        s = scores.score
    elif score_kind == "alt":
        s = scores.alt_score
    else:
        raise ValueError(f"unknown score kind {score_kind!r}")
    low = assign_ses_groups(population.ids, s, int(population.black.sum()))
    return SesAssignment(scores, low, score_kind)


def write_score_table(population: AnalysisPopulation, assignment: SesAssignment, path) -> None:
    sc = assignment.scores
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "score", "alt_score", "group"])
        for i, sid in enumerate(population.ids):
            w.writerow([sid, repr(float(sc.score[i])), repr(float(sc.alt_score[i])),
                        "low_ses" if assignment.low_ses[i] else "high_ses"])
