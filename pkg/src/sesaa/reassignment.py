"""Counterfactual tier reassignment under SES-based preferences.

Low-SES students are scored with the black-student enrollment models and
high-SES students with the white-student models.  Tiers are filled from the
top down; whoever is left after Tier 4 goes to Tier 5.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import bayes_logit as bl
from .dataset import TIERS, AnalysisPopulation
from .enrollment import CASCADE_TIERS, EnrollmentCascade

log = logging.getLogger(__name__)

MODES = ("quota", "bernoulli", "unconstrained")


class ReassignmentError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuotaTable:
    """Per-tier black and white counts under the observed assignment."""

    black: np.ndarray
    white: np.ndarray

    @property
    def totals(self) -> np.ndarray:
        return self.black + self.white


@dataclass(frozen=True)
class TierAssignment:
    tiers: np.ndarray   # aligned with the population order
    mode: str

    def as_dict(self, ids) -> dict:
        return {sid: int(t) for sid, t in zip(ids, self.tiers)}


def compute_quotas(population: AnalysisPopulation) -> QuotaTable:
    tier, black = population.tier, population.black
    b = np.array([np.sum(black & (tier == t)) for t in TIERS])
    w = np.array([np.sum(~black & (tier == t)) for t in TIERS])
    return QuotaTable(b, w)


def weighted_sample(weights, k: int, rng: np.random.Generator) -> np.ndarray:
    """Positions of ``k`` items drawn without replacement, successively
    proportional to ``weights``.

    Uses exponential race keys ``E_i / w_i``: the ``k`` smallest keys have
    the same law as ``k`` successive proportional draws.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ReassignmentError("weights must be finite and nonnegative")
    if k == 0:
        return np.empty(0, dtype=int)
    positive = int(np.count_nonzero(w))
    if positive == 0:
        raise ReassignmentError(f"all weights are zero but {k} draws were requested")
    if k > positive:
        raise ReassignmentError(f"cannot draw {k} items: only {positive} have positive weight")
    e = rng.standard_exponential(w.shape[0])
    # log keys order like E/w but stay finite for subnormal weights
    keys = np.full(w.shape[0], np.inf)
    pos = w > 0
    keys[pos] = np.log(e[pos]) - np.log(w[pos])
    return np.argsort(keys, kind="stable")[:k]


def bernoulli_fill(weights, k: int, rng: np.random.Generator) -> np.ndarray:
    """Visit items in random order, accept each with probability ``weights``,
    stop after ``k`` acceptances.

    If a single pass accepts fewer than ``k``, the shortfall is filled by
    descending weight among the rest.
    """
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    if k > n:
        raise ReassignmentError(f"cannot fill {k} places from {n} candidates")
    if k == 0:
        return np.empty(0, dtype=int)
    perm = rng.permutation(n)
    accepted = perm[rng.random(n) < w[perm]]
    if accepted.shape[0] >= k:
        return accepted[:k]
    log.info("Bernoulli pass filled %d of %d places; topping up by probability",
             accepted.shape[0], k)
    rest = np.setdiff1d(np.arange(n), accepted)
    rest = rest[np.argsort(-w[rest], kind="stable")]
    return np.concatenate([accepted, rest[:k - accepted.shape[0]]])


def fill_with_quotas(weight_fn: Callable[[int], np.ndarray], group_of, quotas,
                     rng: np.random.Generator, order=None, method: str = "sample") -> np.ndarray:
    """Top-down tier filling with a fixed count per (group, tier).

    ``weight_fn(t)`` returns weights for every student for tier index ``t``
    and is called once per tier (parameter draws happen there).  ``quotas``
    has shape (n_groups, n_tiers); the last tier receives the leftovers.
    Returns 0-based tier indices.
    """
    group_of = np.asarray(group_of)
    quotas = np.asarray(quotas, dtype=int)
    n = group_of.shape[0]
    n_groups, n_tiers = quotas.shape
    for g in range(n_groups):
        if quotas[g].sum() != np.sum(group_of == g):
            raise ReassignmentError(f"quotas for group {g} do not sum to its size")
    order = np.arange(n) if order is None else np.asarray(order)
    pick = weighted_sample if method == "sample" else bernoulli_fill
    assigned = np.full(n, n_tiers - 1)
    remaining = np.ones(n, dtype=bool)
    for t in range(n_tiers - 1):
        w = weight_fn(t)
        for g in range(n_groups):
            cand = order[remaining[order] & (group_of[order] == g)]
            k = int(quotas[g, t])
            if k > cand.shape[0]:
                raise ReassignmentError(f"quota {k} exceeds {cand.shape[0]} candidates (group {g}, tier {t + 1})")
            chosen = cand[pick(w[cand], k, rng)]
            assigned[chosen] = t
            remaining[chosen] = False
    return assigned


def _tier_weights(cascade: EnrollmentCascade, tier: int, X, low_ses, rng, draw: bool) -> np.ndarray:
    # one parameter draw per model per tier, shared by every student
    if draw:
        b_black = cascade.draw("black", tier, rng)
        b_white = cascade.draw("white", tier, rng)
    else:
        b_black, b_white = cascade.coef("black", tier), cascade.coef("white", tier)
    return transplant_weights(b_black, b_white, X, low_ses)


def transplant_weights(coef_black, coef_white, X, low_ses) -> np.ndarray:
    """Black-model probabilities for low-SES students, white-model for the rest."""
    return np.where(low_ses, bl.predict_prob(coef_black, X), bl.predict_prob(coef_white, X))


def reassign_tiers_quota(population: AnalysisPopulation, cascade: EnrollmentCascade,
                         quotas: QuotaTable, low_ses, rng: np.random.Generator,
                         method: str = "sample", draw: bool = True) -> TierAssignment:
    """Low-SES count in tier t equals the observed black count; high-SES the white count.

    ``method="sample"`` takes fixed-size weighted samples; ``"bernoulli"``
    fills each quota by Bernoulli draws in random order.
    """
    low_ses = np.asarray(low_ses, dtype=bool)
    X = np.column_stack([population.lsat, population.ugpa])
    group_of = np.where(low_ses, 0, 1)
    q = np.vstack([quotas.black, quotas.white])
    tiers = fill_with_quotas(
        lambda t: _tier_weights(cascade, CASCADE_TIERS[t], X, low_ses, rng, draw),
        group_of, q, rng, order=population.id_order, method=method)
    return TierAssignment(tiers + 1, "quota" if method == "sample" else "bernoulli")


def reassign_tiers_unconstrained(population: AnalysisPopulation, cascade: EnrollmentCascade,
                                 low_ses, rng: np.random.Generator,
                                 tier_sizes: Optional[np.ndarray] = None,
                                 draw: bool = True) -> TierAssignment:
    """Fill each tier to its observed size by Bernoulli draws; no SES quotas."""
    low_ses = np.asarray(low_ses, dtype=bool)
    X = np.column_stack([population.lsat, population.ugpa])
    if tier_sizes is None:
        tier_sizes = compute_quotas(population).totals
    quotas = np.asarray(tier_sizes, dtype=int).reshape(1, -1)
    tiers = fill_with_quotas(
        lambda t: _tier_weights(cascade, CASCADE_TIERS[t], X, low_ses, rng, draw),
        np.zeros(len(population), dtype=int), quotas, rng,
        order=population.id_order, method="bernoulli")
    return TierAssignment(tiers + 1, "unconstrained")


def reassign(population, cascade, quotas, low_ses, rng, mode: str = "quota", draw: bool = True
             ) -> TierAssignment:
    if mode == "quota":
        return reassign_tiers_quota(population, cascade, quotas, low_ses, rng, "sample", draw)
    if mode == "bernoulli":
        return reassign_tiers_quota(population, cascade, quotas, low_ses, rng, "bernoulli", draw)
    if mode == "unconstrained":
        return reassign_tiers_unconstrained(population, cascade, low_ses, rng, quotas.totals, draw)
    raise ValueError(f"unknown mode {mode!r}")
