"""Synthetic law-student population with known generating models.

(LSAT, UGPA, SES factor) are latent normals per race.  LSAT is rounded to
an integer on the 11-48 scale and UGPA clipped to [1, 4] at 0.01 resolution;
the five SES components are ordinal 1-5 discretisations of a one-factor
model, with missingness and homemaker responses layered on top.  Observed
tiers come from simulating the conditional enrollment cascade with
``ENROLLMENT_TRUTH``; observed outcomes from the sequential stage models in
``OUTCOME_TRUTH``, evaluated with the SES groups the scoring pipeline
assigns to the generated data.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .dataset import (HOMEMAKER, TIERS, AnalysisPopulation, OutcomeClass, Race, SesProfile,
                      StudentRecord, filter_analysis_population, lsat_quartiles_by_group)
from .outcomes import Stage, class_probabilities, outcome_design, recompute_lsat_percentiles
from .ses_scoring import ses_assignment

# (intercept, lsat, ugpa) of the tier-t versus lower-tier logit
ENROLLMENT_TRUTH = {
    ("black", 1): (-12.95, 0.20, 1.47),
    ("black", 2): (-7.51, 0.12, 0.91),
    ("black", 3): (-3.11, 0.09, 0.20),
    ("black", 4): (-4.12, 0.14, 0.71),
    ("white", 1): (-16.46, 0.22, 1.57),
    ("white", 2): (-8.17, 0.12, 0.73),
    ("white", 3): (-10.57, 0.15, 1.44),
    ("white", 4): (-4.72, 0.14, 0.48),
}

# rows: intercept, female, lsat, lsat_perc, ugpa, black, low_ses,
#       lsat_perc:black, lsat_perc:low_ses; columns: tiers 1-5
_OUTCOME_TABLES = {
    Stage.DROPOUT: [
        (5.06, 0.77, 0.91, -1.09, 1.44),
        (-0.62, -0.14, -0.06, -0.07, -0.25),
        (-0.19, -0.08, -0.09, -0.03, -0.09),
        (1.74, -0.08, 0.37, -0.43, 0.18),
        (-0.22, -0.16, -0.01, 0.08, -0.15),
        (-1.56, 0.21, 0.31, 0.71, 0.71),
        (0.64, 0.34, 0.41, 0.15, 0.64),
        (4.79, 0.32, -0.96, -0.79, -1.15),
        (-4.91, 0.16, 0.26, 1.09, 0.49),
    ],
    Stage.SKIP_BAR: [
        (-2.98, -0.56, 2.26, -3.09, -3.45),
        (-0.17, -0.06, 0.08, 0.07, 0.04),
        (-0.12, -0.04, -0.16, 0.01, 0.01),
        (2.61, 0.80, 2.41, -0.18, 0.23),
        (1.13, -0.18, -0.02, -0.01, 0.25),
        (0.54, 0.44, -0.22, 0.50, 1.25),
        (1.91, 0.27, -0.42, 0.40, -1.11),
        (-0.05, -3.36, 0.78, 0.16, -4.34),
        (-19.35, -0.67, 0.79, 0.05, 2.36),
    ],
    Stage.PASS_FIRST: [
        (-7.79, -7.16, -7.61, -6.51, -7.71),
        (0.07, -0.22, -0.08, -0.12, -0.48),
        (0.19, 0.18, 0.19, 0.17, 0.25),
        (-0.43, -0.59, -0.57, -0.47, -2.09),
        (0.94, 0.99, 1.04, 0.96, 0.76),
        (0.06, -0.36, -0.12, -0.69, -0.33),
        (0.84, -0.76, -0.44, -0.09, 0.59),
        (-1.72, -0.83, -0.68, -0.13, -0.94),
        (-2.34, 0.29, 0.34, -0.01, -0.74),
    ],
    Stage.PASS_LATER: [
        (-4.61, -4.92, -2.52, -3.37, -4.41),
        (0.27, 0.27, 0.10, -0.15, -0.11),
        (0.12, 0.14, 0.04, 0.11, 0.15),
        (-1.04, -1.94, -0.31, -1.78, -1.14),
        (0.37, 0.30, 0.52, 0.27, 0.19),
        (0.26, -0.21, 0.30, -0.47, 0.31),
        (-0.38, -0.64, -0.25, -0.31, 0.21),
        (-0.17, 0.30, -3.49, 1.32, -6.78),
        (-2.95, 2.56, 0.74, 0.83, -1.07),
    ],
}
OUTCOME_TRUTH = {(stage, t): tuple(row[t - 1] for row in table)
                 for stage, table in _OUTCOME_TABLES.items() for t in TIERS}


@dataclass(frozen=True)
class RaceParams:
    lsat_mean: float
    lsat_sd: float
    ugpa_mean: float
    ugpa_sd: float
    ses_shift: float = 0.0   # mean of the latent SES factor


@dataclass(frozen=True)
class Target:
    name: str
    value: float
    tolerance: Optional[float]   # None: reported only


DEFAULT_TARGETS = (
    Target("n_total", 27000, 0),
    Target("n_black", 1510, 0),
    Target("black_tier1", 147, 30),
    Target("black_tier2", 278, 45),
    Target("low_ses_black", 251, 35),
    Target("frac_black_low_ses", 0.17, 0.025),
    Target("frac_white_low_ses", 0.05, 0.01),
    Target("low_ses_tier1", 87, 25),
    Target("low_ses_tier2", 270, 50),
    Target("low_ses_tier3", 406, 70),
    Target("low_ses_tier4", 600, 90),
    Target("low_ses_tier5", 147, 40),
    Target("black_tier5_lsat_q25", 21, 1),
    Target("black_tier5_lsat_q50", 24, 1),
    Target("black_tier5_lsat_q75", 27, 1),
    Target("white_tier5_lsat_q25", 30, 1),
    Target("white_tier5_lsat_q50", 33, 1),
    Target("white_tier5_lsat_q75", 35, 1),
    Target("ses_pc_variance", 0.60, 0.05),
    Target("frac_ses_incomplete", 14291 / 27000, 0.05),
) + tuple(
    Target(f"rate_{group}_{token}", value, tol)
    for group, tol, values in (
        ("black", 0.04, (0.1914, 0.0768, 0.4589, 0.1238, 0.1490)),
        ("white", 0.015, (0.0866, 0.0617, 0.7731, 0.0461, 0.0326)),
        ("low_ses", 0.04, (0.1781, 0.0689, 0.5974, 0.0742, 0.0815)),
        ("high_ses", 0.015, (0.0874, 0.0621, 0.7646, 0.0491, 0.0367)),
    )
    for token, value in zip(("dropout", "grad_no_bar", "passed_first", "passed_later", "failed_bar"), values)
)


@dataclass(frozen=True)
class GeneratorConfig:
    n: int = 27000
    n_black: int = 1510
    seed: int = 0
    black: RaceParams = RaceParams(29.0, 5.6, 2.88, 0.42, -0.78)
    white: RaceParams = RaceParams(37.4, 4.7, 3.22, 0.40, 0.0)
    lsat_ugpa_corr: float = 0.3
    ses_lsat_corr: float = 0.2
    ses_loadings: tuple = (0.72, 0.74, 0.76, 0.77, 0.52)
    # cumulative category probabilities (categories 1..5) at factor = 0
    ses_category_probs: tuple = (0.10, 0.30, 0.55, 0.80)
    p_homemaker: float = 0.21
    p_item_missing: float = 0.08
    p_parent_missing: float = 0.04
    p_both_parents_missing: float = 0.01
    p_fam_inc_missing: float = 0.05
    enrollment: dict = field(default_factory=lambda: dict(ENROLLMENT_TRUTH))
    outcomes: dict = field(default_factory=lambda: dict(OUTCOME_TRUTH))
    # extra records outside the analysis population
    n_other_races: int = 0
    n_tier6: int = 0
    n_no_ses: int = 0
    race_blind: bool = False
    targets: tuple = DEFAULT_TARGETS

    def __post_init__(self):
        if not 0 < self.n_black < self.n:
            raise ValueError("need 0 < n_black < n")
        probs = self.ses_category_probs
        if any(not 0 < p < 1 for p in probs) or any(a >= b for a, b in zip(probs, probs[1:])):
            raise ValueError("ses_category_probs must be increasing in (0, 1)")
        for rp in (self.black, self.white):
            if rp.lsat_sd <= 0 or rp.ugpa_sd <= 0:
                raise ValueError("standard deviations must be positive")
        for name in ("lsat_ugpa_corr", "ses_lsat_corr"):
            if not -1 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (-1, 1)")
        if any(not 0 < l < 1 for l in self.ses_loadings):
            raise ValueError("ses_loadings must lie in (0, 1)")
        probs = [getattr(self, f"p_{k}") for k in ("homemaker", "item_missing", "parent_missing",
                                                    "both_parents_missing", "fam_inc_missing")]
        if any(not 0 <= p <= 1 for p in probs):
            raise ValueError("missingness probabilities must lie in [0, 1]")
        byname = {t.name: t.value for t in self.targets}
        for race in ("black", "white"):
            q = [byname.get(f"{race}_tier5_lsat_{k}") for k in ("q25", "q50", "q75")]
            if None not in q and not q[0] <= q[1] <= q[2]:
                raise ValueError(f"{race} Tier-5 LSAT quartile targets are not monotone: {q}")
        if self.race_blind:
            object.__setattr__(self, "black", replace(self.white))


@dataclass
class GeneratorManifest:
    rows: list = field(default_factory=list)

    def add(self, name, target, achieved, tolerance):
        if tolerance is None:
            ok = True
        else:
            ok = bool(abs(achieved - target) <= tolerance + 1e-12)
        self.rows.append(dict(target_name=name, target=float(target), achieved=float(achieved),
                              deviation=float(achieved - target),
                              tolerance=("" if tolerance is None else float(tolerance)),
                              passed=ok))

    @property
    def failures(self) -> list:
        return [r for r in self.rows if not r["passed"]]

    @property
    def ok(self) -> bool:
        return not self.failures

    def achieved(self, name):
        for r in self.rows:
            if r["target_name"] == name:
                return r["achieved"]
        raise KeyError(name)

    def write(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target_name", "target", "achieved", "deviation", "tolerance", "passed"])
            for r in self.rows:
                w.writerow([r["target_name"], repr(r["target"]), repr(r["achieved"]),
                            repr(r["deviation"]), r["tolerance"] if r["tolerance"] == "" else repr(r["tolerance"]),
                            "pass" if r["passed"] else "FAIL"])


def draw_covariates(rp: RaceParams, n: int, cfg: GeneratorConfig, rng: np.random.Generator):
    """Integer LSAT, 0.01-grid UGPA and the latent SES factor for ``n`` students."""
    r_lu, r_sl = cfg.lsat_ugpa_corr, cfg.ses_lsat_corr
    # factor, lsat, ugpa; UGPA relates to the factor only through LSAT
    C = np.array([[1.0, r_sl, r_sl * r_lu],
                  [r_sl, 1.0, r_lu],
                  [r_sl * r_lu, r_lu, 1.0]])
    Z = rng.standard_normal((n, 3)) @ np.linalg.cholesky(C).T
    factor = rp.ses_shift + Z[:, 0]
    lsat = np.clip(np.rint(rp.lsat_mean + rp.lsat_sd * Z[:, 1]), 11, 48).astype(int)
    ugpa = np.clip(np.round(rp.ugpa_mean + rp.ugpa_sd * Z[:, 2], 2), 1.0, 4.0)
    return lsat, ugpa, factor


def draw_ses_components(factor, cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """Ordinal 1-5 components from the one-factor model (no missingness)."""
    lam = np.asarray(cfg.ses_loadings)
    cuts = norm.ppf(cfg.ses_category_probs)
    eps = rng.standard_normal((factor.shape[0], 5))
    latent = factor[:, None] * lam + eps * np.sqrt(1 - lam**2)
    return 1 + (latent[:, :, None] > cuts).sum(axis=2)


def apply_missingness(values: np.ndarray, cfg: GeneratorConfig, rng: np.random.Generator) -> list:
    """Turn complete components into SesProfile objects with holes."""
    n = values.shape[0]
    u = rng.random((n, 9))
    out = []
    for i in range(n):
        v: list = [int(x) for x in values[i]]
        for k in range(5):
            if u[i, k] < cfg.p_item_missing:
                v[k] = None
        if u[i, 5] < cfg.p_homemaker:
            v[0] = HOMEMAKER
        if u[i, 6] < cfg.p_both_parents_missing:
            v[0] = v[1] = v[2] = v[3] = None
        elif u[i, 6] < cfg.p_both_parents_missing + cfg.p_parent_missing:
            # the missing parent is the father two times in three
            if u[i, 7] < 2 / 3:
                v[1] = v[3] = None
            else:
                v[0] = v[2] = None
        if u[i, 8] < cfg.p_fam_inc_missing:
            v[4] = None
        if all(x is None or x == HOMEMAKER for x in v):
            v[4] = int(values[i, 4])
        out.append(SesProfile(*v))
    return out


def simulate_cascade(lsat, ugpa, coefs, rng: np.random.Generator) -> np.ndarray:
    """Observed tiers by sequential Bernoulli draws from the conditional models."""
    n = lsat.shape[0]
    tier = np.full(n, 5)
    open_ = np.ones(n, dtype=bool)
    u = rng.random((n, 4))
    for t in (1, 2, 3, 4):
        b0, b1, b2 = coefs[t]
        p = expit(b0 + b1 * lsat + b2 * ugpa)
        hit = open_ & (u[:, t - 1] < p)
        tier[hit] = t
        open_ &= ~hit
    return tier


def simulate_outcomes(design: np.ndarray, tiers, coefs, rng: np.random.Generator) -> np.ndarray:
    n = design.shape[0]
    sp = np.empty((n, 4))
    for stage in Stage:
        for t in TIERS:
            rows = tiers == t
            b = np.asarray(coefs[(stage, t)])
            sp[rows, stage] = expit(b[0] + design[rows] @ b[1:])
    probs = class_probabilities(sp)
    cum = np.cumsum(probs, axis=1)
    u = rng.random(n)[:, None]
    return np.minimum((u > cum).sum(axis=1), 4)


def _race_coefs(cfg, race):
    key = "black" if race == "black" and not cfg.race_blind else "white"
    return {t: cfg.enrollment[(key, t)] for t in (1, 2, 3, 4)}


_OTHER_PARAMS = {
    Race.HISPANIC: RaceParams(32.0, 5.5, 3.02, 0.42, -0.5),
    Race.ASIAN: RaceParams(36.0, 5.2, 3.20, 0.40, -0.1),
    Race.OTHER: RaceParams(35.5, 5.4, 3.15, 0.42, -0.2),
}


def generate_population(config: Optional[GeneratorConfig] = None, rng=None):
    """Draw a population; returns ``(records, manifest)``.

    ``rng`` defaults to ``np.random.default_rng(config.seed)``.
    """
    cfg = config or GeneratorConfig()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n_b, n_w = cfg.n_black, cfg.n - cfg.n_black

    parts = []   # (race, lsat, ugpa, factor, tier)
    for race, n_r, rp in (("black", n_b, cfg.black), ("white", n_w, cfg.white)):
        lsat, ugpa, factor = draw_covariates(rp, n_r, cfg, rng)
        tier = simulate_cascade(lsat, ugpa, _race_coefs(cfg, race), rng)
        parts.append((np.full(n_r, race), lsat, ugpa, factor, tier))
    race = np.concatenate([p[0] for p in parts]).astype(object)
    lsat = np.concatenate([p[1] for p in parts])
    ugpa = np.concatenate([p[2] for p in parts])
    factor = np.concatenate([p[3] for p in parts])
    tier = np.concatenate([p[4] for p in parts])
    female = (rng.random(cfg.n) < 0.43).astype(int)
    ses = apply_missingness(draw_ses_components(factor, cfg, rng), cfg, rng)

    perm = rng.permutation(cfg.n)
    race, lsat, ugpa, tier, female = race[perm], lsat[perm], ugpa[perm], tier[perm], female[perm]
    ses = [ses[i] for i in perm]
    width = 6
    ids = [f"S{i + 1:0{width}d}" for i in range(cfg.n)]

    # outcomes need the SES groups the scoring pipeline will assign
    provisional = [StudentRecord(ids[i], int(lsat[i]), float(ugpa[i]), int(female[i]),
                                 Race(race[i]), ses[i], int(tier[i]), OutcomeClass.DROPOUT)
                   for i in range(cfg.n)]
    pop = filter_analysis_population(provisional)
    assignment = ses_assignment(pop)
    perc = recompute_lsat_percentiles(pop.tier, pop.lsat)
    X = outcome_design(pop.female, pop.lsat, perc, pop.ugpa, pop.black, assignment.low_ses)
    outcome = simulate_outcomes(X, pop.tier, cfg.outcomes, rng)
    records = [replace(r, outcome=OutcomeClass(int(o))) for r, o in zip(pop.records, outcome)]
    records += _extra_records(cfg, rng, start=cfg.n + 1, width=width)

    pop = AnalysisPopulation(tuple(records[:cfg.n]), pop.provenance)
    manifest = calibration_report(records, cfg, population=pop, assignment=assignment)
    return records, manifest


def _extra_records(cfg: GeneratorConfig, rng, start: int, width: int) -> list:
    extra = []
    nxt = start

    def emit(race_, lsat_, ugpa_, factor_, tier_):
        nonlocal nxt
        comps = draw_ses_components(np.atleast_1d(factor_), cfg, rng)
        ses = apply_missingness(comps, cfg, rng)
        for j in range(len(lsat_)):
            out = OutcomeClass(int(rng.integers(0, 5)))
            extra.append(StudentRecord(f"S{nxt:0{width}d}", int(lsat_[j]), float(ugpa_[j]),
                                       int(rng.random() < 0.43), race_, ses[j], int(tier_[j]), out))
            nxt += 1

    if cfg.n_other_races:
        races = (Race.HISPANIC, Race.ASIAN, Race.OTHER)
        counts = np.bincount(np.arange(cfg.n_other_races) % 3, minlength=3)
        for r, k in zip(races, counts):
            rp = cfg.white if cfg.race_blind else _OTHER_PARAMS[r]
            lsat, ugpa, factor = draw_covariates(rp, int(k), cfg, rng)
            tier = simulate_cascade(lsat, ugpa, _race_coefs(cfg, "white"), rng)
            emit(r, lsat, ugpa, factor, tier)
    if cfg.n_tier6:
        n_b6 = int(round(0.8 * cfg.n_tier6))
        for r, k, rp in ((Race.BLACK, n_b6, RaceParams(25.5, 6.5, 2.8, 0.42, -0.9)),
                         (Race.WHITE, cfg.n_tier6 - n_b6, RaceParams(30.5, 6.0, 3.0, 0.42, 0.0))):
            lsat, ugpa, factor = draw_covariates(rp, k, cfg, rng)
            emit(r, lsat, ugpa, factor, np.full(k, 6))
    if cfg.n_no_ses:
        lsat, ugpa, _ = draw_covariates(cfg.white, cfg.n_no_ses, cfg, rng)
        tier = simulate_cascade(lsat, ugpa, _race_coefs(cfg, "white"), rng)
        for j in range(cfg.n_no_ses):
            extra.append(StudentRecord(f"S{nxt:0{width}d}", int(lsat[j]), float(ugpa[j]), 0,
                                       Race.WHITE, SesProfile(), int(tier[j]),
                                       OutcomeClass.GRAD_NO_BAR))
            nxt += 1
    return extra


def _statistics(records, population: AnalysisPopulation, low_ses, pc_variance) -> dict:
    black = population.black
    tier = population.tier
    stats = {
        "n_total": len(records),
        "n_black": int(black.sum()),
        "low_ses_black": int(np.sum(low_ses & black)),
        "frac_black_low_ses": float(np.mean(low_ses[black])),
        "frac_white_low_ses": float(np.mean(low_ses[~black])),
        "ses_pc_variance": pc_variance,
        "frac_ses_incomplete": float(np.mean([
            any(v is None or v == HOMEMAKER for v in r.ses.values()) for r in population.records])),
        "n_retained": len(population),
    }
    for t in TIERS:
        stats[f"black_tier{t}"] = int(np.sum(black & (tier == t)))
        stats[f"low_ses_tier{t}"] = int(np.sum(low_ses & (tier == t)))
        stats[f"tier{t}_size"] = int(np.sum(tier == t))
    for race in ("black", "white"):
        q = lsat_quartiles_by_group(population, 5, race)
        for name, v in zip(("q25", "q50", "q75"), q):
            stats[f"{race}_tier5_lsat_{name}"] = v
    out = population.outcome
    for label, mask in (("black", black), ("white", ~black), ("low_ses", low_ses), ("high_ses", ~low_ses)):
        for c in OutcomeClass:
            stats[f"rate_{label}_{c.token}"] = float(np.mean(out[mask] == c))
    return stats


def calibration_report(records, config: Optional[GeneratorConfig] = None, targets=None,
                       population: Optional[AnalysisPopulation] = None, assignment=None
                       ) -> GeneratorManifest:
    """Recompute every target statistic from ``records`` and compare.

    Statistics without a target are listed with no tolerance.
    """
    cfg = config or GeneratorConfig()
    targets = cfg.targets if targets is None else targets
    records = list(records)
    if population is None:
        population = filter_analysis_population(records)
    if assignment is None:
        assignment = ses_assignment(population)
    stats = _statistics(records, population, assignment.low_ses,
                        assignment.scores.model.variance_explained)
    manifest = GeneratorManifest()
    seen = set()
    for tg in targets:
        manifest.add(tg.name, tg.value, stats[tg.name], tg.tolerance)
        seen.add(tg.name)
    for name, v in stats.items():
        if name not in seen:
            manifest.add(name, float("nan"), v, None)
    return manifest


def config_dict(cfg: GeneratorConfig) -> dict:
    d = asdict(cfg)
    d.pop("enrollment")
    d.pop("outcomes")
    d.pop("targets")
    return d
