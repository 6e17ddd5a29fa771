"""Run configuration, the end-to-end pipeline and the emitted tables.

Every table is a list of dict rows written as comma-delimited text.  Floats
are written with ``repr`` so files are byte-stable for a fixed seed.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bayes_logit as bl
from . import mi
from .dataset import (SES_FIELDS, TIERS, AnalysisPopulation, DatasetError, OutcomeClass, Race,
                      filter_analysis_population, nearest_rank_quantile, parse_dataset, write_dataset)
from .enrollment import cascade_rows, screen_race_effects
from .outcomes import outcome_rows
from .reassignment import MODES, ReassignmentError
from .ses_scoring import SesError, ses_assignment, write_score_table
from .synthgen import GeneratorConfig, generate_population

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_FIT = 4
EXIT_SIMULATION = 5

SES_SCORES = ("pc", "alt")
COMPOSITION_GROUPS = ("black", "white", "low_ses", "high_ses")
AGGREGATE_TIERS = (1, 2, 3)
AGGREGATE_LABEL = "1-3"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """One pipeline run.  ``input`` is a CSV path; without it a population is generated."""

    input: Optional[str] = None
    generator_seed: Optional[int] = 0
    mode: str = "quota"
    ses_score: str = "pc"
    m: int = mi.DEFAULT_M
    seed: int = 0
    out: str = "out"
    prior_df: float = 1.0
    prior_scale: float = 2.5
    prior_scale_intercept: float = 10.0
    n_jobs: int = 1
    export_assignments: bool = False

    def validate(self) -> "RunConfig":
        if (self.input is None) == (self.generator_seed is None):
            raise ConfigError("exactly one input source required: an input file or a generator seed")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.ses_score not in SES_SCORES:
            raise ConfigError(f"ses_score must be one of {SES_SCORES}, got {self.ses_score!r}")
        if self.m < 2:
            raise ConfigError(f"m must be at least 2, got {self.m}")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be positive")
        for name in ("prior_df", "prior_scale", "prior_scale_intercept"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        return self

    @property
    def prior(self) -> bl.LogitSpec:
        return bl.LogitSpec((), self.prior_scale, self.prior_scale_intercept, self.prior_df)


_CASTS = {"input": str, "generator_seed": int, "mode": str, "ses_score": str, "m": int, "seed": int,
          "out": str, "prior_df": float, "prior_scale": float, "prior_scale_intercept": float,
          "n_jobs": int, "export_assignments": lambda v: str(v).lower() in ("1", "true", "yes", "on")}
ENV_PREFIX = "SESAA_"


def _coerce(key: str, value) -> object:
    if key not in _CASTS:
        raise ConfigError(f"unknown setting {key!r}")
    if value is None:
        return None
    try:
        return _CASTS[key](value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    settings = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        settings[key] = _coerce(key, value)
    return settings


def env_settings(environ) -> dict:
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key == "config":
                continue
            out[key] = _coerce(key, value)
    return out


def resolve_config(file_settings: Optional[dict] = None, env: Optional[dict] = None,
                   flags: Optional[dict] = None) -> RunConfig:
    """Defaults < config file < environment < command-line flags."""
    merged: dict = {}
    for layer in (file_settings or {}, env or {}, {k: v for k, v in (flags or {}).items() if v is not None}):
        for key, value in layer.items():
            merged[key] = _coerce(key, value)
    # an input file replaces the default generator; giving both explicitly is an error
    if merged.get("input") is not None:
        merged.setdefault("generator_seed", None)
    return RunConfig(**merged).validate()


# -- tables --------------------------------------------------------------------------

@dataclass
class ReportBundle:
    tables: dict = field(default_factory=dict)
    pooled: dict = field(default_factory=dict)
    replications: list = field(default_factory=list)

    def write(self, out) -> list[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in sorted(self.tables):
            path = out / f"{name}.csv"
            write_table(self.tables[name], path)
            paths.append(path)
        return paths


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(rows: list, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for row in rows:
            w.writerow([_fmt(v) for v in row.values()])


def observed_counts(population: AnalysisPopulation, low_ses) -> dict:
    masks = mi.group_masks(population, low_ses)
    return {(g, t): float(np.sum(masks[g] & (population.tier == t))) for g in masks for t in TIERS}


def composition_table(population, low_ses, pooled) -> list[dict]:
    obs = observed_counts(population, low_ses)
    rows = []
    for g in COMPOSITION_GROUPS:
        for t in TIERS:
            est = pooled[("count", g, t)]
            rows.append(dict(group=g, tier=t, racial_aa=obs[(g, t)], ses_aa=est.point, se=est.se))
    return rows


def composition_delta_table(population, low_ses, replications) -> list[dict]:
    """ses_aa minus the observed count per (group, tier), plus the Tier 1-3 aggregate rows."""
    obs = observed_counts(population, low_ses)
    rows = []
    for g in COMPOSITION_GROUPS:
        for t in TIERS:
            est = mi.pool([r.stats[("count", g, t)] - obs[(g, t)] for r in replications])
            rows.append(dict(group=g, tier=str(t), delta=est.point, se=est.se))
    for g in ("black", "low_ses"):
        base = sum(obs[(g, t)] for t in AGGREGATE_TIERS)
        est = mi.pool([sum(r.stats[("count", g, t)] for t in AGGREGATE_TIERS) - base
                       for r in replications])
        rows.append(dict(group=g, tier=AGGREGATE_LABEL, delta=est.point, se=est.se))
    return rows


def outcome_table(population, low_ses, pooled) -> list[dict]:
    obs = mi.observed_rates(population, low_ses)
    rows = []
    for g in mi.GROUPS:
        for c in OutcomeClass:
            est = pooled[("rate", g, c.token)]
            base = obs[(g, c.token)]
            pct = 100.0 * (est.point - base) / base if base > 0 else math.nan
            rows.append(dict(group=g, outcome=c.token, racial_aa=base, ses_aa=est.point, se=est.se,
                             pct_change=pct))
    return rows


def outcome_by_tier_table(population, low_ses, pooled) -> list[dict]:
    masks = mi.group_masks(population, low_ses)
    rows = []
    for g in mi.GROUPS:
        for t in TIERS:
            cell = masks[g] & (population.tier == t)
            n = cell.sum()
            for c in OutcomeClass:
                est = pooled[("tier_rate", g, t, c.token)]
                base = float(np.mean(population.outcome[cell] == c)) if n else math.nan
                rows.append(dict(group=g, tier=t, outcome=c.token, racial_aa=base, ses_aa=est.point,
                                 se=est.se))
    return rows


def lsat_distribution_table(population, low_ses, pooled) -> list[dict]:
    """Plot-ready LSAT quartiles and deciles per (tier, group) under both policies."""
    masks = mi.group_masks(population, low_ses)
    rows = []
    for t in TIERS:
        for g in mi.GROUPS:
            vals = population.lsat[masks[g] & (population.tier == t)]
            for name, q in mi.QUANTILES.items():
                base = nearest_rank_quantile(vals, q) if vals.size else math.nan
                rows.append(dict(policy="racial_aa", tier=t, group=g, statistic=name, value=base, se=0.0))
            for name in mi.QUANTILES:
                est = pooled[("lsat", g, t, name)]
                rows.append(dict(policy="ses_aa", tier=t, group=g, statistic=name, value=est.point,
                                 se=est.se))
    return rows


def emit_composition_delta(bundle: ReportBundle) -> list[dict]:
    return bundle.tables["composition_delta"]


def emit_distribution_summaries(bundle: ReportBundle) -> list[dict]:
    return bundle.tables["lsat_distribution"]


def assignment_table(population, low_ses, replications) -> list[dict]:
    rows = []
    for r in replications:
        for i, rec in enumerate(population.records):
            rows.append(dict(replication=r.index, id=rec.id, observed_tier=rec.tier,
                             counterfactual_tier=int(r.assignment.tiers[i]),
                             ses_group="low_ses" if low_ses[i] else "high_ses", race=rec.race.value,
                             outcome=OutcomeClass(int(r.outcomes[i])).token))
    return rows


# -- pipeline ------------------------------------------------------------------------

@dataclass
class LoadedData:
    records: list
    population: AnalysisPopulation
    manifest: Optional[object] = None
    row_errors: list = field(default_factory=list)


def load_data(config: RunConfig) -> LoadedData:
    if config.input is not None:
        try:
            parsed = parse_dataset(config.input)
        except OSError as exc:
            raise DatasetError(f"cannot read {config.input}: {exc}") from None
        for err in parsed.errors:
            log.warning("skipped row: %s", err)
        pop = filter_analysis_population(parsed.records)
        return LoadedData(parsed.records, pop, None, parsed.errors)
    records, manifest = generate_population(GeneratorConfig(seed=config.generator_seed))
    return LoadedData(records, filter_analysis_population(records), manifest)


def fitted_pipeline(config: RunConfig, data: LoadedData) -> mi.FittedPipeline:
    return mi.fit_pipeline(data.population, config.ses_score, config.prior)


def fit_tables(config: RunConfig, data: LoadedData, fitted: mi.FittedPipeline) -> dict:
    prior = config.prior
    screen_spec = bl.LogitSpec(("lsat", "asian", "black", "hispanic", "other"), prior.prior_scale,
                               prior.prior_scale_intercept, prior.prior_df)
    tables = {
        "enrollment_coefficients": cascade_rows(fitted.cascade),
        "outcome_coefficients": outcome_rows(fitted.outcome_models),
    }
    # the screen compares against white students, so it needs some other race besides black
    if any(r.race not in (Race.WHITE, Race.BLACK) for r in data.records):
        tables["race_screen"] = screen_race_effects(data.records, screen_spec)
    return tables


def selfcheck_table(config: RunConfig, fitted: mi.FittedPipeline) -> list[dict]:
    return mi.self_check(fitted.population, fitted.low_ses, fitted.outcome_models, config.m, config.seed)


def simulate(config: RunConfig, fitted: mi.FittedPipeline) -> ReportBundle:
    reps = mi.run_replications(fitted, config.mode, config.m, config.seed, config.n_jobs)
    pooled = mi.pool_all(reps)
    pop, low = fitted.population, fitted.low_ses
    tables = {
        "composition": composition_table(pop, low, pooled),
        "composition_delta": composition_delta_table(pop, low, reps),
        "outcomes": outcome_table(pop, low, pooled),
        "outcomes_by_tier": outcome_by_tier_table(pop, low, pooled),
        "lsat_distribution": lsat_distribution_table(pop, low, pooled),
    }
    if config.export_assignments:
        tables["assignments"] = assignment_table(pop, low, reps)
    return ReportBundle(tables, pooled, reps)


def build_report(config: RunConfig, data: Optional[LoadedData] = None) -> ReportBundle:
    """ingest or generate -> score -> fit -> replicate -> pool."""
    data = data or load_data(config)
    fitted = fitted_pipeline(config, data)
    bundle = simulate(config, fitted)
    bundle.tables.update(fit_tables(config, data, fitted))
    bundle.tables["selfcheck"] = selfcheck_table(config, fitted)
    bundle.tables["provenance"] = [dict(rule=k, count=v) for k, v in data.population.provenance.items()]
    sc = fitted.ses.scores.model
    bundle.tables["ses_model"] = [dict(component=c, loading=float(l), mean=float(mu), sd=float(s))
                                  for c, l, mu, s in zip(SES_FIELDS, sc.loadings, sc.means, sc.sds)]
    bundle.tables["ses_model"].append(dict(component="variance_explained", loading=float(sc.variance_explained),
                                           mean=math.nan, sd=math.nan))
    if data.manifest is not None:
        bundle.tables["generator_manifest"] = data.manifest.rows
    return bundle


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DatasetError, SesError)):
        return EXIT_DATA
    if isinstance(exc, bl.FitError):
        return EXIT_FIT
    if isinstance(exc, (mi.SimulationError, ReassignmentError)):
        return EXIT_SIMULATION
    raise exc


def run(config: RunConfig) -> tuple[Optional[ReportBundle], int]:
    """Full pipeline; returns the bundle (None on failure) and the exit status."""
    try:
        config.validate()
        bundle = build_report(config)
        bundle.write(config.out)
    except Exception as exc:  # mapped to the exit-code taxonomy, re-raised if unknown
        code = exit_code_for(exc)
        log.error("%s", exc)
        return None, code
    return bundle, EXIT_OK


def write_generated(config: RunConfig, out) -> tuple[Path, object]:
    """Generate a population and write it with its calibration manifest."""
    records, manifest = generate_population(GeneratorConfig(seed=config.generator_seed or 0))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "students.csv"
    write_dataset(records, path)
    manifest.write(out / "generator_manifest.csv")
    return path, manifest


def write_scores(config: RunConfig, data: LoadedData, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ses_scores.csv"
    write_score_table(data.population, ses_assignment(data.population, config.ses_score), path)
    return path
