"""Coefficient recovery: refit on generated data and compare with the generating truth."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from . import mi
from .dataset import filter_analysis_population
from .synthgen import GeneratorConfig, generate_population


@dataclass(frozen=True)
class CoverageRow:
    seed: int
    model: str       # "enrollment" or "outcome"
    key: tuple       # (group, tier) or (stage name, tier)
    term: str
    truth: float
    estimate: float
    sd: float

    def covered(self, z: float = 1.96) -> bool:
        return abs(self.estimate - self.truth) <= z * self.sd


def coverage_rows(fitted: mi.FittedPipeline, config: GeneratorConfig, seed: int) -> list[CoverageRow]:
    rows = []
    for (g, t), m in fitted.cascade.models.items():
        for term, b, s, truth in zip(m.spec.terms, m.coef, m.sd, config.enrollment[(g, t)]):
            rows.append(CoverageRow(seed, "enrollment", (g, t), term, truth, float(b), float(s)))
    for (stage, t), m in fitted.outcome_models.models.items():
        for term, b, s, truth in zip(m.spec.terms, m.coef, m.sd, config.outcomes[(stage, t)]):
            rows.append(CoverageRow(seed, "outcome", (stage.name.lower(), t), term, truth, float(b), float(s)))
    return rows


def recovery_experiment(seeds: Iterable[int], config: Optional[GeneratorConfig] = None) -> list[CoverageRow]:
    """Generate one population per seed, refit every model, collect coefficient comparisons."""
    base = config or GeneratorConfig()
    rows = []
    for seed in seeds:
        cfg = replace(base, seed=seed)
        records, _ = generate_population(cfg)
        fitted = mi.fit_pipeline(filter_analysis_population(records))
        rows += coverage_rows(fitted, cfg, seed)
    return rows


def coverage_fraction(rows, z: float = 1.96) -> float:
    return float(np.mean([r.covered(z) for r in rows]))
