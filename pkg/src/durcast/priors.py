"""Stratum-level duration statistics used as prompt context and Bayesian prior.

The prior for a query is computed over the most specific stratum of the
training set (same ladder as retrieval post-processing) that contains at
least min_cohort cases; the global training set always qualifies as the
final fallback. The prior mean for Bayesian aggregation is the stratum
median, which is robust to the long right tail of surgical durations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrainingSet, SpecError
from .schema import CaseSet, SurgicalCase
from .strata import GLOBAL_STRATUM, describe_tier, ladder, matches_tier, tier_applicable

DEFAULT_MIN_COHORT = 5


@dataclass(frozen=True)
class StatisticalPrior:
    median_min: float
    mean_min: float
    range_min: tuple[float, float]
    iqr_min: tuple[float, float]
    variance_min2: float
    cohort_size: int
    stratum_descriptor: str
    fallback_level: int

    @property
    def mu_prior(self) -> float:
        return self.median_min


def _stats_over(durations: np.ndarray, descriptor: str, level: int) -> StatisticalPrior:
    q1, q3 = np.percentile(durations, [25.0, 75.0])
    return StatisticalPrior(
        median_min=float(np.median(durations)),
        mean_min=float(durations.mean()),
        range_min=(float(durations.min()), float(durations.max())),
        iqr_min=(float(q1), float(q3)),
        variance_min2=float(durations.var()),
        cohort_size=int(durations.shape[0]),
        stratum_descriptor=descriptor,
        fallback_level=level,
    )


def compute_prior(
    query: SurgicalCase, train: CaseSet, min_cohort: int = DEFAULT_MIN_COHORT
) -> StatisticalPrior:
    """Statistics of the most specific stratum holding >= min_cohort cases.

    Quartiles use linear interpolation; variance is the population variance.
    Training cases without a recorded duration are ignored.
    """
    if min_cohort < 1:
        raise SpecError(f"min_cohort must be >= 1, got {min_cohort}")
    with_duration = [c for c in train.cases if c.duration_min is not None]
    if not with_duration:
        raise EmptyTrainingSet("prior needs at least one training duration")

    tiers = ladder(train.schema.key_attributes)
    for level, tier in enumerate(tiers):
        if not tier_applicable(query, tier):
            continue
        cohort = [c for c in with_duration if matches_tier(query, c, tier)]
        if not tier or len(cohort) >= min_cohort:
            durations = np.array([c.duration_min for c in cohort])
            return _stats_over(durations, describe_tier(query, tier), level)
    durations = np.array([c.duration_min for c in with_duration])
    return _stats_over(durations, GLOBAL_STRATUM, len(tiers) - 1)


def prior_strength(
    prior: StatisticalPrior, base_w: float, mode: str = "fixed"
) -> float:
    """Weight given to the prior during Bayesian aggregation.

    fixed: base_w unchanged. calibrated: base_w scaled up with cohort size
    (saturating at 30 cases) and down with relative variance:
    base_w * min(1, cohort/30) * 1 / (1 + variance / median^2).
    """
    if base_w < 0.0:
        raise SpecError(f"prior weight must be >= 0, got {base_w}")
    if mode == "fixed":
        return base_w
    if mode == "calibrated":
        size_factor = min(1.0, prior.cohort_size / 30.0)
        dispersion_factor = 1.0 / (1.0 + prior.variance_min2 / prior.median_min**2)
        return base_w * size_factor * dispersion_factor
    raise SpecError(f"unknown prior strength mode {mode!r}")


class PriorIndex:
    """Cache of priors keyed by the query's key-attribute values.

    Computing a prior scans the training set; evaluation issues the same
    stratum lookups repeatedly, so results are memoized. Lookups agree
    exactly with compute_prior on the same training set.
    """

    def __init__(self, train: CaseSet, min_cohort: int = DEFAULT_MIN_COHORT):
        self.min_cohort = min_cohort
        self._train = train
        self._cache: dict[tuple, StatisticalPrior] = {}

    def key_for(self, query: SurgicalCase) -> tuple:
        return tuple(
            (attr, query.values.get(attr)) for attr in self._train.schema.key_attributes
        )

    def for_query(self, query: SurgicalCase) -> StatisticalPrior:
        key = self.key_for(query)
        hit = self._cache.get(key)
        if hit is None:
            hit = compute_prior(query, self._train, self.min_cohort)
            self._cache[key] = hit
        return hit

    def warm(self, key: tuple, prior: StatisticalPrior) -> None:
        """Preload a cache entry (used when reloading persisted artifacts)."""
        self._cache[key] = prior
