"""Metrics, experiment protocols, and ablation grids.

Metrics over m test cases with truths y and predictions p:
    MAE   = mean |y - p|                       (minutes)
    RMSE  = sqrt(mean (y - p)^2)               (minutes)
    R2    = 1 - sum (y-p)^2 / sum (y - mean y)^2
    MAPE  = 100 * mean |y - p| / y             (percent)

run_experiment executes one inference protocol (zero_shot, random_few_shot,
or rag) over a test set, optionally streaming a per-case JSONL audit trail.
All emitted files are deterministic for a fixed config, seed, and mock
backend: no timestamps or timings appear in them.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .aggregate import STRATEGIES
from .errors import (
    AllRoundsFailed,
    BadAxisValue,
    IoError,
    ModeArgumentMismatch,
    NonPositiveTruth,
    SpecError,
    TooFewSamples,
)
from .llm import LlmBackend
from .pipeline import (
    DEFAULT_EXPANSION,
    DEFAULT_K,
    DEFAULT_ROUNDS,
    DEFAULT_W_PRIOR,
    CasePrediction,
    FitConfig,
    Pipeline,
)
from .prompting import MODES, PromptTemplate
from .schema import CaseSet

ABLATION_AXES = (
    "k",
    "rounds",
    "expansion",
    "strategy",
    "w_prior",
    "pca_on_off",
    "prior_on_off",
    "postprocess_on_off",
)


@dataclass(frozen=True)
class MetricsReport:
    mae_min: float
    rmse_min: float
    r2: float
    mape_pct: float
    m: int
    per_case: tuple[tuple[str, float, float], ...]
    failed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    """One protocol run. k must be 0 in zero_shot mode and >= 1 otherwise."""

    backend: LlmBackend
    mode: str = "rag"
    k: int = DEFAULT_K
    rounds: int = DEFAULT_ROUNDS
    expansion_factor: int = DEFAULT_EXPANSION
    w_prior: float = DEFAULT_W_PRIOR
    strategy: str = "bayesian"
    seed: int = 0
    postprocess: bool = True
    pca_weighting: bool = True
    pca_top_m: int | None = None
    variance_fraction: float = 0.95
    min_cohort: int = 5
    prior_mode: str = "fixed"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModeArgumentMismatch(f"unknown mode {self.mode!r}")
        if self.mode == "zero_shot" and self.k != 0:
            raise ModeArgumentMismatch(
                f"zero_shot uses no references; k must be 0, got {self.k}"
            )
        if self.mode != "zero_shot" and self.k < 1:
            raise SpecError(f"mode {self.mode!r} needs k >= 1, got {self.k}")
        if self.rounds < 1:
            raise SpecError(f"rounds must be >= 1, got {self.rounds}")
        if self.strategy not in STRATEGIES:
            raise SpecError(f"unknown strategy {self.strategy!r}")

    def fit_config(self) -> FitConfig:
        return FitConfig(
            pca_weighting=self.pca_weighting,
            variance_fraction=self.variance_fraction,
            pca_top_m=self.pca_top_m,
            min_cohort=self.min_cohort,
        )


def compute_metrics(
    pairs: list[tuple[float, float]],
    ids: list[str] | None = None,
    failed: int = 0,
) -> MetricsReport:
    """Exact metric formulas over (truth, prediction) pairs.

    Needs at least two pairs; every truth must be positive (MAPE divides by
    it). R2 is anchored at the mean of the observed truths; when they are
    all identical it is 1 for a perfect fit and -inf otherwise.
    """
    m = len(pairs)
    if m < 2:
        raise TooFewSamples(f"metrics need at least 2 cases, got {m}")
    y = np.array([p[0] for p in pairs], dtype=np.float64)
    p = np.array([p[1] for p in pairs], dtype=np.float64)
    if np.any(y <= 0.0):
        raise NonPositiveTruth("every observed duration must be positive")
    if ids is None:
        ids = [f"case-{i}" for i in range(m)]
    errors = y - p
    mae = float(np.mean(np.abs(errors)))
    rmse = float(np.sqrt(np.mean(errors**2)))
    mape = float(100.0 * np.mean(np.abs(errors) / y))
    ss_res = float(np.sum(errors**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else float("-inf")
    else:
        r2 = 1.0 - ss_res / ss_tot
    return MetricsReport(
        mae_min=mae,
        rmse_min=rmse,
        r2=r2,
        mape_pct=mape,
        m=m,
        per_case=tuple((i, float(t), float(e)) for i, t, e in zip(ids, y, p)),
        failed=failed,
    )


def prediction_json(pred: CasePrediction) -> dict:
    doc: dict = {
        "id": pred.query_id,
        "mode": pred.mode,
        "y": pred.truth_min,
        "y_hat": pred.estimate.y_hat_min,
        "strategy": pred.estimate.strategy,
        "ensemble_mean": pred.estimate.ensemble_mean,
        "prior_weight": pred.estimate.prior_weight,
        "effective_n": pred.estimate.effective_n,
        "rounds": [
            {
                "round": r.round_index,
                "temperature": r.temperature,
                "raw_text": r.raw_text,
                "parsed": r.parsed_minutes,
                "clamped": r.clamped,
            }
            for r in pred.ensemble.rounds
        ],
    }
    if pred.references is not None:
        doc["references"] = [
            {"id": c.id, "similarity": s, "duration_min": c.duration_min}
            for c, s in pred.references.references
        ]
        doc["fallback_level"] = pred.references.fallback_level
    if pred.prior is not None:
        doc["prior"] = {
            "median_min": pred.prior.median_min,
            "mean_min": pred.prior.mean_min,
            "range_min": list(pred.prior.range_min),
            "iqr_min": list(pred.prior.iqr_min),
            "cohort_size": pred.prior.cohort_size,
            "stratum": pred.prior.stratum_descriptor,
        }
    return doc


def run_experiment(
    cfg: ExperimentConfig,
    train: CaseSet,
    test: CaseSet,
    pipeline: Pipeline | None = None,
    jsonl_path: str | Path | None = None,
    template: PromptTemplate | None = None,
) -> MetricsReport:
    """Evaluate one protocol over the test set.

    Fits the pipeline from train unless one is supplied. Test cases run
    concurrently up to the backend's concurrency limit; outputs are reduced
    and written in test order. Cases whose every round fails are excluded
    from the metrics and counted in the report's failed field.
    """
    if len(test.cases) < 2:
        raise TooFewSamples(f"test set has {len(test.cases)} cases, need >= 2")
    pipe = pipeline or Pipeline.fit(train, cfg.fit_config())

    def one(case):
        try:
            return pipe.predict_case(
                case,
                cfg.backend,
                mode=cfg.mode,
                template=template,
                k=cfg.k,
                expansion_factor=cfg.expansion_factor,
                rounds=cfg.rounds,
                w_prior=cfg.w_prior,
                strategy=cfg.strategy,
                prior_mode=cfg.prior_mode,
                postprocess=cfg.postprocess,
                base_seed=cfg.seed,
            )
        except AllRoundsFailed:
            return None

    workers = max(1, cfg.backend.concurrency_limit)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(one, test.cases))

    lines = []
    pairs = []
    ids = []
    failed = 0
    for case, pred in zip(test.cases, results):
        if pred is None:
            failed += 1
            lines.append({"id": case.id, "error": "all_rounds_failed"})
            continue
        lines.append(prediction_json(pred))
        if case.duration_min is not None:
            pairs.append((case.duration_min, pred.estimate.y_hat_min))
            ids.append(case.id)
    if jsonl_path is not None:
        try:
            with open(jsonl_path, "w", encoding="utf-8", newline="\n") as fh:
                for line in lines:
                    fh.write(json.dumps(line, sort_keys=True) + "\n")
        except OSError as exc:
            raise IoError(f"cannot write per-case log {jsonl_path}: {exc}") from exc
    return compute_metrics(pairs, ids, failed=failed)


def global_median_baseline(train: CaseSet, test: CaseSet) -> MetricsReport:
    """Constant predictor: the training-set median duration for every case."""
    durations = train.durations()
    if not durations:
        raise TooFewSamples("train set has no recorded durations")
    median = float(np.median(durations))
    pairs = [
        (c.duration_min, median) for c in test.cases if c.duration_min is not None
    ]
    return compute_metrics(pairs, [c.id for c in test.cases if c.duration_min is not None])


def _cell_config(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "k":
        if not isinstance(value, int) or value < 1:
            raise BadAxisValue(f"k values must be integers >= 1, got {value!r}")
        return replace(base, k=value)
    if axis == "rounds":
        if not isinstance(value, int) or value < 1:
            raise BadAxisValue(f"rounds values must be integers >= 1, got {value!r}")
        return replace(base, rounds=value)
    if axis == "expansion":
        if not isinstance(value, int) or value < 1:
            raise BadAxisValue(f"expansion values must be integers >= 1, got {value!r}")
        return replace(base, expansion_factor=value)
    if axis == "strategy":
        if value not in STRATEGIES:
            raise BadAxisValue(f"unknown strategy {value!r}")
        return replace(base, strategy=value)
    if axis == "w_prior":
        if not isinstance(value, (int, float)) or value < 0:
            raise BadAxisValue(f"w_prior values must be numbers >= 0, got {value!r}")
        return replace(base, w_prior=float(value))
    if axis == "pca_on_off":
        if not isinstance(value, bool):
            raise BadAxisValue(f"pca_on_off values must be booleans, got {value!r}")
        return replace(base, pca_weighting=value)
    if axis == "prior_on_off":
        if not isinstance(value, bool):
            raise BadAxisValue(f"prior_on_off values must be booleans, got {value!r}")
        return base if value else replace(base, w_prior=0.0)
    if axis == "postprocess_on_off":
        if not isinstance(value, bool):
            raise BadAxisValue(f"postprocess_on_off values must be booleans, got {value!r}")
        return replace(base, postprocess=value)
    raise BadAxisValue(f"unknown axis {axis!r}, expected one of {ABLATION_AXES}")


def run_ablation_grid(
    base: ExperimentConfig,
    axis: str,
    values: list,
    train: CaseSet,
    test: CaseSet,
    csv_path: str | Path | None = None,
    template: PromptTemplate | None = None,
) -> list[tuple[object, MetricsReport]]:
    """One experiment per axis value, all sharing the base seed.

    Pipelines are refit only when a cell changes fitting (the PCA toggle);
    other cells share one fitted pipeline so the grid isolates the axis.
    """
    if axis not in ABLATION_AXES:
        raise BadAxisValue(f"unknown axis {axis!r}, expected one of {ABLATION_AXES}")
    if not values:
        raise BadAxisValue(f"axis {axis!r} needs at least one value")
    configs = [(v, _cell_config(base, axis, v)) for v in values]
    pipelines: dict[tuple, Pipeline] = {}
    rows = []
    for value, cfg in configs:
        fit_key = (cfg.pca_weighting, cfg.pca_top_m, cfg.variance_fraction, cfg.min_cohort)
        if fit_key not in pipelines:
            pipelines[fit_key] = Pipeline.fit(train, cfg.fit_config())
        report = run_experiment(cfg, train, test, pipeline=pipelines[fit_key], template=template)
        rows.append((value, report))
    if csv_path is not None:
        write_grid_csv(axis, rows, csv_path)
    return rows


def metrics_csv_row(label: str, report: MetricsReport) -> dict:
    return {
        "experiment": label,
        "m": report.m,
        "failed": report.failed,
        "mae_min": repr(report.mae_min),
        "rmse_min": repr(report.rmse_min),
        "r2": repr(report.r2),
        "mape_pct": repr(report.mape_pct),
    }


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    if not rows:
        raise SpecError("metrics CSV needs at least one row")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write metrics CSV {path}: {exc}") from exc


def write_grid_csv(axis: str, rows: list[tuple[object, MetricsReport]], path: str | Path) -> None:
    out = []
    for value, report in rows:
        row = metrics_csv_row(f"{axis}={value}", report)
        row["axis"] = axis
        row["value"] = str(value)
        out.append(row)
    ordered = [
        {k: r[k] for k in ("axis", "value", "m", "failed", "mae_min", "rmse_min", "r2", "mape_pct")}
        for r in out
    ]
    write_metrics_csv(ordered, path)
