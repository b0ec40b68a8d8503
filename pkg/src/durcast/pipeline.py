"""End-to-end wiring: fit retrieval state from a training set, predict one
case under any inference mode, persist and reload the fitted artifacts.

Fitting: encode the training corpus, derive PCA importance weights (or
uniform ones), build the flat index over weighted embeddings, and prepare
the stratum prior cache. Prediction: embed the query, retrieve and refine
references, compute the prior, build the prompt, run the multi-round
ensemble, aggregate.

Artifact directory layout (see save_artifacts):
    schema.yaml      feature schema
    encoder.json     fitted per-feature statistics + embedder spec
    pca.npz          eigendecomposition (absent when PCA weighting is off)
    weights.npz      per-dimension weights
    index.bin        flat index with the training cases
    priors.json      precomputed stratum priors for observed key tuples
    importance.csv   per-feature weight mass, descending
    manifest.json    config echo + sha256 of every file (fingerprint)
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import encoding, index as index_mod, pca as pca_mod
from .aggregate import AggregateEstimate, aggregate
from .encoding import FittedEncoder
from .errors import ArtifactError, EmptyTrainingSet, IoError, ModeArgumentMismatch, SpecError
from .index import FlatIndex, ReferenceSet, RetrievalCandidate
from .llm import LlmBackend, PredictionEnsemble, predict_ensemble, stable_seed
from .priors import DEFAULT_MIN_COHORT, PriorIndex, StatisticalPrior, prior_strength
from .prompting import Prompt, PromptTemplate, build_prompt, load_template
from .schema import CaseSet, SurgicalCase, load_schema
from .strata import GLOBAL_STRATUM, ladder
from .text_embedding import HashingTextEmbedder, RemoteTextEmbedder, TextEmbedder

DEFAULT_K = 8
DEFAULT_EXPANSION = 10
DEFAULT_ROUNDS = 5
DEFAULT_W_PRIOR = 0.9


@dataclass(frozen=True)
class FitConfig:
    pca_weighting: bool = True
    variance_fraction: float = 0.95
    pca_top_m: int | None = None
    min_cohort: int = DEFAULT_MIN_COHORT
    embedder: dict = field(
        default_factory=lambda: {"type": "hashing", "dim": 256, "ngram": 3}
    )


@dataclass(frozen=True)
class CasePrediction:
    """Full audit record for one query."""

    query_id: str
    mode: str
    truth_min: float | None
    references: ReferenceSet | None
    prior: StatisticalPrior | None
    ensemble: PredictionEnsemble
    estimate: AggregateEstimate


def make_embedder(spec: dict) -> TextEmbedder:
    kind = spec.get("type", "hashing")
    if kind == "hashing":
        return HashingTextEmbedder(
            dim=int(spec.get("dim", 256)), ngram=int(spec.get("ngram", 3))
        )
    if kind == "remote":
        return RemoteTextEmbedder(
            url=spec["url"],
            dim=int(spec.get("dim", 768)),
            timeout_s=float(spec.get("timeout_s", 30.0)),
        )
    raise SpecError(f"unknown embedder type {kind!r}")


class Pipeline:
    def __init__(
        self,
        encoder: FittedEncoder,
        weights: pca_mod.WeightVector,
        flat_index: FlatIndex,
        priors: PriorIndex,
        pca_model: pca_mod.PCAModel | None,
        fit_config: FitConfig,
    ):
        self.encoder = encoder
        self.weights = weights
        self.index = flat_index
        self.priors = priors
        self.pca_model = pca_model
        self.fit_config = fit_config
        self.schema = encoder.schema

    @classmethod
    def fit(cls, train: CaseSet, config: FitConfig | None = None) -> "Pipeline":
        """Fit every stage from the training set.

        Only cases with a recorded duration enter the index and the prior
        cache; the encoder and PCA see the full training set.
        """
        config = config or FitConfig()
        if not train.cases:
            raise EmptyTrainingSet("pipeline fit requires training cases")
        embedder = make_embedder(config.embedder)
        encoder = encoding.fit(train, embedder)
        matrix = encoder.encode_matrix(train)

        pca_model = None
        if config.pca_weighting:
            pca_model = pca_mod.fit_pca(matrix)
            k = config.pca_top_m or pca_mod.k_for_cumulative_variance(
                pca_model, config.variance_fraction
            )
            k = max(1, min(k, pca_model.dim))
            weights = pca_mod.derive_weights(pca_model, k)
        else:
            weights = pca_mod.uniform_weights(encoder.dim)

        with_duration = [
            (i, c) for i, c in enumerate(train.cases) if c.duration_min is not None
        ]
        if not with_duration:
            raise EmptyTrainingSet("no training case has a recorded duration")
        entries = [
            (pca_mod.apply_weights(matrix[i], weights), case)
            for i, case in with_duration
        ]
        flat_index = index_mod.build(entries, train.schema)
        prior_train = CaseSet(
            cases=[case for _, case in with_duration], schema=train.schema
        )
        priors = PriorIndex(prior_train, config.min_cohort)
        return cls(encoder, weights, flat_index, priors, pca_model, config)

    def embed_query(self, case: SurgicalCase) -> np.ndarray:
        return pca_mod.apply_weights(self.encoder.encode(case).vector, self.weights)

    def retrieve_references(
        self,
        case: SurgicalCase,
        k: int = DEFAULT_K,
        expansion_factor: int = DEFAULT_EXPANSION,
        postprocess: bool = True,
    ) -> tuple[ReferenceSet, list[RetrievalCandidate]]:
        """Expanded retrieval then clinical refinement (or a plain top-k
        cut when postprocessing is disabled)."""
        if expansion_factor < 1:
            raise SpecError(f"expansion factor must be >= 1, got {expansion_factor}")
        candidates = index_mod.retrieve(self.index, self.embed_query(case), expansion_factor * k)
        if postprocess:
            refs = index_mod.postprocess(candidates, case, k, self.schema.key_attributes)
        else:
            top = [c for c in candidates if c.case.duration_min is not None][:k]
            refs = ReferenceSet(
                references=tuple((c.case, c.similarity) for c in top),
                fallback_level=len(ladder(self.schema.key_attributes)) - 1,
                stratum_descriptor=GLOBAL_STRATUM,
                iqr_bounds=None,
            )
        return refs, candidates

    def random_references(self, case: SurgicalCase, k: int, seed: int) -> ReferenceSet:
        """k training cases drawn uniformly without replacement; similarity
        is reported as 0 since none was computed."""
        pool = self.index.cases
        picks = random.Random(seed).sample(pool, min(k, len(pool)))
        return ReferenceSet(
            references=tuple((c, 0.0) for c in picks),
            fallback_level=len(ladder(self.schema.key_attributes)) - 1,
            stratum_descriptor=GLOBAL_STRATUM,
            iqr_bounds=None,
        )

    def predict_case(
        self,
        query: SurgicalCase,
        backend: LlmBackend,
        mode: str = "rag",
        template: PromptTemplate | None = None,
        k: int = DEFAULT_K,
        expansion_factor: int = DEFAULT_EXPANSION,
        rounds: int = DEFAULT_ROUNDS,
        w_prior: float = DEFAULT_W_PRIOR,
        strategy: str = "bayesian",
        prior_mode: str = "fixed",
        postprocess: bool = True,
        base_seed: int = 0,
        strict: bool = False,
    ) -> CasePrediction:
        """One query end to end under the given inference mode.

        zero_shot and random_few_shot aggregate with a simple average: the
        stratum prior is part of the retrieval-augmented protocol, so those
        baselines do not see it.
        """
        if mode != "zero_shot" and k < 1:
            raise SpecError(f"mode {mode!r} needs k >= 1, got {k}")
        template = template or load_template()
        refs: ReferenceSet | None = None
        prior: StatisticalPrior | None = None
        if mode == "rag":
            refs, _ = self.retrieve_references(query, k, expansion_factor, postprocess)
            prior = self.priors.for_query(query)
        elif mode == "random_few_shot":
            refs = self.random_references(
                query, k, stable_seed(base_seed, "random-refs", query.id)
            )
        elif mode != "zero_shot":
            raise ModeArgumentMismatch(f"unknown mode {mode!r}")

        prompt = build_prompt(query, refs, prior, mode, template)
        ensemble = predict_ensemble(
            prompt,
            backend,
            rounds,
            seed=stable_seed(base_seed, "ensemble", query.id),
            strict=strict,
        )
        if mode == "rag" and strategy == "bayesian":
            estimate = aggregate(
                ensemble,
                "bayesian",
                prior,
                prior_strength(prior, w_prior, prior_mode),
            )
        elif mode == "rag":
            estimate = aggregate(ensemble, strategy)
        else:
            estimate = aggregate(ensemble, "simple_average")
        return CasePrediction(
            query_id=query.id,
            mode=mode,
            truth_min=query.duration_min,
            references=refs,
            prior=prior,
            ensemble=ensemble,
            estimate=estimate,
        )

    def importance_report(self) -> list[tuple[str, float]]:
        return pca_mod.feature_importance_report(self.weights, self.encoder.feature_spans)

    def train_cases(self) -> CaseSet:
        return index_mod.index_case_set(self.index)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_artifacts(pipeline: Pipeline, out_dir: str | Path) -> None:
    """Persist every fitted stage plus a manifest fingerprinting the files."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create artifact directory {out}: {exc}") from exc

    files: dict[str, bytes] = {}
    files["schema.yaml"] = pipeline.schema.to_yaml().encode("utf-8")

    embedder = pipeline.encoder.text_embedder
    if isinstance(embedder, HashingTextEmbedder):
        embedder_spec = {"type": "hashing", "dim": embedder.dim, "ngram": embedder.ngram}
    elif isinstance(embedder, RemoteTextEmbedder):
        embedder_spec = {"type": "remote", "dim": embedder.dim, "url": embedder.url}
    else:
        raise SpecError(f"cannot persist embedder {type(embedder).__name__}")
    files["encoder.json"] = json.dumps(
        {
            "embedder": embedder_spec,
            "numeric_stats": pipeline.encoder.numeric_stats,
            "ordinal_missing": pipeline.encoder.ordinal_missing,
            "cat_vocabs": {k: list(v) for k, v in pipeline.encoder.cat_vocabs.items()},
            "bool_missing": pipeline.encoder.bool_missing,
        },
        sort_keys=True,
        indent=2,
    ).encode("utf-8")

    if pipeline.pca_model is not None:
        buf = io.BytesIO()
        np.savez(
            buf,
            mean_vector=pipeline.pca_model.mean_vector,
            components=pipeline.pca_model.components,
            explained_variance=pipeline.pca_model.explained_variance,
            explained_variance_ratio=pipeline.pca_model.explained_variance_ratio,
        )
        files["pca.npz"] = buf.getvalue()

    buf = io.BytesIO()
    np.savez(buf, weights=pipeline.weights.weights, k_used=pipeline.weights.k_used)
    files["weights.npz"] = buf.getvalue()

    index_path = out / "index.bin"
    index_mod.save_index(pipeline.index, index_path)
    files["index.bin"] = index_path.read_bytes()

    prior_entries = []
    seen = set()
    train = pipeline.train_cases()
    for case in train.cases:
        key = pipeline.priors.key_for(case)
        if key in seen:
            continue
        seen.add(key)
        p = pipeline.priors.for_query(case)
        prior_entries.append({"key": [list(pair) for pair in key], "prior": asdict(p)})
    files["priors.json"] = json.dumps(
        {"min_cohort": pipeline.priors.min_cohort, "entries": prior_entries},
        sort_keys=True,
        indent=2,
    ).encode("utf-8")

    report = pipeline.importance_report()
    report_buf = io.StringIO()
    writer = csv.writer(report_buf)
    writer.writerow(["feature", "score"])
    for name, score in report:
        writer.writerow([name, repr(score)])
    files["importance.csv"] = report_buf.getvalue().encode("utf-8")

    digests = {name: _sha256(blob) for name, blob in files.items()}
    config_doc = {
        "fit_config": {
            "pca_weighting": pipeline.fit_config.pca_weighting,
            "variance_fraction": pipeline.fit_config.variance_fraction,
            "pca_top_m": pipeline.fit_config.pca_top_m,
            "min_cohort": pipeline.fit_config.min_cohort,
            "embedder": pipeline.fit_config.embedder,
        },
        "files": digests,
    }
    fingerprint = _sha256(json.dumps(config_doc, sort_keys=True).encode("utf-8"))
    manifest = dict(config_doc, fingerprint=fingerprint)
    files["manifest.json"] = json.dumps(manifest, sort_keys=True, indent=2).encode("utf-8")

    try:
        for name, blob in files.items():
            (out / name).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write artifacts under {out}: {exc}") from exc


def load_artifacts(artifact_dir: str | Path) -> Pipeline:
    """Reload a persisted pipeline, verifying every file against the
    manifest fingerprint. Any mismatch is a hard ArtifactError."""
    root = Path(artifact_dir)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read manifest under {root}: {exc}") from exc
    except ValueError as exc:
        raise ArtifactError(f"manifest under {root} is not valid JSON: {exc}") from exc

    recorded = dict(manifest)
    claimed_fingerprint = recorded.pop("fingerprint", None)
    actual_fingerprint = _sha256(json.dumps(recorded, sort_keys=True).encode("utf-8"))
    if claimed_fingerprint != actual_fingerprint:
        raise ArtifactError(f"manifest fingerprint mismatch under {root}")
    for name, digest in manifest["files"].items():
        try:
            blob = (root / name).read_bytes()
        except OSError as exc:
            raise ArtifactError(f"artifact {name} missing under {root}: {exc}") from exc
        if _sha256(blob) != digest:
            raise ArtifactError(f"artifact {name} does not match its fingerprint")

    fit_cfg_doc = manifest["fit_config"]
    fit_config = FitConfig(
        pca_weighting=fit_cfg_doc["pca_weighting"],
        variance_fraction=fit_cfg_doc["variance_fraction"],
        pca_top_m=fit_cfg_doc["pca_top_m"],
        min_cohort=fit_cfg_doc["min_cohort"],
        embedder=fit_cfg_doc["embedder"],
    )
    schema = load_schema((root / "schema.yaml").read_text(encoding="utf-8"))
    enc_doc = json.loads((root / "encoder.json").read_text(encoding="utf-8"))
    encoder = FittedEncoder(
        schema=schema,
        text_embedder=make_embedder(enc_doc["embedder"]),
        numeric_stats={k: tuple(v) for k, v in enc_doc["numeric_stats"].items()},
        ordinal_missing=enc_doc["ordinal_missing"],
        cat_vocabs={k: tuple(v) for k, v in enc_doc["cat_vocabs"].items()},
        bool_missing=enc_doc["bool_missing"],
    )

    pca_model = None
    if (root / "pca.npz").exists():
        with np.load(root / "pca.npz") as arrays:
            pca_model = pca_mod.PCAModel(
                mean_vector=arrays["mean_vector"],
                components=arrays["components"],
                explained_variance=arrays["explained_variance"],
                explained_variance_ratio=arrays["explained_variance_ratio"],
            )
    with np.load(root / "weights.npz") as arrays:
        weights = pca_mod.WeightVector(
            weights=arrays["weights"], k_used=int(arrays["k_used"])
        )

    flat_index = index_mod.load_index(root / "index.bin")
    priors_doc = json.loads((root / "priors.json").read_text(encoding="utf-8"))
    priors = PriorIndex(index_mod.index_case_set(flat_index), priors_doc["min_cohort"])
    for entry in priors_doc["entries"]:
        key = tuple((a, v) for a, v in entry["key"])
        doc = entry["prior"]
        priors.warm(
            key,
            StatisticalPrior(
                median_min=doc["median_min"],
                mean_min=doc["mean_min"],
                range_min=tuple(doc["range_min"]),
                iqr_min=tuple(doc["iqr_min"]),
                variance_min2=doc["variance_min2"],
                cohort_size=doc["cohort_size"],
                stratum_descriptor=doc["stratum_descriptor"],
                fallback_level=doc["fallback_level"],
            ),
        )
    return Pipeline(encoder, weights, flat_index, priors, pca_model, fit_config)
