"""Heterogeneous feature encoding into one dense, category-normalized vector.

Features are grouped by kind into five blocks (numerical, ordinal,
categorical, boolean, text), each block encoded with its own scheme and
scaled by 1/sqrt(block dimension) so no block dominates by width alone.

Encoding rules:
  numerical    z-score against training mean/std (population std; std < 1e-12
               is treated as 1); missing values impute the training mean
  ordinal      declared rank / (levels - 1), one coordinate in [0, 1];
               missing imputes the training mean of the encoded value
  categorical  one-hot over the sorted training vocabulary plus a reserved
               trailing UNKNOWN slot; unseen or missing fires UNKNOWN
  boolean      case-insensitive true/false, yes/no, 1/0 to {1, 0}; missing
               imputes the training mean of the encoded value
  text         fixed-dim unit-norm embedding; missing embeds "UNKNOWN"
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTrainingSet, SchemaMismatch
from .schema import CaseSet, FeatureSchema, SurgicalCase
from .text_embedding import TextEmbedder

CATEGORY_ORDER = ("num", "ord", "cat", "bool", "text")

_KIND_TO_CATEGORY = {
    "numerical": "num",
    "ordinal": "ord",
    "categorical": "cat",
    "boolean": "bool",
    "text": "text",
}

_BOOL_TOKENS = {
    "true": 1.0,
    "yes": 1.0,
    "1": 1.0,
    "false": 0.0,
    "no": 0.0,
    "0": 0.0,
}

MISSING_TOKEN = "UNKNOWN"


def _parse_bool(token: str, feature: str) -> float:
    try:
        return _BOOL_TOKENS[str(token).strip().lower()]
    except KeyError:
        raise SchemaMismatch(
            f"feature {feature!r}: not a boolean token: {token!r}"
        ) from None


def _as_float(value, feature: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise SchemaMismatch(f"feature {feature!r}: not numeric: {value!r}") from None


@dataclass(frozen=True)
class NormalizedEmbedding:
    """Dense vector plus the (offset, length) of each category block."""

    vector: np.ndarray
    segment_map: dict[str, tuple[int, int]]

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass
class FittedEncoder:
    """Immutable per-feature statistics fitted on the training set only."""

    schema: FeatureSchema
    text_embedder: TextEmbedder
    numeric_stats: dict[str, tuple[float, float]]
    ordinal_missing: dict[str, float]
    cat_vocabs: dict[str, tuple[str, ...]]
    bool_missing: dict[str, float]
    segment_map: dict[str, tuple[int, int]] = field(init=False)
    feature_spans: list[tuple[str, int, int]] = field(init=False)
    dim: int = field(init=False)
    _alphas: dict[str, float] = field(init=False)
    _text_cache: dict[str, np.ndarray] = field(init=False, repr=False)
    _cache_lock: threading.Lock = field(init=False, repr=False)

    def __post_init__(self):
        spans: list[tuple[str, int, int]] = []
        segments: dict[str, tuple[int, int]] = {}
        offset = 0
        for category in CATEGORY_ORDER:
            start = offset
            for f in self.schema.features:
                if _KIND_TO_CATEGORY[f.kind] != category:
                    continue
                width = self._feature_width(f.name, f.kind)
                spans.append((f.name, offset, width))
                offset += width
            segments[category] = (start, offset - start)
        self.segment_map = segments
        self.feature_spans = spans
        self._span_by_name = {name: (off, width) for name, off, width in spans}
        self.dim = offset
        self._alphas = {
            c: (1.0 / math.sqrt(length) if length > 0 else 0.0)
            for c, (_, length) in segments.items()
        }
        self._text_cache = {}
        self._cache_lock = threading.Lock()

    def _feature_width(self, name: str, kind: str) -> int:
        if kind == "categorical":
            return len(self.cat_vocabs[name]) + 1
        if kind == "text":
            return self.text_embedder.dim
        return 1

    def alpha(self, category: str) -> float:
        return self._alphas[category]

    def _embed_cached(self, text: str) -> np.ndarray:
        with self._cache_lock:
            hit = self._text_cache.get(text)
        if hit is not None:
            return hit
        vec = self.text_embedder.embed(text)
        with self._cache_lock:
            self._text_cache[text] = vec
        return vec

    def _encode_feature(self, case: SurgicalCase, name: str, kind: str) -> np.ndarray:
        value = case.values.get(name)
        if kind == "numerical":
            mean, std = self.numeric_stats[name]
            x = mean if value is None else _as_float(value, name)
            return np.array([(x - mean) / std])
        if kind == "ordinal":
            if value is None:
                return np.array([self.ordinal_missing[name]])
            return np.array([_ordinal_rank(self.schema, name, str(value))])
        if kind == "categorical":
            vocab = self.cat_vocabs[name]
            hot = np.zeros(len(vocab) + 1)
            if value is None:
                hot[-1] = 1.0
            else:
                try:
                    hot[vocab.index(str(value))] = 1.0
                except ValueError:
                    hot[-1] = 1.0
            return hot
        if kind == "boolean":
            if value is None:
                return np.array([self.bool_missing[name]])
            return np.array([_parse_bool(str(value), name)])
        return self._embed_cached(MISSING_TOKEN if value is None else str(value))

    def encode(self, case: SurgicalCase) -> NormalizedEmbedding:
        """Encode one case; pure given (case, fitted state)."""
        unknown = set(case.values) - set(self.schema.feature_names)
        if unknown:
            raise SchemaMismatch(
                f"case {case.id!r} has features outside the schema: {sorted(unknown)}"
            )
        vector = np.zeros(self.dim, dtype=np.float64)
        for f in self.schema.features:
            offset, width = self._span_by_name[f.name]
            vector[offset : offset + width] = self._encode_feature(case, f.name, f.kind)
        for category, (start, length) in self.segment_map.items():
            if length:
                vector[start : start + length] *= self._alphas[category]
        return NormalizedEmbedding(vector=vector, segment_map=dict(self.segment_map))

    def encode_matrix(self, cs: CaseSet) -> np.ndarray:
        """Encode every case into one N x D matrix (rows follow input order)."""
        return np.stack([self.encode(c).vector for c in cs.cases])


def _ordinal_rank(schema: FeatureSchema, name: str, token: str) -> float:
    order = schema.ordinal_orders[name]
    try:
        rank = order.index(token)
    except ValueError:
        raise SchemaMismatch(
            f"feature {name!r}: level {token!r} not in declared order {list(order)}"
        ) from None
    if len(order) == 1:
        return 0.0
    return rank / (len(order) - 1)


def fit(train: CaseSet, text_embedder: TextEmbedder) -> FittedEncoder:
    """Fit per-feature statistics from the training set.

    Statistics are order-independent: means, population standard deviations,
    and sorted vocabularies. Raises EmptyTrainingSet on an empty corpus and
    SchemaMismatch when an ordinal or boolean value violates its declaration.
    """
    if not train.cases:
        raise EmptyTrainingSet("encoder fit requires at least one training case")
    schema = train.schema
    numeric_stats: dict[str, tuple[float, float]] = {}
    ordinal_missing: dict[str, float] = {}
    cat_vocabs: dict[str, tuple[str, ...]] = {}
    bool_missing: dict[str, float] = {}

    for f in schema.features:
        observed = [c.values.get(f.name) for c in train.cases]
        present = [v for v in observed if v is not None]
        if f.kind == "numerical":
            floats = [_as_float(v, f.name) for v in present]
            if floats:
                mean = float(np.mean(floats))
                std = float(np.std(floats))
            else:
                mean, std = 0.0, 1.0
            numeric_stats[f.name] = (mean, 1.0 if std < 1e-12 else std)
        elif f.kind == "ordinal":
            encoded = [_ordinal_rank(schema, f.name, str(v)) for v in present]
            ordinal_missing[f.name] = float(np.mean(encoded)) if encoded else 0.5
        elif f.kind == "categorical":
            cat_vocabs[f.name] = tuple(sorted({str(v) for v in present}))
        elif f.kind == "boolean":
            encoded = [_parse_bool(str(v), f.name) for v in present]
            bool_missing[f.name] = float(np.mean(encoded)) if encoded else 0.5
    return FittedEncoder(
        schema=schema,
        text_embedder=text_embedder,
        numeric_stats=numeric_stats,
        ordinal_missing=ordinal_missing,
        cat_vocabs=cat_vocabs,
        bool_missing=bool_missing,
    )
