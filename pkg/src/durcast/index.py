"""Flat cosine-similarity index with clinical post-processing.

Retrieval is exhaustive (no approximation): every query scores every stored
vector. Post-processing refines an expanded candidate list into the final
reference set by descending the stratum ladder and trimming duration
outliers by interquartile range.

On-disk format (little-endian):
    bytes 0..7    magic "DURCIDX1"
    bytes 8..11   uint32 vector dimension
    bytes 12..15  uint32 entry count
    bytes 16..23  uint64 JSON payload length in bytes
    then          count * dim float32 vectors, row-major
    then          UTF-8 JSON payload: {"schema": ..., "cases": [...]}
Vectors are quantized to float32 on save.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ArtifactError,
    DimensionMismatch,
    EmptyIndex,
    EmptyInput,
    IoError,
    NoCandidates,
    SpecError,
    ZeroVector,
)
from .schema import CaseSet, FeatureSchema, SurgicalCase, load_schema
from .strata import describe_tier, ladder, matches_tier, tier_applicable

_MAGIC = b"DURCIDX1"


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dims differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    return float(a @ b / (na * nb))


@dataclass(frozen=True)
class RetrievalCandidate:
    case: SurgicalCase
    similarity: float


@dataclass(frozen=True)
class ReferenceSet:
    """Final references: descending similarity, at most K entries.

    fallback_level is the stratum-ladder tier index that produced the set
    (0 = full key match, last = unfiltered). iqr_bounds records the outlier
    window when the IQR stage ran, else None.
    """

    references: tuple[tuple[SurgicalCase, float], ...]
    fallback_level: int
    stratum_descriptor: str
    iqr_bounds: tuple[float, float] | None


class FlatIndex:
    """Immutable exhaustive index over weighted embeddings."""

    def __init__(self, vectors: np.ndarray, cases: list[SurgicalCase], schema: FeatureSchema):
        self.vectors = vectors
        self.cases = cases
        self.schema = schema
        self.dim = int(vectors.shape[1])
        norms = np.linalg.norm(vectors, axis=1)
        self._unit = vectors / np.where(norms > 0.0, norms, 1.0)[:, None]

    def __len__(self) -> int:
        return len(self.cases)


def build(
    entries: list[tuple[np.ndarray, SurgicalCase]], schema: FeatureSchema
) -> FlatIndex:
    """Store (weighted embedding, case) pairs for exhaustive retrieval.

    Rejects inconsistent dimensions and zero-norm vectors (they have no
    cosine direction).
    """
    if not entries:
        raise EmptyInput("cannot build an index from zero entries")
    dim = int(np.asarray(entries[0][0]).shape[0])
    rows = []
    cases = []
    for vec, case in entries:
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (dim,):
            raise DimensionMismatch(
                f"entry for case {case.id!r} has dim {v.shape}, expected ({dim},)"
            )
        if float(np.linalg.norm(v)) == 0.0:
            raise ZeroVector(f"entry for case {case.id!r} is a zero vector")
        rows.append(v)
        cases.append(case)
    return FlatIndex(vectors=np.stack(rows), cases=cases, schema=schema)


def retrieve(idx: FlatIndex, query: np.ndarray, m: int) -> list[RetrievalCandidate]:
    """Top-m entries by cosine similarity, descending; ties broken by
    ascending case id. Equals a linear-scan sort exactly."""
    if len(idx) == 0:
        raise EmptyIndex("retrieve on an empty index")
    if m < 1:
        raise SpecError(f"candidate count must be >= 1, got {m}")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (idx.dim,):
        raise DimensionMismatch(f"query dim {q.shape} does not match index ({idx.dim},)")
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise ZeroVector("query is a zero vector")
    qv = q / qn
    # Row-wise dots, not one matrix product: gemv kernels can round a SIMD
    # block row and a remainder row differently, so duplicate directions at
    # different positions would lose their exact tie and the id tie-break.
    sims = np.array([row @ qv for row in idx._unit])
    order = sorted(range(len(idx)), key=lambda i: (-sims[i], idx.cases[i].id))
    return [
        RetrievalCandidate(case=idx.cases[i], similarity=float(sims[i]))
        for i in order[:m]
    ]


def postprocess(
    candidates: list[RetrievalCandidate],
    query: SurgicalCase,
    k: int,
    key_attributes: tuple[str, ...],
) -> ReferenceSet:
    """Refine expanded candidates into at most k references.

    Stages, in order: drop candidates without a recorded duration; pick the
    most specific applicable stratum tier with >= k survivors (else the most
    specific non-empty one); remove duration outliers outside
    [Q1 - 1.5*IQR, Q3 + 1.5*IQR] (skipped when <= 4 survivors, where
    quartiles are unstable); keep the top k by similarity.
    """
    if not candidates:
        raise NoCandidates("postprocess received no candidates")
    usable = [c for c in candidates if c.case.duration_min is not None]
    if not usable:
        raise NoCandidates("no candidate has a recorded duration")
    if k < 1:
        raise SpecError(f"reference count must be >= 1, got {k}")

    tiers = ladder(key_attributes)
    survivors: list[RetrievalCandidate] = []
    chosen_level = len(tiers) - 1
    best_nonempty: tuple[int, list[RetrievalCandidate]] | None = None
    for level, tier in enumerate(tiers):
        if not tier_applicable(query, tier):
            continue
        matched = [c for c in usable if matches_tier(query, c.case, tier)]
        if len(matched) >= k:
            survivors, chosen_level = matched, level
            break
        if matched and best_nonempty is None:
            best_nonempty = (level, matched)
    else:
        if best_nonempty is not None:
            chosen_level, survivors = best_nonempty
        else:
            survivors, chosen_level = usable, len(tiers) - 1

    bounds = None
    if len(survivors) > 4:
        durations = np.array([c.case.duration_min for c in survivors])
        q1, q3 = np.percentile(durations, [25.0, 75.0])
        iqr = q3 - q1
        bounds = (float(q1 - 1.5 * iqr), float(q3 + 1.5 * iqr))
        survivors = [
            c for c in survivors if bounds[0] <= c.case.duration_min <= bounds[1]
        ]

    top = survivors[:k]
    return ReferenceSet(
        references=tuple((c.case, c.similarity) for c in top),
        fallback_level=chosen_level,
        stratum_descriptor=describe_tier(query, tiers[chosen_level]),
        iqr_bounds=bounds,
    )


def save_index(idx: FlatIndex, path: str | Path) -> None:
    """Serialize to the documented binary layout (float32 vectors)."""
    payload = {
        "schema": yaml_schema_doc(idx.schema),
        "cases": [
            {"id": c.id, "values": c.values, "duration_min": c.duration_min}
            for c in idx.cases
        ],
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    vectors = idx.vectors.astype("<f4").tobytes()
    header = _MAGIC + struct.pack("<IIQ", idx.dim, len(idx), len(blob))
    try:
        Path(path).write_bytes(header + vectors + blob)
    except OSError as exc:
        raise IoError(f"cannot write index to {path}: {exc}") from exc


def load_index(path: str | Path) -> FlatIndex:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read index from {path}: {exc}") from exc
    if len(raw) < 24 or raw[:8] != _MAGIC:
        raise ArtifactError(f"{path} is not an index file (bad magic)")
    dim, count, blob_len = struct.unpack("<IIQ", raw[8:24])
    vec_bytes = count * dim * 4
    if len(raw) != 24 + vec_bytes + blob_len:
        raise ArtifactError(f"{path} is truncated or padded")
    vectors = (
        np.frombuffer(raw[24 : 24 + vec_bytes], dtype="<f4")
        .astype(np.float64)
        .reshape(count, dim)
    )
    try:
        payload = json.loads(raw[24 + vec_bytes :].decode("utf-8"))
        schema = load_schema(json.dumps(payload["schema"]))
        cases = [
            SurgicalCase(
                id=item["id"], values=item["values"], duration_min=item["duration_min"]
            )
            for item in payload["cases"]
        ]
    except (ValueError, KeyError) as exc:
        raise ArtifactError(f"{path} has a corrupt case payload: {exc}") from exc
    if len(cases) != count:
        raise ArtifactError(f"{path}: header count {count} != payload count {len(cases)}")
    return FlatIndex(vectors=vectors, cases=cases, schema=schema)


def yaml_schema_doc(schema: FeatureSchema) -> dict:
    """Schema as a plain mapping (the YAML document structure)."""
    return {
        "features": [{"name": f.name, "kind": f.kind} for f in schema.features],
        "ordinal_orders": {k: list(v) for k, v in schema.ordinal_orders.items()},
        "key_attributes": list(schema.key_attributes),
        "duration_column": schema.duration_column,
        "id_column": schema.id_column,
    }


def index_case_set(idx: FlatIndex) -> CaseSet:
    """Reconstruct the training CaseSet stored alongside the vectors."""
    return CaseSet(cases=list(idx.cases), schema=idx.schema)
