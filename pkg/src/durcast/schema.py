"""Dataset contract: feature schema, case records, CSV ingestion, splitting.

A schema declares an ordered list of features, each with one of five kinds
(numerical, ordinal, categorical, boolean, text), the level order of every
ordinal feature, and the ordered key attributes used for stratum matching
(conventionally department, planned surgery name, surgery level).

Schema files are YAML::

    features:
      - {name: age, kind: numerical}
      - {name: surgery_level, kind: ordinal}
      - {name: department, kind: categorical}
    ordinal_orders:
      surgery_level: ["I", "II", "III", "IV"]
    key_attributes: [department]
    duration_column: duration_min   # optional
    id_column: case_id              # optional

Dataset files are UTF-8 CSV with a header row naming every schema feature
plus the duration column; an id column is optional and synthesized when
absent. Empty cells are kept as explicit missing values (None), never
dropped.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .errors import IoError, ParseError, RowError, SchemaError, SpecError

FEATURE_KINDS = ("numerical", "ordinal", "categorical", "boolean", "text")

Value = str | float | None


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str


@dataclass(frozen=True)
class FeatureSchema:
    """Declares feature names, kinds, ordinal orders, and key attributes."""

    features: tuple[Feature, ...]
    ordinal_orders: dict[str, tuple[str, ...]] = field(default_factory=dict)
    key_attributes: tuple[str, ...] = ()
    duration_column: str = "duration_min"
    id_column: str = "case_id"

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dupes}")
        for f in self.features:
            if f.kind not in FEATURE_KINDS:
                raise SchemaError(f"feature {f.name!r}: unknown kind {f.kind!r}")
            if f.kind == "ordinal" and f.name not in self.ordinal_orders:
                raise SchemaError(f"ordinal feature {f.name!r} has no level order")
        for name, order in self.ordinal_orders.items():
            if name not in names:
                raise SchemaError(f"ordinal order for unknown feature {name!r}")
            if len(order) != len(set(order)):
                raise SchemaError(f"ordinal order for {name!r} repeats levels")
        missing = [k for k in self.key_attributes if k not in names]
        if missing:
            raise SchemaError(f"key attributes not in schema: {missing}")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def kind_of(self, name: str) -> str:
        for f in self.features:
            if f.name == name:
                return f.kind
        raise SchemaError(f"unknown feature {name!r}")

    def by_kind(self, kind: str) -> tuple[str, ...]:
        return tuple(f.name for f in self.features if f.kind == kind)

    def to_yaml(self) -> str:
        doc = {
            "features": [{"name": f.name, "kind": f.kind} for f in self.features],
            "ordinal_orders": {k: list(v) for k, v in self.ordinal_orders.items()},
            "key_attributes": list(self.key_attributes),
            "duration_column": self.duration_column,
            "id_column": self.id_column,
        }
        return yaml.safe_dump(doc, sort_keys=False)


@dataclass(frozen=True)
class SurgicalCase:
    """One record: feature values plus the observed duration in minutes.

    Query cases may omit the duration. Missing feature values are stored
    as None under their key.
    """

    id: str
    values: dict[str, Value]
    duration_min: float | None = None

    def __post_init__(self):
        if self.duration_min is not None and not self.duration_min > 0:
            raise SchemaError(f"case {self.id!r}: duration must be positive")


@dataclass
class CaseSet:
    cases: list[SurgicalCase]
    schema: FeatureSchema

    def __len__(self) -> int:
        return len(self.cases)

    def validate(self) -> None:
        names = set(self.schema.feature_names)
        for case in self.cases:
            unknown = set(case.values) - names
            if unknown:
                raise SchemaError(
                    f"case {case.id!r} has values outside the schema: {sorted(unknown)}"
                )

    def durations(self) -> list[float]:
        return [c.duration_min for c in self.cases if c.duration_min is not None]


def load_schema(config_text: str) -> FeatureSchema:
    """Parse a YAML schema document into a validated FeatureSchema.

    Raises ParseError for malformed YAML or wrong top-level structure and
    SchemaError for semantic violations (duplicate names, ordinal feature
    without an order, unknown kinds).
    """
    try:
        doc = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        raise ParseError(f"schema is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or "features" not in doc:
        raise ParseError("schema must be a mapping with a 'features' list")
    raw_features = doc["features"]
    if not isinstance(raw_features, list) or not raw_features:
        raise ParseError("'features' must be a non-empty list")

    features = []
    for i, item in enumerate(raw_features):
        if not isinstance(item, dict) or "name" not in item or "kind" not in item:
            raise ParseError(f"feature #{i} must declare 'name' and 'kind'")
        features.append(Feature(name=str(item["name"]), kind=str(item["kind"])))

    orders = {
        str(name): tuple(str(level) for level in levels)
        for name, levels in (doc.get("ordinal_orders") or {}).items()
    }
    keys = tuple(str(k) for k in (doc.get("key_attributes") or []))
    return FeatureSchema(
        features=tuple(features),
        ordinal_orders=orders,
        key_attributes=keys,
        duration_column=str(doc.get("duration_column", "duration_min")),
        id_column=str(doc.get("id_column", "case_id")),
    )


def load_schema_file(path: str | Path) -> FeatureSchema:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read schema file {path}: {exc}") from exc
    return load_schema(text)


def _parse_cell(raw: str, kind: str, row: int, name: str) -> Value:
    if raw == "":
        return None
    if kind == "numerical":
        try:
            return float(raw)
        except ValueError as exc:
            raise RowError(row, f"feature {name!r}: not a number: {raw!r}") from exc
    return raw


def ingest_csv(path: str | Path, schema: FeatureSchema) -> CaseSet:
    """Read a dataset CSV into a CaseSet.

    Each data row becomes one SurgicalCase. Numerical cells are parsed to
    float; all other kinds stay raw strings. Blank cells become None. An
    unparseable numeric or duration raises RowError with the 1-based data
    row index.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [n for n in schema.feature_names if n not in header]
            if missing:
                raise SchemaError(f"CSV header missing schema features: {missing}")
            if schema.duration_column not in header:
                raise SchemaError(
                    f"CSV header missing duration column {schema.duration_column!r}"
                )
            cases = []
            for i, rec in enumerate(reader, start=1):
                values: dict[str, Value] = {}
                for f in schema.features:
                    values[f.name] = _parse_cell(rec[f.name] or "", f.kind, i, f.name)
                raw_dur = (rec[schema.duration_column] or "").strip()
                duration: float | None
                if raw_dur == "":
                    duration = None
                else:
                    try:
                        duration = float(raw_dur)
                    except ValueError as exc:
                        raise RowError(i, f"duration not a number: {raw_dur!r}") from exc
                    if not duration > 0:
                        raise RowError(i, f"duration must be positive, got {duration}")
                case_id = rec.get(schema.id_column) or f"row-{i:06d}"
                try:
                    cases.append(SurgicalCase(id=case_id, values=values, duration_min=duration))
                except SchemaError as exc:
                    raise RowError(i, str(exc)) from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return CaseSet(cases=cases, schema=schema)


def write_csv(cs: CaseSet, path: str | Path) -> None:
    """Write a CaseSet to CSV so that ingest_csv() round-trips it exactly."""
    schema = cs.schema
    header = [schema.id_column, *schema.feature_names, schema.duration_column]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for case in cs.cases:
                row = [case.id]
                for name in schema.feature_names:
                    v = case.values.get(name)
                    row.append("" if v is None else (repr(v) if isinstance(v, float) else str(v)))
                row.append("" if case.duration_min is None else repr(case.duration_min))
                writer.writerow(row)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def split(
    cs: CaseSet, ratios: tuple[float, float, float], seed: int
) -> tuple[CaseSet, CaseSet, CaseSet]:
    """Partition a CaseSet into train/val/test by shuffled assignment.

    Ratios must be positive and sum to 1 within 1e-9. The shuffle is a
    pure function of the seed, so identical inputs give identical splits.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise SpecError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SpecError(f"ratios must sum to 1, got sum {sum(ratios)!r}")
    order = list(range(len(cs.cases)))
    random.Random(seed).shuffle(order)
    n = len(order)
    n_train = int(ratios[0] * n)
    n_val = int(ratios[1] * n)
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    return tuple(
        CaseSet(cases=[cs.cases[i] for i in sorted(idx)], schema=cs.schema) for idx in parts
    )


def strip_duration(case: SurgicalCase) -> SurgicalCase:
    """Copy of a case with the duration removed (turns it into a query)."""
    return replace(case, duration_min=None)
