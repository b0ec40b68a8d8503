"""Shared fixtures: a small clinical schema, a hand-built case corpus with
three procedure clusters, and constructors for priors and ensembles."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from durcast.llm import PredictionEnsemble, PredictionRound
from durcast.priors import StatisticalPrior
from durcast.schema import CaseSet, Feature, FeatureSchema, SurgicalCase

LEVELS = ("I", "II", "III", "IV")


def small_schema() -> FeatureSchema:
    return FeatureSchema(
        features=(
            Feature("age", "numerical"),
            Feature("asa_grade", "ordinal"),
            Feature("surgery_level", "ordinal"),
            Feature("department", "categorical"),
            Feature("surgery_name", "categorical"),
            Feature("emergency", "boolean"),
            Feature("note", "text"),
        ),
        ordinal_orders={"asa_grade": LEVELS, "surgery_level": LEVELS},
        key_attributes=("department", "surgery_name", "surgery_level"),
    )


def mk_case(
    case_id: str,
    duration: float | None = None,
    *,
    age: float = 50.0,
    asa: str = "II",
    level: str = "II",
    department: str = "general_surgery",
    surgery: str = "procedure",
    emergency: str = "false",
    note: str = "stable",
) -> SurgicalCase:
    return SurgicalCase(
        id=case_id,
        values={
            "age": age,
            "asa_grade": asa,
            "surgery_level": level,
            "department": department,
            "surgery_name": surgery,
            "emergency": emergency,
            "note": note,
        },
        duration_min=duration,
    )


THYROID_DURATIONS = (115.0, 120.0, 125.0, 128.0, 132.0, 138.0, 144.0, 150.0)


def tiny_corpus() -> CaseSet:
    """Sixteen training cases in three tight procedure clusters."""
    cases = []
    for i, dur in enumerate(THYROID_DURATIONS):
        cases.append(
            mk_case(
                f"thy-{i}",
                dur,
                age=44.0 + i,
                asa="I" if i % 2 else "II",
                level="II",
                department="thyroid_breast",
                surgery="thyroidectomy",
                note="neck ultrasound reviewed",
            )
        )
    for i, dur in enumerate((70.0, 74.0, 78.0, 82.0)):
        cases.append(
            mk_case(
                f"lump-{i}",
                dur,
                age=50.0 + i,
                asa="I",
                level="I",
                department="thyroid_breast",
                surgery="breast lumpectomy",
                note="imaging localized lesion",
            )
        )
    for i, dur in enumerate((170.0, 176.0, 182.0, 188.0)):
        cases.append(
            mk_case(
                f"col-{i}",
                dur,
                age=62.0 + i,
                asa="III",
                level="III",
                department="general_surgery",
                surgery="laparoscopic colectomy",
                note="bowel prep completed",
            )
        )
    return CaseSet(cases=cases, schema=small_schema())


@pytest.fixture
def schema() -> FeatureSchema:
    return small_schema()


@pytest.fixture
def corpus() -> CaseSet:
    return tiny_corpus()


def mk_prior(
    median: float = 120.0,
    mean: float = 125.0,
    rng: tuple[float, float] = (90.0, 180.0),
    iqr: tuple[float, float] = (105.0, 140.0),
    variance: float = 400.0,
    cohort: int = 12,
    descriptor: str = "department=thyroid_breast",
    level: int = 0,
) -> StatisticalPrior:
    return StatisticalPrior(
        median_min=median,
        mean_min=mean,
        range_min=rng,
        iqr_min=iqr,
        variance_min2=variance,
        cohort_size=cohort,
        stratum_descriptor=descriptor,
        fallback_level=level,
    )


def mk_ensemble(values, seed: int = 0) -> PredictionEnsemble:
    rounds = tuple(
        PredictionRound(
            round_index=i,
            temperature=0.0 if i == 1 else 0.2,
            raw_text=f"PREDICTION: {v} minutes",
            parsed_minutes=float(v),
            clamped=False,
        )
        for i, v in enumerate(values, start=1)
    )
    return PredictionEnsemble(rounds=rounds, seed=seed, requested_n=len(rounds))


class _StubHandler(BaseHTTPRequestHandler):
    """Replays canned responses and records request bodies for assertions."""

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        record = {
            "path": self.path,
            "headers": dict(self.headers),
            "body": json.loads(body) if body else None,
        }
        self.server.requests.append(record)
        status, payload = self.server.replies[
            min(len(self.server.requests) - 1, len(self.server.replies) - 1)
        ]
        blob = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def log_message(self, *args):
        pass


class StubServer:
    def __init__(self, replies):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self.httpd.replies = replies
        self.httpd.requests = []
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self):
        return self.httpd.requests

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    servers = []

    def start(replies):
        server = StubServer(replies)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.close()
