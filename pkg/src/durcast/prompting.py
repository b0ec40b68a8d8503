"""Structured prompt synthesis: role, reference cases, statistics, query.

Templates are external text files with [section] markers so prompt wording
is data, not code. The builder fills placeholders, assembles the user text
from up to three parts (reference demonstrations, stratum statistics, query
profile) according to the inference mode, and appends a machine-parseable
output contract to the system text.

Template sections and their placeholders:
    [system]             no placeholders (contract line is appended)
    [references_header]  no placeholders
    [reference]          {index} {similarity} {duration} {features}
    [statistics]         {stratum} {cohort_size} {median} {mean}
                         {low} {high} {q1} {q3}
    [query]              {features}
    [user]               {references_section} {statistics_section}
                         {query_section}
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import (
    MissingDuration,
    ModeArgumentMismatch,
    ParseError,
    PromptTooLong,
)
from .index import ReferenceSet
from .priors import StatisticalPrior
from .schema import SurgicalCase

MODES = ("zero_shot", "random_few_shot", "rag")

OUTPUT_CONTRACT = (
    "Respond with the final answer as `PREDICTION: <integer> minutes` "
    "on the last line."
)

DEFAULT_MAX_CHARS = 40000

_SECTIONS = ("system", "references_header", "reference", "statistics", "query", "user")


@dataclass(frozen=True)
class PromptTemplate:
    system: str
    references_header: str
    reference: str
    statistics: str
    query: str
    user: str


@dataclass(frozen=True)
class PromptMetadata:
    """Structured facts about what went into the prompt.

    Mock backends read these instead of re-parsing the rendered text;
    evaluation records them for audit.
    """

    mode: str
    k_used: int
    stratum_descriptor: str | None
    query_id: str
    reference_durations: tuple[float, ...]
    prior_median: float | None


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str
    metadata: PromptMetadata


def parse_template(text: str) -> PromptTemplate:
    """Split a template file into its [section] parts."""
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            name = stripped[1:-1]
            if name not in _SECTIONS:
                raise ParseError(f"unknown template section [{name}]")
            if name in sections:
                raise ParseError(f"duplicate template section [{name}]")
            sections[name] = []
            current = name
            continue
        if current is None:
            if stripped:
                raise ParseError("template text before the first [section] marker")
            continue
        sections[current].append(line)
    missing = [s for s in _SECTIONS if s not in sections]
    if missing:
        raise ParseError(f"template missing sections: {missing}")
    parts = {name: "\n".join(lines).strip("\n") for name, lines in sections.items()}
    return PromptTemplate(**parts)


def load_template(path: str | Path | None = None) -> PromptTemplate:
    """Load a template file, or the packaged default when no path given."""
    if path is None:
        text = (
            resources.files("durcast").joinpath("templates/default_prompt.txt")
        ).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_template(text)


def _render_features(case: SurgicalCase) -> str:
    lines = []
    for name, value in case.values.items():
        shown = "unknown" if value is None else value
        if isinstance(shown, float) and shown == int(shown):
            shown = int(shown)
        lines.append(f"  {name}: {shown}")
    return "\n".join(lines)


def render_reference(
    case: SurgicalCase, similarity: float, template: PromptTemplate, index: int = 1
) -> str:
    """One demonstration block: features, similarity (3 decimals), duration."""
    if case.duration_min is None:
        raise MissingDuration(f"reference case {case.id!r} has no recorded duration")
    return template.reference.format(
        index=index,
        similarity=f"{similarity:.3f}",
        duration=int(round(case.duration_min)),
        features=_render_features(case),
    )


def _render_statistics(prior: StatisticalPrior, template: PromptTemplate) -> str:
    return template.statistics.format(
        stratum=prior.stratum_descriptor,
        cohort_size=prior.cohort_size,
        median=f"{prior.median_min:.1f}",
        mean=f"{prior.mean_min:.1f}",
        low=f"{prior.range_min[0]:.1f}",
        high=f"{prior.range_min[1]:.1f}",
        q1=f"{prior.iqr_min[0]:.1f}",
        q3=f"{prior.iqr_min[1]:.1f}",
    )


def build_prompt(
    query: SurgicalCase,
    refs: ReferenceSet | None,
    prior: StatisticalPrior | None,
    mode: str,
    template: PromptTemplate,
    max_chars: int = DEFAULT_MAX_CHARS,
) -> Prompt:
    """Assemble the full prompt for one query under the given mode.

    zero_shot forbids references and prior; random_few_shot takes references
    only; rag requires both. Deterministic: identical inputs produce
    byte-identical prompts. Errors rather than truncating when the rendered
    text exceeds max_chars.
    """
    if mode not in MODES:
        raise ModeArgumentMismatch(f"unknown mode {mode!r}, expected one of {MODES}")
    if mode == "zero_shot" and (refs is not None or prior is not None):
        raise ModeArgumentMismatch("zero_shot takes neither references nor prior")
    if mode == "random_few_shot" and (refs is None or prior is not None):
        raise ModeArgumentMismatch("random_few_shot takes references and no prior")
    if mode == "rag" and (refs is None or prior is None):
        raise ModeArgumentMismatch("rag requires both references and prior")

    references_section = ""
    statistics_section = ""
    if refs is not None:
        blocks = [
            render_reference(case, sim, template, index=i)
            for i, (case, sim) in enumerate(refs.references, start=1)
        ]
        references_section = template.references_header + "\n" + "\n".join(blocks) + "\n"
    if prior is not None:
        statistics_section = _render_statistics(prior, template) + "\n"
    query_section = template.query.format(features=_render_features(query))

    user_text = template.user.format(
        references_section=references_section,
        statistics_section=statistics_section,
        query_section=query_section,
    )
    while "\n\n\n" in user_text:
        user_text = user_text.replace("\n\n\n", "\n\n")
    system_text = template.system + "\n" + OUTPUT_CONTRACT
    if len(system_text) + len(user_text) > max_chars:
        raise PromptTooLong(
            f"prompt is {len(system_text) + len(user_text)} chars, limit {max_chars}"
        )
    if prior is not None:
        stratum = prior.stratum_descriptor
    elif refs is not None:
        stratum = refs.stratum_descriptor
    else:
        stratum = None
    return Prompt(
        system_text=system_text,
        user_text=user_text,
        metadata=PromptMetadata(
            mode=mode,
            k_used=len(refs.references) if refs is not None else 0,
            stratum_descriptor=stratum,
            query_id=query.id,
            reference_durations=tuple(
                float(case.duration_min) for case, _ in refs.references
            )
            if refs is not None
            else (),
            prior_median=prior.median_min if prior is not None else None,
        ),
    )
