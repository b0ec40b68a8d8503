"""Shared clinical stratum ladder.

Both retrieval post-processing and statistical priors descend the same
ladder of attribute-match tiers, from most to least specific. For key
attributes (a, b, c) the ladder is:

    0: a + b + c
    1: a + b
    2: a + c
    3: a
    4: unfiltered (GLOBAL)

In general: all keys, then the first key combined with each subset of the
remaining keys in descending size (declared order breaks ties), then the
first key alone, then unfiltered. A tier is applicable to a query only when
the query has every tier attribute present.
"""

from __future__ import annotations

from itertools import combinations

from .schema import SurgicalCase

GLOBAL_STRATUM = "GLOBAL"


def ladder(key_attributes: tuple[str, ...]) -> list[tuple[str, ...]]:
    """Ordered match tiers, most specific first, ending with the empty tier."""
    keys = tuple(key_attributes)
    if not keys:
        return [()]
    head, rest = keys[0], keys[1:]
    tiers = []
    for size in range(len(rest), -1, -1):
        for combo in combinations(rest, size):
            tiers.append((head, *combo))
    tiers.append(())
    return tiers


def tier_applicable(q: SurgicalCase, tier: tuple[str, ...]) -> bool:
    return all(q.values.get(attr) is not None for attr in tier)


def matches_tier(q: SurgicalCase, candidate: SurgicalCase, tier: tuple[str, ...]) -> bool:
    """Exact string equality on every tier attribute."""
    for attr in tier:
        cv = candidate.values.get(attr)
        if cv is None or str(cv) != str(q.values[attr]):
            return False
    return True


def describe_tier(q: SurgicalCase, tier: tuple[str, ...]) -> str:
    if not tier:
        return GLOBAL_STRATUM
    return " + ".join(f"{attr}={q.values[attr]}" for attr in tier)
