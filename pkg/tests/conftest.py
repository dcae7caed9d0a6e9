from __future__ import annotations

import pytest

from webeval.corpus import (
    DIFFICULTY_DIMENSIONS,
    DifficultyProfile,
    QueryRecord,
    TaxonomyTree,
)


@pytest.fixture(scope="session")
def tree() -> TaxonomyTree:
    return TaxonomyTree.default()


def make_profile(tier: str = "Easy", **overrides: str) -> DifficultyProfile:
    grades = {dim: tier for dim in DIFFICULTY_DIMENSIONS}
    grades.update(overrides)
    return DifficultyProfile.from_dict(grades)


def make_record(
    qid: str,
    text: str,
    leaf: str | None = None,
    tier: str = "Easy",
    language: str = "en",
    source_channel: str = "naturalistic",
) -> QueryRecord:
    return QueryRecord(
        id=qid,
        text=text,
        source_channel=source_channel,
        leaf=leaf,
        difficulty=make_profile(tier),
        tier=tier,
        language=language,
    )
