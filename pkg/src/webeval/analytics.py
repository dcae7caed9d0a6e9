"""Aggregation and agreement analytics.

Three consumers meet here: the leaderboard (model-level means over
scorecards), the human-rubric calibration (binary items folded into two
dimension scores, then compared pairwise against the machine judgement),
and failure attribution (deployment failures split into infrastructure
and code responsibility).
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .deploy import CODE_CATEGORIES, FAILURE_CATEGORIES, INFRA_CATEGORIES
from .scoring import ScoreCard

logger = logging.getLogger(__name__)

MARK_PASS = "pass"
MARK_FAIL = "fail"
MARK_EXEMPT = "exempt"
MARKS = (MARK_PASS, MARK_FAIL, MARK_EXEMPT)

DIM_FUNCTIONAL = "F"
DIM_AESTHETICS = "A"


class AnalyticsError(Exception):
    """Base error for aggregation and agreement computations."""


class CoverageMismatch(AnalyticsError):
    """Two pairwise judgement sets cover different pairs."""


@dataclass(frozen=True)
class RubricItem:
    id: str
    cluster: str
    name: str
    dimension: str
    scored: bool
    criterion: str


def load_rubric_items() -> tuple[RubricItem, ...]:
    """The binary annotation rubric shipped as package data.

    Unscored items are audit side-channels: they are recorded per sheet
    but excluded from the dimension averages.
    """
    payload = json.loads(
        resources.files("webeval.data")
        .joinpath("rubric_items.json")
        .read_text(encoding="utf-8")
    )
    items = tuple(
        RubricItem(
            id=entry["id"],
            cluster=entry["cluster"],
            name=entry["name"],
            dimension=entry["dimension"],
            scored=entry["scored"],
            criterion=entry["criterion"],
        )
        for entry in payload["items"]
    )
    for item in items:
        if item.dimension not in (DIM_FUNCTIONAL, DIM_AESTHETICS):
            raise AnalyticsError(f"rubric item {item.id} has unknown dimension")
    return items


@dataclass(frozen=True)
class RubricSheet:
    """One annotator's marks for one task: item id to pass/fail/exempt."""

    query_id: str
    model: str
    marks: Mapping[str, str]

    def __post_init__(self) -> None:
        for item_id, mark in self.marks.items():
            if mark not in MARKS:
                raise AnalyticsError(
                    f"sheet {self.query_id}/{self.model}: item {item_id} has "
                    f"unknown mark {mark!r}"
                )


def aggregate_rubric(
    sheet: RubricSheet, items: Sequence[RubricItem] | None = None
) -> tuple[float | None, float | None]:
    """Fold binary marks into (functional, aesthetics) fractions.

    Each dimension is the uniform average of its applicable scored items;
    exempt items drop out of both numerator and denominator.  A dimension
    whose items are all exempt has no defined score and comes back None.
    Every scored item must be marked; unscored audit items may be present
    but never contribute.
    """
    items = list(items) if items is not None else list(load_rubric_items())
    known_ids = {item.id for item in items}
    for item_id in sheet.marks:
        if item_id not in known_ids:
            raise AnalyticsError(f"mark for unknown rubric item {item_id!r}")
    scores: dict[str, float | None] = {}
    for dimension in (DIM_FUNCTIONAL, DIM_AESTHETICS):
        passed = 0
        applicable = 0
        for item in items:
            if not item.scored or item.dimension != dimension:
                continue
            mark = sheet.marks.get(item.id)
            if mark is None:
                raise AnalyticsError(
                    f"sheet {sheet.query_id}/{sheet.model}: scored item "
                    f"{item.id} is unmarked"
                )
            if mark == MARK_EXEMPT:
                continue
            applicable += 1
            if mark == MARK_PASS:
                passed += 1
        scores[dimension] = passed / applicable if applicable else None
    return scores[DIM_FUNCTIONAL], scores[DIM_AESTHETICS]


def pairwise_from_scores(
    scores: Mapping[str, float], tie_epsilon: float = 0.0
) -> dict[tuple[str, str], int]:
    """Expand per-candidate scores into pairwise preferences.

    Keys are (a, b) with a < b lexicographically; the value is +1 when a
    scores higher, -1 when b does, 0 on a tie within `tie_epsilon`.
    """
    if tie_epsilon < 0:
        raise AnalyticsError("tie_epsilon must be >= 0")
    names = sorted(scores)
    preferences: dict[tuple[str, str], int] = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            diff = scores[a] - scores[b]
            if abs(diff) <= tie_epsilon:
                preferences[(a, b)] = 0
            else:
                preferences[(a, b)] = 1 if diff > 0 else -1
    return preferences


def pairwise_from_ranking(
    ranking: Sequence[str | Sequence[str]],
) -> dict[tuple[str, str], int]:
    """Expand a best-to-worst ranking into pairwise preferences.

    An element may be a single name or a group of names tied at that
    position.
    """
    position: dict[str, int] = {}
    for index, entry in enumerate(ranking):
        group = [entry] if isinstance(entry, str) else list(entry)
        for name in group:
            if name in position:
                raise AnalyticsError(f"name appears twice in ranking: {name!r}")
            position[name] = index
    names = sorted(position)
    preferences: dict[tuple[str, str], int] = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            if position[a] == position[b]:
                preferences[(a, b)] = 0
            else:
                preferences[(a, b)] = 1 if position[a] < position[b] else -1
    return preferences


def agreement_rate(
    left: Mapping[tuple, int], right: Mapping[tuple, int]
) -> float:
    """Percentage of pairs on which two judgements agree in direction.

    A match requires the same sign (or both ties).  The two sides must
    cover exactly the same pairs; partial overlap would silently bias the
    rate, so it is an error instead.
    """
    if set(left) != set(right):
        missing = set(left) ^ set(right)
        raise CoverageMismatch(f"pair sets differ on {len(missing)} pairs")
    if not left:
        raise AnalyticsError("no pairs to compare")
    matches = sum(1 for pair in left if left[pair] == right[pair])
    return 100.0 * matches / len(left)


@dataclass(frozen=True)
class LeaderboardRow:
    model: str
    queries: int
    functional: float
    aesthetics: float
    total: float


def build_leaderboard(
    cards_by_model: Mapping[str, Sequence[ScoreCard]],
    combiner: Callable[[float, float], float] | None = None,
) -> list[LeaderboardRow]:
    """Model-level means of the adjusted scores, ranked by the total.

    The total combiner is pluggable; the default weighs functionality and
    aesthetics equally.  Rows sort by total descending, then model name,
    so equal totals order deterministically.
    """
    combine = combiner or (lambda functional, aesthetics: (functional + aesthetics) / 2.0)
    rows = []
    for model in sorted(cards_by_model):
        cards = cards_by_model[model]
        if not cards:
            raise AnalyticsError(f"model {model!r} has no scorecards")
        functional = sum(c.adjusted.functional_score for c in cards) / len(cards)
        aesthetics = sum(c.adjusted.aesthetics_score for c in cards) / len(cards)
        rows.append(
            LeaderboardRow(
                model=model,
                queries=len(cards),
                functional=functional,
                aesthetics=aesthetics,
                total=combine(functional, aesthetics),
            )
        )
    rows.sort(key=lambda row: (-row.total, row.model))
    return rows


def breakdown(
    cards_by_model: Mapping[str, Sequence[ScoreCard]],
    group_of: Callable[[ScoreCard], str],
    combiner: Callable[[float, float], float] | None = None,
) -> dict[str, dict[str, LeaderboardRow]]:
    """Per-model cell means along one reporting axis.

    `group_of` maps a card to its group label: language, difficulty tier,
    taxonomy domain, page type, generation mode.  Cells use the same
    arithmetic as the overall leaderboard, so the count-weighted mean of a
    model's cells reproduces its overall row.
    """
    out: dict[str, dict[str, LeaderboardRow]] = {}
    for model in sorted(cards_by_model):
        groups: dict[str, list[ScoreCard]] = {}
        for card in cards_by_model[model]:
            groups.setdefault(group_of(card), []).append(card)
        out[model] = {
            group: build_leaderboard({model: groups[group]}, combiner)[0]
            for group in sorted(groups)
        }
    return out


def write_leaderboard_csv(rows: Sequence[LeaderboardRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "model", "queries", "functional", "aesthetics", "total"])
        for rank, row in enumerate(rows, start=1):
            writer.writerow(
                [
                    rank,
                    row.model,
                    row.queries,
                    f"{row.functional:.4f}",
                    f"{row.aesthetics:.4f}",
                    f"{row.total:.4f}",
                ]
            )
    return path


@dataclass(frozen=True)
class FailureBreakdown:
    """Deployment failures split by who is responsible.

    Infrastructure categories count against the harness, code categories
    against the generated artifact; the split keeps infra noise from
    contaminating model comparisons.
    """

    counts: Mapping[str, int]
    attempts: int

    @property
    def infrastructure_total(self) -> int:
        return sum(self.counts.get(c, 0) for c in INFRA_CATEGORIES)

    @property
    def code_total(self) -> int:
        return sum(self.counts.get(c, 0) for c in CODE_CATEGORIES)

    @property
    def failure_total(self) -> int:
        return sum(self.counts.values())

    @property
    def failure_rate(self) -> float:
        return self.failure_total / self.attempts if self.attempts else 0.0

    def to_dict(self) -> dict:
        return {
            "counts": dict(sorted(self.counts.items())),
            "attempts": self.attempts,
            "infrastructure_total": self.infrastructure_total,
            "code_total": self.code_total,
            "failure_total": self.failure_total,
            "failure_rate": self.failure_rate,
        }


def attribute_failures(
    categories: Iterable[str], attempts: int
) -> FailureBreakdown:
    """Tally failure categories over a run of `attempts` deployments."""
    counts: Counter = Counter()
    for category in categories:
        if category not in FAILURE_CATEGORIES:
            raise AnalyticsError(f"unknown failure category: {category!r}")
        counts[category] += 1
    if attempts < sum(counts.values()):
        raise AnalyticsError("more failures than attempts")
    return FailureBreakdown(counts=dict(counts), attempts=attempts)
