from __future__ import annotations

import random

import pytest

from oracles import enumerate_pair_agreement
from webeval.analytics import (
    DIM_AESTHETICS,
    DIM_FUNCTIONAL,
    MARK_EXEMPT,
    MARK_FAIL,
    MARK_PASS,
    AnalyticsError,
    CoverageMismatch,
    RubricItem,
    RubricSheet,
    agreement_rate,
    aggregate_rubric,
    attribute_failures,
    breakdown,
    build_leaderboard,
    load_rubric_items,
    pairwise_from_ranking,
    pairwise_from_scores,
    write_leaderboard_csv,
)
from webeval.scoring import (
    AdjustedScores,
    DetectionResult,
    StaticScores,
    build_scorecard,
)


def _card(query_id: str, functional: float, aesthetics: float):
    static = StaticScores(functional, "", aesthetics, "")
    adjusted = AdjustedScores(functional, "", aesthetics, "")
    return build_scorecard(query_id, static, DetectionResult((), ()), adjusted)


def _items(count: int, dimension: str = DIM_FUNCTIONAL) -> list[RubricItem]:
    return [
        RubricItem(id=f"i{n}", cluster="c", name=f"item {n}", dimension=dimension,
                   scored=True, criterion="binary check")
        for n in range(count)
    ]


def _sheet(marks: dict[str, str]) -> RubricSheet:
    return RubricSheet(query_id="q1", model="m", marks=marks)


def test_exemption_shrinks_the_denominator():
    # Ten items: two exempt leave eight applicable, six of which pass.
    items = _items(10)
    marks = {f"i{n}": MARK_PASS for n in range(6)}
    marks.update({"i6": MARK_FAIL, "i7": MARK_FAIL})
    marks.update({"i8": MARK_EXEMPT, "i9": MARK_EXEMPT})
    functional, aesthetics = aggregate_rubric(_sheet(marks), items)
    assert functional == 0.75
    assert aesthetics is None


def test_aggregation_is_permutation_invariant():
    items = _items(6) + _items(4, DIM_AESTHETICS)[:4]
    items = [
        RubricItem(id=f"p{n}", cluster="c", name=f"item {n}",
                   dimension=DIM_FUNCTIONAL if n < 6 else DIM_AESTHETICS,
                   scored=True, criterion="binary check")
        for n in range(10)
    ]
    marks = {f"p{n}": (MARK_PASS if n % 3 else MARK_FAIL) for n in range(10)}
    baseline = aggregate_rubric(_sheet(marks), items)
    rng = random.Random(7)
    for _ in range(10):
        shuffled = items[:]
        rng.shuffle(shuffled)
        assert aggregate_rubric(_sheet(marks), shuffled) == baseline


def test_all_pass_scores_one_on_the_shipped_rubric():
    items = load_rubric_items()
    marks = {item.id: MARK_PASS for item in items if item.scored}
    assert aggregate_rubric(_sheet(marks), items) == (1.0, 1.0)


def test_unscored_audit_items_never_contribute():
    items = load_rubric_items()
    marks = {item.id: MARK_PASS for item in items if item.scored}
    baseline = aggregate_rubric(_sheet(marks), items)
    # Failing the audit side-channels must not move either dimension.
    marks.update({item.id: MARK_FAIL for item in items if not item.scored})
    assert aggregate_rubric(_sheet(marks), items) == baseline


def test_fully_exempt_dimension_has_no_score():
    items = _items(3)
    functional, aesthetics = aggregate_rubric(
        _sheet({f"i{n}": MARK_EXEMPT for n in range(3)}), items
    )
    assert functional is None
    assert aesthetics is None


def test_aggregation_rejects_bad_sheets():
    items = _items(2)
    with pytest.raises(AnalyticsError, match="unknown rubric item"):
        aggregate_rubric(_sheet({"i0": MARK_PASS, "i1": MARK_PASS,
                                 "ghost": MARK_PASS}), items)
    with pytest.raises(AnalyticsError, match="unmarked"):
        aggregate_rubric(_sheet({"i0": MARK_PASS}), items)
    with pytest.raises(AnalyticsError, match="unknown mark"):
        RubricSheet(query_id="q", model="m", marks={"i0": "maybe"})


def test_pairwise_from_scores_signs_and_ties():
    prefs = pairwise_from_scores({"b": 3.0, "a": 5.0, "c": 3.0})
    assert prefs == {("a", "b"): 1, ("a", "c"): 1, ("b", "c"): 0}
    loose = pairwise_from_scores({"a": 5.0, "b": 4.4, "c": 3.0}, tie_epsilon=0.75)
    assert loose[("a", "b")] == 0
    assert loose[("a", "c")] == 1
    with pytest.raises(AnalyticsError):
        pairwise_from_scores({"a": 1.0}, tie_epsilon=-0.1)


def test_pairwise_from_ranking_handles_tie_groups():
    prefs = pairwise_from_ranking(["a", ["b", "c"], "d"])
    assert prefs[("a", "b")] == 1
    assert prefs[("b", "c")] == 0
    assert prefs[("c", "d")] == 1
    assert prefs[("b", "d")] == 1
    with pytest.raises(AnalyticsError, match="twice"):
        pairwise_from_ranking(["a", ["a", "b"]])


def test_agreement_identical_judgements_is_exactly_100():
    prefs = pairwise_from_scores({"a": 7.0, "b": 5.0, "c": 5.0})
    assert agreement_rate(prefs, dict(prefs)) == 100.0


def test_agreement_one_swapped_pair_is_two_thirds():
    left = pairwise_from_ranking(["A", "B", "C"])
    right = pairwise_from_ranking(["A", "C", "B"])
    rate = agreement_rate(left, right)
    assert rate == 200.0 / 3.0
    assert abs(rate - 66.67) <= 0.01


def test_agreement_requires_identical_coverage():
    left = pairwise_from_scores({"a": 1.0, "b": 2.0})
    right = pairwise_from_scores({"a": 1.0, "c": 2.0})
    with pytest.raises(CoverageMismatch):
        agreement_rate(left, right)
    with pytest.raises(AnalyticsError):
        agreement_rate({}, {})


def test_agreement_matches_the_pair_enumerator_on_random_sets():
    rng = random.Random(1234)
    names = ["m1", "m2", "m3", "m4", "m5", "m6"]
    for _ in range(40):
        size = rng.randint(2, 6)
        chosen = names[:size]
        # Grid-valued scores force genuine ties through both code paths.
        left = {name: rng.randrange(0, 17) / 2.0 for name in chosen}
        right = {name: rng.randrange(0, 17) / 2.0 for name in chosen}
        expected = enumerate_pair_agreement(left, right)
        got = agreement_rate(pairwise_from_scores(left), pairwise_from_scores(right))
        assert got == expected


def test_leaderboard_means_and_deterministic_tie_order():
    rows = build_leaderboard({
        "beta": [_card("q1", 7.0, 4.0)],
        "alpha": [_card("q1", 6.0, 5.0)],
        "gamma": [_card("q1", 8.0, 8.0), _card("q2", 4.0, 4.0)],
    })
    assert [row.model for row in rows] == ["gamma", "alpha", "beta"]
    gamma = rows[0]
    assert (gamma.queries, gamma.functional, gamma.aesthetics, gamma.total) == (2, 6.0, 6.0, 6.0)
    # alpha and beta tie on total 5.5 and order alphabetically.
    assert rows[1].total == rows[2].total == 5.5


def test_leaderboard_custom_combiner():
    rows = build_leaderboard(
        {"m": [_card("q1", 6.0, 2.0)]},
        combiner=lambda functional, aesthetics: functional,
    )
    assert rows[0].total == 6.0


def test_leaderboard_rejects_models_without_cards():
    with pytest.raises(AnalyticsError):
        build_leaderboard({"m": []})


def test_breakdown_cells_recombine_into_the_overall_row():
    cards = [
        _card("q1", 8.0, 6.0), _card("q2", 6.0, 6.0), _card("q3", 4.0, 2.0),
        _card("q4", 2.0, 8.0), _card("q5", 5.0, 3.0),
    ]
    groups = {"q1": "en", "q2": "en", "q3": "zh", "q4": "zh", "q5": "en"}
    cells = breakdown({"m": cards}, lambda card: groups[card.query_id])["m"]
    assert set(cells) == {"en", "zh"}
    overall = build_leaderboard({"m": cards})[0]
    weighted_f = sum(cell.functional * cell.queries for cell in cells.values())
    weighted_a = sum(cell.aesthetics * cell.queries for cell in cells.values())
    total_queries = sum(cell.queries for cell in cells.values())
    assert total_queries == overall.queries
    assert weighted_f / total_queries == pytest.approx(overall.functional)
    assert weighted_a / total_queries == pytest.approx(overall.aesthetics)


def test_leaderboard_csv_golden(tmp_path):
    rows = build_leaderboard({
        "alpha": [_card("q1", 6.0, 5.0)],
        "beta": [_card("q1", 7.0, 4.0)],
    })
    path = write_leaderboard_csv(rows, tmp_path / "reports" / "leaderboard.csv")
    assert path.read_text(encoding="utf-8") == (
        "rank,model,queries,functional,aesthetics,total\n"
        "1,alpha,1,6.0000,5.0000,5.5000\n"
        "2,beta,1,7.0000,4.0000,5.5000\n"
    )


def test_attribute_failures_splits_responsibility():
    result = attribute_failures(
        ["read_timeout", "code_syntax", "code_syntax", "port_collision",
         "code_phantom_import"],
        attempts=20,
    )
    assert result.infrastructure_total == 2
    assert result.code_total == 3
    assert result.failure_total == 5
    assert result.failure_rate == 0.25
    assert result.to_dict()["counts"] == {
        "code_phantom_import": 1,
        "code_syntax": 2,
        "port_collision": 1,
        "read_timeout": 1,
    }


def test_attribute_failures_validation():
    with pytest.raises(AnalyticsError, match="unknown failure category"):
        attribute_failures(["meteor_strike"], attempts=1)
    with pytest.raises(AnalyticsError, match="more failures"):
        attribute_failures(["code_syntax", "code_syntax"], attempts=1)
    assert attribute_failures([], attempts=0).failure_rate == 0.0
