"""Admissibility gating, taxonomy classification, and difficulty grading.

All three operations go through an external judge client.  The judge sees a
deterministic prompt and must answer in strict JSON; malformed answers are
re-queried a bounded number of times and then surfaced as errors rather
than silently repaired.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .clients import (
    JudgeClient,
    JudgeClientConfig,
    MalformedOutput,
    extract_json_object,
    query_judge,
)
from .corpus import (
    DIFFICULTY_DIMENSIONS,
    DIFFICULTY_TIERS,
    DifficultyProfile,
    TaxonomyTree,
)

logger = logging.getLogger(__name__)

# Axis order is part of the contract: prompts, verdicts, and the review
# queue all use this order.
AXES = (
    "safety",
    "privacy",
    "task_direction",
    "intent_clarity",
    "executability",
    "dependency_minimality",
    "logical_completeness",
)

# Failing any of these axes rejects the query outright.
HARD_AXES = ("safety", "privacy", "executability", "logical_completeness")

AXIS_DESCRIPTIONS = {
    "safety": "The query contains no harmful, illegal, or targeted content; it is admissible regardless of task realism.",
    "privacy": "The query leaks no personally identifiable information, credentials, or named non-public entities requiring redaction.",
    "task_direction": "The query specifies a front-end web-development task, not a backend, data-science, general-purpose coding, or non-coding request.",
    "intent_clarity": "The objective is unambiguous, internally consistent, and specified well enough that a well-formed implementation is determinable.",
    "executability": "The request can be realized as a self-contained front-end artifact runnable in a standard browser sandbox without proprietary services, live external APIs, or private datasets.",
    "dependency_minimality": "Fulfillment does not require specific third-party URLs, paywalled assets, or user-specific credentials that would make reproduction infeasible.",
    "logical_completeness": "The functional specification contains no mutually unsatisfiable constraints or dangling references.",
}

ERROR_LABEL = "__error__"


class CurationError(Exception):
    """Base error for the curation stage."""


class EmptyDefinition(CurationError):
    """A taxonomy leaf has no definition text to inline into the prompt."""


class Decision(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    ROUTE = "route"


@dataclass(frozen=True)
class AdmissibilityVerdict:
    """Per-axis boolean verdicts with rationales.

    Every failing axis must carry a non-empty rationale; rationales for
    passing axes are optional.
    """

    axes: Mapping[str, bool]
    rationales: Mapping[str, str]

    def __post_init__(self) -> None:
        if tuple(sorted(self.axes)) != tuple(sorted(AXES)):
            raise CurationError(
                f"verdict must cover exactly the seven axes, got {sorted(self.axes)}"
            )
        for axis, passed in self.axes.items():
            if not passed and not self.rationales.get(axis, "").strip():
                raise CurationError(f"failing axis {axis!r} has no rationale")

    def failing_axes(self) -> tuple[str, ...]:
        return tuple(a for a in AXES if not self.axes[a])


@dataclass(frozen=True)
class GateDecision:
    decision: Decision
    triggering_axes: tuple[str, ...]


def gate(verdict: AdmissibilityVerdict) -> GateDecision:
    """Fold a verdict into accept / reject / route.

    Reject if any hard axis fails, accept only if all seven pass, and route
    everything else to expert review.  Pure function of the verdict.
    """
    failing = verdict.failing_axes()
    hard_failures = tuple(a for a in failing if a in HARD_AXES)
    if hard_failures:
        return GateDecision(Decision.REJECT, hard_failures)
    if not failing:
        return GateDecision(Decision.ACCEPT, ())
    return GateDecision(Decision.ROUTE, failing)


def assemble_classification_prompt(query_text: str, tree: TaxonomyTree) -> str:
    """Build the single-pass classification prompt.

    Four blocks: role specification, the inlined taxonomy definitions, the
    query, and the strict output contract.  Deterministic for a fixed
    (query, tree) pair.
    """
    lines = [
        "You are an expert at classifying multilingual web-development queries.",
        "Look past surface wording and infer the underlying technical scenario.",
        "Classify the query on a single dimension: task_scenario.",
        f"task_scenario ({len(tree)} categories):",
    ]
    for leaf in tree:
        definition = leaf.definition.strip()
        if not definition:
            raise EmptyDefinition(f"leaf {leaf.name!r} has an empty definition")
        lines.append(f"  - {leaf.name}: {definition}")
    lines += [
        "",
        "Select exactly one category. Do not assign multiple labels and do not",
        "invent an 'other' option. Base the decision on the task scenario, not on",
        "the programming language or visual style the query happens to mention.",
        "",
        f"Query: {query_text}",
        "",
        "Output format (strict):",
        f'{{"task_scenario": "<one of the {len(tree)} labels>"}}',
        "No extra explanation. JSON only.",
    ]
    return "\n".join(lines)


@dataclass(frozen=True)
class Classification:
    leaf: str
    l1: str
    l2: str


def classify(
    query_text: str,
    tree: TaxonomyTree,
    client: JudgeClient,
    config: JudgeClientConfig = JudgeClientConfig(),
) -> Classification:
    """Classify one query to a taxonomy leaf; ancestry comes from the tree.

    A syntactically valid JSON answer naming a label outside the taxonomy is
    treated the same as a malformed answer: re-queried, then rejected.
    """
    prompt = assemble_classification_prompt(query_text, tree)

    def parse(text: str) -> Classification:
        obj = extract_json_object(text)
        if set(obj) != {"task_scenario"}:
            raise ValueError(f"expected exactly the task_scenario key, got {sorted(obj)}")
        label = obj["task_scenario"]
        if not isinstance(label, str) or label not in tree:
            raise ValueError(f"label not in taxonomy: {label!r}")
        l1, l2 = tree.resolve_ancestry(label)
        return Classification(leaf=label, l1=l1, l2=l2)

    return query_judge(prompt, client, config, parse, "classify")


def assemble_admissibility_prompt(query_text: str) -> str:
    lines = [
        "You are a strict admissibility reviewer for a web-development benchmark.",
        "Assess the candidate query independently on each of the seven axes below.",
        "An axis passes only when the stated condition holds.",
        "",
        "Axes:",
    ]
    for axis in AXES:
        lines.append(f"  - {axis}: {AXIS_DESCRIPTIONS[axis]}")
    lines += [
        "",
        f"Query: {query_text}",
        "",
        "Output format (strict): a JSON object with exactly the seven axis names as",
        'keys, each mapping to {"pass": true|false, "rationale": "<short reason>"}.',
        "A failing axis must include a non-empty rationale.",
        "No extra explanation. JSON only.",
    ]
    return "\n".join(lines)


def evaluate_admissibility(
    query_text: str,
    client: JudgeClient,
    config: JudgeClientConfig = JudgeClientConfig(),
) -> AdmissibilityVerdict:
    prompt = assemble_admissibility_prompt(query_text)

    def parse(text: str) -> AdmissibilityVerdict:
        obj = extract_json_object(text)
        if set(obj) != set(AXES):
            raise ValueError(f"expected the seven axis keys, got {sorted(obj)}")
        axes: dict[str, bool] = {}
        rationales: dict[str, str] = {}
        for axis in AXES:
            entry = obj[axis]
            if not isinstance(entry, dict) or not isinstance(entry.get("pass"), bool):
                raise ValueError(f"axis {axis!r} missing boolean 'pass'")
            axes[axis] = entry["pass"]
            rationales[axis] = str(entry.get("rationale", ""))
        try:
            return AdmissibilityVerdict(axes=axes, rationales=rationales)
        except CurationError as exc:  # e.g. failing axis without rationale
            raise ValueError(str(exc)) from exc

    return query_judge(prompt, client, config, parse, "admissibility")


def assemble_difficulty_prompt(query_text: str) -> str:
    from importlib import resources

    rubric = json.loads(
        resources.files("webeval.data")
        .joinpath("difficulty_rubric.json")
        .read_text(encoding="utf-8")
    )
    lines = [
        "You grade the difficulty of a web-development query on six complexity",
        "dimensions. For each dimension pick exactly one tier from:",
        f"  {', '.join(DIFFICULTY_TIERS)} (ascending difficulty).",
        "",
        "Level definitions:",
    ]
    for level in rubric["levels"]:
        lines.append(f"  - {level['name']}: {level['definition']} (typical: {level['scope']})")
    lines.append("")
    lines.append("Dimension criteria:")
    for dim in DIFFICULTY_DIMENSIONS:
        criteria = rubric["dimensions"][dim]
        parts = "; ".join(f"{tier}: {criteria[tier]}" for tier in DIFFICULTY_TIERS)
        lines.append(f"  - {dim}: {parts}")
    lines += [
        "",
        f"Query: {query_text}",
        "",
        "Output format (strict): a JSON object with exactly the six dimension names",
        f"({', '.join(DIFFICULTY_DIMENSIONS)})",
        "as keys, each mapping to one tier string.",
        "No extra explanation. JSON only.",
    ]
    return "\n".join(lines)


def grade_difficulty(
    query_text: str,
    client: JudgeClient,
    config: JudgeClientConfig = JudgeClientConfig(),
) -> DifficultyProfile:
    prompt = assemble_difficulty_prompt(query_text)

    def parse(text: str) -> DifficultyProfile:
        obj = extract_json_object(text)
        if set(obj) != set(DIFFICULTY_DIMENSIONS):
            raise ValueError(f"expected the six dimension keys, got {sorted(obj)}")
        for dim, tier in obj.items():
            if tier not in DIFFICULTY_TIERS:
                raise ValueError(f"dimension {dim!r} has unknown tier {tier!r}")
        return DifficultyProfile.from_dict(obj)

    return query_judge(prompt, client, config, parse, "difficulty")


@dataclass
class RunPrecision:
    run_index: int
    correct: int
    total: int
    confusion: Counter

    @property
    def precision_pct(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0


@dataclass
class PrecisionReport:
    runs: list[RunPrecision]

    @property
    def mean_precision_pct(self) -> float:
        if not self.runs:
            return 0.0
        return sum(r.precision_pct for r in self.runs) / len(self.runs)

    def top_confusions(self, k: int = 10) -> list[tuple[tuple[str, str], int]]:
        merged: Counter = Counter()
        for run in self.runs:
            merged.update(run.confusion)
        return merged.most_common(k)


def validate_precision(
    gold: Sequence[tuple[str, str]],
    tree: TaxonomyTree,
    client: JudgeClient,
    config: JudgeClientConfig = JudgeClientConfig(),
    runs: int = 1,
) -> PrecisionReport:
    """Measure per-run precision of the classifier against gold labels.

    `gold` holds (query_text, gold_leaf) pairs.  A query whose classification
    fails outright counts as a miss and appears in the confusion pairs under
    the reserved predicted label `__error__`.
    """
    if not gold:
        raise CurationError("gold slice is empty")
    results = []
    for run_index in range(runs):
        correct = 0
        confusion: Counter = Counter()
        for query_text, gold_leaf in gold:
            try:
                predicted = classify(query_text, tree, client, config).leaf
            except MalformedOutput:
                predicted = ERROR_LABEL
            if predicted == gold_leaf:
                correct += 1
            else:
                confusion[(gold_leaf, predicted)] += 1
        results.append(
            RunPrecision(
                run_index=run_index,
                correct=correct,
                total=len(gold),
                confusion=confusion,
            )
        )
        logger.info(
            "precision run %d: %d/%d = %.2f%%",
            run_index,
            correct,
            len(gold),
            results[-1].precision_pct,
        )
    return PrecisionReport(runs=results)


def write_review_queue(
    path: str | Path,
    entries: Iterable[tuple[str, str, AdmissibilityVerdict, GateDecision]],
) -> int:
    """Append routed queries to the expert-review queue file (JSONL).

    Each entry is (query_id, query_text, verdict, decision).  Only routed
    decisions belong here; callers filter before writing.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("a", encoding="utf-8", newline="\n") as fh:
        for query_id, query_text, verdict, decision in entries:
            fh.write(
                json.dumps(
                    {
                        "id": query_id,
                        "text": query_text,
                        "decision": decision.decision.value,
                        "triggering_axes": list(decision.triggering_axes),
                        "axes": dict(verdict.axes),
                        "rationales": {
                            a: r for a, r in verdict.rationales.items() if r
                        },
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
            fh.write("\n")
            count += 1
    return count
