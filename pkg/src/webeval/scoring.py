"""Three-stage scorecard: static perception, problem detection, adjustment.

Stage one scores the untouched page from a screenshot, the source, and the
console logs.  Stage two, run after the interaction session, turns the
agent's observations into a structured problem list.  Stage three re-scores
in light of those problems.  A deterministic rule engine independently
prices the problem list and flags adjusted scores that drift beyond a
tolerance from the expected value; the judge stays authoritative, the flag
is an audit signal.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .assets import fill_template, load_asset
from .clients import (
    JudgeClient,
    JudgeClientConfig,
    extract_json_object,
    query_judge,
)

logger = logging.getLogger(__name__)

SCORE_MIN = 0.0
SCORE_MAX = 8.0

SEVERITIES = ("CRITICAL", "MAJOR", "MINOR")

KIND_FUNCTIONAL = "functional"
KIND_AESTHETIC = "aesthetic"
KINDS = (KIND_FUNCTIONAL, KIND_AESTHETIC)

STATUS_NEW = "new"
STATUS_RETAINED = "retained_from_static"

# Adjusted scores may deviate from the rule-engine expectation by at most
# this much before the scorecard is flagged for audit.
DISCREPANCY_TOLERANCE = 1.0

# Minimum final score for a page that renders and addresses the query.
RENDER_FLOOR = 1.0

# Malformed judge output at any scoring stage gets exactly one re-query.
_SCORING_RETRIES = 1

# A detection note that refers back to the static stage marks the problem
# as already priced into the static score.
_STATIC_NOTE = re.compile(r"\bstatic\b", re.IGNORECASE)

# Content-language problems are priced by their own two-tier schedule, not
# by the generic severity table.
_LANGUAGE_MISMATCH = re.compile(
    r"\b(language mismatch|wrong language|incorrect language)\b", re.IGNORECASE
)
_FULL_MISMATCH = re.compile(
    r"\b(entire|entirely|complete|completely|whole|all)\b", re.IGNORECASE
)

# Quantified dismissals name the points the static stage deducted, e.g.
# "deducted 1.0 points for a loading overlay that clears on interaction".
_POINTS = re.compile(r"(\d+(?:\.\d+)?)\s*point", re.IGNORECASE)


class ScoringError(Exception):
    """Raised on invalid scores, problem payloads, or template drift."""


def _validate_score(value: object, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{what} is not a number: {value!r}")
    score = float(value)
    if not SCORE_MIN <= score <= SCORE_MAX:
        raise ValueError(f"{what} out of range [0, 8]: {score}")
    return score


def derive_status(note: str) -> str:
    """Classify a detected problem as newly found or retained from static.

    The detection stage annotates each problem with a note explaining where
    it came from; a note mentioning the static evaluation means the static
    score already paid for it.
    """
    return STATUS_RETAINED if _STATIC_NOTE.search(note or "") else STATUS_NEW


@dataclass(frozen=True)
class SeverityTable:
    """Deduction schedule used by the deterministic cross-check."""

    critical: float = 2.0
    major: float = 1.0
    minor: float = 0.5
    language_mismatch_partial: float = 2.0
    language_mismatch_full: float = 4.0

    def __post_init__(self) -> None:
        for name in (
            "critical",
            "major",
            "minor",
            "language_mismatch_partial",
            "language_mismatch_full",
        ):
            if getattr(self, name) < 0:
                raise ScoringError(f"severity deduction {name} must be >= 0")

    def for_severity(self, severity: str) -> float:
        if severity == "CRITICAL":
            return self.critical
        if severity == "MAJOR":
            return self.major
        if severity == "MINOR":
            return self.minor
        raise ScoringError(f"unknown severity: {severity!r}")


@dataclass(frozen=True)
class ProblemReport:
    """One problem surfaced by the detection stage.

    `status` is derived from the note when not given explicitly, so parsed
    and hand-built reports classify identically.
    """

    kind: str
    severity: str
    description: str
    timestamp: str = ""
    note: str = ""
    status: str = ""

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ScoringError(f"unknown problem kind: {self.kind!r}")
        if self.severity not in SEVERITIES:
            raise ScoringError(f"unknown severity: {self.severity!r}")
        if not self.description.strip():
            raise ScoringError("problem description is empty")
        if not self.status:
            object.__setattr__(self, "status", derive_status(self.note))
        elif self.status not in (STATUS_NEW, STATUS_RETAINED):
            raise ScoringError(f"unknown problem status: {self.status!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "severity": self.severity,
            "description": self.description,
            "timestamp": self.timestamp,
            "note": self.note,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ProblemReport":
        return cls(
            kind=payload["kind"],
            severity=payload["severity"],
            description=payload["description"],
            timestamp=payload.get("timestamp", ""),
            note=payload.get("note", ""),
            status=payload.get("status", ""),
        )


@dataclass(frozen=True)
class DismissedProblem:
    """A static-stage finding the detection stage withdrew with cause."""

    kind: str
    original_issue: str
    reason: str

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ScoringError(f"unknown dismissal kind: {self.kind!r}")
        if not self.reason.strip():
            raise ScoringError("dismissal reason is empty")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "original_issue": self.original_issue,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "DismissedProblem":
        return cls(
            kind=payload["kind"],
            original_issue=payload.get("original_issue", ""),
            reason=payload["reason"],
        )


@dataclass(frozen=True)
class StaticScores:
    functional_score: float
    functional_reason: str
    aesthetics_score: float
    aesthetics_reason: str

    def __post_init__(self) -> None:
        for name in ("functional_score", "aesthetics_score"):
            try:
                _validate_score(getattr(self, name), name)
            except ValueError as exc:
                raise ScoringError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "functional_score": self.functional_score,
            "functional_reason": self.functional_reason,
            "aesthetics_score": self.aesthetics_score,
            "aesthetics_reason": self.aesthetics_reason,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "StaticScores":
        return cls(
            functional_score=payload["functional_score"],
            functional_reason=payload["functional_reason"],
            aesthetics_score=payload["aesthetics_score"],
            aesthetics_reason=payload["aesthetics_reason"],
        )


@dataclass(frozen=True)
class DetectionResult:
    problems: tuple[ProblemReport, ...]
    dismissed: tuple[DismissedProblem, ...]
    overall_assessment: str = ""

    def by_kind(self, kind: str) -> tuple[ProblemReport, ...]:
        return tuple(p for p in self.problems if p.kind == kind)

    def dismissed_by_kind(self, kind: str) -> tuple[DismissedProblem, ...]:
        return tuple(d for d in self.dismissed if d.kind == kind)

    def to_payload(self) -> dict:
        """Re-serialize in the judge's own output shape.

        The adjustment prompt embeds the detected problems verbatim, so the
        payload mirrors the detection contract rather than this dataclass.
        """
        return {
            "functional_problems": [
                {
                    "severity": p.severity,
                    "description": p.description,
                    "timestamp": p.timestamp,
                    "note": p.note,
                }
                for p in self.by_kind(KIND_FUNCTIONAL)
            ],
            "aesthetic_problems": [
                {
                    "severity": p.severity,
                    "description": p.description,
                    "timestamp": p.timestamp,
                    "note": p.note,
                }
                for p in self.by_kind(KIND_AESTHETIC)
            ],
            "dismissed_static_problems": [
                {"type": d.kind, "original_issue": d.original_issue, "reason": d.reason}
                for d in self.dismissed
            ],
            "overall_assessment": self.overall_assessment,
        }

    def to_dict(self) -> dict:
        return {
            "problems": [p.to_dict() for p in self.problems],
            "dismissed": [d.to_dict() for d in self.dismissed],
            "overall_assessment": self.overall_assessment,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "DetectionResult":
        return cls(
            problems=tuple(ProblemReport.from_dict(p) for p in payload["problems"]),
            dismissed=tuple(DismissedProblem.from_dict(d) for d in payload["dismissed"]),
            overall_assessment=payload.get("overall_assessment", ""),
        )


@dataclass(frozen=True)
class AdjustedScores:
    functional_score: float
    functional_reason: str
    aesthetics_score: float
    aesthetics_reason: str
    adjustment_summary: str = ""

    def __post_init__(self) -> None:
        for name in ("functional_score", "aesthetics_score"):
            try:
                _validate_score(getattr(self, name), name)
            except ValueError as exc:
                raise ScoringError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "functional_score": self.functional_score,
            "functional_reason": self.functional_reason,
            "aesthetics_score": self.aesthetics_score,
            "aesthetics_reason": self.aesthetics_reason,
            "adjustment_summary": self.adjustment_summary,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "AdjustedScores":
        return cls(
            functional_score=payload["functional_score"],
            functional_reason=payload["functional_reason"],
            aesthetics_score=payload["aesthetics_score"],
            aesthetics_reason=payload["aesthetics_reason"],
            adjustment_summary=payload.get("adjustment_summary", ""),
        )


@dataclass(frozen=True)
class RuleCheck:
    """Outcome of the deterministic cross-check of the adjusted scores."""

    expected_functional: float
    expected_aesthetics: float
    functional_delta: float
    aesthetics_delta: float
    tolerance: float
    discrepant: bool

    def to_dict(self) -> dict:
        return {
            "expected_functional": self.expected_functional,
            "expected_aesthetics": self.expected_aesthetics,
            "functional_delta": self.functional_delta,
            "aesthetics_delta": self.aesthetics_delta,
            "tolerance": self.tolerance,
            "discrepant": self.discrepant,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "RuleCheck":
        return cls(
            expected_functional=payload["expected_functional"],
            expected_aesthetics=payload["expected_aesthetics"],
            functional_delta=payload["functional_delta"],
            aesthetics_delta=payload["aesthetics_delta"],
            tolerance=payload["tolerance"],
            discrepant=payload["discrepant"],
        )


@dataclass(frozen=True)
class ScoreCard:
    """Full per-query judgement across the three stages."""

    query_id: str
    static: StaticScores
    detection: DetectionResult
    adjusted: AdjustedScores
    rule_check: RuleCheck
    renders_and_relevant: bool

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "static": self.static.to_dict(),
            "detection": self.detection.to_dict(),
            "adjusted": self.adjusted.to_dict(),
            "rule_check": self.rule_check.to_dict(),
            "renders_and_relevant": self.renders_and_relevant,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ScoreCard":
        return cls(
            query_id=payload["query_id"],
            static=StaticScores.from_dict(payload["static"]),
            detection=DetectionResult.from_dict(payload["detection"]),
            adjusted=AdjustedScores.from_dict(payload["adjusted"]),
            rule_check=RuleCheck.from_dict(payload["rule_check"]),
            renders_and_relevant=payload["renders_and_relevant"],
        )


def assemble_static_prompt(
    query_text: str, source: str, console_logs: Sequence[str] = ()
) -> str:
    """Scoring instructions followed by the actual page inputs.

    The screenshot travels separately as an image attachment; everything
    textual is appended below the instruction block.
    """
    template = load_asset("static_scoring.txt")
    logs = "\n".join(console_logs) if console_logs else "(none)"
    return "\n".join(
        [
            template,
            "",
            "---",
            "User Query:",
            query_text,
            "",
            "Page Source:",
            source,
            "",
            "Console Logs:",
            logs,
        ]
    )


def static_score(
    query_text: str,
    screenshot: bytes,
    source: str,
    console_logs: Sequence[str],
    client: JudgeClient,
    config: JudgeClientConfig = JudgeClientConfig(),
) -> StaticScores:
    """Stage one: score the rendered page before any interaction."""
    config = replace(config, max_retries=_SCORING_RETRIES)
    prompt = assemble_static_prompt(query_text, source, console_logs)

    def parse(text: str) -> StaticScores:
        obj = extract_json_object(text)
        expected = {
            "functional_reason",
            "functional_score",
            "aesthetics_reason",
            "aesthetics_score",
        }
        if set(obj) != expected:
            raise ValueError(f"expected keys {sorted(expected)}, got {sorted(obj)}")
        return StaticScores(
            functional_score=_validate_score(obj["functional_score"], "functional_score"),
            functional_reason=str(obj["functional_reason"]),
            aesthetics_score=_validate_score(obj["aesthetics_score"], "aesthetics_score"),
            aesthetics_reason=str(obj["aesthetics_reason"]),
        )

    return query_judge(prompt, client, config, parse, "static-score", images=[screenshot])


def assemble_detection_prompt(
    task_description: str, static: StaticScores, interaction_summary: str
) -> str:
    template = load_asset("problem_detection.txt")
    return fill_template(
        template,
        {
            "game_description": task_description,
            "static_aesthetics_score": f"{static.aesthetics_score:g}",
            "static_aesthetics_reason": static.aesthetics_reason,
            "static_functional_score": f"{static.functional_score:g}",
            "static_functional_reason": static.functional_reason,
            "interaction_summary": interaction_summary,
        },
    )


def _parse_problem_entries(entries: object, kind: str) -> list[ProblemReport]:
    if not isinstance(entries, list):
        raise ValueError(f"{kind}_problems is not a list")
    problems = []
    for entry in entries:
        if not isinstance(entry, Mapping):
            raise ValueError(f"{kind} problem entry is not an object")
        severity = entry.get("severity")
        if severity not in SEVERITIES:
            raise ValueError(f"{kind} problem has unknown severity {severity!r}")
        description = entry.get("description")
        if not isinstance(description, str) or not description.strip():
            raise ValueError(f"{kind} problem lacks a description")
        try:
            problems.append(
                ProblemReport(
                    kind=kind,
                    severity=severity,
                    description=description,
                    timestamp=str(entry.get("timestamp", "") or ""),
                    note=str(entry.get("note", "") or ""),
                )
            )
        except ScoringError as exc:
            raise ValueError(str(exc)) from exc
    return problems


def detect_problems(
    task_description: str,
    static: StaticScores,
    interaction_summary: str,
    client: JudgeClient,
    config: JudgeClientConfig = JudgeClientConfig(),
    screenshots: Sequence[bytes] = (),
) -> DetectionResult:
    """Stage two: turn interaction evidence into a structured problem list."""
    config = replace(config, max_retries=_SCORING_RETRIES)
    prompt = assemble_detection_prompt(task_description, static, interaction_summary)

    def parse(text: str) -> DetectionResult:
        obj = extract_json_object(text)
        expected = {
            "functional_problems",
            "aesthetic_problems",
            "dismissed_static_problems",
            "overall_assessment",
        }
        if set(obj) != expected:
            raise ValueError(f"expected keys {sorted(expected)}, got {sorted(obj)}")
        problems = _parse_problem_entries(obj["functional_problems"], KIND_FUNCTIONAL)
        problems += _parse_problem_entries(obj["aesthetic_problems"], KIND_AESTHETIC)
        dismissed = []
        raw_dismissed = obj["dismissed_static_problems"]
        if not isinstance(raw_dismissed, list):
            raise ValueError("dismissed_static_problems is not a list")
        for entry in raw_dismissed:
            if not isinstance(entry, Mapping):
                raise ValueError("dismissal entry is not an object")
            kind = entry.get("type")
            if kind not in KINDS:
                raise ValueError(f"dismissal has unknown type {kind!r}")
            try:
                dismissed.append(
                    DismissedProblem(
                        kind=kind,
                        original_issue=str(entry.get("original_issue", "") or ""),
                        reason=str(entry.get("reason", "") or ""),
                    )
                )
            except ScoringError as exc:
                raise ValueError(str(exc)) from exc
        return DetectionResult(
            problems=tuple(problems),
            dismissed=tuple(dismissed),
            overall_assessment=str(obj.get("overall_assessment", "") or ""),
        )

    return query_judge(
        prompt, client, config, parse, "problem-detection", images=list(screenshots)
    )


def assemble_adjustment_prompt(
    task_description: str, static: StaticScores, detection: DetectionResult
) -> str:
    template = load_asset("score_adjustment.txt")
    return fill_template(
        template,
        {
            "game_description": task_description,
            "static_functional_score": f"{static.functional_score:g}",
            "static_functional_reason": static.functional_reason,
            "static_aesthetics_score": f"{static.aesthetics_score:g}",
            "static_aesthetics_reason": static.aesthetics_reason,
            "detected_problems": json.dumps(
                detection.to_payload(), ensure_ascii=False, indent=2, sort_keys=True
            ),
        },
    )


def adjust_scores(
    task_description: str,
    static: StaticScores,
    detection: DetectionResult,
    client: JudgeClient,
    config: JudgeClientConfig = JudgeClientConfig(),
) -> AdjustedScores:
    """Stage three: final scores in light of the detected problems."""
    config = replace(config, max_retries=_SCORING_RETRIES)
    prompt = assemble_adjustment_prompt(task_description, static, detection)

    def parse(text: str) -> AdjustedScores:
        obj = extract_json_object(text)
        expected = {
            "adjusted_functional_score",
            "functional_reason",
            "adjusted_aesthetics_score",
            "aesthetics_reason",
            "adjustment_summary",
        }
        if set(obj) != expected:
            raise ValueError(f"expected keys {sorted(expected)}, got {sorted(obj)}")
        return AdjustedScores(
            functional_score=_validate_score(
                obj["adjusted_functional_score"], "adjusted_functional_score"
            ),
            functional_reason=str(obj["functional_reason"]),
            aesthetics_score=_validate_score(
                obj["adjusted_aesthetics_score"], "adjusted_aesthetics_score"
            ),
            aesthetics_reason=str(obj["aesthetics_reason"]),
            adjustment_summary=str(obj["adjustment_summary"]),
        )

    return query_judge(prompt, client, config, parse, "score-adjustment")


def is_language_mismatch(problem: ProblemReport) -> bool:
    return bool(_LANGUAGE_MISMATCH.search(problem.description))


def problem_deduction(problem: ProblemReport, table: SeverityTable) -> float:
    """Points a newly found problem costs under the deterministic schedule.

    Content-language mismatches carry their own two-tier price: a wholesale
    mismatch costs the full rate, a partial one the partial rate, whatever
    severity label the judge attached.
    """
    if is_language_mismatch(problem):
        if _FULL_MISMATCH.search(problem.description):
            return table.language_mismatch_full
        return table.language_mismatch_partial
    return table.for_severity(problem.severity)


def dismissal_add_back(dismissal: DismissedProblem) -> float:
    """Points restored by a dismissal that names the original deduction.

    Unquantified dismissals restore nothing here; only the judge can price
    them, which is exactly the asymmetry the cross-check tolerance absorbs.
    """
    for text in (dismissal.reason, dismissal.original_issue):
        match = _POINTS.search(text)
        if match:
            return float(match.group(1))
    return 0.0


def clamp_score(value: float) -> float:
    return min(SCORE_MAX, max(SCORE_MIN, value))


def derive_renders_and_relevant(static: StaticScores) -> bool:
    """A page scored above the blank/irrelevant tier renders and responds.

    The static rubric reserves 0 for pages that are blank or ignore the
    query, so any strictly positive functional score implies the floor
    applies downstream.
    """
    return static.functional_score >= RENDER_FLOOR


def rule_engine_adjust(
    static: StaticScores,
    detection: DetectionResult,
    renders_and_relevant: bool,
    table: SeverityTable = SeverityTable(),
) -> tuple[float, float]:
    """Deterministic expectation for the adjusted (functional, aesthetics).

    New problems deduct by severity; problems retained from the static
    stage deduct nothing, because the static score already paid for them;
    quantified dismissals restore the named points.  Results clamp to
    [0, 8] and floor at 1.0 when the page renders and is relevant.
    """
    expected = []
    for kind, base in (
        (KIND_FUNCTIONAL, static.functional_score),
        (KIND_AESTHETIC, static.aesthetics_score),
    ):
        deductions = sum(
            problem_deduction(p, table)
            for p in detection.by_kind(kind)
            if p.status == STATUS_NEW
        )
        add_backs = sum(dismissal_add_back(d) for d in detection.dismissed_by_kind(kind))
        value = clamp_score(base - deductions + add_backs)
        if renders_and_relevant:
            value = max(value, RENDER_FLOOR)
        expected.append(value)
    return expected[0], expected[1]


def check_adjustment(
    static: StaticScores,
    detection: DetectionResult,
    adjusted: AdjustedScores,
    renders_and_relevant: bool,
    table: SeverityTable = SeverityTable(),
    tolerance: float = DISCREPANCY_TOLERANCE,
) -> RuleCheck:
    """Compare the judge's adjusted scores against the rule engine.

    A deviation beyond the tolerance on either score flags the card; it
    never overrides the judge.
    """
    expected_functional, expected_aesthetics = rule_engine_adjust(
        static, detection, renders_and_relevant, table
    )
    functional_delta = adjusted.functional_score - expected_functional
    aesthetics_delta = adjusted.aesthetics_score - expected_aesthetics
    discrepant = abs(functional_delta) > tolerance or abs(aesthetics_delta) > tolerance
    if discrepant:
        logger.info(
            "rule-engine discrepancy: functional %+.2f, aesthetics %+.2f (tolerance %.2f)",
            functional_delta,
            aesthetics_delta,
            tolerance,
        )
    return RuleCheck(
        expected_functional=expected_functional,
        expected_aesthetics=expected_aesthetics,
        functional_delta=functional_delta,
        aesthetics_delta=aesthetics_delta,
        tolerance=tolerance,
        discrepant=discrepant,
    )


def build_scorecard(
    query_id: str,
    static: StaticScores,
    detection: DetectionResult,
    adjusted: AdjustedScores,
    table: SeverityTable = SeverityTable(),
    tolerance: float = DISCREPANCY_TOLERANCE,
) -> ScoreCard:
    """Assemble the per-query card, running the deterministic cross-check."""
    renders_and_relevant = derive_renders_and_relevant(static)
    rule_check = check_adjustment(
        static, detection, adjusted, renders_and_relevant, table, tolerance
    )
    return ScoreCard(
        query_id=query_id,
        static=static,
        detection=detection,
        adjusted=adjusted,
        rule_check=rule_check,
        renders_and_relevant=renders_and_relevant,
    )
