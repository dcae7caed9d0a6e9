"""Deterministic offline stand-ins for the external model clients.

`DryRunJudge` answers every prompt the harness can produce, keyed purely
off the prompt text, so a full run can execute end to end with no network
and reproduce byte-identical outputs.  It is stateless: the same prompt
always gets the same answer, which also makes it safe to share across
worker threads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from typing import Sequence

logger = logging.getLogger(__name__)

_QUERY_LINE = re.compile(r"^Query: (.*)$", re.MULTILINE)
_USER_QUERY_BLOCK = re.compile(r"^User Query:\n(.*)$", re.MULTILINE)
_LEAF_LINE = re.compile(r"^  - (.+?): ", re.MULTILINE)
_STATIC_FUNCTIONAL = re.compile(r"- Functional Score: ([0-9.]+)/8")
_STATIC_AESTHETICS = re.compile(r"- Aesthetics Score: ([0-9.]+)/8")

_DIFFICULTY_TIERS = ("Easy", "Medium", "Medium-Hard", "Hard")
_DIFFICULTY_DIMENSIONS = (
    "functional_logic",
    "page_interaction",
    "data_system",
    "visual_design",
    "user_experience",
    "dynamic_simulation",
)
_ADMISSIBILITY_AXES = (
    "safety",
    "privacy",
    "task_direction",
    "intent_clarity",
    "executability",
    "dependency_minimality",
    "logical_completeness",
)


def _digest(*parts: str) -> bytes:
    return hashlib.blake2b("|".join(parts).encode("utf-8"), digest_size=16).digest()


def _pick(options: Sequence, *parts: str):
    return options[_digest(*parts)[0] % len(options)]


def _query_text(prompt: str) -> str:
    match = _QUERY_LINE.search(prompt)
    if match:
        return match.group(1)
    match = _USER_QUERY_BLOCK.search(prompt)
    if match:
        return match.group(1)
    return ""


class DryRunJudge:
    """Answers any harness prompt deterministically and plausibly."""

    def send(self, prompt: str, images: Sequence[bytes] | None = None) -> str:
        if "INTERACTION LOG (actions already performed):" in prompt:
            return self._interaction_step(prompt)
        if '"adjusted_functional_score"' in prompt:
            return self._adjustment(prompt)
        if '"dismissed_static_problems"' in prompt:
            return self._detection(prompt)
        if '"functional_score"' in prompt:
            return self._static(prompt)
        if "task_scenario" in prompt:
            return self._classification(prompt)
        if "admissibility" in prompt:
            return self._admissibility(prompt)
        if "difficulty" in prompt:
            return self._difficulty(prompt)
        raise ValueError("dry-run judge cannot route this prompt")

    def _classification(self, prompt: str) -> str:
        labels = _LEAF_LINE.findall(prompt)
        if not labels:
            raise ValueError("classification prompt lists no categories")
        label = _pick(labels, "classify", _query_text(prompt))
        return json.dumps({"task_scenario": label})

    def _admissibility(self, prompt: str) -> str:
        verdict = {
            axis: {"pass": True, "rationale": "No issue found in dry run."}
            for axis in _ADMISSIBILITY_AXES
        }
        return json.dumps(verdict)

    def _difficulty(self, prompt: str) -> str:
        text = _query_text(prompt)
        grades = {
            dim: _pick(_DIFFICULTY_TIERS, "difficulty", dim, text)
            for dim in _DIFFICULTY_DIMENSIONS
        }
        return json.dumps(grades)

    def _static(self, prompt: str) -> str:
        text = _query_text(prompt)
        # Half-point scores in the upper-middle band look like a typical page.
        functional = 4.0 + (_digest("static-f", text)[0] % 9) * 0.5
        aesthetics = 4.0 + (_digest("static-a", text)[0] % 9) * 0.5
        return json.dumps(
            {
                "functional_reason": "Dry run: core features appear implemented.",
                "functional_score": functional,
                "aesthetics_reason": "Dry run: layout is coherent with minor rough edges.",
                "aesthetics_score": aesthetics,
            }
        )

    def _detection(self, prompt: str) -> str:
        return json.dumps(
            {
                "functional_problems": [],
                "aesthetic_problems": [],
                "dismissed_static_problems": [],
                "overall_assessment": "Dry run: interaction surfaced no new problems.",
            }
        )

    def _adjustment(self, prompt: str) -> str:
        functional_match = _STATIC_FUNCTIONAL.search(prompt)
        aesthetics_match = _STATIC_AESTHETICS.search(prompt)
        functional = float(functional_match.group(1)) if functional_match else 4.0
        aesthetics = float(aesthetics_match.group(1)) if aesthetics_match else 4.0
        return json.dumps(
            {
                "adjusted_functional_score": functional,
                "functional_reason": "Dry run: no new problems, static score stands.",
                "adjusted_aesthetics_score": aesthetics,
                "aesthetics_reason": "Dry run: no new problems, static score stands.",
                "adjustment_summary": "No adjustment needed.",
            }
        )

    def _interaction_step(self, prompt: str) -> str:
        if "  (none yet)" in prompt:
            return json.dumps({"action": {"type": "click", "x": 100, "y": 100}})
        return json.dumps(
            {
                "actions_performed": ["Clicked the primary interactive element."],
                "console_errors": [],
                "overall_observation": (
                    "Dry run: exercised the primary control once; the page "
                    "responded without visible errors."
                ),
            }
        )


class PrefixTranslator:
    """Marks text as translated without changing protected content."""

    def translate(self, text: str, target_language: str) -> str:
        return f"[{target_language}] {text}"
