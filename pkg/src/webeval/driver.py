"""Agent-driven interaction sessions.

Each step runs observe, freeze, think, unfreeze, act: the page is frozen
while the agent deliberates so that model latency costs real-time pages
nothing (no lost game lives, no missed animations), then resumed before
the chosen action is injected with human-like timing.

The agent is a judge-style client.  Every step it receives the driving
instructions, the log of actions taken so far, and the current screenshot,
and replies with either one action or the final interaction summary.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

from .assets import fill_template, load_asset
from .browser import (
    CONSOLE_ERRORS_EXPR,
    FREEZE_EXPR,
    UNFREEZE_EXPR,
    Browser,
    BrowserError,
    InputEvent,
)
from .clients import JudgeClient, JudgeClientConfig, extract_json_object, query_judge
from .store import EvidenceStore

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 30

ACTION_KINDS = ("click", "move", "type", "key", "scroll", "wait")

_SUMMARY_KEYS = {"actions_performed", "console_errors", "overall_observation"}

# Console noise that never counts against a page: font CDNs, favicon 404s,
# and anything that is a warning rather than an error.
NONCRITICAL_CONSOLE_PATTERNS = (
    re.compile(r"fonts\.googleapis\.com", re.IGNORECASE),
    re.compile(r"fonts\.gstatic\.com", re.IGNORECASE),
    re.compile(r"favicon[^\n]*404|404[^\n]*favicon", re.IGNORECASE),
    re.compile(r"^\s*\[?warn(ing)?\]?\b", re.IGNORECASE),
)


class DriverError(Exception):
    """Base error for interaction sessions."""


class BudgetExhaustedWithoutSummary(DriverError):
    """The agent never produced its final summary within the step budget."""


class BrowserLost(DriverError):
    """The browser connection failed mid-session."""


def filter_console_errors(errors: Sequence[str]) -> tuple[str, ...]:
    """Drop empty lines and known non-critical noise, keep order."""
    kept = []
    for error in errors:
        text = str(error)
        if not text.strip():
            continue
        if any(pattern.search(text) for pattern in NONCRITICAL_CONSOLE_PATTERNS):
            continue
        kept.append(text)
    return tuple(kept)


@dataclass(frozen=True)
class SessionBudget:
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class AgentAction:
    """One high-level action chosen by the agent."""

    kind: str
    x: float | None = None
    y: float | None = None
    text: str = ""
    key: str = ""
    hold_ms: float = 0.0
    wait_ms: float = 0.0
    delta: float = 0.0
    thought: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind: {self.kind!r}")
        if self.kind in ("click", "move") and (self.x is None or self.y is None):
            raise ValueError(f"{self.kind} action requires x and y")
        if self.kind == "type" and not self.text:
            raise ValueError("type action requires text")
        if self.kind == "key" and not self.key:
            raise ValueError("key action requires a key name")
        if self.kind == "wait" and self.wait_ms <= 0:
            raise ValueError("wait action requires wait_ms > 0")
        if self.hold_ms < 0:
            raise ValueError("hold_ms must be >= 0")

    def describe(self) -> str:
        if self.kind == "click":
            return f"click at ({self.x:g}, {self.y:g})"
        if self.kind == "move":
            return f"move pointer to ({self.x:g}, {self.y:g})"
        if self.kind == "type":
            return f"type {self.text!r}"
        if self.kind == "key":
            if self.hold_ms:
                return f"hold key {self.key!r} for {self.hold_ms:g}ms"
            return f"press key {self.key!r}"
        if self.kind == "scroll":
            return f"scroll by {self.delta:g}"
        return f"wait {self.wait_ms:g}ms"

    def to_dict(self) -> dict:
        payload: dict = {"type": self.kind}
        if self.x is not None:
            payload["x"] = self.x
        if self.y is not None:
            payload["y"] = self.y
        if self.text:
            payload["text"] = self.text
        if self.key:
            payload["key"] = self.key
        if self.hold_ms:
            payload["hold_ms"] = self.hold_ms
        if self.wait_ms:
            payload["wait_ms"] = self.wait_ms
        if self.delta:
            payload["delta"] = self.delta
        if self.thought:
            payload["thought"] = self.thought
        return payload

    @classmethod
    def from_payload(cls, payload: Mapping) -> "AgentAction":
        if not isinstance(payload, Mapping):
            raise ValueError("action is not an object")
        kind = payload.get("type")
        if kind not in ACTION_KINDS:
            raise ValueError(f"unknown action type: {kind!r}")

        def number(name: str, default: float | None = None) -> float | None:
            value = payload.get(name, default)
            if value is None:
                return None
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"action field {name!r} is not a number")
            return float(value)

        try:
            return cls(
                kind=kind,
                x=number("x"),
                y=number("y"),
                text=str(payload.get("text", "") or ""),
                key=str(payload.get("key", "") or ""),
                hold_ms=number("hold_ms", 0.0) or 0.0,
                wait_ms=number("wait_ms", 0.0) or 0.0,
                delta=number("delta", 0.0) or 0.0,
                thought=str(payload.get("thought", "") or ""),
            )
        except ValueError:
            raise
        except Exception as exc:
            raise ValueError(str(exc)) from exc


@dataclass(frozen=True)
class AgentSummary:
    """The agent's final report: actions, critical errors, observations.

    `console_errors` is filtered at parse time, so non-critical noise the
    agent reported anyway (font CDNs, favicon 404s, warnings) never enters
    the evidence.
    """

    actions_performed: tuple[str, ...]
    console_errors: tuple[str, ...]
    overall_observation: str

    def to_dict(self) -> dict:
        return {
            "actions_performed": list(self.actions_performed),
            "console_errors": list(self.console_errors),
            "overall_observation": self.overall_observation,
        }

    @classmethod
    def from_payload(cls, payload: Mapping) -> "AgentSummary":
        if set(payload) != _SUMMARY_KEYS:
            raise ValueError(f"summary must have exactly keys {sorted(_SUMMARY_KEYS)}")
        actions = payload["actions_performed"]
        errors = payload["console_errors"]
        observation = payload["overall_observation"]
        if not isinstance(actions, list) or not all(isinstance(a, str) for a in actions):
            raise ValueError("actions_performed must be a list of strings")
        if not isinstance(errors, list) or not all(isinstance(e, str) for e in errors):
            raise ValueError("console_errors must be a list of strings")
        if not isinstance(observation, str) or not observation.strip():
            raise ValueError("overall_observation must be a non-empty string")
        return cls(
            actions_performed=tuple(actions),
            console_errors=filter_console_errors(errors),
            overall_observation=observation,
        )


def parse_agent_reply(text: str) -> AgentAction | AgentSummary:
    """One JSON object per step: either an action or the final summary."""
    obj = extract_json_object(text)
    if _SUMMARY_KEYS <= set(obj):
        return AgentSummary.from_payload(obj)
    if "action" in obj:
        return AgentAction.from_payload(obj["action"])
    raise ValueError(f"reply is neither an action nor a summary: keys {sorted(obj)}")


@dataclass(frozen=True)
class ActionStep:
    """One executed step: the chosen action and the evidence around it."""

    index: int
    action: AgentAction
    screenshot_key: str = ""
    events: tuple[InputEvent, ...] = ()

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "action": self.action.to_dict(),
            "screenshot_key": self.screenshot_key,
            "events": [e.to_dict() for e in self.events],
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ActionStep":
        return cls(
            index=payload["index"],
            action=AgentAction.from_payload(payload["action"]),
            screenshot_key=payload.get("screenshot_key", ""),
            events=tuple(InputEvent.from_dict(e) for e in payload.get("events", [])),
        )


@dataclass(frozen=True)
class EvidencePackage:
    """Everything the scoring stages need from one interaction session."""

    query_id: str
    url: str
    task_prompt: str
    prompt_sha256: str
    max_steps: int
    steps: tuple[ActionStep, ...]
    summary: AgentSummary
    agent_reported_errors: tuple[str, ...]
    instrumentation_errors: tuple[str, ...]
    # Continuous recording is realized as the stored keyframe sequence; the
    # handle is the store prefix those frames live under.
    recording_handle: str = ""
    wall_clock_ms: float = 0.0

    def merged_console_errors(self) -> tuple[str, ...]:
        """Agent-reported criticals first, then instrumentation extras."""
        merged = list(self.agent_reported_errors)
        for error in self.instrumentation_errors:
            if error not in merged:
                merged.append(error)
        return tuple(merged)

    def interaction_summary_text(self) -> str:
        """The JSON handed to the problem-detection stage."""
        payload = {
            "actions_performed": list(self.summary.actions_performed),
            "console_errors": list(self.merged_console_errors()),
            "overall_observation": self.summary.overall_observation,
        }
        return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "url": self.url,
            "task_prompt": self.task_prompt,
            "prompt_sha256": self.prompt_sha256,
            "max_steps": self.max_steps,
            "steps": [s.to_dict() for s in self.steps],
            "summary": self.summary.to_dict(),
            "agent_reported_errors": list(self.agent_reported_errors),
            "instrumentation_errors": list(self.instrumentation_errors),
            "recording_handle": self.recording_handle,
            "wall_clock_ms": self.wall_clock_ms,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "EvidencePackage":
        return cls(
            query_id=payload["query_id"],
            url=payload["url"],
            task_prompt=payload["task_prompt"],
            prompt_sha256=payload["prompt_sha256"],
            max_steps=payload["max_steps"],
            steps=tuple(ActionStep.from_dict(s) for s in payload["steps"]),
            summary=AgentSummary.from_payload(payload["summary"]),
            agent_reported_errors=tuple(payload["agent_reported_errors"]),
            instrumentation_errors=tuple(payload["instrumentation_errors"]),
            recording_handle=payload.get("recording_handle", ""),
            wall_clock_ms=payload.get("wall_clock_ms", 0.0),
        )


def render_driving_prompt(url: str, task_prompt: str, max_steps: int) -> str:
    """The session instructions with url, task, and step budget filled in."""
    template = load_asset("interaction_driving.txt")
    return fill_template(
        template,
        {"url": url, "task_prompt": task_prompt, "max_steps": str(max_steps)},
    )


def _pointer_path(
    origin: tuple[float, float], target: tuple[float, float], rng: random.Random
) -> list[InputEvent]:
    """Interpolated pointer travel taking at least 100ms of page time."""
    distance = math.hypot(target[0] - origin[0], target[1] - origin[1])
    hops = max(3, min(12, int(distance / 60) + 1))
    total_ms = max(100.0, min(600.0, distance * rng.uniform(0.6, 1.0)))
    step_ms = total_ms / hops
    events = []
    for hop in range(1, hops + 1):
        fraction = hop / hops
        x = origin[0] + (target[0] - origin[0]) * fraction
        y = origin[1] + (target[1] - origin[1]) * fraction
        if hop < hops:
            x += rng.uniform(-2.0, 2.0)
            y += rng.uniform(-2.0, 2.0)
        events.append(InputEvent(type="pointer_move", x=x, y=y, delay_ms=step_ms))
    return events


def humanize_input(
    action: AgentAction, rng: random.Random, origin: tuple[float, float] = (0.0, 0.0)
) -> tuple[tuple[InputEvent, ...], tuple[float, float]]:
    """Expand one action into human-like low-level events.

    Pure given the generator state: pointer travel is interpolated over at
    least 100ms, keystrokes carry jittered inter-key delays, and presses
    have explicit hold durations.  Returns the events and the pointer
    position afterwards.
    """
    if action.kind in ("click", "move"):
        target = (float(action.x), float(action.y))
        events = _pointer_path(origin, target, rng)
        if action.kind == "click":
            events.append(
                InputEvent(
                    type="pointer_down",
                    x=target[0],
                    y=target[1],
                    delay_ms=rng.uniform(40.0, 90.0),
                    duration_ms=rng.uniform(50.0, 120.0),
                )
            )
            events.append(InputEvent(type="pointer_up", x=target[0], y=target[1]))
        return tuple(events), target
    if action.kind == "type":
        events = [
            InputEvent(type="type_char", text=char, delay_ms=rng.uniform(60.0, 180.0))
            for char in action.text
        ]
        return tuple(events), origin
    if action.kind == "key":
        hold = action.hold_ms if action.hold_ms > 0 else rng.uniform(80.0, 160.0)
        return (
            (
                InputEvent(
                    type="key_down",
                    key=action.key,
                    delay_ms=rng.uniform(30.0, 80.0),
                    duration_ms=hold,
                ),
                InputEvent(type="key_up", key=action.key),
            ),
            origin,
        )
    if action.kind == "scroll":
        return (
            (
                InputEvent(
                    type="wheel",
                    x=action.x if action.x is not None else origin[0],
                    y=action.y if action.y is not None else origin[1],
                    delay_ms=rng.uniform(30.0, 80.0),
                    delta_y=action.delta or 120.0,
                ),
            ),
            origin,
        )
    # wait
    return (InputEvent(type="pause", delay_ms=action.wait_ms),), origin


def _derive_rng(seed: int, query_id: str) -> random.Random:
    digest = hashlib.blake2b(f"{seed}|interact|{query_id}".encode(), digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def _step_prompt(
    driving_prompt: str, steps: Sequence[ActionStep], index: int, max_steps: int
) -> str:
    log_lines = [f"  {s.index}. {s.action.describe()}" for s in steps] or ["  (none yet)"]
    return "\n".join(
        [
            driving_prompt,
            "",
            "===",
            "INTERACTION LOG (actions already performed):",
            *log_lines,
            "===",
            f"This is step {index} of {max_steps}. The attached screenshot shows the",
            "current page state. Reply with exactly one JSON object, either an action:",
            '  {"action": {"type": "click|move|type|key|scroll|wait", ...}}',
            '    optional "thought": one sentence on why this action',
            '    click/move: numbers "x", "y" (page pixels)',
            '    type: "text" to enter at the current focus',
            '    key: DOM "key" name, optional "hold_ms" to hold it',
            '    scroll: "delta" (positive scrolls down), optional "x", "y"',
            '    wait: "wait_ms"',
            f"or, when finished (you MUST finish by step {max_steps}), the final summary",
            "JSON object described in section VII (keys actions_performed,",
            "console_errors, overall_observation).",
        ]
    )


def run_session(
    query_id: str,
    url: str,
    task_prompt: str,
    agent: JudgeClient,
    browser: Browser,
    config: JudgeClientConfig = JudgeClientConfig(),
    budget: SessionBudget = SessionBudget(),
    seed: int = 0,
    store: EvidenceStore | None = None,
    inject_script: str = "",
) -> EvidencePackage:
    """Drive one interaction session to its final summary.

    Raises BudgetExhaustedWithoutSummary when the agent never concludes,
    BrowserLost when the browser fails mid-session; malformed agent replies
    surface as MalformedOutput after the configured re-queries.
    """
    driving_prompt = render_driving_prompt(url, task_prompt, budget.max_steps)
    prompt_sha = hashlib.sha256(driving_prompt.encode("utf-8")).hexdigest()
    rng = _derive_rng(seed, query_id)
    pointer = (0.0, 0.0)
    steps: list[ActionStep] = []
    summary: AgentSummary | None = None
    started = time.monotonic()

    try:
        if inject_script:
            browser.add_init_script(inject_script)
        browser.navigate(url)

        for index in range(1, budget.max_steps + 1):
            screenshot = browser.screenshot()
            screenshot_key = ""
            if store is not None:
                screenshot_key = f"interactions/{query_id}/step_{index:03d}.png"
                store.put_bytes(screenshot_key, screenshot)

            browser.evaluate(FREEZE_EXPR)
            try:
                reply = query_judge(
                    _step_prompt(driving_prompt, steps, index, budget.max_steps),
                    agent,
                    config,
                    parse_agent_reply,
                    f"interaction-step-{index}",
                    images=[screenshot],
                )
            finally:
                browser.evaluate(UNFREEZE_EXPR)

            if isinstance(reply, AgentSummary):
                summary = reply
                break

            events, pointer = humanize_input(reply, rng, pointer)
            browser.dispatch_input(events)
            steps.append(
                ActionStep(
                    index=index,
                    action=reply,
                    screenshot_key=screenshot_key,
                    events=events,
                )
            )
            logger.debug("%s step %d: %s", query_id, index, reply.describe())

        if summary is None:
            raise BudgetExhaustedWithoutSummary(
                f"{query_id}: no summary after {budget.max_steps} steps"
            )

        raw_instrumentation = browser.evaluate(CONSOLE_ERRORS_EXPR) or []
    except BrowserError as exc:
        raise BrowserLost(f"{query_id}: browser failed mid-session: {exc}") from exc

    if not isinstance(raw_instrumentation, list):
        raw_instrumentation = []
    package = EvidencePackage(
        query_id=query_id,
        url=url,
        task_prompt=task_prompt,
        prompt_sha256=prompt_sha,
        max_steps=budget.max_steps,
        steps=tuple(steps),
        summary=summary,
        agent_reported_errors=summary.console_errors,
        instrumentation_errors=filter_console_errors(
            [str(e) for e in raw_instrumentation]
        ),
        recording_handle=f"interactions/{query_id}" if store is not None else "",
        wall_clock_ms=(time.monotonic() - started) * 1000.0,
    )
    if store is not None:
        store.put_json(f"interactions/{query_id}/evidence.json", package.to_dict())
    return package
