"""Transport abstractions for the external model clients.

Judges, the interaction agent, and the translator are external services
reached through one narrow operation each.  Everything in the harness that
talks to a model accepts these interfaces, so tests and dry runs substitute
scripted implementations without touching pipeline code.

Credentials never appear in config files: HTTP clients read the bearer
token from the environment variable named in their config.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import re
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, runtime_checkable

logger = logging.getLogger(__name__)

_JSON_FENCE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


class ClientUnavailable(Exception):
    """Transport-level failure talking to an external client."""


class MalformedOutput(Exception):
    """The model kept returning unparseable or invalid output."""


@dataclass(frozen=True)
class JudgeClientConfig:
    """Decoding and transport settings for one judge endpoint."""

    endpoint: str = ""
    model: str = ""
    temperature: float = 0.2
    top_p: float = 0.9
    max_retries: int = 3
    timeout: float = 120.0
    api_key_env: str = "WEBEVAL_API_KEY"

    def __post_init__(self) -> None:
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@runtime_checkable
class JudgeClient(Protocol):
    """A judge or agent endpoint: prompt (plus optional images) to text."""

    def send(self, prompt: str, images: Sequence[bytes] | None = None) -> str: ...


@runtime_checkable
class TranslationClient(Protocol):
    def translate(self, text: str, target_language: str) -> str: ...


class ScriptedJudge:
    """Replays a fixed response queue; raises when the script runs dry."""

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self._cursor = 0
        self.prompts: list[str] = []
        self.image_counts: list[int] = []

    def send(self, prompt: str, images: Sequence[bytes] | None = None) -> str:
        self.prompts.append(prompt)
        self.image_counts.append(len(images) if images else 0)
        if self._cursor >= len(self._responses):
            raise ClientUnavailable("scripted judge has no responses left")
        response = self._responses[self._cursor]
        self._cursor += 1
        return response


class CallableJudge:
    """Wraps a function of the prompt; stateless, so safe under workers."""

    def __init__(self, fn: Callable[[str], str]):
        self._fn = fn
        self.prompts: list[str] = []

    def send(self, prompt: str, images: Sequence[bytes] | None = None) -> str:
        self.prompts.append(prompt)
        return self._fn(prompt)


class HttpJudge:
    """Minimal JSON-over-HTTP judge transport.

    Posts {model, prompt, images, temperature, top_p} and expects a JSON
    body with a top-level "text" field.  Anything else is a transport
    failure, reported as ClientUnavailable.
    """

    def __init__(self, config: JudgeClientConfig):
        if not config.endpoint:
            raise ValueError("HttpJudge requires a non-empty endpoint")
        self.config = config

    def send(self, prompt: str, images: Sequence[bytes] | None = None) -> str:
        import requests

        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
        }
        if images:
            payload["images"] = [base64.b64encode(i).decode("ascii") for i in images]
        headers = {}
        token = os.environ.get(self.config.api_key_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            response = requests.post(
                self.config.endpoint,
                json=payload,
                headers=headers,
                timeout=self.config.timeout,
            )
            response.raise_for_status()
            body = response.json()
        except Exception as exc:  # transport boundary: collapse to one error kind
            raise ClientUnavailable(f"judge endpoint failed: {exc}") from exc
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise ClientUnavailable("judge endpoint returned no 'text' field")
        return body["text"]


def extract_json_object(text: str) -> dict:
    """Parse a bare JSON object, tolerating a single markdown fence."""
    candidate = text.strip()
    match = _JSON_FENCE.search(candidate)
    if match:
        candidate = match.group(1)
    parsed = json.loads(candidate)
    if not isinstance(parsed, dict):
        raise ValueError("top-level JSON value is not an object")
    return parsed


def query_judge(
    prompt: str,
    client: JudgeClient,
    config: JudgeClientConfig,
    parse: Callable[[str], object],
    what: str,
    images: Sequence[bytes] | None = None,
):
    """Send a prompt, parse the reply, re-query on malformed output.

    Transport failures propagate immediately; only malformed judge output is
    retried, at most `config.max_retries` extra times.
    """
    attempts = config.max_retries + 1
    last_error: Exception | None = None
    for attempt in range(attempts):
        text = client.send(prompt, images=images)
        try:
            return parse(text)
        except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            last_error = exc
            logger.warning(
                "%s: malformed judge output on attempt %d/%d: %s",
                what,
                attempt + 1,
                attempts,
                exc,
            )
    raise MalformedOutput(f"{what}: judge output malformed after {attempts} attempts: {last_error}")


class IdentityTranslator:
    """Returns the text unchanged; stands in for a real translation client."""

    def translate(self, text: str, target_language: str) -> str:
        return text


class CallableTranslator:
    def __init__(self, fn: Callable[[str, str], str]):
        self._fn = fn

    def translate(self, text: str, target_language: str) -> str:
        return self._fn(text, target_language)
