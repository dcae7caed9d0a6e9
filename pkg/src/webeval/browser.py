"""Browser abstraction for the interaction stage.

The driver needs six operations: navigate, screenshot, evaluate, dispatch
input, install an init script, and close.  `FakeBrowser` implements them
over a simulated page whose only state is a periodic counter, which is
exactly enough to observe freeze semantics deterministically in tests.
`CdpBrowser` adapts a real browser over the DevTools protocol.

Pages are expected to carry an instrumentation object on a single
namespaced global; the evaluate expressions used to drive it are module
constants so every caller and every fake agrees on the exact strings.
"""

from __future__ import annotations

import base64
import json
import logging
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence, runtime_checkable

logger = logging.getLogger(__name__)

# Name of the global the page instrumentation installs.
INSTRUMENTATION_GLOBAL = "__webeval"

FREEZE_EXPR = f"window.{INSTRUMENTATION_GLOBAL} && window.{INSTRUMENTATION_GLOBAL}.freeze()"
UNFREEZE_EXPR = f"window.{INSTRUMENTATION_GLOBAL} && window.{INSTRUMENTATION_GLOBAL}.unfreeze()"
CONSOLE_ERRORS_EXPR = (
    f"window.{INSTRUMENTATION_GLOBAL} ? window.{INSTRUMENTATION_GLOBAL}.collectConsoleErrors() : []"
)
CENSUS_EXPR = f"window.{INSTRUMENTATION_GLOBAL} ? window.{INSTRUMENTATION_GLOBAL}.census() : null"

EVENT_TYPES = (
    "pointer_move",
    "pointer_down",
    "pointer_up",
    "key_down",
    "key_up",
    "type_char",
    "wheel",
    "pause",
)


class BrowserError(Exception):
    """Raised when the browser connection is unusable or an op fails."""


@dataclass(frozen=True)
class InputEvent:
    """One low-level input event with human-like timing attached.

    `delay_ms` is the pause before the event fires; `duration_ms` is how
    long a press is held (pointer_down/key_down pairs encode the hold on
    the down event, the up event fires after it elapses).
    """

    type: str
    x: float | None = None
    y: float | None = None
    key: str = ""
    text: str = ""
    delay_ms: float = 0.0
    duration_ms: float = 0.0
    delta_y: float = 0.0

    def __post_init__(self) -> None:
        if self.type not in EVENT_TYPES:
            raise ValueError(f"unknown input event type: {self.type!r}")
        if self.delay_ms < 0 or self.duration_ms < 0:
            raise ValueError("event timings must be >= 0")

    def to_dict(self) -> dict:
        payload: dict = {"type": self.type, "delay_ms": self.delay_ms}
        if self.x is not None:
            payload["x"] = self.x
        if self.y is not None:
            payload["y"] = self.y
        if self.key:
            payload["key"] = self.key
        if self.text:
            payload["text"] = self.text
        if self.duration_ms:
            payload["duration_ms"] = self.duration_ms
        if self.delta_y:
            payload["delta_y"] = self.delta_y
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping) -> "InputEvent":
        return cls(
            type=payload["type"],
            x=payload.get("x"),
            y=payload.get("y"),
            key=payload.get("key", ""),
            text=payload.get("text", ""),
            delay_ms=payload.get("delay_ms", 0.0),
            duration_ms=payload.get("duration_ms", 0.0),
            delta_y=payload.get("delta_y", 0.0),
        )


@runtime_checkable
class Browser(Protocol):
    def navigate(self, url: str) -> None: ...

    def screenshot(self) -> bytes: ...

    def evaluate(self, expression: str) -> object: ...

    def dispatch_input(self, events: Sequence[InputEvent]) -> None: ...

    def add_init_script(self, source: str) -> None: ...

    def close(self) -> None: ...


class FakeBrowser:
    """In-memory page with a single periodic counter.

    Simulated time only moves through `tick` (and implicitly through the
    timing attached to dispatched events).  The counter advances once per
    `counter_period_ms` of unfrozen time, so a frozen page provably holds
    still however long the think phase takes.
    """

    def __init__(
        self,
        fetch: Callable[[str], str] | None = None,
        counter_period_ms: float = 100.0,
        extra_evaluate: Mapping[str, object] | None = None,
    ):
        self._fetch = fetch
        self.counter_period_ms = counter_period_ms
        self._extra = dict(extra_evaluate or {})
        self._sim_ms = 0.0
        self._unfrozen_ms = 0.0
        self._frozen = False
        self._closed = False
        self.url = ""
        self.source = ""
        self.init_scripts: list[str] = []
        self.events: list[InputEvent] = []
        self.console_errors: list[str] = []
        self.evaluated: list[str] = []

    def _check_open(self) -> None:
        if self._closed:
            raise BrowserError("browser is closed")

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def counter(self) -> int:
        return int(self._unfrozen_ms // self.counter_period_ms)

    def tick(self, ms: float) -> None:
        """Advance simulated time; frozen time does not reach the page."""
        self._check_open()
        self._sim_ms += ms
        if not self._frozen:
            self._unfrozen_ms += ms

    def navigate(self, url: str) -> None:
        self._check_open()
        self.url = url
        self.source = self._fetch(url) if self._fetch else ""
        self._sim_ms = 0.0
        self._unfrozen_ms = 0.0
        self._frozen = False

    def screenshot(self) -> bytes:
        self._check_open()
        return f"PNG|{self.url}|counter={self.counter}|frozen={self._frozen}".encode()

    def evaluate(self, expression: str) -> object:
        self._check_open()
        self.evaluated.append(expression)
        if expression == FREEZE_EXPR:
            self._frozen = True
            return True
        if expression == UNFREEZE_EXPR:
            self._frozen = False
            return True
        if expression == CONSOLE_ERRORS_EXPR:
            return list(self.console_errors)
        if expression == CENSUS_EXPR:
            return {"intervals": 1, "timeouts": 0, "animation_frames": 0}
        if expression in self._extra:
            handler = self._extra[expression]
            return handler(self) if callable(handler) else handler
        raise BrowserError(f"fake browser cannot evaluate: {expression!r}")

    def dispatch_input(self, events: Sequence[InputEvent]) -> None:
        self._check_open()
        for event in events:
            self.tick(event.delay_ms + event.duration_ms)
            self.events.append(event)

    def add_init_script(self, source: str) -> None:
        self._check_open()
        self.init_scripts.append(source)

    def close(self) -> None:
        self._closed = True


class CdpBrowser:
    """DevTools-protocol adapter over a websocket debugger URL.

    Optional: requires the `websocket-client` package and a browser
    started with remote debugging.  Every transport problem surfaces as
    BrowserError so the driver can treat the session as lost.
    """

    def __init__(self, ws_url: str, timeout: float = 30.0):
        try:
            import websocket
        except ImportError as exc:
            raise BrowserError("CdpBrowser requires the websocket-client package") from exc
        try:
            self._ws = websocket.create_connection(ws_url, timeout=timeout)
        except Exception as exc:
            raise BrowserError(f"cannot connect to {ws_url}: {exc}") from exc
        self._next_id = 1
        self._command("Page.enable")
        self._command("Runtime.enable")

    def _command(self, method: str, **params) -> dict:
        msg_id = self._next_id
        self._next_id += 1
        try:
            self._ws.send(json.dumps({"id": msg_id, "method": method, "params": params}))
            while True:
                reply = json.loads(self._ws.recv())
                if reply.get("id") == msg_id:
                    if "error" in reply:
                        raise BrowserError(f"{method} failed: {reply['error']}")
                    return reply.get("result", {})
        except BrowserError:
            raise
        except Exception as exc:
            raise BrowserError(f"devtools transport failed during {method}: {exc}") from exc

    def navigate(self, url: str) -> None:
        self._command("Page.navigate", url=url)
        deadline = time.monotonic() + 30.0
        while time.monotonic() < deadline:
            if self.evaluate("document.readyState") == "complete":
                return
            time.sleep(0.1)
        raise BrowserError(f"page load timed out: {url}")

    def screenshot(self) -> bytes:
        data = self._command("Page.captureScreenshot", format="png")["data"]
        return base64.b64decode(data)

    def evaluate(self, expression: str) -> object:
        result = self._command("Runtime.evaluate", expression=expression, returnByValue=True)
        return result.get("result", {}).get("value")

    def dispatch_input(self, events: Sequence[InputEvent]) -> None:
        for event in events:
            if event.delay_ms:
                time.sleep(event.delay_ms / 1000.0)
            if event.type == "pause":
                continue
            if event.type.startswith("pointer"):
                kind = {
                    "pointer_move": "mouseMoved",
                    "pointer_down": "mousePressed",
                    "pointer_up": "mouseReleased",
                }[event.type]
                self._command(
                    "Input.dispatchMouseEvent",
                    type=kind,
                    x=event.x or 0,
                    y=event.y or 0,
                    button="left" if event.type != "pointer_move" else "none",
                    clickCount=1 if event.type != "pointer_move" else 0,
                )
                if event.type == "pointer_down" and event.duration_ms:
                    time.sleep(event.duration_ms / 1000.0)
            elif event.type in ("key_down", "key_up"):
                self._command(
                    "Input.dispatchKeyEvent",
                    type="keyDown" if event.type == "key_down" else "keyUp",
                    key=event.key,
                )
                if event.type == "key_down" and event.duration_ms:
                    time.sleep(event.duration_ms / 1000.0)
            elif event.type == "type_char":
                self._command("Input.insertText", text=event.text)
            elif event.type == "wheel":
                self._command(
                    "Input.dispatchMouseEvent",
                    type="mouseWheel",
                    x=event.x or 0,
                    y=event.y or 0,
                    deltaX=0,
                    deltaY=event.delta_y or 120,
                )

    def add_init_script(self, source: str) -> None:
        self._command("Page.addScriptToEvaluateOnNewDocument", source=source)

    def close(self) -> None:
        try:
            self._ws.close()
        except Exception:  # already gone; closing is best-effort
            pass
