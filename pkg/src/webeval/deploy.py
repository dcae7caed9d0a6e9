"""Build, serve, and probe generated projects in isolated working copies.

Two project modes exist.  `react_scaffold` projects carry a build manifest
(package.json) and go through dependency install plus build, with the logs
captured and classified on failure.  `single_html` projects are one
document: they get a light well-formedness check and are served as-is.

Failure classification is data-driven: an ordered list of regex rules maps
log text to one of the seven failure categories.  The rules ship with the
package and can be replaced wholesale through config, so refining the
taxonomy never requires code changes.
"""

from __future__ import annotations

import functools
import http.server
import json
import logging
import re
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from html.parser import HTMLParser
from importlib import resources
from pathlib import Path

logger = logging.getLogger(__name__)

MODE_REACT = "react_scaffold"
MODE_HTML = "single_html"

FAILURE_CATEGORIES = (
    "read_timeout",
    "port_collision",
    "verifier_path",
    "code_syntax",
    "code_phantom_import",
    "other_code",
    "build_tool",
)

DEFAULT_PORT_RANGE = (49152, 65535)
DEFAULT_PROBE_TIMEOUT = 30.0

# Infrastructure failures originate in the harness environment; code
# failures are defects of the generated project itself.
INFRA_CATEGORIES = ("read_timeout", "port_collision", "verifier_path", "build_tool")
CODE_CATEGORIES = ("code_syntax", "code_phantom_import", "other_code")


class DeployError(Exception):
    """Unrecoverable harness-side deployment error (not a project failure)."""


@dataclass(frozen=True)
class DeployFailure:
    """Terminal failure of one evaluation attempt."""

    category: str
    detail: str
    log_excerpt: str = ""

    def __post_init__(self) -> None:
        if self.category not in FAILURE_CATEGORIES:
            raise DeployError(f"unknown failure category: {self.category!r}")


@dataclass(frozen=True)
class ProjectInput:
    query_id: str
    mode: str
    root: Path | None = None  # react_scaffold project directory
    html: str | None = None  # single_html document

    def __post_init__(self) -> None:
        if self.mode not in (MODE_REACT, MODE_HTML):
            raise DeployError(f"unknown project mode: {self.mode!r}")
        if self.mode == MODE_REACT and self.root is None:
            raise DeployError("react_scaffold project needs a root directory")
        if self.mode == MODE_HTML and self.html is None:
            raise DeployError("single_html project needs a document")


@dataclass(frozen=True)
class BuildConfig:
    # Shell command lines run in the working copy, in order.
    commands: tuple[str, ...] = ("npm install --no-audit --no-fund", "npm run build")
    output_dirs: tuple[str, ...] = ("dist", "build")
    timeout: float = 600.0
    matcher_path: Path | None = None  # override the shipped rules


@dataclass
class BuildResult:
    artifact_dir: Path
    log: str


@dataclass
class DeploymentHandle:
    query_id: str
    url: str
    port: int
    artifact_dir: Path
    server: object = field(repr=False, default=None)

    def stop(self) -> None:
        if self.server is not None:
            self.server.shutdown()
            self.server.server_close()


@dataclass(frozen=True)
class Runnable:
    """Probe verdict: the deployment answered with a non-empty document."""

    url: str
    status: int
    content_length: int
    body: str = ""


@functools.lru_cache(maxsize=8)
def load_failure_matchers(path: Path | None = None) -> list[tuple[str, re.Pattern]]:
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    else:
        raw = json.loads(
            resources.files("webeval.data")
            .joinpath("failure_matchers.json")
            .read_text(encoding="utf-8")
        )
    rules = []
    for rule in raw["rules"]:
        if rule["category"] not in FAILURE_CATEGORIES:
            raise DeployError(f"matcher rule with unknown category: {rule}")
        rules.append((rule["category"], re.compile(rule["pattern"], re.IGNORECASE)))
    return rules


def classify_failure_log(log: str, matcher_path: Path | None = None) -> str:
    """Map failing build/deploy log text to a failure category.

    Rules are applied in file order; the first match wins and unmatched
    logs fall back to `other_code`.
    """
    for category, pattern in load_failure_matchers(matcher_path):
        if pattern.search(log):
            return category
    return "other_code"


class _TagCounter(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.tags = 0

    def handle_starttag(self, tag: str, attrs) -> None:
        self.tags += 1


def check_html_document(html: str) -> str | None:
    """Light well-formedness check; returns a defect description or None.

    Browsers are tolerant parsers, so only gross malformation is rejected:
    an empty document or one with no markup at all.
    """
    if not html.strip():
        return "document is empty"
    counter = _TagCounter()
    counter.feed(html)
    counter.close()
    if counter.tags == 0:
        return "document contains no markup"
    return None


def build(
    project: ProjectInput, workdir: Path, config: BuildConfig = BuildConfig()
) -> BuildResult | DeployFailure:
    """Produce a servable artifact directory for the project.

    react_scaffold: copy the project into the working directory, run the
    configured install/build commands, capture the logs, and classify any
    failure.  single_html: run the well-formedness check and write the
    document through unchanged.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    if project.mode == MODE_HTML:
        defect = check_html_document(project.html or "")
        if defect is not None:
            return DeployFailure(
                category="code_syntax", detail=f"malformed document: {defect}"
            )
        artifact_dir = workdir / "site"
        artifact_dir.mkdir(parents=True, exist_ok=True)
        (artifact_dir / "index.html").write_text(project.html or "", encoding="utf-8")
        return BuildResult(artifact_dir=artifact_dir, log="")

    assert project.root is not None
    copy_dir = workdir / "project"
    if copy_dir.exists():
        shutil.rmtree(copy_dir)
    shutil.copytree(project.root, copy_dir)

    manifest = copy_dir / "package.json"
    if not manifest.exists():
        return DeployFailure(
            category="build_tool", detail="project has no package.json build manifest"
        )

    log_parts: list[str] = []
    for command in config.commands:
        logger.info("build %s: %s", project.query_id, command)
        try:
            completed = subprocess.run(
                command,
                shell=True,
                cwd=copy_dir,
                capture_output=True,
                text=True,
                timeout=config.timeout,
            )
        except subprocess.TimeoutExpired as exc:
            log_parts.append(f"$ {command}\n{exc.stdout or ''}{exc.stderr or ''}")
            return DeployFailure(
                category="read_timeout",
                detail=f"build command timed out after {config.timeout}s",
                log_excerpt=_tail("\n".join(log_parts)),
            )
        log_parts.append(
            f"$ {command}\n{completed.stdout}{completed.stderr}"
        )
        if completed.returncode != 0:
            log = "\n".join(log_parts)
            return DeployFailure(
                category=classify_failure_log(log, config.matcher_path),
                detail=f"command failed with exit code {completed.returncode}: {command}",
                log_excerpt=_tail(log),
            )

    log = "\n".join(log_parts)
    for candidate in config.output_dirs:
        artifact_dir = copy_dir / candidate
        if artifact_dir.is_dir():
            return BuildResult(artifact_dir=artifact_dir, log=log)
    return DeployFailure(
        category="build_tool",
        detail=f"build succeeded but produced none of {config.output_dirs}",
        log_excerpt=_tail(log),
    )


def _tail(log: str, limit: int = 4000) -> str:
    return log[-limit:]


class _QuietHandler(http.server.SimpleHTTPRequestHandler):
    def log_message(self, format: str, *args) -> None:
        logger.debug("http: " + format, *args)


# Port allocation is serialized in-process so concurrent deployments cannot
# race each other to the same port; the OS rejects cross-process conflicts.
_PORT_LOCK = threading.Lock()
_NEXT_PORT: dict[tuple[int, int], int] = {}


def serve(
    artifact_dir: Path,
    query_id: str = "",
    port_range: tuple[int, int] = DEFAULT_PORT_RANGE,
    max_retries: int = 20,
    host: str = "127.0.0.1",
) -> DeploymentHandle | DeployFailure:
    """Serve the artifact directory on a port from the configured range.

    Ports are tried in order from a per-range cursor; a bind failure moves
    to the next candidate, and exhausting the retry budget (or the range)
    reports `port_collision`.
    """
    low, high = port_range
    if low > high:
        raise DeployError(f"invalid port range: {port_range}")
    span = high - low + 1
    attempts = min(max_retries, span)
    with _PORT_LOCK:
        cursor = _NEXT_PORT.get(port_range, low)
        last_error = "no ports tried"
        for i in range(attempts):
            port = low + (cursor - low + i) % span
            handler = lambda *args, **kwargs: _QuietHandler(  # noqa: E731
                *args, directory=str(artifact_dir), **kwargs
            )
            try:
                server = http.server.ThreadingHTTPServer((host, port), handler)
            except OSError as exc:
                last_error = f"port {port}: {exc}"
                continue
            _NEXT_PORT[port_range] = low + (cursor - low + i + 1) % span
            thread = threading.Thread(target=server.serve_forever, daemon=True)
            thread.start()
            return DeploymentHandle(
                query_id=query_id,
                url=f"http://{host}:{port}/",
                port=port,
                artifact_dir=Path(artifact_dir),
                server=server,
            )
        return DeployFailure(
            category="port_collision",
            detail=f"no free port in {port_range} after {attempts} attempts ({last_error})",
        )


def probe(
    url: str, timeout: float = DEFAULT_PROBE_TIMEOUT
) -> Runnable | DeployFailure:
    """Fetch the root document; Runnable iff a non-empty document comes back.

    Deadline expiry, connection failure, and an empty body all end the
    attempt as `read_timeout`: the verifier could not read a document.  An
    empty body additionally gates later scoring to the render-failure tier.
    """
    import requests

    start = time.monotonic()
    try:
        response = requests.get(url, timeout=timeout)
    except requests.RequestException as exc:
        elapsed = time.monotonic() - start
        return DeployFailure(
            category="read_timeout",
            detail=f"probe failed after {elapsed:.1f}s: {exc.__class__.__name__}",
        )
    body = response.content
    if not body.strip():
        return DeployFailure(
            category="read_timeout",
            detail="probe returned an empty document body",
        )
    return Runnable(
        url=url,
        status=response.status_code,
        content_length=len(body),
        body=body.decode("utf-8", errors="replace"),
    )


def attempt_outcome(result: object) -> str:
    """Every evaluation attempt ends as exactly one of runnable or failed."""
    if isinstance(result, Runnable):
        return "runnable"
    if isinstance(result, DeployFailure):
        return f"failed:{result.category}"
    raise DeployError(f"not a deployment outcome: {result!r}")
