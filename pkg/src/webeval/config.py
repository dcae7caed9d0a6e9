"""Run configuration: one YAML file to nested, validated dataclasses.

Everything tunable lives here; credentials never do.  HTTP clients read
their bearer token from the environment variable named in the config, so
a config file is always safe to commit and to hash.  The snapshot hash of
the loaded config is recorded in the run manifest, which is what makes a
resumed run provably the same run.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .clients import JudgeClientConfig
from .deploy import DEFAULT_PORT_RANGE, DEFAULT_PROBE_TIMEOUT
from .driver import DEFAULT_MAX_STEPS
from .scoring import DISCREPANCY_TOLERANCE

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Raised on unknown keys or invalid values in a config file."""


@dataclass(frozen=True)
class PipelineSettings:
    """Knobs for the data-curation half."""

    seed: int = 0
    ngram_size: int = 2
    hamming_threshold: int = 3
    cosine_threshold: float = 0.85
    language_targets: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.ngram_size < 1:
            raise ConfigError("ngram_size must be >= 1")
        if self.hamming_threshold < 0:
            raise ConfigError("hamming_threshold must be >= 0")
        if not 0.0 < self.cosine_threshold <= 1.0:
            raise ConfigError("cosine_threshold must be in (0, 1]")
        for language, target in self.language_targets.items():
            if target < 0:
                raise ConfigError(f"language target for {language!r} must be >= 0")


@dataclass(frozen=True)
class EvaluationSettings:
    """Knobs for the evaluation half."""

    max_steps: int = DEFAULT_MAX_STEPS
    workers: int = 1
    port_range: tuple[int, int] = DEFAULT_PORT_RANGE
    probe_timeout: float = DEFAULT_PROBE_TIMEOUT
    discrepancy_tolerance: float = DISCREPANCY_TOLERANCE
    build_commands: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        low, high = self.port_range
        if not (0 < low <= high <= 65535):
            raise ConfigError(f"invalid port range: {self.port_range}")
        if self.probe_timeout <= 0:
            raise ConfigError("probe_timeout must be > 0")
        if self.discrepancy_tolerance < 0:
            raise ConfigError("discrepancy_tolerance must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    judge: JudgeClientConfig = JudgeClientConfig()
    agent: JudgeClientConfig = JudgeClientConfig()
    pipeline: PipelineSettings = PipelineSettings()
    evaluation: EvaluationSettings = EvaluationSettings()
    runs_dir: str = "runs"

    def snapshot(self) -> dict:
        """Canonical plain-dict form used for hashing and the manifest."""
        payload = asdict(self)
        payload["evaluation"]["port_range"] = list(self.evaluation.port_range)
        payload["evaluation"]["build_commands"] = list(self.evaluation.build_commands)
        return payload

    def snapshot_hash(self) -> str:
        canonical = json.dumps(self.snapshot(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build_section(name: str, cls, payload: dict, defaults):
    allowed = {f for f in getattr(cls, "__dataclass_fields__")}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r} section: {sorted(unknown)}")
    merged = {**{k: getattr(defaults, k) for k in allowed}, **payload}
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def config_from_mapping(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a mapping")
    allowed = {"judge", "agent", "pipeline", "evaluation", "runs_dir"}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    evaluation_payload = dict(payload.get("evaluation", {}))
    if "port_range" in evaluation_payload:
        raw = evaluation_payload["port_range"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise ConfigError("port_range must be a two-element list")
        evaluation_payload["port_range"] = (int(raw[0]), int(raw[1]))
    if "build_commands" in evaluation_payload:
        raw = evaluation_payload["build_commands"]
        if not isinstance(raw, (list, tuple)) or not all(isinstance(c, str) for c in raw):
            raise ConfigError("build_commands must be a list of strings")
        evaluation_payload["build_commands"] = tuple(raw)

    pipeline_payload = dict(payload.get("pipeline", {}))
    if "language_targets" in pipeline_payload:
        raw = pipeline_payload["language_targets"]
        if not isinstance(raw, dict):
            raise ConfigError("language_targets must be a mapping")
        pipeline_payload["language_targets"] = {str(k): int(v) for k, v in raw.items()}

    runs_dir = payload.get("runs_dir", "runs")
    if not isinstance(runs_dir, str) or not runs_dir:
        raise ConfigError("runs_dir must be a non-empty string")

    return RunConfig(
        judge=_build_section(
            "judge", JudgeClientConfig, dict(payload.get("judge", {})), JudgeClientConfig()
        ),
        agent=_build_section(
            "agent", JudgeClientConfig, dict(payload.get("agent", {})), JudgeClientConfig()
        ),
        pipeline=_build_section(
            "pipeline", PipelineSettings, pipeline_payload, PipelineSettings()
        ),
        evaluation=_build_section(
            "evaluation", EvaluationSettings, evaluation_payload, EvaluationSettings()
        ),
        runs_dir=runs_dir,
    )


def load_config(path: str | Path | None = None) -> RunConfig:
    """Load a YAML config file; a missing path means all defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    payload = yaml.safe_load(path.read_text(encoding="utf-8"))
    if payload is None:
        payload = {}
    return config_from_mapping(payload)
