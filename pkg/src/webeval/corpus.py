"""Task taxonomy, difficulty profiles, and benchmark query records.

The taxonomy is a three-level tree: page type (L1), functional domain (L2),
and task-type leaf.  Only leaves are assigned to queries; ancestry is
recovered from the tree.  The default tree shipped with the package has
2 page types, 11 domains, and 54 leaves, but any tree with the same shape
can be loaded from a file.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

logger = logging.getLogger(__name__)

L1_TYPES = ("Static", "Dynamic")

SOURCE_CHANNELS = ("naturalistic", "synthetic")

# Tiers form a total order; index in this tuple is the rank.
DIFFICULTY_TIERS = ("Easy", "Medium", "Medium-Hard", "Hard")

DIFFICULTY_DIMENSIONS = (
    "functional_logic",
    "page_interaction",
    "data_system",
    "visual_design",
    "user_experience",
    "dynamic_simulation",
)


class CorpusError(Exception):
    """Base error for corpus-model failures."""


class UnknownLeaf(CorpusError):
    """A leaf name does not exist in the loaded taxonomy."""


class TaxonomyFormatError(CorpusError):
    """A taxonomy file violates the expected shape."""


def tier_rank(tier: str) -> int:
    try:
        return DIFFICULTY_TIERS.index(tier)
    except ValueError:
        raise CorpusError(f"unknown difficulty tier: {tier!r}") from None


@dataclass(frozen=True)
class TaxonomyLeaf:
    name: str
    definition: str
    l2: str
    l1: str


class TaxonomyTree:
    """Immutable lookup structure over taxonomy leaves."""

    def __init__(self, leaves: Iterable[TaxonomyLeaf], name: str = "custom"):
        self.name = name
        self._leaves: dict[str, TaxonomyLeaf] = {}
        for leaf in leaves:
            if not leaf.name or not leaf.l1 or not leaf.l2:
                raise TaxonomyFormatError(f"leaf with empty fields: {leaf!r}")
            if leaf.l1 not in L1_TYPES:
                raise TaxonomyFormatError(
                    f"leaf {leaf.name!r} has unknown page type {leaf.l1!r}"
                )
            if leaf.name in self._leaves:
                raise TaxonomyFormatError(f"duplicate leaf name: {leaf.name!r}")
            self._leaves[leaf.name] = leaf
        if not self._leaves:
            raise TaxonomyFormatError("taxonomy has no leaves")

    def __len__(self) -> int:
        return len(self._leaves)

    def __contains__(self, leaf_name: str) -> bool:
        return leaf_name in self._leaves

    def __iter__(self) -> Iterator[TaxonomyLeaf]:
        return iter(self._leaves.values())

    @property
    def leaf_names(self) -> tuple[str, ...]:
        return tuple(self._leaves)

    @property
    def l2_domains(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for leaf in self._leaves.values():
            seen.setdefault(leaf.l2, None)
        return tuple(seen)

    def leaf(self, name: str) -> TaxonomyLeaf:
        try:
            return self._leaves[name]
        except KeyError:
            raise UnknownLeaf(f"leaf not in taxonomy: {name!r}") from None

    def resolve_ancestry(self, leaf_name: str) -> tuple[str, str]:
        """Return (L1 page type, L2 domain) for a leaf name."""
        leaf = self.leaf(leaf_name)
        return leaf.l1, leaf.l2

    @classmethod
    def from_file(cls, path: str | Path) -> "TaxonomyTree":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls._from_payload(raw, source=str(path))

    @classmethod
    def default(cls) -> "TaxonomyTree":
        raw = json.loads(
            resources.files("webeval.data")
            .joinpath("taxonomy_default.json")
            .read_text(encoding="utf-8")
        )
        return cls._from_payload(raw, source="builtin")

    @classmethod
    def _from_payload(cls, raw: object, source: str) -> "TaxonomyTree":
        if not isinstance(raw, dict) or "leaves" not in raw:
            raise TaxonomyFormatError(f"{source}: expected object with 'leaves'")
        leaves = []
        for entry in raw["leaves"]:
            try:
                leaves.append(
                    TaxonomyLeaf(
                        name=entry["name"],
                        definition=entry.get("definition", ""),
                        l2=entry["l2"],
                        l1=entry["l1"],
                    )
                )
            except (KeyError, TypeError) as exc:
                raise TaxonomyFormatError(f"{source}: bad leaf entry {entry!r}") from exc
        return cls(leaves, name=raw.get("name", source))


@dataclass(frozen=True)
class DifficultyProfile:
    """Six per-dimension complexity tiers for one query."""

    functional_logic: str
    page_interaction: str
    data_system: str
    visual_design: str
    user_experience: str
    dynamic_simulation: str

    def __post_init__(self) -> None:
        for dim in DIFFICULTY_DIMENSIONS:
            tier_rank(getattr(self, dim))  # raises on unknown tier

    def as_dict(self) -> dict[str, str]:
        return {dim: getattr(self, dim) for dim in DIFFICULTY_DIMENSIONS}

    @classmethod
    def from_dict(cls, raw: Mapping[str, str]) -> "DifficultyProfile":
        missing = [d for d in DIFFICULTY_DIMENSIONS if d not in raw]
        if missing:
            raise CorpusError(f"difficulty profile missing dimensions: {missing}")
        return cls(**{d: raw[d] for d in DIFFICULTY_DIMENSIONS})


def overall_difficulty(profile: DifficultyProfile) -> str:
    """Overall tier is the maximum dimension tier under the total order."""
    return max(
        (getattr(profile, dim) for dim in DIFFICULTY_DIMENSIONS), key=tier_rank
    )


@dataclass
class AuditEntry:
    stage: str
    action: str
    timestamp: str

    def as_tuple(self) -> tuple[str, str, str]:
        return (self.stage, self.action, self.timestamp)


@dataclass
class QueryRecord:
    """One benchmark query with classification, difficulty, and audit trail.

    The audit trail is append-only: use `append_audit`, never replace it.
    """

    id: str
    text: str
    source_channel: str = "naturalistic"
    leaf: str | None = None
    difficulty: DifficultyProfile | None = None
    tier: str | None = None
    language: str = "en"
    audit_trail: list[AuditEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("record id must be non-empty")
        if self.source_channel not in SOURCE_CHANNELS:
            raise CorpusError(
                f"record {self.id}: unknown source channel {self.source_channel!r}"
            )

    def append_audit(self, stage: str, action: str, timestamp: str) -> None:
        self.audit_trail.append(AuditEntry(stage, action, timestamp))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "source_channel": self.source_channel,
            "leaf": self.leaf,
            "difficulty": self.difficulty.as_dict() if self.difficulty else None,
            "tier": self.tier,
            "language": self.language,
            "audit_trail": [e.as_tuple() for e in self.audit_trail],
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "QueryRecord":
        difficulty = None
        if raw.get("difficulty"):
            difficulty = DifficultyProfile.from_dict(raw["difficulty"])
        record = cls(
            id=raw["id"],
            text=raw["text"],
            source_channel=raw.get("source_channel", "naturalistic"),
            leaf=raw.get("leaf"),
            difficulty=difficulty,
            tier=raw.get("tier"),
            language=raw.get("language", "en"),
        )
        for stage, action, timestamp in raw.get("audit_trail", []):
            record.append_audit(stage, action, timestamp)
        return record


def write_corpus(records: Iterable[QueryRecord], path: str | Path) -> None:
    """Write records as one self-describing JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_corpus(path: str | Path) -> list[QueryRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(QueryRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, CorpusError) as exc:
                raise CorpusError(f"{path}:{line_no}: bad corpus line: {exc}") from exc
    return records


@dataclass(frozen=True)
class ValidationIssue:
    record_id: str
    kind: str
    detail: str


def validate_corpus(
    records: Iterable[QueryRecord], tree: TaxonomyTree
) -> list[ValidationIssue]:
    """Collect every invariant violation; an empty report means a valid corpus.

    Violations are reported, not raised, so one bad record cannot hide the
    rest of the report.
    """
    issues: list[ValidationIssue] = []
    seen_ids: set[str] = set()
    for record in records:
        if record.id in seen_ids:
            issues.append(ValidationIssue(record.id, "duplicate id", record.id))
        seen_ids.add(record.id)
        if record.leaf is not None and record.leaf not in tree:
            issues.append(ValidationIssue(record.id, "unknown leaf", record.leaf))
        if record.difficulty is not None and record.tier is not None:
            expected = overall_difficulty(record.difficulty)
            if record.tier != expected:
                issues.append(
                    ValidationIssue(
                        record.id,
                        "tier mismatch",
                        f"tier={record.tier!r} but profile max is {expected!r}",
                    )
                )
        elif record.tier is not None and record.tier not in DIFFICULTY_TIERS:
            issues.append(ValidationIssue(record.id, "unknown tier", record.tier))
    return issues
