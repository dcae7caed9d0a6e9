"""Language rebalancing: stratified retention, slot assignment, translation.

Overrepresented languages are down-sampled inside (L1, L2, difficulty)
strata using largest-remainder quotas, so the joint taxonomy-difficulty
shape survives the rebalance.  Records that lose the retention draw enter a
residual pool, are matched position-by-position against a shuffled pool of
target-language slots, and are re-translated through a pluggable client
with a resumable on-disk cache.

Randomness policy: one master seed drives the whole operation.  Every draw
uses `random.Random` (Mersenne Twister); `random.shuffle` is a Fisher-Yates
pass over the sorted input.  Per-stratum generators are seeded from
BLAKE2b(master seed, stratum key) so results do not depend on dict
iteration order or on which strata exist.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from math import floor
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .clients import ClientUnavailable, TranslationClient
from .corpus import QueryRecord, TaxonomyTree, overall_difficulty

logger = logging.getLogger(__name__)

CACHE_BATCH_SIZE = 10


class RebalanceError(Exception):
    """Base error for the rebalancing stage."""


class UnclassifiedRecord(RebalanceError):
    """A record reached stratification without a leaf or difficulty tier."""


class InfeasibleTarget(RebalanceError):
    """Quota preconditions cannot be met for the requested target."""


class SizeMismatch(RebalanceError):
    """Residual pool and slot pool differ in size."""


@dataclass(frozen=True, order=True)
class StratumKey:
    l1: str
    l2: str
    tier: str

    def as_string(self) -> str:
        return f"{self.l1}|{self.l2}|{self.tier}"


def stratify(
    records: Sequence[QueryRecord], tree: TaxonomyTree
) -> dict[StratumKey, list[QueryRecord]]:
    """Partition records by (L1, L2, difficulty tier).

    Small strata stay as they are: merging one- or two-record strata would
    itself introduce distribution drift.
    """
    strata: dict[StratumKey, list[QueryRecord]] = defaultdict(list)
    for record in records:
        if record.leaf is None:
            raise UnclassifiedRecord(f"record {record.id} has no taxonomy leaf")
        tier = record.tier
        if tier is None and record.difficulty is not None:
            tier = overall_difficulty(record.difficulty)
        if tier is None:
            raise UnclassifiedRecord(f"record {record.id} has no difficulty tier")
        l1, l2 = tree.resolve_ancestry(record.leaf)
        strata[StratumKey(l1, l2, tier)].append(record)
    return dict(strata)


def largest_remainder_quota(
    counts: Mapping, rate: float | Fraction, global_target: int
) -> dict:
    """Allocate integer quotas: floors first, then residual units by remainder.

    quota_i ∈ {floor(n_i * rate), floor(n_i * rate) + 1}, the quotas sum to
    `global_target` exactly, and residual units go to the strata with the
    largest fractional remainders, ties broken by ascending stratum key.
    Arithmetic runs on exact fractions so tie detection never depends on
    float rounding.
    """
    if isinstance(rate, float):
        rate = Fraction(rate)
    if rate < 0:
        raise InfeasibleTarget("rate must be non-negative")
    keys = sorted(counts)
    floors = {key: floor(counts[key] * rate) for key in keys}
    floor_sum = sum(floors.values())
    total = sum(counts.values())
    if not floor_sum <= global_target <= total:
        raise InfeasibleTarget(
            f"need sum(floors)={floor_sum} <= target={global_target} <= sum(counts)={total}"
        )
    residual = global_target - floor_sum
    remainders = {key: counts[key] * rate - floors[key] for key in keys}
    # Largest remainder first; ascending key settles ties deterministically.
    order = sorted(keys, key=lambda key: (-remainders[key], key))
    quotas = dict(floors)
    for key in order[:residual]:
        quotas[key] += 1
    return quotas


def _derive_rng(seed: int, *parts: str) -> random.Random:
    material = "|".join((str(seed), *parts)).encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def retain(
    strata: Mapping[StratumKey, Sequence[QueryRecord]],
    quotas: Mapping[StratumKey, int],
    seed: int,
) -> tuple[list[QueryRecord], list[QueryRecord]]:
    """Draw each stratum's quota uniformly at random under the master seed.

    Returns (retained, residual), both ordered by record id so downstream
    steps never see iteration-order noise.
    """
    retained: list[QueryRecord] = []
    residual: list[QueryRecord] = []
    for key in sorted(strata):
        members = sorted(strata[key], key=lambda r: r.id)
        quota = quotas.get(key, len(members))
        if quota > len(members):
            raise InfeasibleTarget(
                f"stratum {key.as_string()} has {len(members)} records, quota {quota}"
            )
        rng = _derive_rng(seed, "retain", key.as_string())
        shuffled = members[:]
        rng.shuffle(shuffled)
        retained.extend(shuffled[:quota])
        residual.extend(shuffled[quota:])
    retained.sort(key=lambda r: r.id)
    residual.sort(key=lambda r: r.id)
    return retained, residual


@dataclass(frozen=True)
class LanguageTargets:
    """Absolute per-language query counts after rebalancing."""

    targets: Mapping[str, int]

    def __post_init__(self) -> None:
        for language, target in self.targets.items():
            if target < 0:
                raise RebalanceError(f"negative target for {language!r}")

    def validate_total(self, corpus_size: int) -> None:
        total = sum(self.targets.values())
        if total != corpus_size:
            raise InfeasibleTarget(
                f"targets sum to {total} but corpus has {corpus_size} records"
            )

    def deficits(self, counts: Mapping[str, int]) -> dict[str, int]:
        return {
            language: target - counts.get(language, 0)
            for language, target in self.targets.items()
            if target > counts.get(language, 0)
        }

    def overrepresented(self, counts: Mapping[str, int]) -> dict[str, int]:
        return {
            language: count
            for language, count in counts.items()
            if count > self.targets.get(language, 0)
        }


@dataclass(frozen=True)
class SlotPool:
    """Target-language slots, one per deficit unit, in deterministic order."""

    slots: tuple[str, ...]

    @classmethod
    def from_deficits(cls, deficits: Mapping[str, int]) -> "SlotPool":
        slots: list[str] = []
        for language in sorted(deficits):
            if deficits[language] < 0:
                raise RebalanceError(f"negative deficit for {language!r}")
            slots.extend([language] * deficits[language])
        return cls(slots=tuple(slots))


def assign_slots(
    residual_ids: Sequence[str], deficits: Mapping[str, int], seed: int
) -> dict[str, str]:
    """Match residual records to target-language slots position-by-position.

    One seeded generator shuffles the sorted residual pool and then the slot
    pool, so a single seed reproduces the whole matching.  The global
    shuffle spreads target languages across strata instead of concentrating
    any language in one bucket.
    """
    pool = SlotPool.from_deficits(deficits)
    ids = sorted(residual_ids)
    if len(ids) != len(pool.slots):
        raise SizeMismatch(
            f"{len(ids)} residual records vs {len(pool.slots)} slots"
        )
    rng = _derive_rng(seed, "slots")
    shuffled_ids = ids[:]
    rng.shuffle(shuffled_ids)
    shuffled_slots = list(pool.slots)
    rng.shuffle(shuffled_slots)
    return dict(zip(shuffled_ids, shuffled_slots))


# Spans that must survive translation byte-for-byte.
_PROTECTED_PATTERNS = (
    re.compile(r"```.*?```", re.DOTALL),       # fenced code blocks
    re.compile(r"`[^`\n]+`"),                  # inline code
    re.compile(r"https?://[^\s)\]>]+"),        # URLs
    re.compile(r"(?<![\w./])(?:/|\./|~/)[\w.\-/]+"),  # absolute-ish file paths
    re.compile(r"^#{1,6}\s.*$", re.MULTILINE),  # section headings
    re.compile(r"^\s*(?:[-*+]|\d+\.)\s", re.MULTILINE),  # list bullets
)

# Sentinels are uppercase so case-mangling clients cannot corrupt them.
_SENTINEL = "[[KEEP-{index}]]"
_SENTINEL_RE = re.compile(r"\[\[KEEP-(\d+)\]\]")


def mask_protected_spans(text: str) -> tuple[str, list[str]]:
    """Replace protected spans with sentinels; returns (masked, spans)."""
    spans: list[str] = []

    def replace(match: re.Match) -> str:
        spans.append(match.group(0))
        return _SENTINEL.format(index=len(spans) - 1)

    masked = text
    for pattern in _PROTECTED_PATTERNS:
        masked = pattern.sub(replace, masked)
    return masked, spans


def restore_protected_spans(masked: str, spans: Sequence[str]) -> str:
    def replace(match: re.Match) -> str:
        index = int(match.group(1))
        if index >= len(spans):
            raise RebalanceError(f"translator corrupted sentinel {match.group(0)}")
        return spans[index]

    restored = _SENTINEL_RE.sub(replace, masked)
    if _SENTINEL_RE.search(restored):
        raise RebalanceError("translator output still contains sentinels")
    return restored


def translate_text(text: str, target_language: str, client: TranslationClient) -> str:
    """Translate the natural-language portion only.

    Code blocks, inline code, URLs, file paths, headings, and list bullets
    are masked before the client call and restored afterwards, so they are
    byte-identical no matter what the client does.
    """
    masked, spans = mask_protected_spans(text)
    translated = client.translate(masked, target_language)
    return restore_protected_spans(translated, spans)


class TranslationCache:
    """Append-only JSONL cache keyed by (record id, target language).

    Entries are buffered and flushed in `CACHE_BATCH_SIZE` batches; a killed
    run loses at most one unflushed batch and resumes past everything that
    reached disk.
    """

    def __init__(self, path: str | Path, batch_size: int = CACHE_BATCH_SIZE):
        if batch_size < 1:
            raise RebalanceError("batch_size must be >= 1")
        self.path = Path(path)
        self.batch_size = batch_size
        self._entries: dict[tuple[str, str], str] = {}
        self._buffer: list[dict] = []
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    raw = json.loads(line)
                    self._entries[(raw["id"], raw["language"])] = raw["text"]

    def get(self, record_id: str, language: str) -> str | None:
        return self._entries.get((record_id, language))

    def put(self, record_id: str, language: str, text: str) -> None:
        self._entries[(record_id, language)] = text
        self._buffer.append({"id": record_id, "language": language, "text": text})
        if len(self._buffer) >= self.batch_size:
            self.flush()

    def flush(self) -> None:
        if not self._buffer:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8", newline="\n") as fh:
            for entry in self._buffer:
                fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True))
                fh.write("\n")
        self._buffer.clear()

    def __len__(self) -> int:
        return len(self._entries)


def translate_assigned(
    records: Mapping[str, QueryRecord],
    assignments: Mapping[str, str],
    client: TranslationClient,
    cache: TranslationCache,
) -> dict[str, str]:
    """Translate each assigned record into its slot language.

    Cached entries are served without a client call, so an interrupted run
    resumes where the last flushed batch ended.  On transport failure the
    buffered progress is flushed before the error propagates.
    """
    translated: dict[str, str] = {}
    try:
        for record_id in sorted(assignments):
            language = assignments[record_id]
            cached = cache.get(record_id, language)
            if cached is not None:
                translated[record_id] = cached
                continue
            text = translate_text(records[record_id].text, language, client)
            cache.put(record_id, language, text)
            translated[record_id] = text
    except ClientUnavailable:
        cache.flush()
        raise
    cache.flush()
    return translated


@dataclass
class RebalanceResult:
    records: list[QueryRecord]
    retained_ids: list[str]
    reassigned: dict[str, str]  # record id -> target language
    quotas: dict[str, dict[StratumKey, int]]  # per overrepresented language

    def language_counts(self) -> Counter:
        return Counter(record.language for record in self.records)


def rebalance_corpus(
    records: Sequence[QueryRecord],
    tree: TaxonomyTree,
    targets: LanguageTargets,
    seed: int,
    translator: TranslationClient,
    cache: TranslationCache,
    clock: Callable[[], str] = lambda: "",
) -> RebalanceResult:
    """Rebalance the corpus to the per-language targets.

    Every input record survives (retained in place or reassigned and
    translated), so the final per-language counts hit the targets exactly
    and the joint (L1, L2, difficulty) distribution is unchanged.  Each
    record gains exactly one rebalance audit entry.
    """
    counts = Counter(record.language for record in records)
    targets.validate_total(len(records))

    by_language: dict[str, list[QueryRecord]] = defaultdict(list)
    for record in records:
        by_language[record.language].append(record)

    retained: list[QueryRecord] = []
    residual: list[QueryRecord] = []
    quota_audit: dict[str, dict[StratumKey, int]] = {}
    for language in sorted(by_language):
        members = by_language[language]
        target = targets.targets.get(language, 0)
        if len(members) <= target:
            retained.extend(members)
            continue
        rate = Fraction(target, len(members))
        strata = stratify(members, tree)
        stratum_counts = {key: len(group) for key, group in strata.items()}
        quotas = largest_remainder_quota(stratum_counts, rate, target)
        quota_audit[language] = quotas
        kept, dropped = retain(strata, quotas, seed)
        retained.extend(kept)
        residual.extend(dropped)
        logger.info(
            "language %s: kept %d of %d (rate %s)", language, len(kept), len(members), rate
        )

    deficits = targets.deficits(counts)
    assignments = assign_slots([r.id for r in residual], deficits, seed)
    residual_by_id = {r.id: r for r in residual}
    translations = translate_assigned(residual_by_id, assignments, translator, cache)

    timestamp = clock()
    final: list[QueryRecord] = []
    for record in sorted(retained, key=lambda r: r.id):
        record.append_audit("rebalance", "retained", timestamp)
        final.append(record)
    for record_id in sorted(assignments):
        record = residual_by_id[record_id]
        language = assignments[record_id]
        record.text = translations[record_id]
        record.language = language
        record.append_audit("rebalance", f"reassigned-to-{language}", timestamp)
        final.append(record)
    final.sort(key=lambda r: r.id)

    result = RebalanceResult(
        records=final,
        retained_ids=sorted(r.id for r in retained),
        reassigned=dict(sorted(assignments.items())),
        quotas=quota_audit,
    )
    achieved = result.language_counts()
    for language, target in targets.targets.items():
        if achieved.get(language, 0) != target:
            raise RebalanceError(
                f"post-condition violated: {language} has {achieved.get(language, 0)}"
                f" records, target {target}"
            )
    return result
