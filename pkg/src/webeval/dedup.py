"""Three-pass near-duplicate removal over raw query pools.

Pass order: exact match on normalized text, SimHash over character n-grams
with a Hamming-distance link threshold, then corpus-local TF-IDF cosine
similarity.  Each pass clusters by connected components and keeps the
lexicographically smallest member id as the cluster representative, so the
surviving set never depends on input order.

The n-gram hash is BLAKE2b truncated to the configured fingerprint width.
It is fixed here deliberately: fingerprints must be stable across runs,
machines, and Python versions, which rules out the salted builtin `hash`.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

PASS_EXACT = "exact"
PASS_LEXICAL = "lexical"
PASS_SEMANTIC = "semantic"

# Marker used in group files for rows that survived the pass unmerged.
KEPT = "kept"

# Edge punctuation stripped during normalization.  Covers ASCII plus the
# common CJK/full-width marks seen in naturalistic queries.
_EDGE_PUNCT = (
    "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~"
    "。，！？；：“”‘’"
    "、（）《》【】"
)


class DedupError(Exception):
    """Base error for the dedup pipeline."""


class TextTooShort(DedupError):
    """Text has fewer characters than one n-gram."""


@dataclass(frozen=True)
class DedupConfig:
    ngram_size: int = 2
    simhash_bits: int = 64
    hamming_threshold: int = 3
    cosine_threshold: float = 0.85
    text_column: str = "query"
    id_column: str = "id"

    def __post_init__(self) -> None:
        if self.ngram_size < 1:
            raise DedupError("ngram_size must be >= 1")
        if self.simhash_bits % 8 != 0 or not 8 <= self.simhash_bits <= 512:
            raise DedupError("simhash_bits must be a multiple of 8 in [8, 512]")
        if not 0 < self.hamming_threshold < self.simhash_bits:
            raise DedupError("hamming_threshold must be in (0, simhash_bits)")
        if not 0.0 < self.cosine_threshold <= 1.0:
            raise DedupError("cosine_threshold must be in (0, 1]")


def normalize(text: str) -> str:
    """Lowercase, collapse internal whitespace, strip edge punctuation.

    Idempotent: normalize(normalize(t)) == normalize(t).
    """
    collapsed = " ".join(text.lower().split())
    return collapsed.strip(_EDGE_PUNCT + " ")


def char_ngrams(text: str, n: int) -> list[str]:
    if len(text) < n:
        raise TextTooShort(f"need at least {n} characters, got {len(text)}")
    return [text[i : i + n] for i in range(len(text) - n + 1)]


def _ngram_hash(gram: str, bits: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=bits // 8).digest()
    return int.from_bytes(digest, "big")


def simhash_fingerprint(text: str, config: DedupConfig = DedupConfig()) -> int:
    """SimHash over character n-grams, weighted by occurrence count.

    Bit b of the result is 1 iff the signed sum at position b is strictly
    positive; a zero sum maps to 0.
    """
    bits = config.simhash_bits
    sums = [0] * bits
    for gram, count in Counter(char_ngrams(text, config.ngram_size)).items():
        h = _ngram_hash(gram, bits)
        for b in range(bits):
            if (h >> b) & 1:
                sums[b] += count
            else:
                sums[b] -= count
    fingerprint = 0
    for b in range(bits):
        if sums[b] > 0:
            fingerprint |= 1 << b
    return fingerprint


def hamming_distance(a: int, b: int) -> int:
    return (a ^ b).bit_count()


class _UnionFind:
    def __init__(self, items: Iterable[str]):
        self._parent = {item: item for item in items}

    def find(self, item: str) -> str:
        root = item
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[item] != root:  # path compression
            self._parent[item], item = root, self._parent[item]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self._parent[rb] = ra

    def components(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = defaultdict(list)
        for item in self._parent:
            groups[self.find(item)].append(item)
        return groups


@dataclass(frozen=True)
class ClusterMap:
    """Total member-to-representative mapping produced by one pass."""

    pass_label: str
    mapping: Mapping[str, str]
    clusters: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        for rep in self.clusters:
            if self.mapping[rep] != rep:
                raise DedupError(f"representative {rep!r} does not map to itself")

    @property
    def representatives(self) -> list[str]:
        return sorted(self.clusters)

    @classmethod
    def from_components(
        cls, components: Mapping[str, Sequence[str]], pass_label: str
    ) -> "ClusterMap":
        mapping: dict[str, str] = {}
        clusters: dict[str, tuple[str, ...]] = {}
        for members in components.values():
            rep = min(members)  # lexicographically smallest id
            clusters[rep] = tuple(sorted(members))
            for member in members:
                mapping[member] = rep
        return cls(pass_label=pass_label, mapping=mapping, clusters=clusters)


def _cluster_by_links(
    ids: Sequence[str], links: Iterable[tuple[str, str]], pass_label: str
) -> ClusterMap:
    uf = _UnionFind(ids)
    for a, b in links:
        uf.union(a, b)
    return ClusterMap.from_components(uf.components(), pass_label)


def cluster_lexical(
    fingerprints: Mapping[str, int], config: DedupConfig = DedupConfig()
) -> ClusterMap:
    """Link ids whose fingerprints differ in at most `hamming_threshold` bits.

    Candidate pairs come from banding: the fingerprint is split into
    threshold + 1 bit bands, and two fingerprints within the threshold must
    agree exactly on at least one band (pigeonhole), so bucketing by band
    value finds every qualifying pair without comparing all pairs.
    """
    ids = sorted(fingerprints)
    bands = config.hamming_threshold + 1
    base, extra = divmod(config.simhash_bits, bands)
    links: list[tuple[str, str]] = []
    seen_pairs: set[tuple[str, str]] = set()
    offset = 0
    for band_index in range(bands):
        width = base + (1 if band_index < extra else 0)
        mask = (1 << width) - 1
        buckets: dict[int, list[str]] = defaultdict(list)
        for qid in ids:
            buckets[(fingerprints[qid] >> offset) & mask].append(qid)
        offset += width
        for bucket in buckets.values():
            for i in range(len(bucket)):
                for j in range(i + 1, len(bucket)):
                    pair = (bucket[i], bucket[j])
                    if pair in seen_pairs:
                        continue
                    seen_pairs.add(pair)
                    d = hamming_distance(
                        fingerprints[pair[0]], fingerprints[pair[1]]
                    )
                    if d <= config.hamming_threshold:
                        links.append(pair)
    return _cluster_by_links(ids, links, PASS_LEXICAL)


def _tfidf_links(
    texts: Mapping[str, str], config: DedupConfig
) -> list[tuple[str, str]]:
    # Corpus-local vectors: the idf statistics come from these texts only.
    from sklearn.feature_extraction.text import TfidfVectorizer

    ids = sorted(texts)
    eligible = [qid for qid in ids if len(texts[qid]) >= config.ngram_size]
    if len(eligible) < 2:
        return []
    vectorizer = TfidfVectorizer(
        analyzer="char",
        ngram_range=(config.ngram_size, config.ngram_size),
        lowercase=False,  # inputs are already normalized
        smooth_idf=True,  # idf = ln((1 + N) / (1 + df)) + 1
        norm="l2",
    )
    matrix = vectorizer.fit_transform([texts[qid] for qid in eligible])
    similarities = matrix @ matrix.T  # rows are unit vectors
    rows, cols = similarities.nonzero()
    links = []
    for r, c in zip(rows, cols):
        if r < c and similarities[r, c] >= config.cosine_threshold:
            links.append((eligible[r], eligible[c]))
    return links


def cluster_semantic(
    texts: Mapping[str, str], config: DedupConfig = DedupConfig()
) -> ClusterMap:
    """Link ids whose TF-IDF char n-gram vectors reach the cosine threshold.

    Texts shorter than one n-gram have empty vectors and stay singletons.
    """
    return _cluster_by_links(sorted(texts), _tfidf_links(texts, config), PASS_SEMANTIC)


def _semantic_fixed_point(texts: Mapping[str, str], config: DedupConfig) -> ClusterMap:
    """Fold semantic clusters until the survivor set is self-stable.

    TF-IDF weights depend on the document set, so folding a cluster changes
    every remaining similarity and one pass is not necessarily stable.
    Re-clustering the survivors until every cluster is a singleton makes
    the representatives a fixed point of the whole procedure: rerunning
    dedup over them finds nothing left to merge.
    """
    mapping = {qid: qid for qid in texts}
    current = dict(texts)
    while True:
        step = cluster_semantic(current, config)
        if all(len(members) == 1 for members in step.clusters.values()):
            break
        mapping = {qid: step.mapping[rep] for qid, rep in mapping.items()}
        current = {qid: current[qid] for qid in step.clusters}
    components: dict[str, list[str]] = defaultdict(list)
    for qid, rep in mapping.items():
        components[rep].append(qid)
    return ClusterMap.from_components(components, PASS_SEMANTIC)


@dataclass
class DedupResult:
    config: DedupConfig
    normalized: dict[str, str]
    exact: ClusterMap
    lexical: ClusterMap
    semantic: ClusterMap
    # Composed mappings from every raw id to its stage representative.
    raw_to_lexical: dict[str, str] = field(default_factory=dict)
    raw_to_semantic: dict[str, str] = field(default_factory=dict)

    @property
    def lexical_representatives(self) -> list[str]:
        return self.lexical.representatives

    @property
    def semantic_representatives(self) -> list[str]:
        return self.semantic.representatives

    def counts(self) -> dict[str, int]:
        return {
            "input": len(self.normalized),
            "after_exact": len(self.exact.clusters),
            "after_lexical": len(self.lexical.clusters),
            "after_semantic": len(self.semantic.clusters),
        }


def run_dedup(
    entries: Sequence[tuple[str, str]],
    config: DedupConfig = DedupConfig(),
    out_dir: str | Path | None = None,
) -> DedupResult:
    """Run the exact, lexical, and semantic passes over (id, text) entries.

    Texts shorter than one n-gram participate in the exact pass only and
    survive the near-duplicate passes as singletons.  When `out_dir` is
    given, the four audit files are written there.
    """
    id_counts = Counter(qid for qid, _ in entries)
    dupes = sorted(qid for qid, count in id_counts.items() if count > 1)
    if dupes:
        raise DedupError(f"duplicate input ids: {dupes}")

    normalized = {qid: normalize(text) for qid, text in entries}

    by_text: dict[str, list[str]] = defaultdict(list)
    for qid in sorted(normalized):
        by_text[normalized[qid]].append(qid)
    exact = ClusterMap.from_components(
        {members[0]: members for members in by_text.values()}, PASS_EXACT
    )

    exact_reps = exact.representatives
    fingerprints: dict[str, int] = {}
    short_ids: list[str] = []
    for qid in exact_reps:
        text = normalized[qid]
        if len(text) < config.ngram_size:
            short_ids.append(qid)
        else:
            fingerprints[qid] = simhash_fingerprint(text, config)
    lexical_core = cluster_lexical(fingerprints, config)
    lexical = _merge_singletons(lexical_core, short_ids, PASS_LEXICAL)

    semantic = _semantic_fixed_point(
        {qid: normalized[qid] for qid in lexical.representatives}, config
    )

    result = DedupResult(
        config=config,
        normalized=normalized,
        exact=exact,
        lexical=lexical,
        semantic=semantic,
    )
    for qid in normalized:
        lex_rep = lexical.mapping[exact.mapping[qid]]
        result.raw_to_lexical[qid] = lex_rep
        result.raw_to_semantic[qid] = semantic.mapping[lex_rep]
    logger.info("dedup counts: %s", result.counts())

    if out_dir is not None:
        write_audit_files(result, dict(entries), Path(out_dir))
    return result


def _merge_singletons(
    core: ClusterMap, singleton_ids: Sequence[str], pass_label: str
) -> ClusterMap:
    mapping = dict(core.mapping)
    clusters = dict(core.clusters)
    for qid in singleton_ids:
        mapping[qid] = qid
        clusters[qid] = (qid,)
    return ClusterMap(pass_label=pass_label, mapping=mapping, clusters=clusters)


def _merge_pass(result: DedupResult, member: str, final_rep: str) -> str:
    """Label the earliest pass at which `member` folded into its representative."""
    if member == final_rep:
        return KEPT
    if result.exact.mapping[member] != member:
        return PASS_EXACT
    if result.raw_to_lexical[member] != member:
        return PASS_LEXICAL
    return PASS_SEMANTIC


def write_audit_files(
    result: DedupResult, original_texts: Mapping[str, str], out_dir: Path
) -> list[Path]:
    """Write the four audit files.

    `deduped_queries.csv` and `query_groups.csv` describe the state after
    the lexical pass; the `semantic_` pair describes the final state.  Group
    files carry one row per input id with the pass that merged it, or
    `kept` for surviving representatives, so each file is a partition of the
    full input set.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    text_col = result.config.text_column
    id_col = result.config.id_column
    written = []

    def write_csv(name: str, header: list[str], rows: Iterable[list[str]]) -> None:
        path = out_dir / name
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        written.append(path)

    write_csv(
        "deduped_queries.csv",
        [id_col, text_col],
        ([qid, original_texts[qid]] for qid in result.lexical_representatives),
    )
    write_csv(
        "query_groups.csv",
        ["member_id", "representative_id", "pass"],
        (
            [qid, rep, _merge_pass(result, qid, rep)]
            for qid, rep in sorted(result.raw_to_lexical.items())
        ),
    )
    write_csv(
        "semantic_deduped_queries.csv",
        [id_col, text_col],
        ([qid, original_texts[qid]] for qid in result.semantic_representatives),
    )
    write_csv(
        "semantic_query_groups.csv",
        ["member_id", "representative_id", "pass"],
        (
            [qid, rep, _merge_pass(result, qid, rep)]
            for qid, rep in sorted(result.raw_to_semantic.items())
        ),
    )
    return written


def read_query_csv(
    path: str | Path, config: DedupConfig = DedupConfig()
) -> list[tuple[str, str]]:
    """Read (id, text) entries from a CSV with a configurable text column.

    When the id column is absent, zero-padded row indices are used.
    """
    entries: list[tuple[str, str]] = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or config.text_column not in reader.fieldnames:
            raise DedupError(
                f"{path}: missing text column {config.text_column!r} "
                f"(found {reader.fieldnames})"
            )
        has_id = config.id_column in reader.fieldnames
        for index, row in enumerate(reader):
            qid = row[config.id_column] if has_id else f"q{index:06d}"
            entries.append((qid, row[config.text_column]))
    return entries
