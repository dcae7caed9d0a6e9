from __future__ import annotations

import hashlib
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import (
    FROZEN_SIMHASH,
    allpairs_cosine_clusters,
    allpairs_hamming_clusters,
    reference_simhash,
)
from synth import synthetic_corpus
from webeval.dedup import (
    ClusterMap,
    DedupConfig,
    DedupError,
    TextTooShort,
    char_ngrams,
    cluster_lexical,
    cluster_semantic,
    hamming_distance,
    normalize,
    read_query_csv,
    run_dedup,
    simhash_fingerprint,
)


def test_normalize_examples():
    assert normalize("  Book   a Flight! ") == "book a flight"
    assert normalize("HELLO\tWORLD") == "hello world"
    assert normalize("") == ""


@given(st.text(max_size=80))
def test_normalize_is_idempotent(text):
    once = normalize(text)
    assert normalize(once) == once


def test_char_ngrams():
    assert char_ngrams("abcd", 2) == ["ab", "bc", "cd"]
    with pytest.raises(TextTooShort):
        char_ngrams("a", 2)


def test_simhash_matches_frozen_vectors():
    for text, expected in FROZEN_SIMHASH.items():
        assert simhash_fingerprint(text) == expected
        assert reference_simhash(text) == expected


def test_simhash_matches_reference_on_random_texts():
    rng = random.Random(7)
    alphabet = "abcdefgh "
    for _ in range(25):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(2, 30)))
        text = normalize(text) or "ab"
        assert simhash_fingerprint(text) == reference_simhash(text)


def test_simhash_of_single_gram_is_the_gram_hash():
    # One occurrence of one gram: every bit sum is +1 or -1, so the
    # fingerprint must equal the gram's own 64-bit hash.
    digest = hashlib.blake2b(b"aa", digest_size=8).digest()
    assert simhash_fingerprint("aa") == int.from_bytes(digest, "big")


@given(st.integers(min_value=0, max_value=2**64 - 1), st.integers(min_value=0, max_value=2**64 - 1))
def test_hamming_distance_is_xor_popcount(a, b):
    assert hamming_distance(a, b) == bin(a ^ b).count("1")


def test_banding_respects_the_exact_threshold_boundary():
    fingerprints = {"z": 0, "a": 0b111, "b": 0b1111000}
    clusters = cluster_lexical(fingerprints, DedupConfig()).clusters
    # distance(z, a) = 3 links them; distance(z, b) = 4 and distance(a, b) = 7 do not.
    assert dict(clusters) == {"a": ("a", "z"), "b": ("b",)}


def test_cluster_lexical_equals_allpairs_on_random_corpora():
    rng = random.Random(11)
    config = DedupConfig()
    for _ in range(10):
        texts = {qid: normalize(t) for qid, t in synthetic_corpus(rng, rng.randint(10, 60)).items()}
        fingerprints = {qid: simhash_fingerprint(t, config) for qid, t in texts.items()}
        impl = cluster_lexical(fingerprints, config).clusters
        oracle = allpairs_hamming_clusters(fingerprints, config.hamming_threshold)
        assert dict(impl) == oracle


def test_cluster_semantic_equals_allpairs_on_random_corpora():
    rng = random.Random(13)
    config = DedupConfig()
    for _ in range(5):
        texts = {qid: normalize(t) for qid, t in synthetic_corpus(rng, rng.randint(10, 50)).items()}
        impl = cluster_semantic(texts, config).clusters
        oracle = allpairs_cosine_clusters(texts, config.cosine_threshold, config.ngram_size)
        assert dict(impl) == oracle


def test_cluster_map_representative_must_map_to_itself():
    with pytest.raises(DedupError):
        ClusterMap(pass_label="exact", mapping={"a": "b", "b": "b"}, clusters={"a": ("a", "b")})


def test_run_dedup_folds_exact_duplicates():
    entries = [("q2", "Build a  Timer!"), ("q1", "build a timer"), ("q3", "draw a clock")]
    result = run_dedup(entries)
    assert result.raw_to_semantic["q2"] == "q1"
    assert result.raw_to_semantic["q1"] == "q1"
    assert result.counts()["input"] == 3
    assert result.counts()["after_exact"] == 2


def test_run_dedup_counts_never_increase():
    rng = random.Random(17)
    for _ in range(5):
        entries = sorted(synthetic_corpus(rng, 40).items())
        counts = run_dedup(entries).counts()
        assert (
            counts["input"]
            >= counts["after_exact"]
            >= counts["after_lexical"]
            >= counts["after_semantic"]
        )


def test_run_dedup_keeps_short_texts_as_singletons():
    entries = [("q1", "x"), ("q2", "build a timer"), ("q3", "build a timer now")]
    result = run_dedup(entries)
    assert result.raw_to_semantic["q1"] == "q1"


def test_run_dedup_rejects_duplicate_ids():
    with pytest.raises(DedupError, match="duplicate input ids"):
        run_dedup([("q1", "a b c"), ("q1", "d e f")])


def test_run_dedup_representatives_are_a_fixed_point():
    rng = random.Random(19)
    entries = sorted(synthetic_corpus(rng, 60).items())
    first = run_dedup(entries)
    survivors = [(qid, text) for qid, text in entries if first.raw_to_semantic[qid] == qid]
    second = run_dedup(survivors)
    assert second.semantic.representatives == first.semantic.representatives
    assert all(second.raw_to_semantic[qid] == qid for qid, _ in survivors)


def _read_csv_rows(path):
    import csv

    with path.open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def test_audit_files_partition_the_inputs(tmp_path):
    rng = random.Random(23)
    entries = sorted(synthetic_corpus(rng, 50).items())
    result = run_dedup(entries, out_dir=tmp_path)
    all_ids = {qid for qid, _ in entries}

    for groups_name, survivors_name, mapping in (
        ("query_groups.csv", "deduped_queries.csv", result.raw_to_lexical),
        ("semantic_query_groups.csv", "semantic_deduped_queries.csv", result.raw_to_semantic),
    ):
        rows = _read_csv_rows(tmp_path / groups_name)
        members = [row["member_id"] for row in rows]
        # Every input id appears exactly once.
        assert sorted(members) == sorted(all_ids)
        assert all(row["representative_id"] == mapping[row["member_id"]] for row in rows)
        survivors = {row["id"] for row in _read_csv_rows(tmp_path / survivors_name)}
        assert survivors == set(mapping.values())
        kept = {row["member_id"] for row in rows if row["pass"] == "kept"}
        assert kept == survivors


def test_audit_files_byte_identical_across_reruns(tmp_path):
    rng = random.Random(29)
    entries = sorted(synthetic_corpus(rng, 40).items())
    run_dedup(entries, out_dir=tmp_path / "first")
    run_dedup(entries, out_dir=tmp_path / "second")
    names = [
        "deduped_queries.csv",
        "query_groups.csv",
        "semantic_deduped_queries.csv",
        "semantic_query_groups.csv",
    ]
    for name in names:
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_read_query_csv(tmp_path):
    path = tmp_path / "queries.csv"
    path.write_text("id,query\nq7,build a page\nq8,draw a chart\n", encoding="utf-8")
    assert read_query_csv(path) == [("q7", "build a page"), ("q8", "draw a chart")]

    no_id = tmp_path / "anon.csv"
    no_id.write_text("query\nbuild a page\n", encoding="utf-8")
    assert read_query_csv(no_id) == [("q000000", "build a page")]

    wrong = tmp_path / "wrong.csv"
    wrong.write_text("text\nbuild a page\n", encoding="utf-8")
    with pytest.raises(DedupError, match="missing text column"):
        read_query_csv(wrong)


def test_config_validation():
    with pytest.raises(DedupError):
        DedupConfig(ngram_size=0)
    with pytest.raises(DedupError):
        DedupConfig(simhash_bits=63)
    with pytest.raises(DedupError):
        DedupConfig(hamming_threshold=0)
    with pytest.raises(DedupError):
        DedupConfig(cosine_threshold=1.5)
