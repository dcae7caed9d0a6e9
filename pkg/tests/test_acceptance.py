"""One test per headline guarantee of the harness.

These are the checks a release must pass, each stated at the tolerance the
guarantee carries: oracle equivalence for the dedup clusterings, exact
arithmetic for quota allocation and the admissibility gate, pinned golden
values for the scoring rule engine and the precision harness, byte identity
for resumed runs, and determinism for the deploy failure taxonomy.
Everything runs against scripted clients and local sockets; nothing here
reaches an external service.
"""

from __future__ import annotations

import csv
import itertools
import json
import random
import re
import socket
import sys
import threading
import time
from fractions import Fraction
from pathlib import Path

import pytest

from conftest import make_record
from oracles import (
    allpairs_cosine_clusters,
    allpairs_hamming_clusters,
    enumerate_pair_agreement,
    longhand_largest_remainder,
    reference_gate_outcome,
)
from synth import synthetic_corpus
from webeval.analytics import (
    DIM_FUNCTIONAL,
    MARK_EXEMPT,
    MARK_FAIL,
    MARK_PASS,
    RubricItem,
    RubricSheet,
    aggregate_rubric,
    agreement_rate,
    load_rubric_items,
    pairwise_from_scores,
)
from webeval.browser import FakeBrowser
from webeval.clients import CallableJudge
from webeval.config import config_from_mapping
from webeval.corpus import DIFFICULTY_TIERS, read_corpus, write_corpus
from webeval.curation import AXES, AdmissibilityVerdict, gate, validate_precision
from webeval.dedup import (
    DedupConfig,
    cluster_lexical,
    cluster_semantic,
    normalize,
    run_dedup,
    simhash_fingerprint,
)
from webeval.deploy import (
    MODE_HTML,
    MODE_REACT,
    BuildConfig,
    DeployFailure,
    ProjectInput,
    build,
    probe,
    serve,
)
from webeval.mocks import DryRunJudge, PrefixTranslator
from webeval.orchestrator import (
    PIPELINE_STAGES,
    evaluate_model,
    finalize_reports,
    run_data_pipeline,
)
from webeval.rebalance import (
    LanguageTargets,
    TranslationCache,
    largest_remainder_quota,
    rebalance_corpus,
    stratify,
)
from webeval.scoring import (
    KIND_AESTHETIC,
    KIND_FUNCTIONAL,
    STATUS_NEW,
    STATUS_RETAINED,
    DetectionResult,
    ProblemReport,
    StaticScores,
    rule_engine_adjust,
)
from webeval.store import EvidenceStore


def _fixed_clock() -> str:
    return "2026-01-01T00:00:00Z"


def _csv_rows(path: Path) -> list[dict]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Deduplication


def test_dedup_clusters_match_allpairs_oracles_on_randomized_corpora():
    # 50 randomized corpora of up to 200 strings: both clusterings must
    # equal their brute-force all-pairs threshold graphs exactly, and the
    # whole sweep must stay under ten seconds.
    rng = random.Random(20260813)
    config = DedupConfig()
    assert (config.ngram_size, config.hamming_threshold, config.cosine_threshold) == (2, 3, 0.85)

    started = time.perf_counter()
    for _ in range(50):
        corpus = synthetic_corpus(rng, rng.randint(2, 200))
        texts = {qid: normalize(text) for qid, text in corpus.items()}
        fingerprints = {qid: simhash_fingerprint(text, config) for qid, text in texts.items()}

        lexical = cluster_lexical(fingerprints, config).clusters
        assert dict(lexical) == allpairs_hamming_clusters(fingerprints, config.hamming_threshold)

        semantic = cluster_semantic(texts, config).clusters
        assert dict(semantic) == allpairs_cosine_clusters(
            texts, config.cosine_threshold, config.ngram_size
        )
    assert time.perf_counter() - started < 10.0


def test_dedup_is_idempotent_and_audits_partition_the_input(tmp_path):
    rng = random.Random(97)
    entries = sorted(synthetic_corpus(rng, 120).items())

    # Running dedup over its own survivors must change nothing.
    first = run_dedup(entries, out_dir=tmp_path / "a")
    survivors = [(qid, text) for qid, text in entries if first.raw_to_semantic[qid] == qid]
    second = run_dedup(survivors)
    assert second.semantic.representatives == first.semantic.representatives
    assert all(second.raw_to_semantic[qid] == qid for qid, _ in survivors)

    # The four audit files partition the input: every id appears exactly
    # once per groups file, and the survivor lists are the representatives.
    all_ids = sorted(qid for qid, _ in entries)
    for groups_name, survivors_name, mapping in (
        ("query_groups.csv", "deduped_queries.csv", first.raw_to_lexical),
        ("semantic_query_groups.csv", "semantic_deduped_queries.csv", first.raw_to_semantic),
    ):
        rows = _csv_rows(tmp_path / "a" / groups_name)
        assert sorted(row["member_id"] for row in rows) == all_ids
        assert all(row["representative_id"] == mapping[row["member_id"]] for row in rows)
        survivor_ids = {row["id"] for row in _csv_rows(tmp_path / "a" / survivors_name)}
        assert survivor_ids == set(mapping.values())
        assert {r["member_id"] for r in rows if r["pass"] == "kept"} == survivor_ids

    # Byte-identical across reruns with the same inputs and config.
    run_dedup(entries, out_dir=tmp_path / "b")
    for name in ("deduped_queries.csv", "query_groups.csv",
                 "semantic_deduped_queries.csv", "semantic_query_groups.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# ---------------------------------------------------------------------------
# Quota allocation and rebalancing


def test_largest_remainder_quotas_are_exact():
    rng = random.Random(41)
    checked = 0
    while checked < 100:
        counts = {f"s{i}": rng.randint(0, 60) for i in range(rng.randint(2, 9))}
        total = sum(counts.values())
        if total == 0:
            continue
        target = rng.randint(0, total)
        rate = Fraction(target, total)
        quotas = largest_remainder_quota(counts, rate, target)
        assert quotas == longhand_largest_remainder(counts, rate, target)
        assert sum(quotas.values()) == target
        # Each stratum lands within one unit of its proportional share.
        for key, count in counts.items():
            assert abs(Fraction(quotas[key]) - count * rate) < 1
        checked += 1

    # Equal remainders break by key order: A and C tie ahead of B.
    assert largest_remainder_quota({"A": 3, "B": 3, "C": 4}, 0.5, 5) == {"A": 2, "B": 1, "C": 2}


def _thousand_record_corpus(tree) -> list:
    records = []
    for i in range(1000):
        records.append(make_record(
            f"q{i:04d}",
            f"query text number {i:04d}",
            leaf=tree.leaf_names[i % 18],
            tier=DIFFICULTY_TIERS[i % len(DIFFICULTY_TIERS)],
            language="en" if i < 700 else "zh",
        ))
    return records


def _stratum_counts(records, tree) -> dict:
    return {key: len(group) for key, group in stratify(records, tree).items()}


def test_rebalance_hits_targets_and_preserves_stratum_marginals(tmp_path, tree):
    targets = LanguageTargets(targets={"en": 600, "zh": 400})
    outputs = []
    for run in ("a", "b"):
        records = _thousand_record_corpus(tree)
        before = _stratum_counts(records, tree)
        en_before = _stratum_counts([r for r in records if r.language == "en"], tree)

        cache = TranslationCache(tmp_path / f"cache_{run}.jsonl")
        result = rebalance_corpus(
            records, tree, targets, seed=17,
            translator=PrefixTranslator(), cache=cache, clock=_fixed_clock,
        )
        assert dict(result.language_counts()) == {"en": 600, "zh": 400}
        assert len(result.records) == 1000

        # Reassignment keeps every record's taxonomy leaf and tier, so the
        # corpus-wide L1 x L2 x difficulty marginals cannot move at all.
        assert _stratum_counts(result.records, tree) == before

        # The shrinking language is thinned proportionally: each stratum's
        # survivor count sits within one unit of its share.
        rate = Fraction(600, 700)
        en_after = _stratum_counts(
            [r for r in result.records if r.language == "en"], tree)
        for key, count in en_before.items():
            assert abs(Fraction(en_after.get(key, 0)) - count * rate) < 1
        assert set(en_after) <= set(en_before)

        path = tmp_path / f"corpus_{run}.jsonl"
        write_corpus(result.records, path)
        outputs.append(path.read_bytes())

    # Seeded reruns over fresh copies of the same input are byte-identical.
    assert outputs[0] == outputs[1]


# ---------------------------------------------------------------------------
# Curation


def test_admissibility_gate_matches_the_hard_axis_rule_on_all_verdicts():
    combos = list(itertools.product((True, False), repeat=len(AXES)))
    assert len(combos) == 128
    for passes in combos:
        verdict = AdmissibilityVerdict(
            axes=dict(zip(AXES, passes)),
            rationales={axis: "" if ok else "fails" for axis, ok in zip(AXES, passes)},
        )
        assert gate(verdict).decision.value == reference_gate_outcome(passes)


_QUERY_LINE = re.compile(r"^Query: (.*)$", re.MULTILINE)


def test_classification_precision_harness_is_stable_and_counts_errors(tree):
    leaves = tree.leaf_names
    gold = [(f"gold query {i:03d}", leaves[i % len(leaves)]) for i in range(540)]
    lookup = dict(gold)

    # A judge echoing the gold labels scores 100.00% on every run.
    def echo(prompt: str) -> str:
        return json.dumps({"task_scenario": lookup[_QUERY_LINE.search(prompt).group(1)]})

    report = validate_precision(gold, tree, CallableJudge(echo), runs=3)
    assert [run.precision_pct for run in report.runs] == [100.0, 100.0, 100.0]
    assert report.mean_precision_pct == 100.0

    # A judge scripted to miss exactly 51 of the 540 items lands on
    # 489 correct = 90.56%, within a hundredth of a point.
    wrong = {f"gold query {i:03d}" for i in range(51)}

    def scripted(prompt: str) -> str:
        text = _QUERY_LINE.search(prompt).group(1)
        label = lookup[text]
        if text in wrong:
            label = leaves[(leaves.index(label) + 1) % len(leaves)]
        return json.dumps({"task_scenario": label})

    report = validate_precision(gold, tree, CallableJudge(scripted))
    assert report.runs[0].correct == 489
    assert abs(report.mean_precision_pct - 90.56) <= 0.01


# ---------------------------------------------------------------------------
# Scoring rule engine


def test_rule_engine_golden_trace_and_deduction_schedule():
    # Golden trace: a fresh MAJOR functional problem costs one point off a
    # static 8.0, while an aesthetic problem noted as already counted
    # during the static pass leaves aesthetics untouched.
    static = StaticScores(8.0, "works end to end", 7.0, "clean layout")
    detection = DetectionResult(
        problems=(
            ProblemReport(kind=KIND_FUNCTIONAL, severity="MAJOR",
                          description="reset button does not clear the board"),
            ProblemReport(kind=KIND_AESTHETIC, severity="MINOR",
                          description="cramped footer spacing",
                          note="already flagged during the static evaluation"),
        ),
        dismissed=(),
    )
    assert rule_engine_adjust(static, detection, True) == (7.0, 7.0)

    # Full severity-by-status schedule, stated by hand.
    schedule = {
        ("CRITICAL", STATUS_NEW): 2.0,
        ("MAJOR", STATUS_NEW): 1.0,
        ("MINOR", STATUS_NEW): 0.5,
        ("CRITICAL", STATUS_RETAINED): 0.0,
        ("MAJOR", STATUS_RETAINED): 0.0,
        ("MINOR", STATUS_RETAINED): 0.0,
    }
    for (severity, status), cost in schedule.items():
        one = DetectionResult(
            problems=(ProblemReport(kind=KIND_FUNCTIONAL, severity=severity,
                                    description="broken control", status=status),),
            dismissed=(),
        )
        functional, aesthetics = rule_engine_adjust(static, one, False)
        assert functional == 8.0 - cost, (severity, status)
        assert aesthetics == 7.0, (severity, status)

    # Deductions clamp at zero; a page that renders floors at one.
    pileup = DetectionResult(
        problems=tuple(
            ProblemReport(kind=KIND_FUNCTIONAL, severity="CRITICAL",
                          description=f"crash {i}")
            for i in range(5)
        ),
        dismissed=(),
    )
    clamped, _ = rule_engine_adjust(StaticScores(1.5, "", 7.0, ""), pileup, False)
    assert clamped == 0.0
    floored, _ = rule_engine_adjust(StaticScores(2.0, "", 7.0, ""), pileup, True)
    assert floored == 1.0


# ---------------------------------------------------------------------------
# Analytics


def test_agreement_rate_matches_brute_force_pair_enumeration():
    rng = random.Random(59)
    for _ in range(200):
        models = [f"m{i}" for i in range(rng.randint(2, 6))]
        left = {name: rng.randrange(0, 17) / 2.0 for name in models}
        right = {name: rng.randrange(0, 17) / 2.0 for name in models}
        impl = agreement_rate(pairwise_from_scores(left), pairwise_from_scores(right))
        assert impl == enumerate_pair_agreement(left, right)

    identical = {"a": 6.0, "b": 4.5, "c": 3.0}
    assert agreement_rate(
        pairwise_from_scores(identical), pairwise_from_scores(identical)) == 100.0

    # A>B>C versus A>C>B agree on two of the three pairs.
    left = {"a": 3.0, "b": 2.0, "c": 1.0}
    right = {"a": 3.0, "b": 1.0, "c": 2.0}
    rate = agreement_rate(pairwise_from_scores(left), pairwise_from_scores(right))
    assert abs(rate - 66.67) <= 0.01


def test_rubric_aggregation_holds_its_invariants():
    items = [
        RubricItem(id=f"i{n}", cluster="c", name=f"item {n}",
                   dimension=DIM_FUNCTIONAL, scored=True, criterion="binary check")
        for n in range(10)
    ]
    # Two exemptions shrink the denominator to eight; six passes make 0.75.
    marks = {f"i{n}": MARK_PASS for n in range(6)}
    marks.update({"i6": MARK_FAIL, "i7": MARK_FAIL,
                  "i8": MARK_EXEMPT, "i9": MARK_EXEMPT})
    sheet = RubricSheet(query_id="q1", model="m", marks=marks)
    baseline = aggregate_rubric(sheet, items)
    assert baseline == (0.75, None)

    # Item order never matters.
    rng = random.Random(7)
    for _ in range(10):
        shuffled = items[:]
        rng.shuffle(shuffled)
        assert aggregate_rubric(sheet, shuffled) == baseline

    # Exempting an item must read as "not applicable", not as a failure.
    failed = dict(marks)
    failed.update({"i8": MARK_FAIL, "i9": MARK_FAIL})
    with_failures, _ = aggregate_rubric(
        RubricSheet(query_id="q1", model="m", marks=failed), items)
    assert with_failures == 0.6
    assert baseline[0] > with_failures

    # All-pass on the shipped rubric scores a clean 1.0 on both dimensions.
    shipped = load_rubric_items()
    all_pass = RubricSheet(
        query_id="q1", model="m",
        marks={item.id: MARK_PASS for item in shipped if item.scored},
    )
    assert aggregate_rubric(all_pass, shipped) == (1.0, 1.0)


# ---------------------------------------------------------------------------
# Mocked end-to-end run


E2E_TEXTS = (
    "build a pomodoro timer with start and reset buttons",
    "create a recipe browser with filter by cuisine",
    "make a chess puzzle trainer with hints",
)
E2E_PAGE = "<html><body><button id='go'>Go</button></body></html>"


class DyingJudge:
    """Delegates to the dry-run judge until the configured call, then dies."""

    def __init__(self, kill_at: int):
        self._inner = DryRunJudge()
        self.kill_at = kill_at
        self.calls = 0

    def send(self, prompt: str, images=None) -> str:
        self.calls += 1
        if self.calls >= self.kill_at:
            raise KeyboardInterrupt("simulated operator kill")
        return self._inner.send(prompt, images)


def _e2e_config():
    return config_from_mapping({
        "evaluation": {"max_steps": 5, "port_range": [50800, 50920], "probe_timeout": 5.0},
    })


def _curate(root: Path) -> tuple[dict[str, str], list[ProjectInput]]:
    records = [make_record(f"q{i}", text) for i, text in enumerate(E2E_TEXTS)]
    run_data_pipeline(records, root, DryRunJudge(), PrefixTranslator(), clock=_fixed_clock)
    corpus = read_corpus(root / "curation" / "corpus.jsonl")
    texts = {record.id: record.text for record in corpus}
    projects = [ProjectInput(query_id=qid, mode=MODE_HTML, html=E2E_PAGE) for qid in texts]
    return texts, projects


def test_mocked_end_to_end_run_is_resumable_with_identical_outputs(tmp_path):
    started = time.perf_counter()
    clean_root = tmp_path / "clean"
    killed_root = tmp_path / "killed"

    # Uninterrupted reference run: curate, evaluate, aggregate.
    texts, projects = _curate(clean_root)
    assert len(texts) == 3
    evaluate_model(clean_root, "model-a", projects, texts,
                   DryRunJudge(), DryRunJudge(), FakeBrowser,
                   config=_e2e_config(), clock=_fixed_clock)
    rows = finalize_reports(clean_root)
    assert rows[0].queries == 3

    # Same workflow, but the judge dies mid-way through the second query's
    # evaluation, after partial evidence is already on disk.
    texts, projects = _curate(killed_root)
    with pytest.raises(KeyboardInterrupt):
        evaluate_model(killed_root, "model-a", projects, texts,
                       DyingJudge(kill_at=5), DryRunJudge(), FakeBrowser,
                       config=_e2e_config(), clock=_fixed_clock)
    evaluate_model(killed_root, "model-a", projects, texts,
                   DryRunJudge(), DryRunJudge(), FakeBrowser,
                   config=_e2e_config(), clock=_fixed_clock)
    finalize_reports(killed_root)

    # Both ledgers are complete: every pipeline stage and every per-query
    # evaluation shows as completed.
    pipeline = json.loads(
        (killed_root / "manifest-pipeline.json").read_text(encoding="utf-8"))
    completed = {e["stage"] for e in pipeline["events"] if e["status"] == "completed"}
    assert set(PIPELINE_STAGES) <= completed
    evaluation = json.loads(
        (killed_root / "manifest-evaluation.json").read_text(encoding="utf-8"))
    eval_completed = {e["stage"] for e in evaluation["events"] if e["status"] == "completed"}
    assert {f"evaluate:model-a/{qid}" for qid in texts} <= eval_completed

    # The killed-and-resumed run ends byte-identical to the clean one.
    assert (killed_root / "curation" / "corpus.jsonl").read_bytes() == (
        clean_root / "curation" / "corpus.jsonl").read_bytes()
    clean_store = EvidenceStore(clean_root / "evidence")
    killed_store = EvidenceStore(killed_root / "evidence")
    card_keys = [key for key in clean_store.keys() if key.startswith("scorecards/")]
    assert len(card_keys) == 3
    assert card_keys == [key for key in killed_store.keys() if key.startswith("scorecards/")]
    for key in card_keys:
        assert killed_store.get_bytes(key) == clean_store.get_bytes(key), key
    for name in ("leaderboard.csv", "failures.json"):
        assert (killed_root / "reports" / name).read_bytes() == (
            clean_root / "reports" / name).read_bytes()

    assert time.perf_counter() - started < 60.0


# ---------------------------------------------------------------------------
# Deploy failure taxonomy


SYNTAX_SCRIPT = """\
import sys
print("vite v5.0.0 building for production...")
print('src/App.jsx (1:18): SyntaxError: Invalid or unexpected token', file=sys.stderr)
sys.exit(1)
"""

PHANTOM_SCRIPT = """\
import sys
print('"formatDate" is not exported by "src/utils.js"', file=sys.stderr)
sys.exit(1)
"""


def _react_fixture(parent: Path, script: str, source: str) -> ProjectInput:
    root = parent / "project_src"
    root.mkdir(parents=True)
    (root / "package.json").write_text(
        json.dumps({"name": "app", "version": "1.0.0"}), encoding="utf-8")
    (root / "fake_build.py").write_text(script, encoding="utf-8")
    src = root / "src"
    src.mkdir()
    (src / "App.jsx").write_text(source, encoding="utf-8")
    return ProjectInput(query_id="q1", mode=MODE_REACT, root=root)


def _grab_ports(count: int):
    """Bind `count` consecutive localhost ports and return (base, sockets)."""
    for base in range(51500, 64000, count + 3):
        held = []
        try:
            for offset in range(count):
                sock = socket.socket()
                sock.bind(("127.0.0.1", base + offset))
                sock.listen(1)
                held.append(sock)
            return base, held
        except OSError:
            for sock in held:
                sock.close()
    raise RuntimeError("no consecutive free ports available")


def test_deploy_failure_taxonomy_is_deterministic(tmp_path):
    # Four failure fixtures, ten reruns each: a server that accepts and
    # never answers, a fully occupied port range, a build that chokes on an
    # unescaped backslash, and a build that imports a nonexistent symbol.
    build_config = BuildConfig(commands=(f"{sys.executable} fake_build.py",), timeout=30.0)
    syntax_project = _react_fixture(
        tmp_path / "syntax", SYNTAX_SCRIPT, 'const label = "C:\\new\\texts";\n')
    phantom_project = _react_fixture(
        tmp_path / "phantom", PHANTOM_SCRIPT,
        'import { formatDate } from "./utils.js";\n')
    site = tmp_path / "site"
    site.mkdir()
    (site / "index.html").write_text("<html><body>up</body></html>", encoding="utf-8")

    hung = socket.socket()
    hung.bind(("127.0.0.1", 0))
    hung.listen(5)
    hung_url = f"http://127.0.0.1:{hung.getsockname()[1]}/"
    stop = threading.Event()
    held_connections: list[socket.socket] = []

    def hold_connections() -> None:
        hung.settimeout(0.1)
        while not stop.is_set():
            try:
                conn, _ = hung.accept()
                held_connections.append(conn)
            except socket.timeout:
                continue

    thread = threading.Thread(target=hold_connections, daemon=True)
    thread.start()
    base, held_ports = _grab_ports(3)

    observed: dict[str, set[str]] = {
        "read_timeout": set(),
        "port_collision": set(),
        "code_syntax": set(),
        "code_phantom_import": set(),
    }
    try:
        for round_number in range(10):
            probed = probe(hung_url, timeout=0.4)
            assert isinstance(probed, DeployFailure)
            observed["read_timeout"].add(probed.category)

            collided = serve(site, port_range=(base, base + 2), max_retries=2)
            assert isinstance(collided, DeployFailure)
            observed["port_collision"].add(collided.category)

            syntax = build(syntax_project, tmp_path / f"work_syntax_{round_number}",
                           build_config)
            assert isinstance(syntax, DeployFailure)
            observed["code_syntax"].add(syntax.category)

            phantom = build(phantom_project, tmp_path / f"work_phantom_{round_number}",
                            build_config)
            assert isinstance(phantom, DeployFailure)
            observed["code_phantom_import"].add(phantom.category)
    finally:
        stop.set()
        thread.join(timeout=2)
        for conn in held_connections:
            conn.close()
        hung.close()
        for sock in held_ports:
            sock.close()

    assert observed == {name: {name} for name in observed}
