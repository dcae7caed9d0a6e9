"""Run orchestration for both halves of the harness.

`run_data_pipeline` takes raw query records through dedup, admissibility
gating, classification, difficulty grading, and language rebalancing, with
a corpus snapshot after every stage so a killed run resumes from the last
completed stage without re-querying the judge.

`evaluate_model` runs the per-query evaluation: deploy, static perception,
agent-driven interaction, problem detection, and score adjustment.  Each
query is isolated; one query failing never takes down the run.  Completed
queries leave a scorecard (or a failure record) in the write-once evidence
store, which is both the resume marker and the input to the final reports.
"""

from __future__ import annotations

import json
import logging
import re
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .analytics import (
    FailureBreakdown,
    LeaderboardRow,
    attribute_failures,
    build_leaderboard,
    write_leaderboard_csv,
)
from .assets import verify_assets
from .browser import CONSOLE_ERRORS_EXPR, Browser
from .clients import JudgeClient, MalformedOutput, TranslationClient
from .config import RunConfig
from .corpus import (
    QueryRecord,
    TaxonomyTree,
    overall_difficulty,
    read_corpus,
    validate_corpus,
    write_corpus,
)
from .curation import classify, evaluate_admissibility, gate, grade_difficulty, write_review_queue
from .dedup import DedupConfig, run_dedup
from .deploy import (
    BuildConfig,
    BuildResult,
    DeployFailure,
    ProjectInput,
    Runnable,
    build,
    probe,
    serve,
)
from .driver import SessionBudget, filter_console_errors, run_session
from .rebalance import LanguageTargets, TranslationCache, rebalance_corpus
from .scoring import (
    ScoreCard,
    adjust_scores,
    build_scorecard,
    detect_problems,
    static_score,
)
from .store import EvidenceStore

logger = logging.getLogger(__name__)

PIPELINE_STAGES = ("dedup", "gate", "classify", "difficulty", "rebalance")

# Run ids become file names (manifest-<run_id>.json), so keep them flat.
_RUN_ID = re.compile(r"[A-Za-z0-9._-]+")


class OrchestratorError(Exception):
    """Raised on run-level problems: manifest mismatch, bad inputs."""


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """Append-only stage ledger for one run.

    The manifest pins the config snapshot hash and the prompt-asset hashes
    at creation; re-opening it with either changed is an error, because
    resuming under different settings (or edited prompts) would silently
    mix two runs.  The ledger only ever grows.
    """

    def __init__(self, path: Path, run_id: str, config_hash: str, clock: Callable[[], str]):
        self.path = path
        self.run_id = run_id
        self.config_hash = config_hash
        self.clock = clock
        self.created_at = clock()
        self.assets: dict[str, str] = {}
        self.events: list[dict] = []
        self._lock = threading.Lock()

    @classmethod
    def open(
        cls,
        run_root: str | Path,
        run_id: str,
        config_hash: str,
        clock: Callable[[], str] = _utc_now,
    ) -> "RunManifest":
        run_root = Path(run_root)
        run_root.mkdir(parents=True, exist_ok=True)
        if not _RUN_ID.fullmatch(run_id):
            raise OrchestratorError(f"invalid run id: {run_id!r}")
        # One ledger per run id, so a curation run and an evaluation run can
        # share a directory without tripping over each other's pins.
        path = run_root / f"manifest-{run_id}.json"
        manifest = cls(path, run_id, config_hash, clock)
        manifest.assets = verify_assets()
        if path.is_file():
            payload = json.loads(path.read_text(encoding="utf-8"))
            if payload["run_id"] != run_id:
                raise OrchestratorError(
                    f"run directory belongs to run {payload['run_id']!r}, not {run_id!r}"
                )
            if payload["config_hash"] != config_hash:
                raise OrchestratorError(
                    "config changed since this run started; resuming would mix "
                    f"two runs (manifest {payload['config_hash'][:12]}, "
                    f"current {config_hash[:12]})"
                )
            if payload.get("assets", manifest.assets) != manifest.assets:
                raise OrchestratorError(
                    "prompt assets changed since this run started; resuming "
                    "would mix judgements from two prompt versions"
                )
            manifest.created_at = payload["created_at"]
            manifest.events = list(payload["events"])
        else:
            manifest._save()
        return manifest

    def _save(self) -> None:
        payload = {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "created_at": self.created_at,
            "assets": self.assets,
            "events": self.events,
        }
        tmp = self.path.with_name(self.path.name + ".tmp")
        tmp.write_text(
            json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        tmp.replace(self.path)

    def record(self, stage: str, status: str, detail: str = "") -> None:
        with self._lock:
            self.events.append(
                {"stage": stage, "status": status, "detail": detail, "at": self.clock()}
            )
            self._save()

    def stage_completed(self, stage: str) -> bool:
        return any(
            e["stage"] == stage and e["status"] == "completed" for e in self.events
        )


@dataclass
class PipelineReport:
    input_count: int
    after_dedup: int
    accepted: int
    rejected: int
    routed: int
    curation_errors: int
    final_count: int
    language_counts: dict[str, int]
    corpus_path: Path


def _append_jsonl(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(payload, ensure_ascii=False, sort_keys=True))
        fh.write("\n")


def run_data_pipeline(
    records: Sequence[QueryRecord],
    run_root: str | Path,
    judge: JudgeClient,
    translator: TranslationClient,
    config: RunConfig = RunConfig(),
    tree: TaxonomyTree | None = None,
    run_id: str = "pipeline",
    clock: Callable[[], str] = _utc_now,
) -> PipelineReport:
    """Raw records in, curated corpus out, one snapshot per stage."""
    run_root = Path(run_root)
    curation_dir = run_root / "curation"
    curation_dir.mkdir(parents=True, exist_ok=True)
    tree = tree or TaxonomyTree.default()
    manifest = RunManifest.open(run_root, run_id, config.snapshot_hash(), clock)

    ids = [r.id for r in records]
    if len(ids) != len(set(ids)):
        raise OrchestratorError("input records carry duplicate ids")
    by_id = {r.id: r for r in records}

    errors_path = curation_dir / "curation_errors.jsonl"
    stats = {"rejected": 0, "routed": 0, "errors": 0}

    def stage(name: str, compute: Callable[[], list[QueryRecord]]) -> list[QueryRecord]:
        snapshot = curation_dir / f"stage_{name}.jsonl"
        if manifest.stage_completed(name) and snapshot.is_file():
            logger.info("pipeline stage %s already completed, loading snapshot", name)
            return read_corpus(snapshot)
        manifest.record(name, "started")
        result = compute()
        write_corpus(result, snapshot)
        manifest.record(name, "completed", detail=f"{len(result)} records")
        return result

    def do_dedup() -> list[QueryRecord]:
        entries = [(r.id, r.text) for r in records]
        dedup_config = DedupConfig(
            ngram_size=config.pipeline.ngram_size,
            hamming_threshold=config.pipeline.hamming_threshold,
            cosine_threshold=config.pipeline.cosine_threshold,
        )
        result = run_dedup(entries, dedup_config, out_dir=curation_dir)
        kept = []
        for record in records:
            if result.raw_to_semantic.get(record.id) == record.id:
                record.append_audit("dedup", "kept", clock())
                kept.append(record)
        return kept

    def do_gate() -> list[QueryRecord]:
        review_path = curation_dir / "review_queue.jsonl"
        if review_path.exists():
            review_path.unlink()
        accepted = []
        routed_entries = []
        for record in current:
            try:
                verdict = evaluate_admissibility(record.text, judge, config.judge)
            except MalformedOutput as exc:
                stats["errors"] += 1
                _append_jsonl(
                    errors_path,
                    {"id": record.id, "stage": "gate", "error": str(exc)},
                )
                continue
            decision = gate(verdict)
            record.append_audit("admissibility", decision.decision.value, clock())
            if decision.decision.value == "accept":
                accepted.append(record)
            elif decision.decision.value == "reject":
                stats["rejected"] += 1
            else:
                stats["routed"] += 1
                routed_entries.append((record.id, record.text, verdict, decision))
        if routed_entries:
            write_review_queue(review_path, routed_entries)
        return accepted

    def do_classify() -> list[QueryRecord]:
        kept = []
        for record in current:
            try:
                result = classify(record.text, tree, judge, config.judge)
            except MalformedOutput as exc:
                stats["errors"] += 1
                _append_jsonl(
                    errors_path,
                    {"id": record.id, "stage": "classify", "error": str(exc)},
                )
                continue
            record.leaf = result.leaf
            record.append_audit("classify", result.leaf, clock())
            kept.append(record)
        return kept

    def do_difficulty() -> list[QueryRecord]:
        kept = []
        for record in current:
            try:
                profile = grade_difficulty(record.text, judge, config.judge)
            except MalformedOutput as exc:
                stats["errors"] += 1
                _append_jsonl(
                    errors_path,
                    {"id": record.id, "stage": "difficulty", "error": str(exc)},
                )
                continue
            record.difficulty = profile
            record.tier = overall_difficulty(profile)
            record.append_audit("difficulty", record.tier, clock())
            kept.append(record)
        return kept

    def do_rebalance() -> list[QueryRecord]:
        targets = config.pipeline.language_targets
        if not targets:
            return list(current)
        cache = TranslationCache(curation_dir / "translation_cache.jsonl")
        result = rebalance_corpus(
            current,
            tree,
            LanguageTargets(targets=dict(targets)),
            config.pipeline.seed,
            translator,
            cache,
            clock,
        )
        return result.records

    input_count = len(records)
    current = stage("dedup", do_dedup)
    after_dedup = len(current)
    current = stage("gate", do_gate)
    accepted = len(current)
    current = stage("classify", do_classify)
    current = stage("difficulty", do_difficulty)
    current = stage("rebalance", do_rebalance)

    corpus_path = curation_dir / "corpus.jsonl"
    write_corpus(current, corpus_path)
    issues = validate_corpus(current, tree)
    for issue in issues:
        logger.warning("corpus validation: %s", issue)
    manifest.record("pipeline", "completed", detail=f"{len(current)} records")

    language_counts: dict[str, int] = {}
    for record in current:
        language_counts[record.language] = language_counts.get(record.language, 0) + 1

    # Snapshot-restored stages keep their drop counts in the manifest, not
    # in `stats`; report what this invocation actually observed.
    return PipelineReport(
        input_count=input_count,
        after_dedup=after_dedup,
        accepted=accepted,
        rejected=stats["rejected"],
        routed=stats["routed"],
        curation_errors=stats["errors"],
        final_count=len(current),
        language_counts=dict(sorted(language_counts.items())),
        corpus_path=corpus_path,
    )


@dataclass
class QueryOutcome:
    query_id: str
    status: str  # scored | deploy_failed | error
    scorecard: ScoreCard | None = None
    failure_category: str = ""
    error: str = ""


@dataclass
class EvaluationReport:
    model: str
    outcomes: list[QueryOutcome] = field(default_factory=list)

    @property
    def scorecards(self) -> list[ScoreCard]:
        return [o.scorecard for o in self.outcomes if o.scorecard is not None]

    @property
    def failure_categories(self) -> list[str]:
        return [o.failure_category for o in self.outcomes if o.failure_category]

    def breakdown(self) -> FailureBreakdown:
        return attribute_failures(self.failure_categories, attempts=len(self.outcomes))


def _record_failure(
    store: EvidenceStore, model: str, query_id: str, failure: DeployFailure
) -> None:
    store.put_json(
        f"failures/{model}/{query_id}.json",
        {
            "query_id": query_id,
            "category": failure.category,
            "detail": failure.detail,
            "log_excerpt": failure.log_excerpt,
        },
    )


def evaluate_model(
    run_root: str | Path,
    model: str,
    projects: Sequence[ProjectInput],
    query_texts: Mapping[str, str],
    judge: JudgeClient,
    agent: JudgeClient,
    browser_factory: Callable[[], Browser],
    config: RunConfig = RunConfig(),
    run_id: str = "evaluation",
    inject_script: str = "",
    clock: Callable[[], str] = _utc_now,
) -> EvaluationReport:
    """Evaluate one model's generated projects end to end.

    Every project needs a query text.  Completed queries (scorecard,
    deploy-failure, or error record present) are skipped on resume; a
    query with partial evidence gets that evidence cleared and runs again.
    """
    run_root = Path(run_root)
    store = EvidenceStore(run_root / "evidence")
    manifest = RunManifest.open(run_root, run_id, config.snapshot_hash(), clock)

    missing = [p.query_id for p in projects if p.query_id not in query_texts]
    if missing:
        raise OrchestratorError(f"projects without query text: {missing[:5]}")

    build_config = (
        BuildConfig(commands=config.evaluation.build_commands)
        if config.evaluation.build_commands
        else BuildConfig()
    )

    def evaluate_one(project: ProjectInput) -> QueryOutcome:
        query_id = project.query_id
        key = f"{model}/{query_id}"
        scorecard_key = f"scorecards/{key}.json"
        failure_key = f"failures/{key}.json"
        error_key = f"errors/{key}.json"

        if store.exists(scorecard_key):
            card = ScoreCard.from_dict(store.get_json(scorecard_key))
            return QueryOutcome(query_id, "scored", scorecard=card)
        if store.exists(failure_key):
            payload = store.get_json(failure_key)
            return QueryOutcome(query_id, "deploy_failed", failure_category=payload["category"])
        if store.exists(error_key):
            payload = store.get_json(error_key)
            return QueryOutcome(query_id, "error", error=payload["error"])

        # Partial evidence from an interrupted attempt is invalid: clear it.
        for prefix in (f"interactions/{key}", f"static/{key}", f"builds/{key}"):
            store.delete_prefix(prefix)

        workdir = run_root / "volatile" / "builds" / model / query_id
        if workdir.exists():
            shutil.rmtree(workdir)
        workdir.mkdir(parents=True)

        manifest.record(f"evaluate:{key}", "started")
        outcome = build(project, workdir, build_config)
        if isinstance(outcome, DeployFailure):
            _record_failure(store, model, query_id, outcome)
            manifest.record(f"evaluate:{key}", "completed", detail=f"deploy_failed:{outcome.category}")
            return QueryOutcome(query_id, "deploy_failed", failure_category=outcome.category)
        assert isinstance(outcome, BuildResult)
        store.put_text(f"builds/{key}/build.log", outcome.log)

        served = serve(
            outcome.artifact_dir, query_id, port_range=config.evaluation.port_range
        )
        if isinstance(served, DeployFailure):
            _record_failure(store, model, query_id, served)
            manifest.record(f"evaluate:{key}", "completed", detail=f"deploy_failed:{served.category}")
            return QueryOutcome(query_id, "deploy_failed", failure_category=served.category)
        store.put_json(
            f"builds/{key}/deployment.json",
            {
                "query_id": query_id,
                "url": served.url,
                "port": served.port,
                "artifact_dir": str(served.artifact_dir),
            },
        )

        try:
            probed = probe(served.url, timeout=config.evaluation.probe_timeout)
            if isinstance(probed, DeployFailure):
                _record_failure(store, model, query_id, probed)
                manifest.record(
                    f"evaluate:{key}", "completed", detail=f"deploy_failed:{probed.category}"
                )
                return QueryOutcome(query_id, "deploy_failed", failure_category=probed.category)
            assert isinstance(probed, Runnable)

            query_text = query_texts[query_id]
            browser = browser_factory()
            try:
                if inject_script:
                    browser.add_init_script(inject_script)
                browser.navigate(served.url)
                screenshot = browser.screenshot()
                raw_console = browser.evaluate(CONSOLE_ERRORS_EXPR) or []
                console = list(
                    filter_console_errors([str(e) for e in raw_console])
                )
                source = project.html if project.mode == "single_html" else probed.body

                static = static_score(
                    query_text, screenshot, source, console, judge, config.judge
                )
                store.put_json(
                    f"static/{key}.json",
                    {"scores": static.to_dict(), "console_errors": console},
                )

                package = run_session(
                    key,
                    served.url,
                    query_text,
                    agent,
                    browser,
                    config=config.agent,
                    budget=SessionBudget(max_steps=config.evaluation.max_steps),
                    seed=config.pipeline.seed,
                    store=store,
                    inject_script="",
                )

                detection = detect_problems(
                    query_text,
                    static,
                    package.interaction_summary_text(),
                    judge,
                    config.judge,
                )
                adjusted = adjust_scores(query_text, static, detection, judge, config.judge)
                card = build_scorecard(
                    query_id,
                    static,
                    detection,
                    adjusted,
                    tolerance=config.evaluation.discrepancy_tolerance,
                )
                store.put_json(scorecard_key, card.to_dict())
                manifest.record(f"evaluate:{key}", "completed", detail="scored")
                return QueryOutcome(query_id, "scored", scorecard=card)
            finally:
                browser.close()
        finally:
            served.stop()

    ordered = sorted(projects, key=lambda p: p.query_id)
    if config.evaluation.workers > 1:
        with ThreadPoolExecutor(max_workers=config.evaluation.workers) as pool:
            futures = [
                pool.submit(_isolated, evaluate_one, p, store, manifest, model)
                for p in ordered
            ]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_isolated(evaluate_one, p, store, manifest, model) for p in ordered]

    report = EvaluationReport(model=model, outcomes=outcomes)
    manifest.record(
        f"model:{model}",
        "completed",
        detail=f"{len(report.scorecards)}/{len(outcomes)} scored",
    )
    return report


def _isolated(
    evaluate_one: Callable[[ProjectInput], QueryOutcome],
    project: ProjectInput,
    store: EvidenceStore,
    manifest: RunManifest,
    model: str,
) -> QueryOutcome:
    """Per-query isolation: any failure becomes a durable error record."""
    try:
        return evaluate_one(project)
    except Exception as exc:  # noqa: BLE001 - the isolation boundary
        logger.exception("query %s failed", project.query_id)
        error_key = f"errors/{model}/{project.query_id}.json"
        if not store.exists(error_key):
            store.put_json(
                error_key,
                {"query_id": project.query_id, "error": f"{exc.__class__.__name__}: {exc}"},
            )
        manifest.record(f"evaluate:{model}/{project.query_id}", "failed", detail=str(exc))
        return QueryOutcome(project.query_id, "error", error=str(exc))


def finalize_reports(
    run_root: str | Path,
    combiner: Callable[[float, float], float] | None = None,
) -> list[LeaderboardRow]:
    """Fold all stored scorecards and failures into the final reports."""
    run_root = Path(run_root)
    store = EvidenceStore(run_root / "evidence")
    cards_by_model: dict[str, list[ScoreCard]] = {}
    failures_by_model: dict[str, list[str]] = {}
    attempts_by_model: dict[str, int] = {}

    for key in store.keys():
        parts = key.split("/")
        if key.startswith("scorecards/") and len(parts) == 3:
            model = parts[1]
            card = ScoreCard.from_dict(store.get_json(key))
            cards_by_model.setdefault(model, []).append(card)
            attempts_by_model[model] = attempts_by_model.get(model, 0) + 1
        elif key.startswith("failures/") and len(parts) == 3:
            model = parts[1]
            payload = store.get_json(key)
            failures_by_model.setdefault(model, []).append(payload["category"])
            attempts_by_model[model] = attempts_by_model.get(model, 0) + 1
        elif key.startswith("errors/") and len(parts) == 3:
            model = parts[1]
            attempts_by_model[model] = attempts_by_model.get(model, 0) + 1

    reports_dir = run_root / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)

    rows = build_leaderboard(cards_by_model, combiner) if cards_by_model else []
    write_leaderboard_csv(rows, reports_dir / "leaderboard.csv")

    attribution = {
        model: attribute_failures(
            failures_by_model.get(model, []), attempts_by_model.get(model, 0)
        ).to_dict()
        for model in sorted(attempts_by_model)
    }
    (reports_dir / "failures.json").write_text(
        json.dumps(attribution, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return rows


def run_benchmark(
    run_root: str | Path,
    corpus: Sequence[QueryRecord],
    projects_by_model: Mapping[str, Sequence[ProjectInput]],
    judge: JudgeClient,
    agent: JudgeClient,
    browser_factory: Callable[[], Browser],
    config: RunConfig = RunConfig(),
    run_id: str = "evaluation",
    inject_script: str = "",
    clock: Callable[[], str] = _utc_now,
    combiner: Callable[[float, float], float] | None = None,
) -> tuple[dict[str, EvaluationReport], list[LeaderboardRow]]:
    """Evaluate every model against the corpus and fold the final reports."""
    ids = [r.id for r in corpus]
    if len(ids) != len(set(ids)):
        raise OrchestratorError("corpus carries duplicate query ids")
    query_texts = {r.id: r.text for r in corpus}
    reports = {}
    for model in sorted(projects_by_model):
        reports[model] = evaluate_model(
            run_root,
            model,
            projects_by_model[model],
            query_texts,
            judge,
            agent,
            browser_factory,
            config=config,
            run_id=run_id,
            inject_script=inject_script,
            clock=clock,
        )
    rows = finalize_reports(run_root, combiner)
    return reports, rows
