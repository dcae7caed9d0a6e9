"""Command-line entry points.

Verbs mirror the run lifecycle: `curate` builds the corpus, `evaluate`
scores one model's generated projects, `aggregate` folds evidence into the
final reports, `agree` measures pairwise agreement between two judgement
files, and `attribute` prints the failure split.  Credentials come only
from environment variables (named in the config); everything else is
config-file or flag.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .analytics import agreement_rate, pairwise_from_ranking, pairwise_from_scores
from .assets import verify_assets
from .browser import FakeBrowser
from .clients import HttpJudge, IdentityTranslator
from .config import load_config
from .corpus import QueryRecord, read_corpus
from .dedup import read_query_csv
from .deploy import MODE_HTML, MODE_REACT, ProjectInput
from .mocks import DryRunJudge
from .orchestrator import evaluate_model, finalize_reports, run_data_pipeline

logger = logging.getLogger(__name__)


def _load_records(path: Path) -> list[QueryRecord]:
    """Raw queries from JSONL ({"id", "text", ...}) or CSV (query column)."""
    if path.suffix.lower() == ".csv":
        return [QueryRecord(id=qid, text=text) for qid, text in read_query_csv(path)]
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            records.append(
                QueryRecord(
                    id=payload["id"],
                    text=payload["text"],
                    source_channel=payload.get("source_channel", "naturalistic"),
                    language=payload.get("language", "en"),
                )
            )
    return records


def _scan_projects(root: Path) -> list[ProjectInput]:
    """One project per subdirectory: index.html alone, or a build manifest."""
    projects = []
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            continue
        manifest = entry / "package.json"
        index = entry / "index.html"
        if manifest.is_file():
            projects.append(ProjectInput(query_id=entry.name, mode=MODE_REACT, root=entry))
        elif index.is_file():
            projects.append(
                ProjectInput(
                    query_id=entry.name,
                    mode=MODE_HTML,
                    html=index.read_text(encoding="utf-8"),
                )
            )
        else:
            logger.warning("skipping %s: neither package.json nor index.html", entry)
    return projects


def _pairwise_from_file(path: Path) -> dict:
    payload = json.loads(path.read_text(encoding="utf-8"))
    if "scores" in payload:
        return pairwise_from_scores(payload["scores"])
    if "ranking" in payload:
        return pairwise_from_ranking(payload["ranking"])
    raise SystemExit(f"{path}: expected a 'scores' or 'ranking' key")


def _cmd_curate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = _load_records(Path(args.input))
    if args.dry_run:
        judge = DryRunJudge()
        translator = IdentityTranslator()
    else:
        if not config.judge.endpoint:
            raise SystemExit("config must set a judge endpoint unless --dry-run is given")
        judge = HttpJudge(config.judge)
        translator = IdentityTranslator()
    report = run_data_pipeline(
        records,
        args.run_dir,
        judge,
        translator,
        config=config,
        run_id=args.run_id,
    )
    print(f"input records:     {report.input_count}")
    print(f"after dedup:       {report.after_dedup}")
    print(f"accepted by gate:  {report.accepted}")
    print(f"rejected:          {report.rejected}")
    print(f"routed to review:  {report.routed}")
    print(f"curation errors:   {report.curation_errors}")
    print(f"final corpus:      {report.final_count}")
    for language, count in report.language_counts.items():
        print(f"  {language}: {count}")
    print(f"corpus written to: {report.corpus_path}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.workers:
        config = replace(config, evaluation=replace(config.evaluation, workers=args.workers))
    projects = _scan_projects(Path(args.projects))
    if not projects:
        raise SystemExit(f"no projects found under {args.projects}")
    records = read_corpus(args.queries)
    query_texts = {r.id: r.text for r in records}

    if args.dry_run:
        judge = DryRunJudge()
        agent = DryRunJudge()

        def browser_factory():
            return FakeBrowser()

    else:
        if not args.browser_ws:
            raise SystemExit("--browser-ws is required unless --dry-run is given")
        if not config.judge.endpoint or not config.agent.endpoint:
            raise SystemExit("config must set judge and agent endpoints unless --dry-run is given")
        judge = HttpJudge(config.judge)
        agent = HttpJudge(config.agent)

        def browser_factory():
            from .browser import CdpBrowser

            return CdpBrowser(args.browser_ws)

    inject_script = ""
    if args.inject_script:
        inject_script = Path(args.inject_script).read_text(encoding="utf-8")

    report = evaluate_model(
        args.run_dir,
        args.model,
        projects,
        query_texts,
        judge,
        agent,
        browser_factory,
        config=config,
        run_id=args.run_id,
        inject_script=inject_script,
    )
    scored = len(report.scorecards)
    print(f"model {report.model}: {scored}/{len(report.outcomes)} scored")
    breakdown = report.breakdown()
    if breakdown.failure_total:
        print(
            f"failures: {breakdown.failure_total} "
            f"(infrastructure {breakdown.infrastructure_total}, "
            f"code {breakdown.code_total})"
        )
        for category, count in sorted(breakdown.counts.items()):
            print(f"  {category}: {count}")
    return 0


def _cmd_aggregate(args: argparse.Namespace) -> int:
    rows = finalize_reports(args.run_dir)
    if not rows:
        print("no scorecards found")
        return 1
    print(f"{'rank':<5}{'model':<28}{'queries':<9}{'functional':<12}{'aesthetics':<12}total")
    for rank, row in enumerate(rows, start=1):
        print(
            f"{rank:<5}{row.model:<28}{row.queries:<9}"
            f"{row.functional:<12.4f}{row.aesthetics:<12.4f}{row.total:.4f}"
        )
    return 0


def _cmd_agree(args: argparse.Namespace) -> int:
    left = _pairwise_from_file(Path(args.left))
    right = _pairwise_from_file(Path(args.right))
    rate = agreement_rate(left, right)
    print(f"pairs compared: {len(left)}")
    print(f"agreement: {rate:.2f}%")
    return 0


def _cmd_attribute(args: argparse.Namespace) -> int:
    failures_path = Path(args.run_dir) / "reports" / "failures.json"
    if not failures_path.is_file():
        finalize_reports(args.run_dir)
    if not failures_path.is_file():
        print("no failure report available")
        return 1
    attribution = json.loads(failures_path.read_text(encoding="utf-8"))
    for model, payload in attribution.items():
        print(
            f"{model}: {payload['failure_total']}/{payload['attempts']} failed "
            f"(infrastructure {payload['infrastructure_total']}, "
            f"code {payload['code_total']})"
        )
        for category, count in payload["counts"].items():
            print(f"  {category}: {count}")
    return 0


def _cmd_verify_assets(args: argparse.Namespace) -> int:
    for name, digest in verify_assets().items():
        print(f"{name}: {digest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="webeval",
        description="Reference-free evaluation harness for generated web apps.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    curate = sub.add_parser("curate", help="run the data curation pipeline")
    curate.add_argument("--input", required=True, help="raw queries (JSONL or CSV)")
    curate.add_argument("--run-dir", required=True, help="run directory")
    curate.add_argument("--config", default=None, help="YAML config file")
    curate.add_argument("--run-id", default="pipeline", help="run identifier")
    curate.add_argument("--dry-run", action="store_true", help="offline deterministic clients")
    curate.set_defaults(fn=_cmd_curate)

    evaluate = sub.add_parser("evaluate", help="evaluate one model's projects")
    evaluate.add_argument("--projects", required=True, help="directory of generated projects")
    evaluate.add_argument("--queries", required=True, help="curated corpus JSONL")
    evaluate.add_argument("--model", required=True, help="model name for reports")
    evaluate.add_argument("--run-dir", required=True, help="run directory")
    evaluate.add_argument("--config", default=None, help="YAML config file")
    evaluate.add_argument("--run-id", default="evaluation", help="run identifier")
    evaluate.add_argument("--workers", type=int, default=0, help="override worker count")
    evaluate.add_argument("--browser-ws", default="", help="DevTools websocket URL")
    evaluate.add_argument("--inject-script", default="",
                          help="page instrumentation bundle added to every page")
    evaluate.add_argument("--dry-run", action="store_true", help="offline deterministic clients")
    evaluate.set_defaults(fn=_cmd_evaluate)

    aggregate = sub.add_parser("aggregate", help="write leaderboard and failure reports")
    aggregate.add_argument("--run-dir", required=True)
    aggregate.set_defaults(fn=_cmd_aggregate)

    agree = sub.add_parser("agree", help="pairwise agreement between two judgement files")
    agree.add_argument("--left", required=True, help="JSON with 'scores' or 'ranking'")
    agree.add_argument("--right", required=True, help="JSON with 'scores' or 'ranking'")
    agree.set_defaults(fn=_cmd_agree)

    attribute = sub.add_parser("attribute", help="print the failure attribution split")
    attribute.add_argument("--run-dir", required=True)
    attribute.set_defaults(fn=_cmd_attribute)

    verify = sub.add_parser("verify-assets", help="check prompt asset integrity")
    verify.set_defaults(fn=_cmd_verify_assets)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
