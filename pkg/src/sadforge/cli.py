"""Command-line front end for the dataset pipeline.

Exit codes: 0 success, 2 configuration problems, 3 a stage failed while
running, 4 a gate blocked the command (missing predecessor artifacts, an
undecided review queue, or a held workspace lock).
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional

from .config import ConfigError, PipelineConfig, load_config
from .pipeline import ReviewPending, Runner, StageFailure
from .pruning import STATUS_APPROVED, AlreadyDecidedError, EmptySubsetError, ReviewDecision, utc_now
from .workspace import LockHeld, MissingPredecessor, WorkspaceLock

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_GATE = 4

STAGE_COMMANDS = {
    "ingest": "run_ingest",
    "scenarios": "run_scenarios",
    "prune-propose": "run_prune_propose",
    "prune-apply": "run_prune_apply",
    "dialogue": "run_dialogue_stage",
    "split": "run_split",
    "emit": "run_emit",
    "stats": "run_stats",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sadforge", description="Scene-graph instruction dataset pipeline")
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--workspace", help="workspace directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="run seed (overrides the config)")
    parser.add_argument("--mode", choices=("auto", "cli", "web"), help="review mode")
    parser.add_argument("--parallelism", type=int, help="concurrent scan workers")
    fresh = parser.add_mutually_exclusive_group()
    fresh.add_argument("--resume", action="store_true", help="reuse existing artifacts (default)")
    fresh.add_argument("--fresh", action="store_true", help="discard derived artifacts before running")
    parser.add_argument("--reviewer", action="store_true", default=None, help="enable the reviewer agent pass")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        sub.add_parser(name, help=f"run the {name} stage")
    sub.add_parser("run-all", help="run every stage in order")
    sub.add_parser("status", help="print per-stage progress")
    serve = sub.add_parser("review-serve", help="serve the review API and UI")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8321)
    return parser


def _load(args) -> PipelineConfig:
    return load_config(
        args.config,
        workspace=args.workspace,
        seed=args.seed,
        review_mode=args.mode,
        parallelism=args.parallelism,
        reviewer=args.reviewer,
    )


def _print_status(runner: Runner) -> None:
    journal = runner.journal()

    def decided_count() -> int:
        return len(journal.load())

    rows = runner.workspace.status_rows(decided_count)
    width = max(len(row["stage"]) for row in rows)
    for row in rows:
        digest = f"  {row['digest'][:12]}" if row["digest"] else ""
        print(f"{row['stage']:<{width}}  {row['state']:<8} {row['detail']}{digest}")


def _cli_review(runner: Runner) -> int:
    """Interactive decision entry: one prompt per pending proposal."""
    pending = runner.pending_reviews()
    if not pending:
        print("nothing to review")
        return EXIT_OK
    ws = runner.workspace
    journal = runner.journal()
    graphs = runner.catalog_graphs()
    from .pruning import SubsetProposal
    from .workspace import read_json

    for scan_id, scenario_index in pending:
        proposal = next(
            SubsetProposal.from_doc(doc)
            for doc in read_json(ws.proposals_path(scan_id))
            if doc["scenario_index"] == scenario_index
        )
        proposed = sorted(proposal.proposed_ids)
        print(f"\n[{scan_id} / scenario {scenario_index}] proposed object ids: {proposed}")
        raw = input("kept ids (comma-separated, empty = accept proposal): ").strip()
        try:
            kept = frozenset(int(part) for part in raw.split(",") if part.strip()) if raw else frozenset(proposed)
            unknown = kept - set(graphs[scan_id].object_ids())
            if unknown:
                raise ValueError(f"unknown object ids {sorted(unknown)}")
            decision = ReviewDecision(
                scan_id=scan_id,
                scenario_index=scenario_index,
                kept_ids=kept,
                reviewer="cli",
                decided_at=utc_now(),
                status=STATUS_APPROVED,
            )
            journal.record(decision)
        except (EmptySubsetError, AlreadyDecidedError, ValueError) as exc:
            print(f"rejected: {exc}")
            return EXIT_STAGE
    return EXIT_OK


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    runner = Runner(config)
    if args.fresh:
        runner.workspace.clear_derived()

    try:
        if args.command == "status":
            _print_status(runner)
            return EXIT_OK
        if args.command == "review-serve":
            return _serve(runner, config, args)
        with WorkspaceLock(runner.workspace, owner=f"cli:{args.command}"):
            if args.command == "run-all":
                outcome = runner.run_all(progress=lambda name: print(f"stage: {name}"))
                if outcome == "review-pending":
                    pending = runner.pending_reviews()
                    print(f"paused: {len(pending)} proposals await review", file=sys.stderr)
                    if config.review_mode == "cli":
                        code = _cli_review(runner)
                        if code != EXIT_OK:
                            return code
                        outcome = runner.run_all(progress=lambda name: print(f"stage: {name}"))
                    else:
                        print("run `sadforge review-serve` and submit decisions, then re-run run-all")
                        return EXIT_OK
                print(f"run-all: {outcome}")
                return EXIT_OK
            method = STAGE_COMMANDS[args.command]
            result = getattr(runner, method)()
            if isinstance(result, dict):
                for key, value in sorted(result.items()):
                    if not isinstance(value, (dict, list)):
                        print(f"{key}: {value}")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingPredecessor, ReviewPending, LockHeld) as exc:
        print(f"blocked: {exc}", file=sys.stderr)
        return EXIT_GATE
    except StageFailure as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


def _serve(runner: Runner, config: PipelineConfig, args) -> int:
    import uvicorn

    from .review_server import create_app

    app = create_app(runner.workspace, token=config.review_token, ui_dir=config.ui_dir)
    lock = WorkspaceLock(runner.workspace, owner="review-serve")
    try:
        lock.acquire()
    except LockHeld as exc:
        print(f"blocked: {exc}", file=sys.stderr)
        return EXIT_GATE
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    finally:
        lock.release()
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
