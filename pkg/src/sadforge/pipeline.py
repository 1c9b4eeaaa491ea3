"""Stage runners: each consumes its predecessor's artifacts and writes its
own atomically, so any stage can be re-run or resumed without redoing work.

Scans are processed in parallel (thread pool, LLM calls are I/O bound) but
results are always written in sorted scan order, which keeps every artifact
byte-deterministic for a fixed seed and scripted provider.
"""

from __future__ import annotations

import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

from . import catalog as catalog_mod
from .config import PipelineConfig
from .dialogue import DialogueConfig, InstructionParseFailure, Transcript, run_dialogue
from .emitter import (
    SadRecord,
    SplitManifest,
    emit_samples,
    emit_training_manifest,
    split as split_scans,
    stats as compute_stats,
    validate_sample,
)
from .gateway import Gateway
from .prompts import PRUNER, SCENARIO as SCENARIO_ROLE
from .pruning import DecisionJournal, SubsetProposal, apply_decision, auto_approve, propose_subset
from .scenarios import ScenarioSet, build_scenario_set
from .sgl import parse_sgl, serialize_sgl
from .workspace import MissingPredecessor, Workspace, atomic_write_text, read_json, write_json

logger = logging.getLogger(__name__)


class StageFailure(Exception):
    """A stage aborted; carries the (scan, scenario) unit that broke."""

    def __init__(self, stage: str, key: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed at {key}: {cause}")
        self.stage = stage
        self.key = key
        self.cause = cause


class ReviewPending(Exception):
    """Undecided proposals block prune-apply outside auto mode."""

    def __init__(self, pending: list):
        super().__init__(f"{len(pending)} proposals await review decisions")
        self.pending = pending


class Runner:
    def __init__(self, config: PipelineConfig, gateway_factory: Optional[Callable[[], Gateway]] = None):
        self.config = config
        self.workspace = Workspace(config.workspace).ensure()
        self._gateway_factory = gateway_factory
        self._gateway: Optional[Gateway] = None

    # ---- shared helpers ----------------------------------------------------

    def gateway(self) -> Gateway:
        if self._gateway is None:
            if self._gateway_factory is not None:
                self._gateway = self._gateway_factory()
            else:
                self._gateway = self.config.build_gateway(log_path=self.workspace.gateway_log_path)
        return self._gateway

    def journal(self) -> DecisionJournal:
        return DecisionJournal(self.workspace.decisions_path)

    def _require(self, stage: str, predicate: bool, needed: str) -> None:
        if not predicate:
            raise MissingPredecessor(stage, needed)

    def catalog_graphs(self) -> dict:
        doc = read_json(self.workspace.catalog_path)
        return {record["scan_id"]: parse_sgl(record["sgl"]) for record in doc["records"]}

    def _map_scans(self, stage: str, scan_ids: list, work: Callable[[str], None]) -> None:
        """Run one unit per scan with the configured parallelism."""
        errors: list = []

        def guarded(scan_id: str) -> None:
            try:
                work(scan_id)
            except StageFailure:
                raise
            except Exception as exc:
                raise StageFailure(stage, scan_id, exc) from exc

        if self.config.parallelism == 1 or len(scan_ids) <= 1:
            for scan_id in scan_ids:
                guarded(scan_id)
            return
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            futures = {pool.submit(guarded, scan_id): scan_id for scan_id in scan_ids}
            for future in futures:
                try:
                    future.result()
                except StageFailure as exc:
                    errors.append(exc)
        if errors:
            raise errors[0]

    # ---- stages --------------------------------------------------------------

    def run_ingest(self) -> dict:
        config = self.config
        if self.workspace.catalog_path.exists():
            return read_json(self.workspace.catalog_path)
        if config.objects_path is None or config.relations_path is None:
            raise MissingPredecessor("ingest", "sources.objects and sources.relations in the config")
        records = catalog_mod.load_catalog_files(config.objects_path, config.relations_path)
        stats = catalog_mod.catalog_stats(records)
        doc = {
            "records": [
                {
                    "scan_id": record.scan_id,
                    "sgl": serialize_sgl(record.graph),
                    "source_meta": record.source_meta,
                }
                for record in records
            ],
            "stats": {
                "scan_count": stats.scan_count,
                "distinct_object_classes": stats.distinct_object_classes,
                "distinct_attributes": stats.distinct_attributes,
                "distinct_relation_predicates": stats.distinct_relation_predicates,
            },
        }
        write_json(self.workspace.catalog_path, doc)
        return doc

    def run_scenarios(self) -> None:
        ws = self.workspace
        self._require("scenarios", ws.catalog_path.exists(), "ingest")
        graphs = self.catalog_graphs()
        agents = self.config.agents()
        pending = [s for s in sorted(graphs) if not ws.scenarios_path(s).exists()]

        def work(scan_id: str) -> None:
            scenario_set = build_scenario_set(
                scan_id,
                graphs[scan_id],
                self.gateway(),
                agents[SCENARIO_ROLE],
                k=self.config.select_k,
                session=scan_id,
            )
            write_json(ws.scenarios_path(scan_id), scenario_set.to_doc())

        self._map_scans("scenarios", pending, work)

    def run_prune_propose(self) -> None:
        ws = self.workspace
        self._require("prune-propose", ws.catalog_path.exists(), "ingest")
        graphs = self.catalog_graphs()
        missing = [s for s in sorted(graphs) if not ws.scenarios_path(s).exists()]
        self._require("prune-propose", not missing, f"scenarios for {len(missing)} scans")
        agents = self.config.agents()
        pending = [s for s in sorted(graphs) if not ws.proposals_path(s).exists()]

        def work(scan_id: str) -> None:
            scenario_set = ScenarioSet.from_doc(read_json(ws.scenarios_path(scan_id)))
            proposals = []
            for index, scenario in enumerate(scenario_set.selected_scenarios()):
                proposal = propose_subset(
                    scan_id,
                    index,
                    graphs[scan_id],
                    scenario,
                    self.gateway(),
                    agents[PRUNER],
                    session=scan_id,
                )
                proposals.append(proposal.to_doc())
            write_json(ws.proposals_path(scan_id), proposals)

        self._map_scans("prune-propose", pending, work)

    def pending_reviews(self) -> list:
        """(scan_id, scenario_index) pairs with a proposal but no decision."""
        ws = self.workspace
        journal = self.journal()
        pending = []
        for scan_id in sorted(self.catalog_graphs()):
            path = ws.proposals_path(scan_id)
            if not path.exists():
                continue
            for doc in read_json(path):
                proposal = SubsetProposal.from_doc(doc)
                if journal.get(proposal.scan_id, proposal.scenario_index) is None:
                    pending.append((proposal.scan_id, proposal.scenario_index))
        return pending

    def run_prune_apply(self) -> None:
        ws = self.workspace
        graphs = self.catalog_graphs()
        missing = [s for s in sorted(graphs) if not ws.proposals_path(s).exists()]
        self._require("prune-apply", ws.catalog_path.exists() and not missing, "prune-propose")
        journal = self.journal()
        if self.config.review_mode == "auto":
            for scan_id in sorted(graphs):
                for doc in read_json(ws.proposals_path(scan_id)):
                    proposal = SubsetProposal.from_doc(doc)
                    if journal.get(proposal.scan_id, proposal.scenario_index) is None:
                        journal.record(auto_approve(proposal, self.config.review_mode))
        else:
            pending = self.pending_reviews()
            if pending:
                raise ReviewPending(pending)

        def work(scan_id: str) -> None:
            pruned = []
            for doc in read_json(ws.proposals_path(scan_id)):
                proposal = SubsetProposal.from_doc(doc)
                decision = journal.get(proposal.scan_id, proposal.scenario_index)
                if decision is None:
                    raise StageFailure("prune-apply", f"({scan_id}, {proposal.scenario_index})",
                                       ReviewPending([(scan_id, proposal.scenario_index)]))
                graph = apply_decision(graphs[scan_id], decision)
                pruned.append({"scenario_index": proposal.scenario_index, "sgl": serialize_sgl(graph)})
            write_json(ws.pruned_path(scan_id), pruned)

        pending_scans = [s for s in sorted(graphs) if not ws.pruned_path(s).exists()]
        self._map_scans("prune-apply", pending_scans, work)

    def run_dialogue_stage(self) -> None:
        ws = self.workspace
        graphs = self.catalog_graphs()
        missing = [s for s in sorted(graphs) if not ws.pruned_path(s).exists()]
        self._require("dialogue", ws.catalog_path.exists() and not missing, "prune-apply")
        dialogue_config = DialogueConfig(
            agents=self.config.agents(),
            max_rounds=self.config.max_rounds,
            json_retry_budget=self.config.json_retry_budget,
            reviewer_enabled=self.config.reviewer_enabled,
        )
        pending = [s for s in sorted(graphs) if not ws.records_path(s).exists()]

        def work(scan_id: str) -> None:
            scenario_set = ScenarioSet.from_doc(read_json(ws.scenarios_path(scan_id)))
            selected = scenario_set.selected_scenarios()
            pruned_by_index = {
                entry["scenario_index"]: parse_sgl(entry["sgl"])
                for entry in read_json(ws.pruned_path(scan_id))
            }
            records = []
            for index, scenario in enumerate(selected):
                pruned_graph = pruned_by_index[index]
                try:
                    transcript, final = run_dialogue(
                        pruned_graph,
                        graphs[scan_id],
                        scenario,
                        self.gateway(),
                        dialogue_config,
                        session=scan_id,
                    )
                    record = SadRecord(
                        scan_id=scan_id,
                        scenario_index=index,
                        scenario=scenario,
                        pruned_graph=pruned_graph,
                        full_graph_ref=scan_id,
                        transcript=transcript,
                        final_instructions=final,
                        truncated=transcript.truncated,
                        reviewer_used=transcript.reviewer_used,
                    )
                except InstructionParseFailure as exc:
                    logger.warning("(%s, %d): dialogue failed: %s", scan_id, index, exc)
                    record = SadRecord(
                        scan_id=scan_id,
                        scenario_index=index,
                        scenario=scenario,
                        pruned_graph=pruned_graph,
                        full_graph_ref=scan_id,
                        transcript=Transcript(),
                        final_instructions=None,
                        failed=True,
                    )
                records.append(record.to_doc())
            write_json(ws.records_path(scan_id), records)

        self._map_scans("dialogue", pending, work)

    def run_split(self) -> SplitManifest:
        ws = self.workspace
        if ws.split_path.exists():
            return SplitManifest.from_doc(read_json(ws.split_path))
        self._require("split", ws.catalog_path.exists(), "ingest")
        manifest = split_scans(ws.scan_ids(), ratio=self.config.split_ratio, seed=self.config.seed)
        write_json(ws.split_path, manifest.to_doc())
        return manifest

    def run_emit(self) -> dict:
        ws = self.workspace
        if ws.train_path.exists() and ws.test_path.exists() and ws.train_manifest_path.exists():
            return {"skipped": True}
        graphs = self.catalog_graphs()
        missing = [s for s in sorted(graphs) if not ws.records_path(s).exists()]
        self._require("emit", not missing, "dialogue")
        self._require("emit", ws.split_path.exists(), "split")
        manifest = SplitManifest.from_doc(read_json(ws.split_path))
        lines = {"train": [], "test": []}
        skipped = 0
        for scan_id in sorted(graphs):
            side = manifest.split_of(scan_id)
            for doc in read_json(ws.records_path(scan_id)):
                record = SadRecord.from_doc(doc)
                if record.failed:
                    skipped += 1
                    continue
                rng = random.Random(f"{self.config.seed}:{scan_id}:{record.scenario_index}")
                for sample in emit_samples(record, graphs[scan_id], rng):
                    sample_doc = sample.to_doc()
                    problems = validate_sample(sample_doc)
                    if problems:
                        raise StageFailure("emit", f"({scan_id}, {record.scenario_index})",
                                           ValueError("; ".join(problems)))
                    lines[side].append(json.dumps(sample_doc, sort_keys=True))
        atomic_write_text(ws.train_path, "".join(line + "\n" for line in lines["train"]))
        atomic_write_text(ws.test_path, "".join(line + "\n" for line in lines["test"]))
        write_json(ws.train_manifest_path, emit_training_manifest(self.config.training_overrides))
        report = {"train_samples": len(lines["train"]), "test_samples": len(lines["test"]), "skipped_records": skipped}
        if skipped:
            logger.warning("emit skipped %d failed records", skipped)
        return report

    def run_stats(self) -> dict:
        ws = self.workspace
        if ws.stats_path.exists():
            return read_json(ws.stats_path)
        self._require("stats", ws.train_path.exists() and ws.test_path.exists(), "emit")
        self._require("stats", ws.split_path.exists(), "split")
        manifest = SplitManifest.from_doc(read_json(ws.split_path))
        samples = []
        for path in (ws.train_path, ws.test_path):
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    samples.append(json.loads(line))
        doc = compute_stats(samples, manifest).to_doc()
        write_json(ws.stats_path, doc)
        return doc

    # ---- orchestration ---------------------------------------------------------

    def run_all(self, progress: Callable[[str], None] = lambda msg: None) -> str:
        """Run every stage in order; returns 'done' or 'review-pending'."""
        for name, step in (
            ("ingest", self.run_ingest),
            ("scenarios", self.run_scenarios),
            ("prune-propose", self.run_prune_propose),
        ):
            progress(name)
            step()
        if self.config.review_mode != "auto":
            pending = self.pending_reviews()
            if pending:
                progress("review")
                return "review-pending"
        for name, step in (
            ("prune-apply", self.run_prune_apply),
            ("dialogue", self.run_dialogue_stage),
            ("split", self.run_split),
            ("emit", self.run_emit),
            ("stats", self.run_stats),
        ):
            progress(name)
            step()
        return "done"
