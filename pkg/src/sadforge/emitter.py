"""Turn dialogue records into instruction-tuning samples and dataset files.

Three sample families per record: the replayed conversation, the
scenario-to-steps pair, and graph pruning (full-to-pruned rewrite plus
yes/no object membership probes). Splitting is by scan, never by scenario,
so no environment leaks across train and test. Token counts default to
whitespace runs; the counter is pluggable because no particular tokenizer
is authoritative here.

All user/assistant phrasings live in the v1 template constants below;
bumping them is a dataset-version change, not a code tweak.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Optional

from .dialogue import InstructionSet, Transcript, detect_done
from .prompts import HUMANOID, ORACLE
from .scenarios import Scenario
from .sgl import SceneGraph, parse_sgl, serialize_sgl

FAMILY_CONVERSATION = "conversation"
FAMILY_STEPS = "steps"
FAMILY_PRUNE_GRAPH = "prune_graph"
FAMILY_MEMBERSHIP = "prune_membership"
FAMILIES = (FAMILY_CONVERSATION, FAMILY_STEPS, FAMILY_PRUNE_GRAPH, FAMILY_MEMBERSHIP)

MEMBERSHIP_CAP = 5
TEMPLATE_VERSION = "v1"

SYSTEM_TEMPLATE = (
    "You are a situational assistant with access to a scene graph describing "
    "the user's environment. Use the scene graph to give grounded, "
    "step-by-step guidance.\n\nScene graph: {sgl}"
)
CONVERSATION_USER_TEMPLATE = "Scenario: {description}\nHow should I proceed?"
STEPS_USER_TEMPLATE = "Scenario: {description}\nGive me step-by-step instructions."
PRUNE_SYSTEM = (
    "You are a situational assistant. Given a scene graph describing an "
    "environment and a scenario, you identify the objects that matter for "
    "the scenario."
)
PRUNE_USER_TEMPLATE = (
    "Scenario: {description}\nPrune the scene graph to get the objects "
    "relevant to this scenario: {sgl}"
)
MEMBERSHIP_USER_TEMPLATE = (
    "Scenario: {description}\nScene graph: {sgl}\n"
    "For this scenario, do I need the object {label}-{id}?"
)
MEMBERSHIP_YES_TEMPLATE = "Yes, the {label}-{id} is needed for this scenario."
MEMBERSHIP_NO_TEMPLATE = "No, the {label}-{id} is not needed for this scenario."


class EmitterError(ValueError):
    pass


class EmptyTranscript(EmitterError):
    pass


class EmptyInput(EmitterError):
    pass


class UnknownScan(EmitterError):
    pass


@dataclass
class SadRecord:
    """One finished dialogue: everything needed to emit its samples."""

    scan_id: str
    scenario_index: int
    scenario: Scenario
    pruned_graph: SceneGraph
    full_graph_ref: str
    transcript: Transcript
    final_instructions: Optional[InstructionSet]
    truncated: bool = False
    reviewer_used: bool = False
    failed: bool = False

    def __post_init__(self):
        if not self.failed and (self.final_instructions is None or len(self.final_instructions) == 0):
            raise ValueError("final_instructions required unless the record is flagged failed")

    def to_doc(self) -> dict:
        return {
            "scan_id": self.scan_id,
            "scenario_index": self.scenario_index,
            "scenario": {
                "description": self.scenario.description,
                "object_ids": list(self.scenario.involved_object_ids),
                "origin_index": self.scenario.origin_index,
            },
            "pruned_sgl": serialize_sgl(self.pruned_graph),
            "full_graph_ref": self.full_graph_ref,
            "transcript": self.transcript.to_doc(),
            "final_instructions": self.final_instructions.to_doc() if self.final_instructions else None,
            "flags": {
                "truncated": self.truncated,
                "reviewer_used": self.reviewer_used,
                "failed": self.failed,
            },
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SadRecord":
        scenario = Scenario(
            description=doc["scenario"]["description"],
            involved_object_ids=tuple(doc["scenario"]["object_ids"]),
            origin_index=doc["scenario"]["origin_index"],
        )
        final = doc.get("final_instructions")
        flags = doc["flags"]
        return cls(
            scan_id=doc["scan_id"],
            scenario_index=doc["scenario_index"],
            scenario=scenario,
            pruned_graph=parse_sgl(doc["pruned_sgl"]),
            full_graph_ref=doc["full_graph_ref"],
            transcript=Transcript.from_doc(doc["transcript"]),
            final_instructions=InstructionSet.from_doc(final) if final else None,
            truncated=flags["truncated"],
            reviewer_used=flags["reviewer_used"],
            failed=flags["failed"],
        )


@dataclass
class InstructSample:
    messages: list
    family: str
    meta: dict

    def to_doc(self) -> dict:
        return {"messages": self.messages, "family": self.family, "meta": self.meta}


def _base_meta(record: SadRecord, sample_index: int = 0) -> dict:
    return {
        "scan_id": record.scan_id,
        "scenario_index": record.scenario_index,
        "sample_index": sample_index,
        "template": TEMPLATE_VERSION,
    }


def emit_conversation_samples(record: SadRecord) -> list:
    """One multi-turn sample replaying the Humanoid/Oracle exchange.

    Humanoid 'done' turns are dropped, consecutive Oracle turns collapse to
    the later one (reviewer revisions), and the last assistant turn always
    carries the final instruction set.
    """
    conversation = record.transcript.conversation()
    if not any(t.role == ORACLE for t in conversation):
        raise EmptyTranscript(f"({record.scan_id}, {record.scenario_index}) has no oracle turns")
    messages = [
        {"role": "system", "content": SYSTEM_TEMPLATE.format(sgl=serialize_sgl(record.pruned_graph))},
        {"role": "user", "content": CONVERSATION_USER_TEMPLATE.format(description=record.scenario.description)},
    ]
    for turn in conversation:
        if turn.role == HUMANOID:
            if detect_done(turn.content):
                continue
            messages.append({"role": "user", "content": turn.content})
        else:
            rendered = turn.parsed_instructions.as_numbered_lines()
            if messages[-1]["role"] == "assistant":
                messages[-1]["content"] = rendered
            else:
                messages.append({"role": "assistant", "content": rendered})
    messages[-1]["content"] = record.final_instructions.as_numbered_lines()
    meta = _base_meta(record)
    meta["rounds"] = record.transcript.rounds
    meta["truncated"] = record.truncated
    return [InstructSample(messages=messages, family=FAMILY_CONVERSATION, meta=meta)]


def emit_step_samples(record: SadRecord) -> list:
    """One sample mapping the scenario request straight to the final steps."""
    messages = [
        {"role": "system", "content": SYSTEM_TEMPLATE.format(sgl=serialize_sgl(record.pruned_graph))},
        {"role": "user", "content": STEPS_USER_TEMPLATE.format(description=record.scenario.description)},
        {"role": "assistant", "content": record.final_instructions.as_numbered_lines()},
    ]
    meta = _base_meta(record)
    meta["steps"] = len(record.final_instructions)
    return [InstructSample(messages=messages, family=FAMILY_STEPS, meta=meta)]


def emit_pruning_samples(record: SadRecord, full_graph: SceneGraph, rng: random.Random) -> list:
    """Full-to-pruned rewrite plus up to 5 yes and 5 no membership probes."""
    kept_ids = set(record.pruned_graph.object_ids())
    full_ids = set(full_graph.object_ids())
    if not kept_ids <= full_ids:
        raise EmitterError("pruned graph contains objects missing from the full graph")
    full_sgl = serialize_sgl(full_graph)
    description = record.scenario.description
    samples = [
        InstructSample(
            messages=[
                {"role": "system", "content": PRUNE_SYSTEM},
                {"role": "user", "content": PRUNE_USER_TEMPLATE.format(description=description, sgl=full_sgl)},
                {"role": "assistant", "content": serialize_sgl(record.pruned_graph)},
            ],
            family=FAMILY_PRUNE_GRAPH,
            meta=_base_meta(record),
        )
    ]
    nodes = full_graph.objects_by_id()
    dropped_ids = full_ids - kept_ids
    sample_index = 0
    for polarity, pool, answer_template in (
        ("positive", kept_ids, MEMBERSHIP_YES_TEMPLATE),
        ("negative", dropped_ids, MEMBERSHIP_NO_TEMPLATE),
    ):
        chosen = rng.sample(sorted(pool), min(MEMBERSHIP_CAP, len(pool)))
        for obj_id in chosen:
            label = nodes[obj_id].label
            meta = _base_meta(record, sample_index)
            meta["polarity"] = polarity
            meta["object_id"] = obj_id
            samples.append(
                InstructSample(
                    messages=[
                        {"role": "system", "content": PRUNE_SYSTEM},
                        {
                            "role": "user",
                            "content": MEMBERSHIP_USER_TEMPLATE.format(
                                description=description, sgl=full_sgl, label=label, id=obj_id
                            ),
                        },
                        {"role": "assistant", "content": answer_template.format(label=label, id=obj_id)},
                    ],
                    family=FAMILY_MEMBERSHIP,
                    meta=meta,
                )
            )
            sample_index += 1
    return samples


def emit_samples(record: SadRecord, full_graph: SceneGraph, rng: random.Random) -> list:
    """All families for one record; failed records yield nothing."""
    if record.failed:
        return []
    return (
        emit_conversation_samples(record)
        + emit_step_samples(record)
        + emit_pruning_samples(record, full_graph, rng)
    )


@dataclass(frozen=True)
class SplitManifest:
    train_scan_ids: tuple
    test_scan_ids: tuple
    seed: int
    ratio: float

    def split_of(self, scan_id: str) -> str:
        if scan_id in self._train_set():
            return "train"
        if scan_id in self._test_set():
            return "test"
        raise UnknownScan(f"scan {scan_id!r} is in neither split")

    def _train_set(self):
        return frozenset(self.train_scan_ids)

    def _test_set(self):
        return frozenset(self.test_scan_ids)

    def to_doc(self) -> dict:
        return {
            "train_scan_ids": list(self.train_scan_ids),
            "test_scan_ids": list(self.test_scan_ids),
            "seed": self.seed,
            "ratio": self.ratio,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SplitManifest":
        return cls(
            train_scan_ids=tuple(doc["train_scan_ids"]),
            test_scan_ids=tuple(doc["test_scan_ids"]),
            seed=doc["seed"],
            ratio=doc["ratio"],
        )


def split(scan_ids, ratio: float = 0.8, seed: int = 0) -> SplitManifest:
    """Scan-level split: floor(ratio * N) scans train, the rest test."""
    ids = list(scan_ids)
    if not ids:
        raise EmptyInput("no scan ids to split")
    if len(set(ids)) != len(ids):
        raise ValueError("scan ids must be unique")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be strictly between 0 and 1")
    shuffled = sorted(ids)
    random.Random(seed).shuffle(shuffled)
    train_count = math.floor(ratio * len(shuffled))
    return SplitManifest(
        train_scan_ids=tuple(sorted(shuffled[:train_count])),
        test_scan_ids=tuple(sorted(shuffled[train_count:])),
        seed=seed,
        ratio=ratio,
    )


def count_tokens(text: str) -> int:
    """Default token counter: maximal runs of non-whitespace."""
    return len(text.split())


@dataclass(frozen=True)
class SplitStats:
    scans: int = 0
    scenarios: int = 0
    task_steps: int = 0
    input_tokens: int = 0
    output_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def __add__(self, other: "SplitStats") -> "SplitStats":
        return SplitStats(
            scans=self.scans + other.scans,
            scenarios=self.scenarios + other.scenarios,
            task_steps=self.task_steps + other.task_steps,
            input_tokens=self.input_tokens + other.input_tokens,
            output_tokens=self.output_tokens + other.output_tokens,
        )

    def to_doc(self) -> dict:
        return {
            "scans": self.scans,
            "scenarios": self.scenarios,
            "task_steps": self.task_steps,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "total_tokens": self.total_tokens,
        }


@dataclass(frozen=True)
class DatasetStats:
    train: SplitStats
    test: SplitStats

    @property
    def total(self) -> SplitStats:
        return self.train + self.test

    def to_doc(self) -> dict:
        return {"train": self.train.to_doc(), "test": self.test.to_doc(), "total": self.total.to_doc()}


def stats(
    samples,
    manifest: SplitManifest,
    counter: Callable[[str], int] = count_tokens,
) -> DatasetStats:
    """Table-style dataset statistics from emitted samples.

    input tokens cover system and user messages, output tokens the
    assistant ones; task steps sum the per-record step counts carried by
    the steps-family samples.
    """
    per_split: dict[str, dict] = {
        name: {"scans": set(), "scenarios": set(), "task_steps": 0, "input": 0, "output": 0}
        for name in ("train", "test")
    }
    for sample in samples:
        doc = sample.to_doc() if isinstance(sample, InstructSample) else sample
        meta = doc["meta"]
        bucket = per_split[manifest.split_of(meta["scan_id"])]
        bucket["scans"].add(meta["scan_id"])
        bucket["scenarios"].add((meta["scan_id"], meta["scenario_index"]))
        if doc["family"] == FAMILY_STEPS:
            bucket["task_steps"] += meta["steps"]
        for message in doc["messages"]:
            tokens = counter(message["content"])
            if message["role"] == "assistant":
                bucket["output"] += tokens
            else:
                bucket["input"] += tokens
    built = {
        name: SplitStats(
            scans=len(bucket["scans"]),
            scenarios=len(bucket["scenarios"]),
            task_steps=bucket["task_steps"],
            input_tokens=bucket["input"],
            output_tokens=bucket["output"],
        )
        for name, bucket in per_split.items()
    }
    return DatasetStats(train=built["train"], test=built["test"])


TRAINING_MANIFEST_DEFAULTS = {
    "base_model": "llama-3-8b-instruct",
    "rank": 64,
    "alpha": 32,
    "dropout": 0.05,
    "quantization": "4-bit",
    "learning_rate": 2e-4,
    "sequence_length": 8192,
    "epochs": 10,
    "warmup_steps": 10,
    "optimizer": "paged-adamw",
    "datasets": {"train": "train-instruct.jsonl", "test": "test-instruct.jsonl"},
}


def emit_training_manifest(overrides: Optional[dict] = None) -> dict:
    """Adapter-training hyperparameter document; overrides shallow-merge."""
    manifest = dict(TRAINING_MANIFEST_DEFAULTS)
    manifest["datasets"] = dict(TRAINING_MANIFEST_DEFAULTS["datasets"])
    if overrides:
        manifest.update(overrides)
    return manifest


def validate_sample(doc) -> list:
    """Schema problems for one emitted JSONL record; empty list when valid."""
    problems = []
    if not isinstance(doc, dict):
        return ["record is not an object"]
    if set(doc) != {"messages", "family", "meta"}:
        problems.append(f"record keys must be messages/family/meta, got {sorted(doc)}")
        return problems
    if doc["family"] not in FAMILIES:
        problems.append(f"unknown family {doc['family']!r}")
    messages = doc["messages"]
    if not isinstance(messages, list) or not messages:
        problems.append("messages must be a non-empty list")
        return problems
    for position, message in enumerate(messages):
        if not isinstance(message, dict) or set(message) != {"role", "content"}:
            problems.append(f"message {position} must have exactly role and content")
            return problems
        if not isinstance(message["content"], str) or not message["content"]:
            problems.append(f"message {position} content must be a non-empty string")
    if messages[0]["role"] != "system":
        problems.append("first message must be system")
    for position, message in enumerate(messages[1:]):
        expected = "user" if position % 2 == 0 else "assistant"
        if message["role"] != expected:
            problems.append(f"message {position + 1} should be {expected}, got {message['role']!r}")
    if messages[-1]["role"] != "assistant":
        problems.append("last message must be assistant")
    meta = doc["meta"]
    if not isinstance(meta, dict):
        problems.append("meta must be an object")
    else:
        if not isinstance(meta.get("scan_id"), str) or not meta.get("scan_id"):
            problems.append("meta.scan_id must be a non-empty string")
        if not isinstance(meta.get("scenario_index"), int):
            problems.append("meta.scenario_index must be an integer")
        if doc["family"] == FAMILY_MEMBERSHIP:
            if meta.get("polarity") not in ("positive", "negative"):
                problems.append("membership samples need polarity positive|negative")
            if not isinstance(meta.get("object_id"), int):
                problems.append("membership samples need an integer object_id")
    return problems
