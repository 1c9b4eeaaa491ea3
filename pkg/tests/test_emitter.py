import json
import random

import pytest

from sadforge.dialogue import InstructionSet, Transcript
from sadforge.emitter import (
    FAMILY_CONVERSATION,
    FAMILY_MEMBERSHIP,
    FAMILY_PRUNE_GRAPH,
    FAMILY_STEPS,
    TRAINING_MANIFEST_DEFAULTS,
    DatasetStats,
    EmitterError,
    EmptyInput,
    EmptyTranscript,
    InstructSample,
    SadRecord,
    SplitManifest,
    SplitStats,
    UnknownScan,
    count_tokens,
    emit_conversation_samples,
    emit_pruning_samples,
    emit_samples,
    emit_step_samples,
    emit_training_manifest,
    split,
    stats,
    validate_sample,
)
from sadforge.prompts import HUMANOID, ORACLE, SUMMARIZER
from sadforge.scenarios import Scenario
from sadforge.sgl import parse_sgl, prune, serialize_sgl

from .dialogue_fixtures import FULL_GRAPH, PRUNED_GRAPH, SCENARIO

FINAL = InstructionSet(("Pick up the mug from the table", "Rinse it in the sink"))


def _inst(*entries):
    return InstructionSet(tuple(entries))


def make_transcript(turns, rounds=0, truncated=False):
    transcript = Transcript(rounds=rounds, truncated=truncated)
    for role, content, parsed in turns:
        transcript.add(role, content, parsed)
    return transcript


def immediate_done_record(**overrides):
    transcript = make_transcript(
        [
            (ORACLE, '{"1": "Pick up the mug from the table", "2": "Rinse it in the sink"}', FINAL),
            (HUMANOID, "done", None),
            (SUMMARIZER, json.dumps(FINAL.to_doc()), FINAL),
        ]
    )
    fields = dict(
        scan_id="scan-a",
        scenario_index=0,
        scenario=SCENARIO,
        pruned_graph=PRUNED_GRAPH,
        full_graph_ref="scan-a",
        transcript=transcript,
        final_instructions=FINAL,
    )
    fields.update(overrides)
    return SadRecord(**fields)


def two_round_record():
    first = _inst("Pick up the mug", "Rinse it")
    second = _inst("Pick up the mug from the table", "Rinse it")
    transcript = make_transcript(
        [
            (ORACLE, "ignored raw 0", first),
            (HUMANOID, "Which mug do you mean?", None),
            (ORACLE, "ignored raw 1", second),
            (HUMANOID, "Where do I rinse it?", None),
            (ORACLE, "ignored raw 2", FINAL),
            (HUMANOID, "done, thanks", None),
            (SUMMARIZER, json.dumps(FINAL.to_doc()), FINAL),
        ],
        rounds=2,
    )
    return immediate_done_record(transcript=transcript)


def revised_record():
    draft = _inst("Pick up the mug")
    transcript = make_transcript(
        [
            (ORACLE, "ignored raw 0", draft),
            (HUMANOID, "done", None),
            (SUMMARIZER, json.dumps(draft.to_doc()), draft),
            ("reviewer", '{"verdict": "revise", "feedback": "Say where."}', None),
            (ORACLE, "ignored revision", FINAL),
            (SUMMARIZER, json.dumps(FINAL.to_doc()), FINAL),
        ]
    )
    transcript.reviewer_used = True
    transcript.reviewer_verdict = "revise"
    return immediate_done_record(transcript=transcript, reviewer_used=True)


def truncated_record():
    ask = _inst("Keep waiting")
    transcript = make_transcript(
        [
            (ORACLE, "ignored raw 0", ask),
            (HUMANOID, "Is it ready yet?", None),
            (ORACLE, "ignored raw 1", ask),
            (HUMANOID, "How about now?", None),
            (ORACLE, "ignored raw 2", FINAL),
            (SUMMARIZER, json.dumps(FINAL.to_doc()), FINAL),
        ],
        rounds=2,
        truncated=True,
    )
    return immediate_done_record(transcript=transcript, truncated=True)


class TestConversationFamily:
    def test_immediate_done_is_three_messages(self):
        (sample,) = emit_conversation_samples(immediate_done_record())
        roles = [m["role"] for m in sample.messages]
        assert roles == ["system", "user", "assistant"]
        assert sample.family == FAMILY_CONVERSATION

    def test_system_embeds_pruned_graph_only(self):
        (sample,) = emit_conversation_samples(immediate_done_record())
        system = sample.messages[0]["content"]
        assert serialize_sgl(PRUNED_GRAPH) in system
        assert "plant" not in system

    def test_user_carries_scenario(self):
        (sample,) = emit_conversation_samples(immediate_done_record())
        assert SCENARIO.description in sample.messages[1]["content"]

    def test_final_assistant_is_final_instruction_set(self):
        (sample,) = emit_conversation_samples(two_round_record())
        assert sample.messages[-1]["content"] == FINAL.as_numbered_lines()

    def test_two_rounds_replay_each_exchange(self):
        (sample,) = emit_conversation_samples(two_round_record())
        roles = [m["role"] for m in sample.messages]
        assert roles == ["system", "user", "assistant", "user", "assistant", "user", "assistant"]
        assert sample.messages[3]["content"] == "Which mug do you mean?"
        assert sample.messages[5]["content"] == "Where do I rinse it?"
        assert sample.messages[2]["content"] == _inst("Pick up the mug", "Rinse it").as_numbered_lines()

    def test_done_turn_never_replayed(self):
        (sample,) = emit_conversation_samples(two_round_record())
        assert all("done" not in m["content"] for m in sample.messages)

    def test_reviewer_revision_collapses_to_single_assistant(self):
        (sample,) = emit_conversation_samples(revised_record())
        roles = [m["role"] for m in sample.messages]
        assert roles == ["system", "user", "assistant"]
        assert sample.messages[-1]["content"] == FINAL.as_numbered_lines()

    def test_truncated_dialogue_still_ends_with_assistant(self):
        (sample,) = emit_conversation_samples(truncated_record())
        assert sample.messages[-1]["role"] == "assistant"
        assert sample.messages[-2]["content"] == "How about now?"
        assert sample.meta["truncated"] is True
        assert sample.meta["rounds"] == 2

    def test_no_oracle_turns_rejected(self):
        record = immediate_done_record(
            transcript=make_transcript([(SUMMARIZER, "{}", None)]),
            failed=True,
        )
        record.failed = False
        record.final_instructions = FINAL
        with pytest.raises(EmptyTranscript):
            emit_conversation_samples(record)

    def test_meta_identifies_record(self):
        (sample,) = emit_conversation_samples(immediate_done_record())
        assert sample.meta["scan_id"] == "scan-a"
        assert sample.meta["scenario_index"] == 0

    def test_samples_are_schema_valid(self):
        for record in (immediate_done_record(), two_round_record(), revised_record(), truncated_record()):
            (sample,) = emit_conversation_samples(record)
            assert validate_sample(sample.to_doc()) == []


class TestStepsFamily:
    def test_shape_and_content(self):
        (sample,) = emit_step_samples(immediate_done_record())
        assert [m["role"] for m in sample.messages] == ["system", "user", "assistant"]
        assert "Give me step-by-step instructions." in sample.messages[1]["content"]
        assert SCENARIO.description in sample.messages[1]["content"]
        assert sample.messages[2]["content"] == FINAL.as_numbered_lines()
        assert sample.family == FAMILY_STEPS

    def test_meta_counts_steps(self):
        (sample,) = emit_step_samples(immediate_done_record())
        assert sample.meta["steps"] == 2

    def test_schema_valid(self):
        (sample,) = emit_step_samples(immediate_done_record())
        assert validate_sample(sample.to_doc()) == []


WIDE_GRAPH = parse_sgl(
    "obj-kitchen-1:[]; obj-mug-2:[]; obj-table-3:[]; obj-sink-4:[]; obj-plant-5:[]; "
    "obj-fridge-6:[]; obj-stove-7:[]; obj-lamp-8:[]; obj-sofa-9:[]; obj-rug-10:[]; "
    "obj-shelf-11:[]; obj-vase-12:[]; obj-fan-13:[];"
)


def wide_record(kept_ids):
    return immediate_done_record(pruned_graph=prune(WIDE_GRAPH, kept_ids))


class TestPruningFamily:
    def test_graph_rewrite_sample(self):
        record = immediate_done_record()
        samples = emit_pruning_samples(record, FULL_GRAPH, random.Random(7))
        rewrite = [s for s in samples if s.family == FAMILY_PRUNE_GRAPH]
        assert len(rewrite) == 1
        user = rewrite[0].messages[1]["content"]
        assert "Prune the scene graph to get" in user
        assert serialize_sgl(FULL_GRAPH) in user
        assert rewrite[0].messages[2]["content"] == serialize_sgl(PRUNED_GRAPH)

    def test_membership_counts_capped_at_five(self):
        record = wide_record({1, 2, 3, 4})
        samples = emit_pruning_samples(record, WIDE_GRAPH, random.Random(7))
        members = [s for s in samples if s.family == FAMILY_MEMBERSHIP]
        positives = [s for s in members if s.meta["polarity"] == "positive"]
        negatives = [s for s in members if s.meta["polarity"] == "negative"]
        assert len(positives) == 4
        assert len(negatives) == 5

    def test_membership_answers_match_graph_truth(self):
        record = wide_record({1, 2, 3, 4})
        kept = record.pruned_graph.object_ids()
        for sample in emit_pruning_samples(record, WIDE_GRAPH, random.Random(11)):
            if sample.family != FAMILY_MEMBERSHIP:
                continue
            answer = sample.messages[2]["content"]
            if sample.meta["polarity"] == "positive":
                assert sample.meta["object_id"] in kept
                assert answer.startswith("Yes, ")
            else:
                assert sample.meta["object_id"] not in kept
                assert answer.startswith("No, ")

    def test_membership_question_names_object(self):
        record = immediate_done_record()
        samples = emit_pruning_samples(record, FULL_GRAPH, random.Random(3))
        probe = next(s for s in samples if s.family == FAMILY_MEMBERSHIP)
        nodes = FULL_GRAPH.objects_by_id()
        label = nodes[probe.meta["object_id"]].label
        assert f"do I need the object {label}-{probe.meta['object_id']}?" in probe.messages[1]["content"]

    def test_no_duplicate_probes_within_polarity(self):
        record = wide_record({1, 2, 3, 4, 5, 6, 7})
        samples = emit_pruning_samples(record, WIDE_GRAPH, random.Random(5))
        for polarity in ("positive", "negative"):
            ids = [s.meta["object_id"] for s in samples if s.meta.get("polarity") == polarity]
            assert len(ids) == len(set(ids)) == 5

    def test_same_seed_same_probes(self):
        record = wide_record({1, 2, 3, 4, 5, 6, 7})
        first = emit_pruning_samples(record, WIDE_GRAPH, random.Random(42))
        second = emit_pruning_samples(record, WIDE_GRAPH, random.Random(42))
        assert [s.to_doc() for s in first] == [s.to_doc() for s in second]

    def test_keep_everything_yields_no_negatives(self):
        record = immediate_done_record(pruned_graph=FULL_GRAPH)
        samples = emit_pruning_samples(record, FULL_GRAPH, random.Random(1))
        assert all(s.meta.get("polarity") != "negative" for s in samples)
        assert sum(s.meta.get("polarity") == "positive" for s in samples) == 5

    def test_pruned_not_subset_rejected(self):
        stranger = parse_sgl("obj-robot-99:[];")
        record = immediate_done_record(pruned_graph=stranger)
        with pytest.raises(EmitterError):
            emit_pruning_samples(record, FULL_GRAPH, random.Random(0))

    def test_schema_valid(self):
        record = wide_record({1, 2, 3, 4})
        for sample in emit_pruning_samples(record, WIDE_GRAPH, random.Random(9)):
            assert validate_sample(sample.to_doc()) == []


class TestEmitSamples:
    def test_failed_record_yields_nothing(self):
        record = immediate_done_record(failed=True, final_instructions=None)
        assert emit_samples(record, FULL_GRAPH, random.Random(0)) == []

    def test_families_present_and_ordered(self):
        samples = emit_samples(immediate_done_record(), FULL_GRAPH, random.Random(0))
        families = [s.family for s in samples]
        assert families[0] == FAMILY_CONVERSATION
        assert families[1] == FAMILY_STEPS
        assert families[2] == FAMILY_PRUNE_GRAPH
        assert set(families[3:]) == {FAMILY_MEMBERSHIP}

    def test_all_schema_valid(self):
        for sample in emit_samples(two_round_record(), FULL_GRAPH, random.Random(0)):
            assert validate_sample(sample.to_doc()) == []


class TestSadRecord:
    def test_final_required_unless_failed(self):
        with pytest.raises(ValueError):
            immediate_done_record(final_instructions=None)

    def test_doc_round_trip(self):
        record = revised_record()
        rebuilt = SadRecord.from_doc(json.loads(json.dumps(record.to_doc())))
        assert rebuilt.scan_id == record.scan_id
        assert rebuilt.pruned_graph == record.pruned_graph
        assert rebuilt.final_instructions == record.final_instructions
        assert rebuilt.reviewer_used is True
        assert rebuilt.to_doc() == record.to_doc()

    def test_failed_round_trip_without_instructions(self):
        record = immediate_done_record(failed=True, final_instructions=None)
        rebuilt = SadRecord.from_doc(record.to_doc())
        assert rebuilt.failed is True
        assert rebuilt.final_instructions is None


class TestSplit:
    def test_catalog_sized_split(self):
        ids = [f"scan-{i:04d}" for i in range(1482)]
        manifest = split(ids, ratio=0.8, seed=17)
        assert len(manifest.train_scan_ids) == 1185
        assert len(manifest.test_scan_ids) == 297
        train, test = set(manifest.train_scan_ids), set(manifest.test_scan_ids)
        assert train.isdisjoint(test)
        assert train | test == set(ids)

    def test_deterministic_for_seed(self):
        ids = [f"s{i}" for i in range(50)]
        assert split(ids, seed=3) == split(list(reversed(ids)), seed=3)

    def test_seed_changes_assignment(self):
        ids = [f"s{i}" for i in range(50)]
        assert set(split(ids, seed=0).train_scan_ids) != set(split(ids, seed=1).train_scan_ids)

    def test_single_scan_goes_to_test(self):
        manifest = split(["only"], ratio=0.8, seed=0)
        assert manifest.train_scan_ids == ()
        assert manifest.test_scan_ids == ("only",)

    def test_floor_rule(self):
        manifest = split(["a", "b", "c", "d"], ratio=0.8, seed=0)
        assert len(manifest.train_scan_ids) == 3
        assert len(manifest.test_scan_ids) == 1

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            split([])

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            split(["a", "a"])

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.2, 1.5])
    def test_ratio_bounds(self, ratio):
        with pytest.raises(ValueError):
            split(["a", "b"], ratio=ratio)

    def test_split_of(self):
        manifest = split(["a", "b", "c", "d", "e"], seed=2)
        for scan in manifest.train_scan_ids:
            assert manifest.split_of(scan) == "train"
        for scan in manifest.test_scan_ids:
            assert manifest.split_of(scan) == "test"
        with pytest.raises(UnknownScan):
            manifest.split_of("zz")

    def test_doc_round_trip(self):
        manifest = split(["a", "b", "c"], seed=5)
        assert SplitManifest.from_doc(json.loads(json.dumps(manifest.to_doc()))) == manifest


class TestCountTokens:
    @pytest.mark.parametrize(
        "text,expected",
        [("", 0), ("one", 1), ("a b  c\n", 3), ("  leading and trailing  ", 3), ("line\nbreaks\tcount", 3)],
    )
    def test_whitespace_runs(self, text, expected):
        assert count_tokens(text) == expected


def _hand_sample(scan_id, scenario_index, family, messages, **meta_extra):
    meta = {"scan_id": scan_id, "scenario_index": scenario_index, "sample_index": 0, "template": "v1"}
    meta.update(meta_extra)
    return InstructSample(messages=messages, family=family, meta=meta)


class TestStats:
    def manifest(self):
        return SplitManifest(train_scan_ids=("a",), test_scan_ids=("b",), seed=0, ratio=0.8)

    def test_hand_counted_tokens(self):
        samples = [
            _hand_sample(
                "a",
                0,
                FAMILY_STEPS,
                [
                    {"role": "system", "content": "one two"},
                    {"role": "user", "content": "three"},
                    {"role": "assistant", "content": "four five six"},
                ],
                steps=4,
            ),
            _hand_sample(
                "b",
                0,
                FAMILY_STEPS,
                [
                    {"role": "system", "content": "a"},
                    {"role": "user", "content": "b c"},
                    {"role": "assistant", "content": "d"},
                ],
                steps=1,
            ),
        ]
        result = stats(samples, self.manifest())
        assert result.train == SplitStats(scans=1, scenarios=1, task_steps=4, input_tokens=3, output_tokens=3)
        assert result.test == SplitStats(scans=1, scenarios=1, task_steps=1, input_tokens=3, output_tokens=1)
        assert result.train.total_tokens == 6
        assert result.total.total_tokens == 10

    def test_scenarios_counted_distinctly(self):
        base = [
            {"role": "system", "content": "s"},
            {"role": "user", "content": "u"},
            {"role": "assistant", "content": "a"},
        ]
        samples = [
            _hand_sample("a", 0, FAMILY_CONVERSATION, base),
            _hand_sample("a", 1, FAMILY_CONVERSATION, base),
            _hand_sample("a", 1, FAMILY_PRUNE_GRAPH, base),
        ]
        result = stats(samples, self.manifest())
        assert result.train.scans == 1
        assert result.train.scenarios == 2

    def test_total_is_sum_of_splits(self):
        rng = random.Random(0)
        samples = []
        for scan in ("a", "b"):
            record = immediate_done_record(scan_id=scan)
            samples.extend(emit_samples(record, FULL_GRAPH, rng))
        result = stats(samples, self.manifest())
        for attr in ("scans", "scenarios", "task_steps", "input_tokens", "output_tokens", "total_tokens"):
            assert getattr(result.total, attr) == getattr(result.train, attr) + getattr(result.test, attr)

    def test_tokens_match_independent_sum(self):
        rng = random.Random(0)
        samples = emit_samples(immediate_done_record(), FULL_GRAPH, rng)
        expected = sum(count_tokens(m["content"]) for s in samples for m in s.messages)
        result = stats(samples, SplitManifest(("scan-a",), (), 0, 0.8))
        assert result.total.total_tokens == expected
        assert result.test.total_tokens == 0

    def test_unknown_scan_rejected(self):
        sample = _hand_sample("mystery", 0, FAMILY_STEPS, [{"role": "system", "content": "x"}], steps=1)
        with pytest.raises(UnknownScan):
            stats([sample], self.manifest())

    def test_counter_is_pluggable(self):
        sample = _hand_sample(
            "a",
            0,
            FAMILY_CONVERSATION,
            [
                {"role": "system", "content": "abc"},
                {"role": "user", "content": "de"},
                {"role": "assistant", "content": "f"},
            ],
        )
        result = stats([sample], self.manifest(), counter=len)
        assert result.train.input_tokens == 5
        assert result.train.output_tokens == 1

    def test_accepts_plain_docs(self):
        doc = _hand_sample("a", 0, FAMILY_STEPS, [{"role": "system", "content": "x y"}], steps=2).to_doc()
        result = stats([doc], self.manifest())
        assert result.train.input_tokens == 2

    def test_doc_layout(self):
        result = DatasetStats(train=SplitStats(scans=1), test=SplitStats(scans=2))
        doc = result.to_doc()
        assert set(doc) == {"train", "test", "total"}
        assert doc["total"]["scans"] == 3
        assert set(doc["train"]) == {
            "scans",
            "scenarios",
            "task_steps",
            "input_tokens",
            "output_tokens",
            "total_tokens",
        }


class TestTrainingManifest:
    def test_defaults(self):
        manifest = emit_training_manifest()
        assert manifest["base_model"] == "llama-3-8b-instruct"
        assert manifest["rank"] == 64
        assert manifest["alpha"] == 32
        assert manifest["dropout"] == 0.05
        assert manifest["quantization"] == "4-bit"
        assert manifest["learning_rate"] == 2e-4
        assert manifest["sequence_length"] == 8192
        assert manifest["epochs"] == 10
        assert manifest["warmup_steps"] == 10
        assert manifest["optimizer"] == "paged-adamw"
        assert manifest["datasets"] == {"train": "train-instruct.jsonl", "test": "test-instruct.jsonl"}

    def test_override_shallow_merges(self):
        manifest = emit_training_manifest({"rank": 8, "datasets": {"train": "x.jsonl", "test": "y.jsonl"}})
        assert manifest["rank"] == 8
        assert manifest["alpha"] == 32
        assert manifest["datasets"]["train"] == "x.jsonl"

    def test_returned_dict_is_isolated(self):
        manifest = emit_training_manifest()
        manifest["rank"] = 1
        manifest["datasets"]["train"] = "poke.jsonl"
        assert TRAINING_MANIFEST_DEFAULTS["rank"] == 64
        assert TRAINING_MANIFEST_DEFAULTS["datasets"]["train"] == "train-instruct.jsonl"
        assert emit_training_manifest()["datasets"]["train"] == "train-instruct.jsonl"


def valid_doc():
    return {
        "messages": [
            {"role": "system", "content": "s"},
            {"role": "user", "content": "u"},
            {"role": "assistant", "content": "a"},
        ],
        "family": FAMILY_STEPS,
        "meta": {"scan_id": "a", "scenario_index": 0},
    }


class TestValidateSample:
    def test_valid(self):
        assert validate_sample(valid_doc()) == []

    def test_not_a_dict(self):
        assert validate_sample([1, 2]) != []

    def test_missing_key(self):
        doc = valid_doc()
        del doc["meta"]
        assert any("keys" in p for p in validate_sample(doc))

    def test_extra_key(self):
        doc = valid_doc()
        doc["bonus"] = 1
        assert validate_sample(doc) != []

    def test_unknown_family(self):
        doc = valid_doc()
        doc["family"] = "poetry"
        assert any("family" in p for p in validate_sample(doc))

    def test_empty_messages(self):
        doc = valid_doc()
        doc["messages"] = []
        assert validate_sample(doc) != []

    def test_first_not_system(self):
        doc = valid_doc()
        doc["messages"][0]["role"] = "user"
        assert any("system" in p for p in validate_sample(doc))

    def test_broken_alternation(self):
        doc = valid_doc()
        doc["messages"].insert(2, {"role": "user", "content": "again"})
        assert validate_sample(doc) != []

    def test_last_not_assistant(self):
        doc = valid_doc()
        doc["messages"].append({"role": "user", "content": "trailing"})
        assert any("assistant" in p for p in validate_sample(doc))

    def test_empty_content(self):
        doc = valid_doc()
        doc["messages"][1]["content"] = ""
        assert validate_sample(doc) != []

    def test_meta_missing_scan(self):
        doc = valid_doc()
        doc["meta"] = {"scenario_index": 0}
        assert any("scan_id" in p for p in validate_sample(doc))

    def test_membership_needs_polarity(self):
        doc = valid_doc()
        doc["family"] = FAMILY_MEMBERSHIP
        problems = validate_sample(doc)
        assert any("polarity" in p for p in problems)
        assert any("object_id" in p for p in problems)
