import json

import pytest

from sadforge import cli
from sadforge.config import ConfigError, load_config
from sadforge.emitter import validate_sample
from sadforge.workspace import Workspace

from .pipeline_fixtures import SCAN_IDS, write_fixture


def run_cli(*args):
    return cli.main(list(args))


@pytest.fixture()
def fixture_dir(tmp_path):
    write_fixture(tmp_path / "inputs")
    return tmp_path


def config_path(fixture_dir):
    return str(fixture_dir / "inputs" / "config.json")


def ws_path(fixture_dir, name="ws"):
    return str(fixture_dir / name)


OUTPUTS = ("train-instruct.jsonl", "test-instruct.jsonl", "split.json", "stats.json", "train_manifest.json")


def output_bytes(workspace):
    root = Workspace(workspace).root
    return {name: (root / name).read_bytes() for name in OUTPUTS}


class TestRunAll:
    def test_full_run_produces_all_artifacts(self, fixture_dir):
        ws = ws_path(fixture_dir)
        assert run_cli("--config", config_path(fixture_dir), "--workspace", ws, "run-all") == 0
        workspace = Workspace(ws)
        assert workspace.catalog_path.exists()
        for scan_id in SCAN_IDS:
            assert workspace.scenarios_path(scan_id).exists()
            assert workspace.proposals_path(scan_id).exists()
            assert workspace.pruned_path(scan_id).exists()
            assert workspace.records_path(scan_id).exists()
        for name in OUTPUTS:
            assert (workspace.root / name).exists()

    def test_split_is_two_one(self, fixture_dir):
        ws = ws_path(fixture_dir)
        run_cli("--config", config_path(fixture_dir), "--workspace", ws, "run-all")
        split_doc = json.loads((Workspace(ws).split_path).read_text())
        assert len(split_doc["train_scan_ids"]) == 2
        assert len(split_doc["test_scan_ids"]) == 1
        assert set(split_doc["train_scan_ids"]) | set(split_doc["test_scan_ids"]) == set(SCAN_IDS)

    def test_every_line_passes_schema(self, fixture_dir):
        ws = ws_path(fixture_dir)
        run_cli("--config", config_path(fixture_dir), "--workspace", ws, "run-all")
        workspace = Workspace(ws)
        count = 0
        for path in (workspace.train_path, workspace.test_path):
            for line in path.read_text().splitlines():
                assert validate_sample(json.loads(line)) == []
                count += 1
        # 9 records, each: 1 conversation + 1 steps + 1 prune_graph + memberships
        assert count >= 27

    def test_no_split_leakage(self, fixture_dir):
        ws = ws_path(fixture_dir)
        run_cli("--config", config_path(fixture_dir), "--workspace", ws, "run-all")
        workspace = Workspace(ws)
        split_doc = json.loads(workspace.split_path.read_text())
        train_ids = set(split_doc["train_scan_ids"])
        for path, expected in ((workspace.train_path, True), (workspace.test_path, False)):
            for line in path.read_text().splitlines():
                doc = json.loads(line)
                assert (doc["meta"]["scan_id"] in train_ids) is expected

    def test_membership_no_samples_are_truthful(self, fixture_dir):
        ws = ws_path(fixture_dir)
        run_cli("--config", config_path(fixture_dir), "--workspace", ws, "run-all")
        workspace = Workspace(ws)
        pruned_ids = {}
        for scan_id in SCAN_IDS:
            for entry in json.loads(workspace.pruned_path(scan_id).read_text()):
                from sadforge.sgl import parse_sgl

                pruned_ids[(scan_id, entry["scenario_index"])] = set(parse_sgl(entry["sgl"]).object_ids())
        checked = 0
        for path in (workspace.train_path, workspace.test_path):
            for line in path.read_text().splitlines():
                doc = json.loads(line)
                if doc["family"] != "prune_membership":
                    continue
                key = (doc["meta"]["scan_id"], doc["meta"]["scenario_index"])
                if doc["meta"]["polarity"] == "negative":
                    assert doc["meta"]["object_id"] not in pruned_ids[key]
                else:
                    assert doc["meta"]["object_id"] in pruned_ids[key]
                checked += 1
        assert checked > 0

    def test_dialogue_shapes_survive_to_records(self, fixture_dir):
        ws = ws_path(fixture_dir)
        run_cli("--config", config_path(fixture_dir), "--workspace", ws, "run-all")
        workspace = Workspace(ws)
        records_b = json.loads(workspace.records_path("scan-b").read_text())
        assert records_b[0]["transcript"]["rounds"] == 1
        assert records_b[0]["final_instructions"]["3"] == "Write the report"
        records_c = json.loads(workspace.records_path("scan-c").read_text())
        assert records_c[0]["final_instructions"] == {"1": "Lie down on the bed"}
        assert all(not record["flags"]["failed"] for record in records_b + records_c)

    def test_stats_totals_additive(self, fixture_dir):
        ws = ws_path(fixture_dir)
        run_cli("--config", config_path(fixture_dir), "--workspace", ws, "run-all")
        doc = json.loads(Workspace(ws).stats_path.read_text())
        for column in ("scans", "scenarios", "task_steps", "input_tokens", "output_tokens", "total_tokens"):
            assert doc["total"][column] == doc["train"][column] + doc["test"][column]
        assert doc["total"]["scans"] == 3
        assert doc["total"]["scenarios"] == 9

    def test_manifest_defaults_written(self, fixture_dir):
        ws = ws_path(fixture_dir)
        run_cli("--config", config_path(fixture_dir), "--workspace", ws, "run-all")
        doc = json.loads(Workspace(ws).train_manifest_path.read_text())
        assert doc["rank"] == 64
        assert doc["alpha"] == 32
        assert doc["learning_rate"] == 2e-4


class TestDeterminismAndResume:
    def test_two_workspaces_byte_identical(self, fixture_dir):
        cfg = config_path(fixture_dir)
        ws1, ws2 = ws_path(fixture_dir, "ws1"), ws_path(fixture_dir, "ws2")
        assert run_cli("--config", cfg, "--workspace", ws1, "run-all") == 0
        assert run_cli("--config", cfg, "--workspace", ws2, "run-all") == 0
        assert output_bytes(ws1) == output_bytes(ws2)

    def test_rerun_resumes_to_same_bytes(self, fixture_dir):
        cfg = config_path(fixture_dir)
        ws = ws_path(fixture_dir)
        run_cli("--config", cfg, "--workspace", ws, "run-all")
        before = output_bytes(ws)
        assert run_cli("--config", cfg, "--workspace", ws, "run-all") == 0
        assert output_bytes(ws) == before

    def test_fresh_rebuild_matches(self, fixture_dir):
        cfg = config_path(fixture_dir)
        ws = ws_path(fixture_dir)
        run_cli("--config", cfg, "--workspace", ws, "run-all")
        before = output_bytes(ws)
        assert run_cli("--config", cfg, "--workspace", ws, "--fresh", "run-all") == 0
        assert output_bytes(ws) == before

    def test_parallelism_one_matches_parallel(self, fixture_dir, tmp_path):
        serial_inputs = tmp_path / "serial"
        write_fixture(serial_inputs, parallelism=1)
        ws1 = ws_path(fixture_dir, "wspar")
        ws2 = str(tmp_path / "wsserial")
        run_cli("--config", config_path(fixture_dir), "--workspace", ws1, "run-all")
        run_cli("--config", str(serial_inputs / "config.json"), "--workspace", ws2, "run-all")
        assert output_bytes(ws1) == output_bytes(ws2)


class TestStagesAndGates:
    def test_individual_stage_chain(self, fixture_dir):
        cfg = config_path(fixture_dir)
        ws = ws_path(fixture_dir)
        for stage in ("ingest", "scenarios", "prune-propose", "prune-apply", "dialogue", "split", "emit", "stats"):
            assert run_cli("--config", cfg, "--workspace", ws, stage) == 0, stage
        assert json.loads(Workspace(ws).stats_path.read_text())["total"]["scans"] == 3

    def test_dialogue_before_prune_apply_blocked(self, fixture_dir):
        cfg = config_path(fixture_dir)
        ws = ws_path(fixture_dir)
        assert run_cli("--config", cfg, "--workspace", ws, "ingest") == 0
        assert run_cli("--config", cfg, "--workspace", ws, "dialogue") == 4

    def test_scenarios_before_ingest_blocked(self, fixture_dir):
        assert run_cli("--config", config_path(fixture_dir), "--workspace", ws_path(fixture_dir), "scenarios") == 4

    def test_emit_requires_split(self, fixture_dir):
        cfg = config_path(fixture_dir)
        ws = ws_path(fixture_dir)
        for stage in ("ingest", "scenarios", "prune-propose", "prune-apply", "dialogue"):
            run_cli("--config", cfg, "--workspace", ws, stage)
        assert run_cli("--config", cfg, "--workspace", ws, "emit") == 4
        assert run_cli("--config", cfg, "--workspace", ws, "split") == 0
        assert run_cli("--config", cfg, "--workspace", ws, "emit") == 0

    def test_lock_blocks_stages(self, fixture_dir):
        cfg = config_path(fixture_dir)
        ws = ws_path(fixture_dir)
        workspace = Workspace(ws).ensure()
        workspace.lock_path.write_text("someone-else pid=1\n")
        assert run_cli("--config", cfg, "--workspace", ws, "run-all") == 4
        workspace.lock_path.unlink()
        assert run_cli("--config", cfg, "--workspace", ws, "run-all") == 0

    def test_missing_config_file(self, tmp_path):
        assert run_cli("--config", str(tmp_path / "absent.json"), "run-all") == 2

    def test_invalid_mode_flag(self, fixture_dir):
        cfg = config_path(fixture_dir)
        doc = json.loads((fixture_dir / "inputs" / "config.json").read_text())
        doc["review"] = {"mode": "carrier-pigeon"}
        (fixture_dir / "inputs" / "config.json").write_text(json.dumps(doc))
        assert run_cli("--config", cfg, "--workspace", ws_path(fixture_dir), "run-all") == 2

    def test_status_on_empty_workspace(self, fixture_dir, capsys):
        assert run_cli("--config", config_path(fixture_dir), "--workspace", ws_path(fixture_dir), "status") == 0
        out = capsys.readouterr().out
        assert "ingest" in out and "pending" in out
        assert "done" not in out

    def test_status_after_run(self, fixture_dir, capsys):
        cfg = config_path(fixture_dir)
        ws = ws_path(fixture_dir)
        run_cli("--config", cfg, "--workspace", ws, "run-all")
        capsys.readouterr()
        assert run_cli("--config", cfg, "--workspace", ws, "status") == 0
        out = capsys.readouterr().out
        assert "pending" not in out
        assert out.count("done") == 9


class TestWebReviewFlow:
    def test_run_all_pauses_then_completes(self, tmp_path):
        inputs = tmp_path / "inputs"
        write_fixture(inputs, review_mode="web")
        cfg = str(inputs / "config.json")
        ws = str(tmp_path / "ws")
        assert run_cli("--config", cfg, "--workspace", ws, "run-all") == 0
        workspace = Workspace(ws)
        assert not workspace.pruned_path("scan-a").exists()

        from fastapi.testclient import TestClient

        from sadforge.review_server import create_app

        client = TestClient(create_app(workspace))
        queue = client.get("/api/queue", params={"limit": 50}).json()
        assert queue["total"] == 9
        for item in queue["items"]:
            detail = client.get(f"/api/items/{item['scan_id']}/{item['scenario_index']}").json()
            kept = [row["id"] for row in detail["objects"] if row["proposed"]]
            response = client.post(
                f"/api/items/{item['scan_id']}/{item['scenario_index']}/decision",
                json={"kept_ids": kept, "reviewer": "tester"},
            )
            assert response.status_code == 200
        assert client.get("/api/queue").json()["total"] == 0

        assert run_cli("--config", cfg, "--workspace", ws, "run-all") == 0
        assert workspace.stats_path.exists()
        assert workspace.pruned_path("scan-a").exists()

    def test_prune_apply_blocked_while_undecided(self, tmp_path):
        inputs = tmp_path / "inputs"
        write_fixture(inputs, review_mode="web")
        cfg = str(inputs / "config.json")
        ws = str(tmp_path / "ws")
        run_cli("--config", cfg, "--workspace", ws, "run-all")
        assert run_cli("--config", cfg, "--workspace", ws, "prune-apply") == 4


class TestCliReviewMode:
    def test_interactive_decisions_flow(self, tmp_path, monkeypatch):
        inputs = tmp_path / "inputs"
        write_fixture(inputs, review_mode="cli")
        cfg = str(inputs / "config.json")
        ws = str(tmp_path / "ws")
        monkeypatch.setattr("builtins.input", lambda prompt="": "")
        assert run_cli("--config", cfg, "--workspace", ws, "run-all") == 0
        workspace = Workspace(ws)
        assert workspace.stats_path.exists()
        decisions = [json.loads(line) for line in workspace.decisions_path.read_text().splitlines()]
        assert len(decisions) == 9
        assert all(d["reviewer"] == "cli" for d in decisions)


class TestConfigLoading:
    def test_env_overrides_base_url(self, fixture_dir):
        doc = json.loads((fixture_dir / "inputs" / "config.json").read_text())
        doc["provider"] = {"kind": "http", "base_url": "http://file.example"}
        path = fixture_dir / "inputs" / "http_config.json"
        path.write_text(json.dumps(doc))
        config = load_config(path, workspace="w", env={"SADFORGE_BASE_URL": "http://env.example"})
        assert config.base_url == "http://env.example"
        config = load_config(path, workspace="w", env={})
        assert config.base_url == "http://file.example"

    def test_flag_overrides_file(self, fixture_dir):
        config = load_config(config_path(fixture_dir), workspace="w", seed=99, parallelism=1)
        assert config.seed == 99
        assert config.parallelism == 1

    def test_cassette_requires_path(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"workspace": "w", "provider": {"kind": "cassette"}}))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_agent_override_applied(self, fixture_dir):
        doc = json.loads((fixture_dir / "inputs" / "config.json").read_text())
        doc["agents"] = {"oracle": {"temperature": 0.3}}
        path = fixture_dir / "inputs" / "agents_config.json"
        path.write_text(json.dumps(doc))
        config = load_config(path, workspace="w")
        agents = config.agents()
        assert agents["oracle"].temperature == 0.3
        assert agents["oracle"].max_tokens == 512
        assert agents["humanoid"].temperature == 1.0

    def test_unknown_agent_rejected(self, fixture_dir):
        doc = json.loads((fixture_dir / "inputs" / "config.json").read_text())
        doc["agents"] = {"bard": {"temperature": 0.3}}
        path = fixture_dir / "inputs" / "bad_agents.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError):
            load_config(path, workspace="w").agents()
