"""End-to-end pipeline and command-line tests with scripted providers."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from manual2kg.cli import main
from manual2kg.errors import MissingSection
from manual2kg.extraction import Task, parse_wire_json
from manual2kg.gateway import ScriptedBackend, load_transcript, record_transcript
from manual2kg.judging import suite_for
from manual2kg.kg import load_graph, validate_graph
from manual2kg.pipeline import PipelineConfig, config_from_dict, run_manual

from conftest import (
    LISTING_ID,
    LISTING_PATH,
    all_pass_judge,
    golden_script,
    judge_response,
)

EXPECTED_ARTIFACTS = [
    "chunks.json",
    "roadmap/iter0.json",
    "roadmap/iter0.eval.json",
    "roadmap/loop.json",
    "mapping/iter0.json",
    "mapping/iter0.eval.json",
    "mapping/loop.json",
    "procedure/iter0.json",
    "procedure/iter0.eval.json",
    "procedure/loop.json",
    "prompts/roadmap/v0/manifest.json",
    "graph.jsonl",
    "tcs.json",
]


def write_script(tmp_path: Path, script: dict | None = None) -> Path:
    path = tmp_path / "script.json"
    path.write_text(json.dumps(script if script is not None else golden_script()))
    return path


class TestRunManual:
    def test_golden_run_writes_all_artifacts(self, tmp_path):
        config = PipelineConfig(out_dir=tmp_path / "out")
        provider = ScriptedBackend(golden_script())
        result = run_manual(LISTING_PATH, config, provider)
        assert result.manual_id == LISTING_ID
        assert result.reached_all_thresholds
        for relative in EXPECTED_ARTIFACTS:
            assert (result.out_dir / relative).is_file(), relative

    def test_golden_run_graph_is_valid_and_tcs_correct(self, tmp_path):
        config = PipelineConfig(out_dir=tmp_path / "out")
        result = run_manual(LISTING_PATH, config, ScriptedBackend(golden_script()))
        kg = load_graph(result.out_dir / "graph.jsonl")
        assert validate_graph(kg) == []
        tcs = json.loads((result.out_dir / "tcs.json").read_text())
        r1, r2 = tcs["configuration_steps"]
        assert [p["id"] for p in r1["mapped_procedure_steps"]] == ["P_1", "P_2", "P_4"]
        assert [p["id"] for p in r2["mapped_procedure_steps"]] == ["P_3", "P_4"]

    def test_unmet_threshold_is_recorded_not_fatal(self, tmp_path):
        from conftest import ROADMAP_WIRE, counts_for_total, identity_revision

        script = golden_script()
        low = judge_response(Task.ROADMAP, counts_for_total(85))
        script["judge:roadmap:iter0"] = [low]
        for k in (1, 2, 3):
            script[f"improve:roadmap:iter{k}"] = [identity_revision(Task.ROADMAP)]
            script[f"extract:roadmap:iter{k}"] = [json.dumps(ROADMAP_WIRE)]
            script[f"judge:roadmap:iter{k}"] = [low]
        result = run_manual(
            LISTING_PATH,
            PipelineConfig(out_dir=tmp_path / "out"),
            ScriptedBackend(script),
        )
        assert not result.reached_all_thresholds
        loop = json.loads((result.out_dir / "roadmap" / "loop.json").read_text())
        assert loop["reached_threshold"] is False
        assert len(loop["iterations"]) == 4
        assert (result.out_dir / "tcs.json").is_file()

    def test_missing_procedure_section(self, tmp_path):
        manual = tmp_path / "broken.md"
        manual.write_text("# Broken\n\n#### Configuration Roadmap\n  1. Step.\n")
        with pytest.raises(MissingSection, match="missing required section: Procedure"):
            run_manual(manual, PipelineConfig(out_dir=tmp_path / "out"), ScriptedBackend())


def compare_trees(a: Path, b: Path) -> None:
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for relative in files_a:
        assert (a / relative).read_bytes() == (b / relative).read_bytes(), relative


class TestRecordReplay:
    def test_replay_reproduces_byte_identical_artifacts(self, tmp_path):
        transcript = tmp_path / "run.jsonl"
        recorded = record_transcript(ScriptedBackend(golden_script()), transcript)
        result_a = run_manual(
            LISTING_PATH, PipelineConfig(out_dir=tmp_path / "out-a"), recorded
        )
        recorded.close()
        assert len(load_transcript(transcript).entries) == 9

        config_b = PipelineConfig(
            out_dir=tmp_path / "out-b", provider="replay", transcript_path=transcript
        )
        result_b = run_manual(LISTING_PATH, config_b)
        compare_trees(result_a.out_dir, result_b.out_dir)

    def test_replay_rerun_is_idempotent(self, tmp_path):
        transcript = tmp_path / "run.jsonl"
        recorded = record_transcript(ScriptedBackend(golden_script()), transcript)
        run_manual(LISTING_PATH, PipelineConfig(out_dir=tmp_path / "out"), recorded)
        recorded.close()

        config = PipelineConfig(
            out_dir=tmp_path / "out2", provider="replay", transcript_path=transcript
        )
        run_manual(LISTING_PATH, config)
        snapshot = {
            p.relative_to(tmp_path / "out2"): p.read_bytes()
            for p in (tmp_path / "out2").rglob("*")
            if p.is_file()
        }
        run_manual(LISTING_PATH, config)
        for relative, data in snapshot.items():
            assert (tmp_path / "out2" / relative).read_bytes() == data


class TestCliRun:
    def test_run_exit_zero_and_artifacts(self, tmp_path, capsys):
        script = write_script(tmp_path)
        out_dir = tmp_path / "out"
        code = main(
            [
                "run",
                str(LISTING_PATH),
                "--provider",
                "scripted",
                "--script",
                str(script),
                "--out-dir",
                str(out_dir),
            ]
        )
        assert code == 0
        assert "ok:" in capsys.readouterr().out
        for relative in EXPECTED_ARTIFACTS:
            assert (out_dir / LISTING_ID / relative).is_file(), relative

    def test_missing_procedure_section_exits_2(self, tmp_path, capsys):
        manual = tmp_path / "broken.md"
        manual.write_text("# Broken\n\n#### Configuration Roadmap\n  1. Step.\n")
        script = write_script(tmp_path)
        code = main(
            ["run", str(manual), "--provider", "scripted", "--script", str(script),
             "--out-dir", str(tmp_path / "out")]
        )
        assert code == 2
        assert "missing required section: Procedure" in capsys.readouterr().err

    def test_stale_transcript_exits_3_naming_the_stage(self, tmp_path, capsys):
        transcript = tmp_path / "run.jsonl"
        recorded = record_transcript(ScriptedBackend(golden_script()), transcript)
        run_manual(LISTING_PATH, PipelineConfig(out_dir=tmp_path / "out"), recorded)
        recorded.close()

        stale = tmp_path / "edited.md"
        stale.write_text(
            LISTING_PATH.read_text().replace("VLAN 100", "VLAN 200"), encoding="utf-8"
        )
        code = main(
            ["run", str(stale), "--provider", "replay", "--transcript", str(transcript),
             "--out-dir", str(tmp_path / "out2")]
        )
        assert code == 3
        err = capsys.readouterr().err
        assert "no recorded response for tag" in err
        assert "extract:" in err

    def test_scripted_without_script_exits_2(self, tmp_path, capsys):
        code = main(
            ["run", str(LISTING_PATH), "--provider", "scripted",
             "--out-dir", str(tmp_path / "out")]
        )
        assert code == 2

    def test_config_file_with_flag_override(self, tmp_path):
        script = write_script(tmp_path)
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps(
                {
                    "provider": "scripted",
                    "script_path": str(script),
                    "out_dir": str(tmp_path / "from-config"),
                    "threshold": 0.5,
                }
            )
        )
        out_dir = tmp_path / "from-flag"
        code = main(["run", str(LISTING_PATH), "--config", str(config_path),
                     "--out-dir", str(out_dir)])
        assert code == 0
        assert (out_dir / LISTING_ID / "tcs.json").is_file()
        assert not (tmp_path / "from-config").exists()


class TestArtifactSchemas:
    def test_written_files_match_their_documented_shapes(self, tmp_path):
        config = PipelineConfig(out_dir=tmp_path / "out")
        result = run_manual(LISTING_PATH, config, ScriptedBackend(golden_script()))

        chunks = json.loads((result.out_dir / "chunks.json").read_text())
        assert set(chunks) == {"manual_id", "title", "sections", "procedure_steps"}
        assert set(chunks["sections"][0]) == {"section_name", "body", "start", "end"}

        report = json.loads((result.out_dir / "roadmap" / "iter0.eval.json").read_text())
        assert set(report) == {"task", "results", "overall_comment", "correctness"}
        assert set(report["results"][0]) == {
            "key", "score", "num_checked", "num_correct", "reason",
        }
        assert len(report["results"]) == 7

        loop = json.loads((result.out_dir / "roadmap" / "loop.json").read_text())
        assert set(loop) == {
            "task", "threshold", "max_iterations", "final_selection", "iterations",
            "accepted_index", "accepted_correctness", "delta_corr", "reached_threshold",
        }

        header = json.loads(
            (result.out_dir / "graph.jsonl").read_text().splitlines()[0]
        )
        assert header == {
            "manual_id": LISTING_ID, "format": "manual2kg-triples", "version": 1,
        }

        extraction_text = (result.out_dir / "roadmap" / "iter0.json").read_text()
        reparsed = parse_wire_json(extraction_text, Task.ROADMAP)
        assert len(reparsed.steps) == 2


class TestJobsFanout:
    def test_two_manuals_with_jobs(self, tmp_path, capsys):
        second = tmp_path / "second-manual.md"
        second.write_text(
            LISTING_PATH.read_text().replace(
                "# Example for Configuring LBDT to Detect Loops on the Local Network",
                "# Second Manual for LBDT Loop Detection",
            ),
            encoding="utf-8",
        )
        script = write_script(tmp_path)
        out_dir = tmp_path / "out"
        code = main(
            ["run", str(LISTING_PATH), str(second), "--provider", "scripted",
             "--script", str(script), "--out-dir", str(out_dir), "--jobs", "2"]
        )
        assert code == 0
        assert (out_dir / LISTING_ID / "tcs.json").is_file()
        assert (out_dir / "second-manual-for-lbdt-loop-detection" / "tcs.json").is_file()
        assert capsys.readouterr().out.count("ok:") == 2


class TestCliStages:
    def test_chunk_writes_chunk_listing(self, tmp_path, capsys):
        code = main(["chunk", str(LISTING_PATH), "--out-dir", str(tmp_path / "out")])
        assert code == 0
        chunks = json.loads((tmp_path / "out" / LISTING_ID / "chunks.json").read_text())
        assert len(chunks["sections"]) == 6
        assert len(chunks["procedure_steps"]) == 4

    def test_extract_single_task(self, tmp_path):
        script = write_script(tmp_path)
        out_dir = tmp_path / "out"
        code = main(
            ["extract", str(LISTING_PATH), "--task", "roadmap", "--provider", "scripted",
             "--script", str(script), "--out-dir", str(out_dir)]
        )
        assert code == 0
        loop = json.loads((out_dir / LISTING_ID / "roadmap" / "loop.json").read_text())
        assert loop["accepted_correctness"] == 1.0

    def test_evaluate_existing_extraction(self, tmp_path, capsys):
        from conftest import ROADMAP_WIRE

        extraction = tmp_path / "extraction.json"
        extraction.write_text(json.dumps(ROADMAP_WIRE))
        script = write_script(tmp_path, {"judge:roadmap": [all_pass_judge(Task.ROADMAP)]})
        code = main(
            ["evaluate", str(LISTING_PATH), str(extraction), "--task", "roadmap",
             "--provider", "scripted", "--script", str(script),
             "--out", str(tmp_path / "report.json")]
        )
        assert code == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["correctness"] == 1.0
        assert (tmp_path / "report.json").is_file()

    def test_build_kg_and_emit_tcs_from_existing_outputs(self, tmp_path, capsys):
        script = write_script(tmp_path)
        out_dir = tmp_path / "out"
        assert main(
            ["run", str(LISTING_PATH), "--provider", "scripted", "--script", str(script),
             "--out-dir", str(out_dir)]
        ) == 0
        graph_path = out_dir / LISTING_ID / "graph.jsonl"
        original_graph = graph_path.read_bytes()
        graph_path.unlink()
        (out_dir / LISTING_ID / "tcs.json").unlink()

        code = main(
            ["build-kg", str(LISTING_PATH), "--out-dir", str(out_dir), "--ntriples"]
        )
        assert code == 0
        assert graph_path.read_bytes() == original_graph
        assert graph_path.with_suffix(".nt").is_file()

        code = main(["emit-tcs", str(graph_path)])
        assert code == 0
        assert (out_dir / LISTING_ID / "tcs.json").is_file()

    def test_emit_tcs_on_corrupt_graph_exits_4(self, tmp_path):
        bad = tmp_path / "graph.jsonl"
        bad.write_text('{"manual_id": "m", "format": "manual2kg-triples", "version": 1}\n'
                       '{"s": {"kind": "RoadmapStep", "id": "R_1"}, "r": "hasWibble", '
                       '"o": {"kind": "Literal", "text": "x"}}\n')
        assert main(["emit-tcs", str(bad)]) == 4

    def test_kappa_command(self, tmp_path, capsys):
        from manual2kg.judging import EvaluationReport, GuidelineResult, correctness_score, save_report

        def report(counts):
            results = [
                GuidelineResult(key, 1 if c == n else 0, n, c)
                for key, (c, n) in zip(suite_for(Task.ROADMAP).keys, counts)
            ]
            return EvaluationReport(Task.ROADMAP, results, "", correctness_score(results))

        for manual in ("m1", "m2"):
            save_report(report([(2, 2)] * 7), tmp_path / "a" / manual / "roadmap" / "iter0.eval.json")
        save_report(report([(2, 2)] * 7), tmp_path / "b" / "m1" / "roadmap" / "iter0.eval.json")
        save_report(
            report([(1, 2)] + [(2, 2)] * 6), tmp_path / "b" / "m2" / "roadmap" / "iter0.eval.json"
        )
        code = main(["kappa", "--rater-a", str(tmp_path / "a"), "--rater-b", str(tmp_path / "b"),
                     "--task", "roadmap"])
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        assert result["n"] == 14
        assert -1.0 <= result["kappa"] <= 1.0

    def test_report_command(self, tmp_path, capsys):
        script = write_script(tmp_path)
        out_dir = tmp_path / "out"
        assert main(
            ["run", str(LISTING_PATH), "--provider", "scripted", "--script", str(script),
             "--out-dir", str(out_dir)]
        ) == 0
        code = main(["report", "--out-dir", str(out_dir), "--task", "roadmap"])
        assert code == 0
        out = capsys.readouterr().out
        assert LISTING_ID in out
        assert "1.00" in out

        assert main(["report", "--out-dir", str(out_dir), "--task", "roadmap", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["rows"][0]["label"] == LISTING_ID
        assert payload["aggregates"]["accepted"]["mean"] == 1.0

    def test_init_prompts(self, tmp_path):
        code = main(["init-prompts", str(tmp_path / "prompts")])
        assert code == 0
        for task in ("roadmap", "mapping", "procedure"):
            assert (tmp_path / "prompts" / task / "v0" / "manifest.json").is_file()


class TestConfig:
    def test_unknown_config_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            config_from_dict({"bogus": 1})

    def test_provider_validated(self):
        with pytest.raises(ValueError):
            PipelineConfig(provider="telepathy")

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            PipelineConfig(threshold=0.0)

    def test_max_iterations_zero_runs_only_the_original(self, tmp_path):
        from conftest import counts_for_total

        script = golden_script()
        script["judge:roadmap:iter0"] = [judge_response(Task.ROADMAP, counts_for_total(50))]
        config = PipelineConfig(out_dir=tmp_path / "out", max_iterations=0)
        result = run_manual(LISTING_PATH, config, ScriptedBackend(script))
        loop = json.loads((result.out_dir / "roadmap" / "loop.json").read_text())
        assert len(loop["iterations"]) == 1
        assert loop["reached_threshold"] is False


class TestProviders:
    def test_live_provider_requires_base_url_and_key(self, tmp_path, monkeypatch, capsys):
        monkeypatch.delenv("MANUAL2KG_BASE_URL", raising=False)
        monkeypatch.delenv("MANUAL2KG_API_KEY", raising=False)
        code = main(
            ["run", str(LISTING_PATH), "--provider", "live", "--out-dir", str(tmp_path / "out")]
        )
        assert code == 3
        assert "MANUAL2KG_BASE_URL" in capsys.readouterr().err

    def test_live_provider_built_from_env(self, monkeypatch):
        from manual2kg.gateway import LiveBackend
        from manual2kg.pipeline import ProviderFactory

        monkeypatch.setenv("MANUAL2KG_BASE_URL", "https://api.example.test/v1")
        monkeypatch.setenv("MANUAL2KG_API_KEY", "secret")
        factory = ProviderFactory(PipelineConfig(provider="live"))
        backend = factory.make()
        assert isinstance(backend, LiveBackend)
        assert backend.base_url == "https://api.example.test/v1"

    def test_custom_prompts_dir_is_used(self, tmp_path):
        prompts_dir = tmp_path / "prompts"
        assert main(["init-prompts", str(prompts_dir)]) == 0
        overview = prompts_dir / "roadmap" / "v0" / "overview.txt"
        overview.write_text("CUSTOM OVERVIEW TEXT " + overview.read_text())

        captured: list[str] = []
        inner = ScriptedBackend(golden_script())

        class Spy:
            def complete(self, req):
                captured.append(req.user_text)
                return inner.complete(req)

        config = PipelineConfig(out_dir=tmp_path / "out", prompts_dir=prompts_dir)
        run_manual(LISTING_PATH, config, Spy())
        roadmap_prompts = [t for t in captured if "<Roadmap>" in t and "<Procedure>" not in t]
        assert roadmap_prompts
        assert all("CUSTOM OVERVIEW TEXT" in t for t in roadmap_prompts)
