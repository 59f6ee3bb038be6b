import json

import pytest
from click.testing import CliRunner

from kgcorrect.cli import main
from kgcorrect.judge import request_hash
from kgcorrect.judge import render_groundedness_prompt, render_similarity_prompt

from .conftest import (
    PRICING_CONTEXT,
    REGISTRAR_CONTEXT,
    REGISTRAR_EXPECTED,
    REGISTRAR_GENERATED,
)


@pytest.fixture
def runner():
    return CliRunner()


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestExtract:
    def test_empty_file(self, runner, tmp_path):
        src = write(tmp_path / "in.txt", "")
        out = tmp_path / "out.jsonl"
        result = runner.invoke(main, ["extract", "--in", src, "--out", str(out)])
        assert result.exit_code == 0
        assert out.read_text(encoding="utf-8") == ""

    def test_registrar_context(self, runner, tmp_path):
        src = write(tmp_path / "ctx.txt", REGISTRAR_CONTEXT)
        out = tmp_path / "out.jsonl"
        result = runner.invoke(main, ["extract", "--in", src, "--out", str(out)])
        assert result.exit_code == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert any(r["object"] == "Oray" and r["relation"] == "are" for r in records)
        assert all(r["subject"].startswith("Domain registrars") for r in records)

    def test_bad_path_exit_2(self, runner, tmp_path):
        result = runner.invoke(main, ["extract", "--in", str(tmp_path / "missing.txt"),
                                      "--out", str(tmp_path / "o.jsonl")])
        assert result.exit_code == 2


class TestCorrect:
    def test_registrar_stdout_matches_golden(self, runner, tmp_path):
        gen = write(tmp_path / "gen.txt", REGISTRAR_GENERATED)
        ctx = write(tmp_path / "ctx.txt", REGISTRAR_CONTEXT)
        result = runner.invoke(main, ["correct", "--generated", gen, "--context", ctx])
        assert result.exit_code == 0
        assert result.output.rstrip("\n") == REGISTRAR_EXPECTED

    def test_check_grounded_exit_0(self, runner, tmp_path):
        gen = write(tmp_path / "gen.txt", PRICING_CONTEXT)
        ctx = write(tmp_path / "ctx.txt", PRICING_CONTEXT)
        result = runner.invoke(main, ["correct", "--generated", gen, "--context", ctx, "--check"])
        assert result.exit_code == 0

    def test_check_hallucinated_exit_1(self, runner, tmp_path):
        gen = write(tmp_path / "gen.txt", REGISTRAR_GENERATED)
        ctx = write(tmp_path / "ctx.txt", REGISTRAR_CONTEXT)
        result = runner.invoke(main, ["correct", "--generated", gen, "--context", ctx, "--check"])
        assert result.exit_code == 1

    def test_no_grounding_source_exit_2(self, runner, tmp_path):
        gen = write(tmp_path / "gen.txt", "A is B.")
        result = runner.invoke(main, ["correct", "--generated", gen])
        assert result.exit_code == 2

    def test_both_grounding_sources_exit_2(self, runner, tmp_path):
        gen = write(tmp_path / "gen.txt", "A is B.")
        result = runner.invoke(main, ["correct", "--generated", gen,
                                      "--context", gen, "--store", gen])
        assert result.exit_code == 2

    def test_report_written(self, runner, tmp_path):
        gen = write(tmp_path / "gen.txt", REGISTRAR_GENERATED)
        ctx = write(tmp_path / "ctx.txt", REGISTRAR_CONTEXT)
        report_path = tmp_path / "report.json"
        result = runner.invoke(main, ["correct", "--generated", gen, "--context", ctx,
                                      "--report", str(report_path)])
        assert result.exit_code == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["corrected"] == REGISTRAR_EXPECTED
        assert report["actions"]
        assert report["match_log"]

    def test_store_grounding(self, runner, tmp_path):
        ctx = write(tmp_path / "ctx.txt", PRICING_CONTEXT)
        store_path = tmp_path / "store.ktst"
        build = runner.invoke(main, ["index", "build", "--corpus", ctx,
                                     "--store", str(store_path)])
        assert build.exit_code == 0
        gen = write(tmp_path / "gen.txt",
                    "Microsoft 365 Business Basic is $9 per user per month.")
        result = runner.invoke(main, ["correct", "--generated", gen, "--store", str(store_path)])
        assert result.exit_code == 0
        assert result.output.rstrip("\n") == \
            "Microsoft 365 Business Basic is $7.2 dollars per user per month."


class TestEval:
    def dataset(self, tmp_path, rows):
        lines = [json.dumps(r) for r in rows]
        return write(tmp_path / "data.jsonl", "\n".join(lines))

    def test_perfect_candidate_aggregate_one(self, runner, tmp_path):
        data = self.dataset(tmp_path, [
            {"id": "a", "prompt": "", "context": "", "reference": "same words here",
             "candidate": "same words here"}])
        out = tmp_path / "results.jsonl"
        result = runner.invoke(main, ["eval", "--dataset", data, "--out", str(out)])
        assert result.exit_code == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert lines[-1]["id"] == "__aggregate__"
        assert lines[-1]["rouge_l_f"] == pytest.approx(1.0)
        assert "groundedness" not in lines[-1]

    def test_mock_judge_fills_columns(self, runner, tmp_path):
        record = {"id": "a", "prompt": "q?", "context": "ctx", "reference": "ref",
                  "candidate": "cand"}
        data = self.dataset(tmp_path, [record])
        gs, gu = render_groundedness_prompt("ctx", "cand")
        ss, su = render_similarity_prompt("q?", "ref", "cand")
        fixture = write(tmp_path / "mock.jsonl", "\n".join([
            json.dumps({"hash": request_hash(gs, gu), "reply": "5"}),
            json.dumps({"hash": request_hash(ss, su), "reply": "4"}),
        ]))
        out = tmp_path / "results.jsonl"
        result = runner.invoke(main, ["eval", "--dataset", data, "--judge", "mock",
                                      "--judge-fixture", fixture, "--out", str(out)])
        assert result.exit_code == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert lines[0]["groundedness"] == 5
        assert lines[0]["gpt_similarity"] == 4

    def test_live_without_api_key_names_env_var(self, runner, tmp_path, monkeypatch):
        monkeypatch.delenv("TRUSTFUL_JUDGE_API_KEY", raising=False)
        data = self.dataset(tmp_path, [
            {"id": "a", "prompt": "", "context": "", "reference": "r", "candidate": "c"}])
        result = runner.invoke(main, ["eval", "--dataset", data, "--judge", "live",
                                      "--base-url", "https://judge.invalid", "--model", "m"])
        assert result.exit_code == 2
        assert "TRUSTFUL_JUDGE_API_KEY" in result.output

    def test_duplicate_ids_exit_2(self, runner, tmp_path):
        data = self.dataset(tmp_path, [
            {"id": "a", "prompt": "", "context": "", "reference": "r", "candidate": "c"},
            {"id": "a", "prompt": "", "context": "", "reference": "r2", "candidate": "c2"}])
        result = runner.invoke(main, ["eval", "--dataset", data])
        assert result.exit_code == 2

    def test_workers_ordering_stable(self, runner, tmp_path):
        rows = [{"id": f"r{i}", "prompt": "", "context": "", "reference": "x y",
                 "candidate": "x y"} for i in range(6)]
        data = self.dataset(tmp_path, rows)
        single = runner.invoke(main, ["eval", "--dataset", data])
        pooled = runner.invoke(main, ["eval", "--dataset", data, "--workers", "4"])
        assert single.output == pooled.output


class TestIndexCommands:
    def test_build_then_query_self(self, runner, tmp_path):
        ctx = write(tmp_path / "ctx.txt", "Contoso Basic is $5 per seat.")
        store_path = tmp_path / "store.ktst"
        assert runner.invoke(main, ["index", "build", "--corpus", ctx,
                                    "--store", str(store_path)]).exit_code == 0
        result = runner.invoke(main, ["index", "query", "--store", str(store_path),
                                      "--text", "Contoso Basic", "-k", "1"])
        assert result.exit_code == 0
        top = result.output.splitlines()[0].split("\t")
        assert top[0] == "Contoso Basic"
        assert top[3] == "exact"

    def test_alias_query_maps_m365(self, runner, tmp_path):
        ctx = write(tmp_path / "ctx.txt", PRICING_CONTEXT)
        store_path = tmp_path / "store.ktst"
        runner.invoke(main, ["index", "build", "--corpus", ctx, "--store", str(store_path)])
        aliases = write(tmp_path / "aliases.jsonl", json.dumps(
            {"alias": "M365 Business Basic", "canonical": "Microsoft 365 Business Basic"}))
        result = runner.invoke(main, ["index", "query", "--store", str(store_path),
                                      "--text", "M365 Business Basic", "-k", "1",
                                      "--aliases", aliases])
        assert result.exit_code == 0
        top = result.output.splitlines()[0].split("\t")
        assert top[0] == "Microsoft 365 Business Basic"
        assert top[3] == "alias"

    def test_missing_store_exit_2(self, runner, tmp_path):
        result = runner.invoke(main, ["index", "query", "--store",
                                      str(tmp_path / "nope.ktst"), "--text", "x"])
        assert result.exit_code == 2


class TestBundles:
    def test_assemble_and_augment(self, runner, tmp_path):
        rows = [
            {"id": "b1", "prompt": "How much is Basic?",
             "rag_results": ["Contoso Basic is $5 per seat."]},
            {"id": "b2", "prompt": "How much is Go?",
             "rag_results": ["Fabrikam Go is $9 per seat."]},
        ]
        src = write(tmp_path / "in.jsonl", "\n".join(json.dumps(r) for r in rows))
        out = tmp_path / "bundles.jsonl"
        result = runner.invoke(main, ["--seed", "3", "bundles", "--in", src,
                                      "--out", str(out), "--augment", "1"])
        assert result.exit_code == 0
        records = [json.loads(l) for l in out.read_text().splitlines()]
        assert [r["id"] for r in records] == ["b1", "b2"]
        for r in records:
            assert r["guided_context"].startswith(r["rag_context"])
            assert len(r["guided_context"]) > len(r["rag_context"])


class TestGlobalFlags:
    def test_config_file_sets_threshold(self, runner, tmp_path):
        config = write(tmp_path / "kg.conf", "threshold = 0.95\nquiet = true\n")
        gen = write(tmp_path / "gen.txt", REGISTRAR_GENERATED)
        ctx = write(tmp_path / "ctx.txt", REGISTRAR_CONTEXT)
        result = runner.invoke(main, ["--config", config, "correct",
                                      "--generated", gen, "--context", ctx])
        assert result.exit_code == 0

    def test_quiet_output_byte_stable(self, runner, tmp_path):
        gen = write(tmp_path / "gen.txt", REGISTRAR_GENERATED)
        ctx = write(tmp_path / "ctx.txt", REGISTRAR_CONTEXT)
        args = ["--quiet", "correct", "--generated", gen, "--context", ctx]
        assert runner.invoke(main, args).output == runner.invoke(main, args).output

    def test_bad_config_exit_2(self, runner, tmp_path):
        config = write(tmp_path / "kg.conf", "not a kv line")
        result = runner.invoke(main, ["--config", config, "extract", "--in", "x", "--out", "y"])
        assert result.exit_code == 2
