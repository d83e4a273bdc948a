from __future__ import annotations

import json

import pytest

from segdst.cli import main
from segdst.core import SchemaError
from segdst.llm import GenerationParams, MockBackend, ReplayBackend, cache_key
from segdst.prompt import PromptVariant, build_prompt
from segdst.runner import RunConfig, gold_response, run_predictions, score_predictions

from conftest import DIALSEG_DIR, MWOZ_DIR, OPEN_JSONL

OPEN_ARGS = ["--dataset", str(OPEN_JSONL), "--format", "jsonl"]


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_dir(capsys, tmp_path, name, *extra, args=OPEN_ARGS, variant="S3DST_JOINT"):
    out = tmp_path / name
    code, stdout, err = run_cli(capsys, "run", *args, "--variant", variant, "--out", str(out), *extra)
    assert code == 0, err
    return out, json.loads(stdout)


class TestRun:
    def test_gold_echo_is_perfect_and_deterministic(self, capsys, tmp_path):
        a, report = run_dir(capsys, tmp_path, "a")
        b, _ = run_dir(capsys, tmp_path, "b", "--concurrency", "3")
        for name in ("predictions.jsonl", "report.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert report["jga"] == {"I/D": 1.0, "S/I/D": 1.0}
        assert report["pk"] == 0.0 and report["window_diff"] == 0.0
        assert report["counts"] == {"conversations": 5, "turns": 15, "parse_failures": 0}
        assert report["schema_version"] == 1 and report["variant"] == "S3DST_JOINT"

    def test_predictions_once_per_conversation(self, capsys, tmp_path, open_bundle):
        out, _ = run_dir(capsys, tmp_path, "a")
        ids = [json.loads(l)["id"] for l in (out / "predictions.jsonl").read_text().splitlines()]
        assert ids == [c.id for c in open_bundle.conversations]

    def test_score_matches_run(self, capsys, tmp_path):
        out, report = run_dir(capsys, tmp_path, "a")
        code, stdout, _ = run_cli(capsys, "score", *OPEN_ARGS, "--predictions", str(out / "predictions.jsonl"))
        assert code == 0 and json.loads(stdout) == report
        assert json.loads((out / "report.json").read_text()) == report

    def test_score_metric_subset(self, capsys, tmp_path):
        out, _ = run_dir(capsys, tmp_path, "a")
        code, stdout, _ = run_cli(capsys, "score", *OPEN_ARGS, "--predictions", str(out / "predictions.jsonl"),
                                  "--metrics", "pk")
        report = json.loads(stdout)
        assert code == 0 and "pk" in report and "jga" not in report and "window_diff" not in report

    def test_missing_prediction_scored_wrong(self, capsys, tmp_path, caplog):
        out, _ = run_dir(capsys, tmp_path, "a")
        lines = (out / "predictions.jsonl").read_text().splitlines()
        partial = tmp_path / "partial.jsonl"
        partial.write_text("\n".join(l for l in lines if '"conv-004"' not in l) + "\n")
        code, stdout, _ = run_cli(capsys, "score", *OPEN_ARGS, "--predictions", str(partial))
        report = json.loads(stdout)
        assert code == 0
        assert report["jga"]["I/D"] == pytest.approx(10 / 15)
        assert "conv-004" in caplog.text

    def test_scripted_mock_responses(self, capsys, tmp_path):
        script = tmp_path / "script.jsonl"
        script.write_text(json.dumps({"id": "conv-005", "response": "I cannot help with that."}) + "\n")
        args = OPEN_ARGS + ["--limit", "5"]
        code, _, err = run_cli(capsys, "run", *args, "--variant", "S3DST_JOINT", "--mock-responses", str(script),
                               "--out", str(tmp_path / "o"))
        assert code == 1 and "no response" in err

    def test_dialseg_segment_only(self, capsys, tmp_path):
        _, report = run_dir(capsys, tmp_path, "d", args=["--dataset", str(DIALSEG_DIR), "--format", "dialseg711"],
                            variant="S3DST_SEGMENT_ONLY")
        assert "jga" not in report
        assert report["pk"] == 0.0 and report["window_diff"] == 0.0
        assert report["per_label_accuracy"] == {"segment": 1.0}
        assert report["counts"]["turns"] == 11

    def test_mwoz(self, capsys, tmp_path):
        _, report = run_dir(capsys, tmp_path, "m", args=["--dataset", str(MWOZ_DIR), "--format", "mwoz24"],
                            variant="S3DST_MWOZ")
        assert report["jga"] == {"slots": 1.0} and "pk" not in report

    def test_variant_dataset_mismatch(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "run", "--dataset", str(MWOZ_DIR), "--format", "mwoz24",
                               "--variant", "S3DST_JOINT", "--schema", "open_domain", "--out", str(tmp_path / "x"))
        assert code == 1 and "slot-state gold" in err


class TestReplayCli:
    def test_record_then_strict_replay(self, capsys, tmp_path):
        cache = tmp_path / "cache"
        a, _ = run_dir(capsys, tmp_path, "rec", "--backend", "record", "--cache-dir", str(cache))
        b, _ = run_dir(capsys, tmp_path, "rep", "--backend", "replay", "--cache-dir", str(cache))
        assert (a / "predictions.jsonl").read_bytes() == (b / "predictions.jsonl").read_bytes()
        code, stdout, _ = run_cli(capsys, "cache", "stats", str(cache))
        assert code == 0 and json.loads(stdout)["records"] == 5

    def test_strict_replay_miss(self, capsys, tmp_path, open_bundle, open_schema):
        code, _, err = run_cli(capsys, "run", *OPEN_ARGS, "--variant", "S3DST_JOINT", "--backend", "replay",
                               "--cache-dir", str(tmp_path / "empty"), "--out", str(tmp_path / "o"))
        first = build_prompt(PromptVariant.S3DST_JOINT, open_bundle.conversations[0], open_schema).text
        assert code == 1
        assert cache_key(first, GenerationParams()) in err

    def test_render_equals_cached_prompt(self, capsys, tmp_path):
        cache = tmp_path / "cache"
        run_dir(capsys, tmp_path, "rec", "--backend", "record", "--cache-dir", str(cache))
        code, rendered, _ = run_cli(capsys, "render", *OPEN_ARGS, "--variant", "S3DST_JOINT", "--id", "conv-002")
        assert code == 0
        record = ReplayBackend(cache).lookup(rendered, GenerationParams())
        assert record is not None and record.prompt == rendered


class TestRender:
    def test_joint_has_relation_tag(self, capsys):
        _, out, _ = run_cli(capsys, "render", *OPEN_ARGS, "--variant", "S3DST_JOINT", "--id", "conv-001")
        assert "<valid_preceding_topical_relation>" in out

    def test_tbt_has_no_segmentation_tags(self, capsys):
        _, out, _ = run_cli(capsys, "render", *OPEN_ARGS, "--variant", "TBT_DST", "--id", "conv-001")
        assert "preceding_topical_relation" not in out

    def test_unknown_id(self, capsys):
        code, _, err = run_cli(capsys, "render", *OPEN_ARGS, "--variant", "TBT_DST", "--id", "nope")
        assert code == 2 and "nope" in err

    def test_http_needs_endpoint(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "run", *OPEN_ARGS, "--variant", "TBT_DST", "--backend", "http",
                               "--out", str(tmp_path))
        assert code == 2 and "--endpoint" in err


def test_convert(capsys, tmp_path):
    out = tmp_path / "mwoz.jsonl"
    code, stdout, _ = run_cli(capsys, "convert", "--dataset", str(MWOZ_DIR), "--format", "mwoz24", "--out", str(out))
    assert code == 0 and "2 conversations (5 turns)" in stdout
    assert len(out.read_text().splitlines()) == 2


def test_split_flag(capsys, tmp_path):
    _, report = run_dir(capsys, tmp_path, "s", "--split", "test", "--n-dev", "2", "--seed", "1")
    assert report["counts"]["conversations"] == 3


class TestRunner:
    def test_concurrency_bounded_and_ordered(self, open_bundle, open_schema):
        by_prompt = {build_prompt(PromptVariant.S3DST_JOINT, c, open_schema).text:
                     gold_response(c, open_bundle.gold[c.id], PromptVariant.S3DST_JOINT, open_schema)
                     for c in open_bundle.conversations}
        mock = MockBackend(lambda p: by_prompt[p], delay=0.03)
        config = RunConfig(PromptVariant.S3DST_JOINT, open_schema, concurrency=2)
        preds = run_predictions(open_bundle, config, mock)
        assert [p["id"] for p in preds] == [c.id for c in open_bundle.conversations]
        assert 1 < mock.max_in_flight <= 2

    def test_tbt_on_record_gold(self, open_bundle, open_schema):
        mock = MockBackend(lambda p: "garbage")
        preds = run_predictions(open_bundle, RunConfig(PromptVariant.TBT_DST, open_schema), mock)
        report = score_predictions(preds, open_bundle, PromptVariant.TBT_DST, open_schema)
        assert report.jga == {"I/D": 0.0} and report.pk is None
        assert report.counts["parse_failures"] == 15

    def test_incompatible(self, dialseg_bundle, segment_schema):
        with pytest.raises(SchemaError):
            run_predictions(dialseg_bundle, RunConfig(PromptVariant.TBT_DST, segment_schema), MockBackend([]))
