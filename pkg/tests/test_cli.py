import json
import shutil
import subprocess
import sys
import threading

import pytest

from pipeline_run import FIXTURES, cli, run_pipeline
from provhunt.errors import ConfigurationError
from provhunt.neural import save_checkpoint
from provhunt.pipeline import PipelineConfig, StageRecord, Workdir
from schemas import ALERTS, DECISION, METRICS, check_all, check_checkpoint, check_json, check_jsonl


@pytest.fixture
def fixtures(tmp_path):
    """Private copy of the fixture directory, so relative config paths stay inside tmp."""
    dst = tmp_path / "fx"
    shutil.copytree(FIXTURES, dst)
    return dst


def _jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


# -- usage and exit codes ---------------------------------------------------------

def test_unknown_flag_is_usage_error(capsys):
    assert cli("hunt", "--graphs", "x", "--bogus") == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--bogus" in err


def test_missing_subcommand_and_version(capsys):
    assert cli() == 1
    assert cli("--version") == 0
    assert capsys.readouterr().out.strip()


def test_missing_input_file(tmp_path, capsys):
    assert cli("ingest", "--workdir", tmp_path / "w", "--logs", tmp_path / "nope.jsonl") == 1
    assert "not found" in capsys.readouterr().err
    assert cli("eval", "--workdir", tmp_path / "w", "--decisions", tmp_path / "a", "--truth", tmp_path / "b") == 1


def test_runtime_failure_exit_code(tmp_path, fixtures, capsys):
    blocker = tmp_path / "dir_in_the_way"
    (blocker / "child").mkdir(parents=True)
    code = cli("ingest", "--workdir", tmp_path / "w", "--logs", fixtures / "audit.jsonl", "--out", blocker)
    assert code == 2
    assert capsys.readouterr().err.startswith("provhunt ingest:")


def test_sample_without_graph_names_the_gap(tmp_path, capsys):
    assert cli("sample", "--workdir", tmp_path) == 1
    assert "no graph given" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "provhunt", "--help"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    for name in ("ingest", "sample", "synth", "denoise", "train", "index", "hunt", "eval", "validate-alerts"):
        assert name in proc.stdout


# -- eval -----------------------------------------------------------------------

def test_eval_hand_counted(tmp_path, capsys):
    hit = {"report_id": "R1", "similarity": 0.9, "prob": 0.95}
    other = {"report_id": "R9", "similarity": 0.8, "prob": 0.9}
    decisions = _jsonl(tmp_path / "d.jsonl", [
        {"graph_id": "g1", "matches": [hit]},          # malicious, exact -> tp
        {"graph_id": "g2", "matches": [hit, other]},   # malicious, extra -> fp
        {"graph_id": "g3", "matches": []},             # malicious, missed -> fn
        {"graph_id": "g4", "matches": []},             # benign, quiet -> tn
        {"graph_id": "g5", "matches": [other]},        # benign, flagged -> fp
    ])
    truth = _jsonl(tmp_path / "t.jsonl", [
        {"graph_id": "g1", "report_id": "R1"}, {"graph_id": "g2", "report_id": "R1"},
        {"graph_id": "g3", "report_id": "R3"}, {"graph_id": "g4", "report_id": None}, {"graph_id": "g5"},
    ])
    assert cli("eval", "--workdir", tmp_path / "w", "--decisions", decisions, "--truth", truth) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["counts"] == {"tp": 1, "fp": 2, "tn": 1, "fn": 1}
    assert out["precision"] == pytest.approx(1 / 3) and out["recall"] == 0.5
    assert out["fpr"] == pytest.approx(2 / 3) and out["accuracy"] == 0.4
    assert [o["bin"] for o in out["outcomes"]] == ["tp", "fp", "fn", "tn", "fp"]


def test_eval_truth_missing_graph(tmp_path, capsys):
    decisions = _jsonl(tmp_path / "d.jsonl", [{"graph_id": "g1", "matches": []}])
    truth = _jsonl(tmp_path / "t.jsonl", [{"graph_id": "other", "report_id": None}])
    assert cli("eval", "--workdir", tmp_path, "--decisions", decisions, "--truth", truth) == 1


# -- index / hunt / validate-alerts with a memorized model -------------------------------

@pytest.fixture(scope="module")
def memorized(overfit_run, tmp_path_factory):
    pairs16, result, _ = overfit_run
    root = tmp_path_factory.mktemp("memorized")
    ck = root / "model.ckpt"
    save_checkpoint(ck, result.model)
    alerts = _jsonl(root / "alerts.jsonl", [p.graph.to_dict() for p in pairs16[:10]])
    # only the first two alerts have a report in the corpus
    reports = _jsonl(root / "reports.jsonl", [{"id": p.pair_id, "text": p.report} for p in pairs16[:2]])
    labels = _jsonl(root / "labels.jsonl", [{"graph_id": p.pair_id, "threat": i < 2} for i, p in enumerate(pairs16[:10])])
    return pairs16, ck, alerts, reports, labels


def test_validate_alerts_afr_trr(memorized, tmp_path, capsys):
    pairs16, ck, alerts, reports, labels = memorized
    w = tmp_path / "w"
    assert cli("index", "--workdir", w, "--checkpoint", ck, "--reports", reports) == 0
    capsys.readouterr()
    assert cli("validate-alerts", "--workdir", w, "--alerts", alerts, "--labels", labels) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["afr"] == pytest.approx(0.8) and out["trr"] == 1.0
    assert (out["total_alerts"], out["filtered"], out["true_alerts"], out["retained_true"]) == (10, 8, 2, 2)
    kept = [a["graph_id"] for a in out["alerts"] if not a["filtered"]]
    assert kept == [p.pair_id for p in pairs16[:2]]


def test_hunt_stdout_and_candidates(memorized, tmp_path, capsys):
    pairs16, ck, alerts, reports, _ = memorized
    w = tmp_path / "w"
    assert cli("index", "--workdir", w, "--checkpoint", ck, "--reports", reports) == 0
    capsys.readouterr()
    # checkpoint and corpus come from the manifest's index record
    assert cli("hunt", "--workdir", w, "--graphs", alerts, "--k", 2, "--candidates") == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(rows) == 10
    assert rows[0]["verdict"] == "match" and rows[0]["matches"][0]["report_id"] == pairs16[0].pair_id
    assert all(len(r["candidates"]) == 2 for r in rows)


def test_validate_alerts_rejects_empty_and_mismatched(memorized, tmp_path, capsys):
    _, ck, alerts, reports, labels = memorized
    w = tmp_path / "w"
    assert cli("index", "--workdir", w, "--checkpoint", ck, "--reports", reports) == 0
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    assert cli("validate-alerts", "--workdir", w, "--alerts", empty, "--labels", labels) == 1
    assert "no " in capsys.readouterr().err
    short = _jsonl(tmp_path / "short.jsonl", [json.loads(labels.read_text().splitlines()[0])])
    assert cli("validate-alerts", "--workdir", w, "--alerts", alerts, "--labels", short) == 1
    assert "one to one" in capsys.readouterr().err


def test_hunt_rejects_index_corpus_mismatch(memorized, tmp_path):
    pairs16, ck, alerts, reports, _ = memorized
    w = tmp_path / "w"
    assert cli("index", "--workdir", w, "--checkpoint", ck, "--reports", reports) == 0
    other = _jsonl(tmp_path / "other.jsonl", [{"id": "zzz", "text": "unrelated"}])
    assert cli("hunt", "--workdir", w, "--graphs", alerts, "--corpus", other) == 1


# -- config and workdir ------------------------------------------------------------

def test_pipeline_config_from_file(fixtures):
    cfg = PipelineConfig.from_file(fixtures / "pipeline.toml")
    assert cfg.seed == 7 and cfg.sampling.rng_seed == 7 and cfg.train.seed == 7
    assert cfg.logs == str((fixtures / "audit.jsonl").resolve())
    assert cfg.model.d == 16 and cfg.retrieval.k == 10
    assert cfg.with_seed(3).digest() != cfg.digest()


@pytest.mark.parametrize("text", [
    "bogus = 1\n",
    "[paths]\nlogz = 'x'\n",
    "[train]\nlearning_rate = 0.1\n",
    "[retrieval]\nk = 0\n",
])
def test_pipeline_config_rejects(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_file(p)


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("[model]\nd = 10\nheads = 4\n", encoding="utf-8")
    assert cli("ingest", "--config", p, "--workdir", tmp_path) == 1


def test_workdir_content_addressed_and_manifest(tmp_path):
    w = Workdir(tmp_path)
    a = w.store("ingest", b"hello", ".json")
    assert a == w.store("ingest", b"hello", ".json") and a.read_bytes() == b"hello"
    assert a != w.store("ingest", b"other", ".json")
    w.record("ingest", StageRecord(str(a), "d" * 64, {}, 1, True), "c" * 64)
    man = w.manifest()
    assert man["config_digest"] == "c" * 64 and w.latest("ingest") == str(a)
    assert w.latest("train") is None


def test_workdir_concurrent_records(tmp_path):
    stages = [f"s{i}" for i in range(16)]

    def go(name):
        Workdir(tmp_path).record(name, StageRecord(name, "0" * 64, {}, 0, True))

    threads = [threading.Thread(target=go, args=(s,)) for s in stages]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(Workdir(tmp_path).manifest()["stages"]) == sorted(stages)


def test_manifest_chains_stage_digests(fixtures, tmp_path):
    w = tmp_path / "w"
    assert cli("ingest", "--config", fixtures / "pipeline.toml", "--workdir", w) == 0
    assert cli("sample", "--config", fixtures / "pipeline.toml", "--workdir", w) == 0
    man = json.loads((w / "manifest.json").read_text())
    assert man["stages"]["sample"]["inputs"]["graph"] == man["stages"]["ingest"]["digest"]
    assert man["stages"]["sample"]["seed"] == 7


# -- training through the CLI ------------------------------------------------------

def _train(fixtures, workdir, seed):
    common = ["--config", fixtures / "pipeline.toml", "--workdir", workdir, "--seed", seed, "--offline"]
    for stage in ("ingest", "sample", "synth", "train"):
        assert cli(stage, *common) == 0
    man = json.loads((workdir / "manifest.json").read_text())
    ck = man["stages"]["train"]["output"]
    return open(ck, "rb").read()


def test_train_same_seed_identical_checkpoints(fixtures, tmp_path):
    a = _train(fixtures, tmp_path / "a", 7)
    b = _train(fixtures, tmp_path / "b", 7)
    assert a == b
    assert _train(fixtures, tmp_path / "c", 8) != a


def test_train_flag_overrides(fixtures, tmp_path, capsys):
    w = tmp_path / "w"
    common = ["--config", fixtures / "pipeline.toml", "--workdir", w, "--offline"]
    for stage in ("ingest", "sample", "synth"):
        assert cli(stage, *common) == 0
    assert cli("train", *common, "--epochs", 2, "--d", 8, "--out", w / "m.ckpt") == 0
    assert check_checkpoint(w / "m.ckpt")["d"] == 8
    assert len((w / "m.loss.csv").read_text().splitlines()) == 3


# -- full pipeline -------------------------------------------------------------------

def test_end_to_end_outputs_schema_valid(tmp_path):
    out = run_pipeline(tmp_path / "w")
    check_all(out, tmp_path / "w", epochs=4)
    metrics = check_json(out["eval"], METRICS)
    truth = [json.loads(line) for line in out["truth"].read_text().splitlines()]
    assert metrics["counts"]["tp"] + metrics["counts"]["fn"] <= sum(t["report_id"] is not None for t in truth)
    check_jsonl(out["hunt"], DECISION)
    check_json(out["validate-alerts"], ALERTS)
