import json

import numpy as np
import pytest

from grangerrca.cli import main
from grangerrca.errors import ConfigError
from grangerrca.pipeline import PipelineConfig, run_pipeline
from grangerrca.series import SeriesMatrix

FAST = ["--window", "8", "--epochs", "1", "--seed", "3"]


@pytest.fixture
def csv_file(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 200))
    x[1, 1:] += 0.8 * x[0, :-1]
    x[2, 150:] += 6.0
    path = tmp_path / "case.csv"
    SeriesMatrix(("svc_a", "svc_b", "svc_latency"), x).write_csv(path)
    return path


def last_json_line(text):
    return json.loads(text.strip().splitlines()[-1])


def test_pipeline_writes_artifacts(tmp_path, csv_file, capsys):
    out = tmp_path / "out"
    code = main(["pipeline", "--input", str(csv_file), "--trigger", "svc_latency", "--topk", "5",
                 "--out", str(out), *FAST])
    assert code == 0
    for name in ("encoder.ckpt.json", "alpha.json", "graph_raw.dot", "graph_raw.json", "graph_dag.dot",
                 "graph_dag.json", "ranking.json"):
        assert (out / name).exists(), name
    doc = json.loads((out / "ranking.json").read_text())
    assert doc["trigger"] == "svc_latency"
    assert doc["provenance"]["seed"] == 3
    assert "svc_latency" in capsys.readouterr().out


def test_pipeline_bytes_identical_and_config_replay(tmp_path, csv_file):
    args = ["pipeline", "--input", str(csv_file), "--trigger", "auto", "--no-pretrain"]
    assert main([*args, "--out", str(tmp_path / "a"), *FAST]) == 0
    assert main([*args, "--out", str(tmp_path / "b"), *FAST]) == 0
    assert main([*args, "--out", str(tmp_path / "c"), "--config", str(tmp_path / "a" / "ranking.json")]) == 0
    first = (tmp_path / "a" / "ranking.json").read_bytes()
    assert first == (tmp_path / "b" / "ranking.json").read_bytes()
    assert first == (tmp_path / "c" / "ranking.json").read_bytes()


def test_unknown_trigger_exit_code(tmp_path, csv_file, capsys):
    code = main(["pipeline", "--input", str(csv_file), "--trigger", "nope", "--out", str(tmp_path), *FAST])
    assert code == 5
    err = last_json_line(capsys.readouterr().err)
    assert err["stage"] == "trigger" and err["error"] == "UnknownNode"


def test_unknown_flag_is_usage_error(csv_file):
    with pytest.raises(SystemExit) as exc:
        main(["pipeline", "--input", str(csv_file), "--trigger", "auto", "--bogus"])
    assert exc.value.code == 2


def test_invalid_config_exit_code(tmp_path, csv_file, capsys):
    code = main(["pipeline", "--input", str(csv_file), "--trigger", "auto", "--window", "0", "--out", str(tmp_path)])
    assert code == 3
    assert last_json_line(capsys.readouterr().err)["stage"] == "config"


def test_missing_input_exit_code(tmp_path, capsys):
    code = main(["pipeline", "--input", str(tmp_path / "none.csv"), "--trigger", "auto", "--out", str(tmp_path)])
    assert code == 4


def test_stage_commands(tmp_path, csv_file, capsys):
    assert main(["pretrain", "--input", str(csv_file), "--out", str(tmp_path), *FAST]) == 0
    ckpt = tmp_path / "encoder.ckpt.json"
    assert ckpt.exists()
    assert main(["discover", "--input", str(csv_file), "--out", str(tmp_path), "--encoder", str(ckpt), *FAST]) == 0
    capsys.readouterr()
    assert main(["diagnose", "--graph", str(tmp_path / "graph_dag.json"), "--trigger", "svc_latency"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["trigger"] == "svc_latency"
    assert all(r["node"] != "svc_latency" for r in doc["ranking"])
    assert main(["diagnose", "--graph", str(tmp_path / "graph_dag.dot"), "--trigger", "svc_a",
                 "--out", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["trigger"] == "svc_a"


def test_diagnose_unknown_trigger(tmp_path, capsys):
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"nodes": ["a", "b"], "edges": [["a", "b"]]}))
    assert main(["diagnose", "--graph", str(g), "--trigger", "z"]) == 8


def test_synth_and_bench(tmp_path, capsys):
    suite = tmp_path / "suite"
    assert main(["synth", "--nodes", "4", "--cases", "2", "--timestamps", "150", "--out", str(suite)]) == 0
    assert len(list(suite.glob("*.csv"))) == 2
    assert main(["bench", "--suite", str(suite), "--no-pretrain", "--out", str(tmp_path / "rep.json"), *FAST]) == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["cases"] == 2 and rep["provenance"]["config"]["pipeline"]["pretrain"] is False
    assert main(["synth", "--nodes", "1", "--out", str(suite)]) == 3


def test_pretrain_toggle_changes_encoder():
    rng = np.random.default_rng(1)
    m = SeriesMatrix(("a", "b"), rng.normal(size=(2, 120)))
    base = dict(window=8, epochs=1, d=8, seed=0)
    with_pre = run_pipeline(m, "b", PipelineConfig(**base))
    without = run_pipeline(m, "b", PipelineConfig(**base, pretrain=False))
    assert with_pre.pretrain_result is not None and without.pretrain_result is None
    assert with_pre.encoder.trend_weight.tobytes() != without.encoder.trend_weight.tobytes()


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bogus": 1})


def test_malformed_graph_is_input_error(tmp_path):
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"nodes": ["a"], "edges": [{"from": "a"}]}))
    assert main(["diagnose", "--graph", str(g), "--trigger", "a"]) == 4
