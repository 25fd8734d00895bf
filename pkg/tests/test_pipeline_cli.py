import json
import struct

import numpy as np
import pytest

from attnsep.cli import main
from attnsep.masks import ThresholdPolicy, read_records_jsonl
from attnsep.pipeline import (ConfigError, RunConfig, config_from_obj,
                              discover_pairs, run_analyze)
from attnsep.synth import scene_disjoint, build_fixture, synth_corpus, write_fixture


@pytest.fixture()
def small_corpus(tmp_path):
    root = tmp_path / "fixtures"
    synth_corpus(root, 4, "random", seed=11)
    return root


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(input_dir="x", output_dir="y", jobs=0)
    with pytest.raises(ConfigError):
        RunConfig(input_dir="x", output_dir="y", fixed_taus=(), percentiles=())
    with pytest.raises(ConfigError):
        RunConfig(input_dir="x", output_dir="y", fixed_taus=(1.5,))
    with pytest.raises(ConfigError):
        RunConfig(input_dir="x", output_dir="y", kernel_a=0.0)


def test_config_from_obj_merging():
    cfg = config_from_obj({"input_dir": "a", "output_dir": "b",
                           "fixed_taus": [0.3]},
                          overrides={"fixed_taus": (0.5,), "jobs": 2,
                                     "percentiles": None})
    assert cfg.fixed_taus == (0.5,) and cfg.jobs == 2
    with pytest.raises(ConfigError):
        config_from_obj({"input_dir": "a", "output_dir": "b", "tau": 1})
    with pytest.raises(ConfigError):
        config_from_obj({"input_dir": "a"})


def test_discover_pairs_sorted(small_corpus):
    pairs = discover_pairs(small_corpus)
    assert len(pairs) == 4
    assert pairs == sorted(pairs)
    with pytest.raises(ConfigError):
        discover_pairs(small_corpus / "missing")


def test_run_analyze_outputs(small_corpus, tmp_path):
    out = tmp_path / "results"
    config = RunConfig(input_dir=str(small_corpus), output_dir=str(out),
                       fixed_taus=(0.3, 0.4), percentiles=(0.7,))
    result = run_analyze(config)
    assert result.exit_code == 0
    assert result.n_pairs == 4
    assert len(result.records) == 4 * 3  # pairs x policies
    with open(out / "records.jsonl") as fh:
        back = read_records_jsonl(fh)
    assert back == result.records
    report = json.loads((out / "report.json").read_text())
    assert report["n_ok"] == 4 and report["n_failed"] == 0
    policies = [(t["policy_kind"], t["policy_value"]) for t in report["tests"]]
    assert policies == [("fixed", 0.3), ("fixed", 0.4), ("percentile", 0.7)]
    assert (out / "records.csv").read_text().splitlines()[0].startswith("content,")


def test_run_analyze_partial_failure(small_corpus, tmp_path):
    # corrupt one dump: flip its magic
    victim = sorted(small_corpus.rglob("dump.bin"))[1]
    data = bytearray(victim.read_bytes())
    data[:4] = b"XXXX"
    victim.write_bytes(bytes(data))

    out = tmp_path / "results"
    config = RunConfig(input_dir=str(small_corpus), output_dir=str(out))
    result = run_analyze(config)
    assert result.exit_code == 1
    assert result.report["n_failed"] == 1
    assert result.report["n_ok"] == 3
    assert "pair_0001" in result.errors[0]["pair"]
    assert "magic" in result.errors[0]["error"]
    # good pairs still analyzed
    assert len(result.records) == 3


def test_run_analyze_flags_validation_findings(tmp_path):
    fixture = build_fixture(scene_disjoint())
    fixture.manifest.content_span = (0, 1)  # covers <s>
    write_fixture(fixture, tmp_path / "bad")
    config = RunConfig(input_dir=str(tmp_path), output_dir=str(tmp_path / "r"))
    result = run_analyze(config)
    assert result.exit_code == 1
    assert "special_token_in_span" in result.errors[0]["error"]


def test_cli_end_to_end(tmp_path, capsys):
    fixtures = tmp_path / "fx"
    assert main(["synth", "--out", str(fixtures), "--pairs", "3",
                 "--scene", "random", "--seed", "2"]) == 0
    assert main(["validate", "--in", str(fixtures)]) == 0
    out = capsys.readouterr().out
    assert "0 with findings" in out

    results = tmp_path / "res"
    code = main(["analyze", "--in", str(fixtures), "--out", str(results),
                 "--tau", "0.4,0.5", "--percentile", "0.7", "--jobs", "2"])
    assert code == 0
    assert (results / "records.csv").exists()

    assert main(["sweep", "--records", str(results / "records.jsonl"),
                 "--out", str(results)]) == 0
    sweep = json.loads((results / "sweep.json").read_text())
    assert len(sweep["points"]) == 3

    assert main(["summarize", "--records", str(results / "records.jsonl"),
                 "--out", str(results), "--policy-kind", "fixed",
                 "--policy-value", "0.4"]) == 0
    assert (results / "summary_content.csv").exists()
    assert (results / "summary_style.csv").exists()

    overlay = tmp_path / "ov.png"
    pair = fixtures / "pair_0000"
    assert main(["overlay", "--dump", str(pair / "dump.bin"),
                 "--manifest", str(pair / "manifest.json"),
                 "--image", str(pair / "image.png"),
                 "--component", "style", "--out", str(overlay)]) == 0
    assert overlay.exists()


def test_cli_corpus_gen(tmp_path, capsys):
    out = tmp_path / "corpus.jsonl"
    assert main(["corpus", "gen", "--out", str(out), "--stats"]) == 0
    printed = capsys.readouterr().out
    assert "prompts: 16000" in printed
    lines = out.read_text().splitlines()
    assert len(lines) == 16000
    first = json.loads(lines[0])
    assert first["template_id"] == 1 and first["id"] == 0


def test_cli_exit_codes(tmp_path):
    # invalid config -> 2
    assert main(["analyze", "--in", str(tmp_path), "--out",
                 str(tmp_path / "o"), "--tau", "1.5"]) == 2
    # missing input dir -> 2
    assert main(["analyze", "--in", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "o")]) == 2
    # config file with unknown key -> 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input_dir": "a", "output_dir": "b",
                               "sigma": 3}))
    assert main(["analyze", "--config", str(cfg)]) == 2
    # validate over a corpus with one broken pair -> 1
    fixtures = tmp_path / "fx"
    synth_corpus(fixtures, 2, "disjoint", seed=1)
    (fixtures / "pair_0001" / "dump.bin").write_bytes(b"DAMXgarbage")
    assert main(["validate", "--in", str(fixtures)]) == 1
    # summarize without policy over mixed records -> 2
    res = tmp_path / "res"
    assert main(["analyze", "--in", str(fixtures), "--out", str(res),
                 "--tau", "0.3,0.4"]) == 1  # partial failure, still writes
    assert main(["summarize", "--records", str(res / "records.jsonl"),
                 "--out", str(res)]) == 2


def test_cli_config_file_with_flag_override(tmp_path):
    fixtures = tmp_path / "fx"
    synth_corpus(fixtures, 1, "disjoint", seed=1)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "input_dir": str(fixtures),
        "output_dir": str(tmp_path / "from_file"),
        "fixed_taus": [0.2],
    }))
    assert main(["analyze", "--config", str(cfg)]) == 0
    assert (tmp_path / "from_file" / "records.csv").exists()
    # flag wins over file
    assert main(["analyze", "--config", str(cfg),
                 "--out", str(tmp_path / "flag_out")]) == 0
    assert (tmp_path / "flag_out" / "records.csv").exists()


def test_sweep_absent_policy_exit(tmp_path):
    fixtures = tmp_path / "fx"
    synth_corpus(fixtures, 1, "disjoint", seed=1)
    res = tmp_path / "res"
    assert main(["analyze", "--in", str(fixtures), "--out", str(res),
                 "--tau", "0.4"]) == 0
    # requesting a policy that was never analyzed flags it absent -> exit 1
    assert main(["sweep", "--records", str(res / "records.jsonl"),
                 "--out", str(res), "--tau", "0.4,0.9"]) == 1
    sweep = json.loads((res / "sweep.json").read_text())
    absent = {p["policy_value"]: p["absent"] for p in sweep["points"]}
    assert absent == {0.4: False, 0.9: True}
