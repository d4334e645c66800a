import json
import shutil

import numpy as np
import pytest

from segfake.cli import main
from segfake.config import ConfigError, RunConfig, load_config
from segfake.synth import CorpusSpec, SpeakerSpec, generate_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    spk = SpeakerSpec("a", 110.0, {"UH": [450.0, 1100.0, 2400.0], "IY": [300.0, 2200.0, 2900.0]})
    generate_corpus(d, CorpusSpec(speakers=[spk], tokens_per_vowel=30), seed=11)
    return d


@pytest.fixture(scope="module")
def extracted(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    rc = main(["extract", "--manifest-path", str(corpus / "manifest.csv"), "--output-dir", str(out),
               "--families", "MF,LTFD,FBANK"])
    assert rc == 0
    return out


def test_extract_counts_match_declared(corpus, extracted):
    truth = json.loads((corpus / "ground_truth.json").read_text())
    lines = (extracted / "tokens.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# segfake version=0.1.0 seed=0 config=")
    mf = [ln for ln in lines[2:] if ln.split(",")[1] == "MF"]
    assert len(mf) == sum(sum(f["vowel_counts"].values()) for f in truth["files"])
    log = json.loads((extracted / "extraction_log.json").read_text())
    assert log["failures"] == [] and len(log["files"]) == 3


def test_evaluate_ranks_shifted_vowel_first(extracted, tmp_path):
    rc = main(["evaluate", "--tokens-path", str(extracted / "tokens.csv"), "--output-dir", str(tmp_path),
               "--families", "MF", "--repetitions", "5", "--pretest-grid", "1,2"])
    assert rc == 0
    rows = [ln.split(",") for ln in (tmp_path / "results_a.csv").read_text(encoding="utf-8").splitlines()[2:]]
    rvf = [r for r in rows if r[0] == "real_vs_fake"]
    assert rvf[0][1] == "MF [ʊ]"
    doc = json.loads((tmp_path / "results.json").read_text(encoding="utf-8"))
    assert doc["skipped_plans"] == []
    assert {c["feature"] for c in doc["comparisons"]} == {"MF [ʊ]", "MF [i]"}
    assert all(len(r["per_repetition"]) == 5 for r in doc["results"])
    assert (tmp_path / "scores.csv").read_text().splitlines()[1] == "speaker,family,phoneme,condition_pair,repetition,label,llr"


def test_evaluate_rerun_identical_bytes(extracted, tmp_path):
    args = ["evaluate", "--tokens-path", str(extracted / "tokens.csv"), "--families", "MF",
            "--repetitions", "3", "--pretest-grid", "1,2"]
    assert main(args + ["--output-dir", str(tmp_path / "x")]) == 0
    assert main(args + ["--output-dir", str(tmp_path / "y")]) == 0
    for name in ("results_a.csv", "results.json", "scores.csv"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_empty_plan_list(extracted, tmp_path):
    plans = tmp_path / "plans.json"
    plans.write_text("[]")
    rc = main(["evaluate", "--tokens-path", str(extracted / "tokens.csv"), "--plans-path", str(plans),
               "--output-dir", str(tmp_path)])
    assert rc == 0
    assert json.loads((tmp_path / "results.json").read_text())["results"] == []


def test_insufficient_plans_reported(extracted, tmp_path):
    plan = {"speaker": "a", "family": "MF", "condition_pair": "real_vs_fake", "phoneme": "ɑ", "repetitions": 2}
    plans = tmp_path / "plans.json"
    plans.write_text(json.dumps([plan]))
    rc = main(["evaluate", "--tokens-path", str(extracted / "tokens.csv"), "--plans-path", str(plans),
               "--output-dir", str(tmp_path)])
    assert rc == 2  # the only plan could not run
    doc = json.loads((tmp_path / "results.json").read_text())
    assert len(doc["skipped_plans"]) == 1 and doc["skipped_plans"][0]["n_tokens"] == {"A": 0, "B": 0}


def test_report_writes_plot_data(extracted, tmp_path):
    rc = main(["report", "--tokens-path", str(extracted / "tokens.csv"), "--output-dir", str(tmp_path)])
    assert rc == 0
    ell = (tmp_path / "ellipses_a.csv").read_text().splitlines()
    assert ell[1] == "phoneme,condition,mean_f2,mean_f1,major,minor,angle_rad" and len(ell) == 2 + 6
    dens = (tmp_path / "ltfd_a_s1_F1.csv").read_text().splitlines()
    assert dens[1] == "hz,density" and len(dens) == 2 + 512
    fb = (tmp_path / "fbank_a_fake.csv").read_text().splitlines()
    assert fb[1] == "band,mean,ci_lo,ci_hi" and len(fb) == 2 + 26


def test_pretest_command(extracted, tmp_path):
    rc = main(["pretest", "--tokens-path", str(extracted / "tokens.csv"), "--output-dir", str(tmp_path),
               "--families", "MF", "--pretest-grid", "1,2"])
    assert rc == 0
    doc = json.loads((tmp_path / "pretest.json").read_text())
    assert all(r["pretest"]["chosen_k"] in (1, 2) for r in doc["pretests"])


def test_corrupt_wav_is_isolated(corpus, tmp_path):
    d = tmp_path / "c"
    shutil.copytree(corpus, d)
    (d / "a_s2.wav").write_bytes(b"RIFF\x00\x00\x00\x00JUNK")
    rc = main(["extract", "--manifest-path", str(d / "manifest.csv"), "--output-dir", str(tmp_path / "o"), "--families", "MF"])
    assert rc == 0
    log = json.loads((tmp_path / "o" / "extraction_log.json").read_text())
    assert len(log["failures"]) == 1 and len(log["files"]) == 2


def test_all_files_fail_exit_2(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"nope")
    (tmp_path / "m.csv").write_text("file_path,textgrid_path,speaker,condition\nx.wav,x.TextGrid,s,real\n")
    assert main(["extract", "--manifest-path", str(tmp_path / "m.csv"), "--output-dir", str(tmp_path / "o")]) == 2


def test_empty_manifest(tmp_path, caplog):
    (tmp_path / "m.csv").write_text("file_path,textgrid_path,speaker,condition\n")
    assert main(["extract", "--manifest-path", str(tmp_path / "m.csv"), "--output-dir", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "tokens.csv").read_text().splitlines()
    assert len(lines) == 2  # metadata header and column header only
    assert any("no files" in r.message for r in caplog.records)


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1
    assert main(["extract", "--output-dir", str(tmp_path)]) == 1
    assert main(["extract", "--manifest-path", str(tmp_path / "missing.csv")]) == 1
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"not_a_key": 1}))
    assert main(["evaluate", "--config", str(cfg)]) == 1


def test_config_file_and_flag_override(tmp_path, extracted):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tokens_path": str(extracted / "tokens.csv"), "repetitions": 2, "families": ["MF"],
                               "pretest_grid": [1], "output_dir": str(tmp_path / "o")}))
    assert main(["evaluate", "--config", str(cfg), "--master-seed", "3"]) == 0
    head = (tmp_path / "o" / "results_a.csv").read_text().splitlines()[0]
    assert "seed=3" in head


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        p = tmp_path / "c.json"
        p.write_text('{"repetitions": 3, "colour": "red"}')
        load_config(p)
    with pytest.raises(ConfigError):
        RunConfig(manifest_path=str(tmp_path / "nope.csv")).validate()
    with pytest.raises(ConfigError):
        RunConfig(split=1.5).validate()
    assert RunConfig(output_dir="a").digest() == RunConfig(output_dir="b").digest()
    assert RunConfig(master_seed=1).digest() != RunConfig(master_seed=2).digest()


def test_synth_corpus_command(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"speakers": [{"name": "q", "f0_hz": 120.0, "vowels": {"IY": [300, 2200, 2900]}}],
                                "tokens_per_vowel": 2}))
    assert main(["synth-corpus", "--out", str(tmp_path / "c"), "--seed", "4", "--spec", str(spec)]) == 0
    assert (tmp_path / "c" / "manifest.csv").read_text().count("\n") == 4
