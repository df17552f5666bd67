import csv
import filecmp
import json
from pathlib import Path

import pytest
import yaml

from conftest import write_corpus
from nml.cli import EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_STAGE, main
from nml.config import ConfigError, PipelineConfig, load_config
from nml.messages import LexiconClassifier, read_messages
from nml.pipeline import DEPENDS, STAGES, read_manifest
from nml.synthetic import gen_synthetic
from nml.variables import NAMES


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def files_under(root):
    return sorted(p.relative_to(root).as_posix() for p in Path(root).rglob("*") if p.is_file())


# --- synthetic corpus ----------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    truth = gen_synthetic(out, seed=11, weeks=150, message_rate=10)
    return out, truth


def test_synthetic_is_deterministic(tiny, tmp_path):
    out, _ = tiny
    gen_synthetic(tmp_path, seed=11, weeks=150, message_rate=10)
    names = files_under(out)
    assert names == files_under(tmp_path)
    for n in names:
        assert filecmp.cmp(out / n, tmp_path / n, shallow=False), n


def test_synthetic_variable_set(tiny):
    out, truth = tiny
    with open(out / "macro_daily.csv") as fh:
        header = next(csv.reader(fh))
    # the index comes from the messages; every other variable is in the macro file
    assert len(NAMES) == 19
    assert sorted(header[1:] + ["MPE"]) == sorted(NAMES)
    assert truth.weeks == 150


def test_lexicon_recovers_planted_labels(tiny):
    out, _ = tiny
    msgs = read_messages(out / "messages.jsonl")
    with open(out / "planted_stances.csv") as fh:
        planted = {r["id"]: int(r["stance"]) for r in csv.DictReader(fh)}
    clf = LexiconClassifier()
    got = [clf.classify(m.body) for m in msgs]
    assert len(msgs) == len(planted) > 0
    assert all(int(s) == planted[m.id] for m, s in zip(msgs, got))


def test_synthetic_needs_enough_weeks(tmp_path):
    from nml.data_model import SeriesError
    with pytest.raises(SeriesError):
        gen_synthetic(tmp_path, weeks=100)


# --- configuration --------------------------------------------------------------------

def test_config_strictness(tmp_path):
    cfg = load_config(write_corpus(tmp_path / "c", weeks=130))
    assert cfg.seed == 3 and cfg.forecast.trials == 75
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({"forecast": {"trails": 5}}))
    with pytest.raises(ConfigError, match="trails"):
        load_config(p, check_paths=False)
    for doc, msg in (({"seed": "7"}, "seed"), ({"seed": True}, "seed"), ({"classifier": {"backend": "x"}}, "backend"),
                     ({"forecast": {"space": {"units": [12]}}}, "units"),
                     ({"forecast": {"space": {"learning_rate": [1e-5, 1e-3]}}}, "learning_rate"),
                     ({"vmd": {"K": 0}}, "vmd"), ({"explain": {"runs": "some"}}, "runs"),
                     ({"data": {"messages": "nope.jsonl", "macro": "x", "fomc": "y"}}, "not found")):
        p.write_text(yaml.safe_dump(doc))
        with pytest.raises(ConfigError, match=msg):
            load_config(p, check_paths="data" in doc)


def test_remote_backend_needs_url(tmp_path, monkeypatch):
    monkeypatch.delenv("NML_CLASSIFIER_URL", raising=False)
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"classifier": {"backend": "remote"}}))
    with pytest.raises(ConfigError):
        load_config(p, check_paths=False)
    monkeypatch.setenv("NML_CLASSIFIER_URL", "http://127.0.0.1:1/")
    assert load_config(p, check_paths=False).classifier.backend == "remote"


def test_section_hash_tracks_content():
    a, b = PipelineConfig(), PipelineConfig()
    assert a.section_hash("forecast") == b.section_hash("forecast")
    b.forecast.trials = 20
    assert a.section_hash("forecast") != b.section_hash("forecast")
    assert a.section_hash("vmd") == b.section_hash("vmd")


# --- CLI errors -------------------------------------------------------------------------

def test_report_without_artifacts_is_a_dependency_error(smoke_corpus, tmp_path, capsys):
    code = main(["report", "--config", str(smoke_corpus), "--out", str(tmp_path / "empty")])
    assert code == EXIT_DEPENDENCY == 3
    doc = err_json(capsys)
    assert doc["error"] == "dependency" and doc["stage"] == "report"
    assert {"forecast", "explain"} <= set(doc["missing"])


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert err_json(capsys)["error"] == "config"
    p = tmp_path / "c.yaml"
    p.write_text("colour: blue\n")
    assert main(["stats", "--config", str(p)]) == EXIT_CONFIG


def test_unknown_stage_exit_2(smoke_corpus, tmp_path, capsys):
    assert main(["run", "--config", str(smoke_corpus), "--out", str(tmp_path), "--stages", "ingest,foo"]) == 2
    assert "foo" in err_json(capsys)["message"]


def test_stage_failure_exit_4(tmp_path, capsys):
    cfg = write_corpus(tmp_path / "c", weeks=130)
    macro = tmp_path / "c" / "macro_daily.csv"
    lines = macro.read_text().splitlines()
    macro.write_text("\n".join(",".join(l.split(",")[:-1]) for l in lines) + "\n")  # drop a column
    assert main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_STAGE
    doc = err_json(capsys)
    assert doc["stage"] == "ingest" and "GgleClimate" in doc["message"]
    assert read_manifest(tmp_path / "o", "ingest")["status"] == "failed"


# --- end-to-end ----------------------------------------------------------------------

def test_all_manifests_and_artifact_ownership(smoke_runs):
    out = smoke_runs[0]
    owners = {}
    for stage in STAGES:
        m = read_manifest(out, stage)
        assert m and m["status"] == "ok" and m["depends_on"] == list(DEPENDS[stage])
        for rel in m["artifacts"]:
            assert rel not in owners, f"{rel} listed by {owners.get(rel)} and {stage}"
            owners[rel] = stage
    listed = set(owners)
    on_disk = {f for f in files_under(out) if not f.startswith("manifests/")}
    assert listed == on_disk
    assert len(files_under(out / "manifests")) == 9


def test_dependency_graph_is_acyclic():
    seen = []
    for s in STAGES:
        assert all(d in seen for d in DEPENDS[s])
        seen.append(s)


def test_rerun_is_byte_identical(smoke_runs):
    a, b = smoke_runs
    names = [n for n in files_under(a) if not n.startswith("manifests/")]
    assert names == [n for n in files_under(b) if not n.startswith("manifests/")]
    differ = [n for n in names if not filecmp.cmp(a / n, b / n, shallow=False)]
    assert differ == []


def test_second_invocation_skips_everything(smoke_corpus, smoke_runs, capsys):
    capsys.readouterr()
    assert main(["run", "--config", str(smoke_corpus), "--out", str(smoke_runs[1])]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [s["skipped"] for s in doc["stages"]] == [True] * 9


def test_config_change_reruns_downstream_only(smoke_corpus, smoke_runs, tmp_path, capsys):
    import shutil
    out = tmp_path / "copy"
    shutil.copytree(smoke_runs[0], out)
    doc = yaml.safe_load(smoke_corpus.read_text())
    doc["explain"]["max_samples"] = 4
    cfg = smoke_corpus.parent / "config_explain4.yaml"
    cfg.write_text(yaml.safe_dump(doc))
    capsys.readouterr()
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    ran = {s["stage"] for s in json.loads(capsys.readouterr().out)["stages"] if not s["skipped"]}
    assert ran == {"explain", "report"}


def test_smoke_run_contents(smoke_runs):
    out = smoke_runs[0]
    res = json.loads((out / "granger" / "results.json").read_text())["results"]
    assert next(r for r in res if r["predictor"] == "MPE" and r["lag"] == 3)["p_value"] < 0.01
    with open(out / "granger" / "lag_table.csv") as fh:
        rows = {r["predictor"]: r for r in csv.DictReader(fh)}
    assert rows["MPE"]["3"].endswith("**")
    with open(out / "forecast" / "run_report.csv") as fh:
        assert next(csv.reader(fh)) == ["Fold", "Run", "RMSE", "MAE", "Val. Loss", "Opt.", "Lbk.", "Units"]
    with open(out / "forecast" / "accuracy.csv") as fh:
        acc = list(csv.DictReader(fh))
    assert [r["Fold"] for r in acc] == ["1", "2", "3", "4", "Mean", "SD"]
    with open(out / "explain" / "global.csv") as fh:
        glob = list(csv.DictReader(fh))
    assert len(glob) == 19
    assert json.loads((out / "explain" / "additivity.json").read_text())["max_residual"] <= 1e-4
    report = (out / "report" / "report.md").read_text()
    assert "MPE" in report and report.count("![") >= 5
