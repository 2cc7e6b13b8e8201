import json

import pandas as pd
import pytest

from app.main import main

FOREST_CONFIG = {"forest": {"n_trees": 20, "ci_group_size": 2, "min_leaf_size": 5}, "seed": 3}
DGP = {"n_countries": 6, "years_span": 5, "children_per_country_year": 25, "true_ate": 0.13, "seed": 17}


@pytest.fixture
def panel_dir(tmp_path):
    (tmp_path / "dgp.json").write_text(json.dumps(DGP))
    status = main(
        ["simulate", "--dgp", str(tmp_path / "dgp.json"), "--reps", "2", "--estimator", "oracle", "--emit-panel", "--out", str(tmp_path / "sim")]
    )
    assert status == 0
    return tmp_path / "sim" / "panel"


def build_cohorts(panel_dir, out, thresholds="neo,u1,u2,u3,u4,u5"):
    return main(
        [
            "build-cohort",
            "--children", str(panel_dir / "children.csv"),
            "--events", str(panel_dir / "events.csv"),
            "--covars", str(panel_dir / "country_year.csv"),
            "--thresholds", thresholds,
            "--out", str(out),
        ]
    )


def last_error(capsys) -> dict:
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def test_simulate_writes_one_row_per_rep(tmp_path):
    (tmp_path / "dgp.json").write_text(json.dumps(DGP))
    assert main(["simulate", "--dgp", str(tmp_path / "dgp.json"), "--reps", "5", "--estimator", "oracle", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "montecarlo_report.json").read_text())
    assert report["n_reps"] == 5 and len(report["reps"]) == 5
    assert len(pd.read_csv(tmp_path / "montecarlo_reps.csv")) == 5
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert list(manifest["inputs"].values())[0]


def test_build_cohort_outputs(panel_dir, tmp_path):
    out = tmp_path / "cohorts"
    assert build_cohorts(panel_dir, out) == 0
    for threshold in ("neo", "u1", "u2", "u3", "u4", "u5"):
        frame = pd.read_csv(out / f"cohort_{threshold}.csv")
        assert list(frame.columns[:6]) == ["child_id", "country", "birth_year", "cluster", "y", "d"]
        assert len(frame) == 6 * 5 * 25
    assert pd.read_csv(out / "exclusions.csv").empty
    assert list(pd.read_csv(out / "eventtime_hist.csv").columns) == ["event_time", "alive_count", "died_count"]
    frequency = pd.read_csv(out / "exposure_frequency.csv", keep_default_na=False)
    assert frequency["country"].iloc[-1] == "total"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "build-cohort"
    assert len(manifest["inputs"]) == 3


def test_build_cohort_is_byte_stable(panel_dir, tmp_path):
    assert build_cohorts(panel_dir, tmp_path / "a", "u1") == 0
    assert build_cohorts(panel_dir, tmp_path / "b", "u1") == 0
    for name in ("cohort_u1.csv", "exclusions.csv", "eventtime_hist.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_events_file_exits_3(panel_dir, tmp_path, capsys):
    missing = tmp_path / "nowhere" / "events.csv"
    status = main(
        [
            "build-cohort",
            "--children", str(panel_dir / "children.csv"),
            "--events", str(missing),
            "--covars", str(panel_dir / "country_year.csv"),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert status == 3
    error = last_error(capsys)
    assert error["status"] == 3
    assert str(missing) in error["detail"]


def test_missing_column_exits_3(panel_dir, tmp_path, capsys):
    children = pd.read_csv(panel_dir / "children.csv").drop(columns="mother_edu")
    children.to_csv(tmp_path / "children.csv", index=False)
    status = main(
        [
            "build-cohort",
            "--children", str(tmp_path / "children.csv"),
            "--events", str(panel_dir / "events.csv"),
            "--covars", str(panel_dir / "country_year.csv"),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert status == 3
    assert "mother_edu" in last_error(capsys)["detail"]


def test_unknown_flag_is_a_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--cohort", "x.csv", "--out", "f.json", "--bogus"])
    assert exc.value.code == 2
    lines = capsys.readouterr().err.splitlines()
    assert len(lines) == 1
    error = json.loads(lines[0])
    assert error["status"] == 2
    assert error["error"] == "UsageError"
    assert "--bogus" in error["detail"]


def test_invalid_config_exits_3(panel_dir, tmp_path, capsys):
    assert build_cohorts(panel_dir, tmp_path, "u1") == 0
    (tmp_path / "config.json").write_text(json.dumps({"forest": {"n_trees": 15, "ci_group_size": 2}}))
    status = main(["fit", "--cohort", str(tmp_path / "cohort_u1.csv"), "--config", str(tmp_path / "config.json"), "--out", str(tmp_path / "f.json")])
    assert status == 3
    assert last_error(capsys)["error"] == "ValidationError"


def test_full_pipeline_and_resumable_report(panel_dir, tmp_path):
    cohorts = tmp_path / "cohorts"
    assert build_cohorts(panel_dir, cohorts) == 0
    (tmp_path / "config.json").write_text(json.dumps(FOREST_CONFIG))

    thresholds = ["neo", "u1", "u2", "u3", "u4", "u5"]
    estimate_args = ["estimate", "--level", "0.95", "--bins", "20", "--bootstrap", "--config", str(tmp_path / "config.json")]
    for threshold in thresholds:
        forest = tmp_path / "forests" / f"forest_{threshold}.json.gz"
        cohort = cohorts / f"cohort_{threshold}.csv"
        assert main(["fit", "--cohort", str(cohort), "--config", str(tmp_path / "config.json"), "--out", str(forest)]) == 0
        estimate_args += ["--cohort", str(cohort), "--forest", str(forest)]
    assert (tmp_path / "forests" / "forest_u1.manifest.json").is_file()

    assert main(estimate_args + ["--out", str(tmp_path / "estimates")]) == 0
    report = json.loads((tmp_path / "estimates" / "ate_report.json").read_text())
    assert [row["threshold"] for row in report] == thresholds
    for row in report:
        assert row["ci_low"] <= row["tau_hat"] <= row["ci_high"]
        assert row["estimator"] == "overlap_aipw"
        assert row["config_echo"]["n_trees"] == 20
    cate = pd.read_csv(tmp_path / "estimates" / "cate_u1.csv")
    assert list(cate.columns) == ["child_id", "tau_hat", "variance", "cluster"]
    assert pd.read_csv(tmp_path / "estimates" / "cate_hist_u1.csv")["count"].sum() == len(cate)
    assert len(pd.read_csv(tmp_path / "estimates" / "bootstrap_ate_u1.csv")) == 500
    importance = pd.read_csv(tmp_path / "estimates" / "importance_u1.csv")
    assert importance["weight"].sum() == pytest.approx(1.0, abs=1e-9)

    assert main(["report", "--in", str(tmp_path / "estimates"), "--out", str(tmp_path / "report")]) == 0
    for name in ("ate_report.json", "cate_u1.csv", "cate_hist_u5.csv", "bootstrap_ate_neo.csv"):
        assert (tmp_path / "report" / name).read_bytes() == (tmp_path / "estimates" / name).read_bytes()
    assert "| u1 |" in (tmp_path / "report" / "report.md").read_text()
    figures = json.loads((tmp_path / "report" / "figures.json").read_text())
    assert set(figures["cate_hist"]) == set(thresholds)


def test_mismatched_pairs_are_rejected(panel_dir, tmp_path, capsys):
    assert build_cohorts(panel_dir, tmp_path, "u1,u2") == 0
    status = main(["estimate", "--cohort", str(tmp_path / "cohort_u1.csv"), "--forest", "a.json", "--forest", "b.json", "--out", str(tmp_path)])
    assert status == 3
    assert "a.json" in last_error(capsys)["detail"]


def test_build_cohort_from_a_run_config(panel_dir, tmp_path):
    run = {
        "children": str(panel_dir / "children.csv"),
        "events": str(panel_dir / "events.csv"),
        "covars": str(panel_dir / "country_year.csv"),
        "thresholds": ["u1"],
        "out": str(tmp_path / "from_config"),
    }
    (tmp_path / "run.json").write_text(json.dumps(run))
    assert main(["build-cohort", "--config", str(tmp_path / "run.json")]) == 0
    assert (tmp_path / "from_config" / "cohort_u1.csv").is_file()
    assert not (tmp_path / "from_config" / "cohort_u2.csv").exists()
    manifest = json.loads((tmp_path / "from_config" / "manifest.json").read_text())
    assert len(manifest["inputs"]) == 4

    assert main(["build-cohort", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "cohort_u1.csv").read_bytes() == (tmp_path / "from_config" / "cohort_u1.csv").read_bytes()


def test_build_cohort_without_inputs_is_a_usage_error(panel_dir, tmp_path, capsys):
    status = main(["build-cohort", "--children", str(panel_dir / "children.csv"), "--out", str(tmp_path / "out")])
    assert status == 2
    error = last_error(capsys)
    assert error["error"] == "UsageError"
    assert "--events" in error["detail"] and "--covars" in error["detail"]


def test_report_finds_inputs_from_another_directory(panel_dir, tmp_path, monkeypatch):
    assert build_cohorts(panel_dir, tmp_path / "cohorts", "u1") == 0
    (tmp_path / "config.json").write_text(json.dumps(FOREST_CONFIG))
    monkeypatch.chdir(tmp_path)
    assert main(["fit", "--cohort", "cohorts/cohort_u1.csv", "--config", "config.json", "--out", "forests/forest_u1.json.gz"]) == 0
    assert main(["estimate", "--cohort", "cohorts/cohort_u1.csv", "--forest", "forests/forest_u1.json.gz", "--out", "estimates"]) == 0
    manifest = json.loads((tmp_path / "estimates" / "manifest.json").read_text())
    assert manifest["config"]["cohorts"] == ["../cohorts/cohort_u1.csv"]

    (tmp_path / "elsewhere").mkdir()
    monkeypatch.chdir(tmp_path / "elsewhere")
    assert main(["report", "--in", "../estimates", "--out", "report"]) == 0
    assert (tmp_path / "elsewhere" / "report" / "cate_u1.csv").read_bytes() == (tmp_path / "estimates" / "cate_u1.csv").read_bytes()
