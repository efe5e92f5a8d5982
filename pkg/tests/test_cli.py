import json

import pytest
from click.testing import CliRunner

from metricsmooth.cli import main

FLAT_DOC = {"dim": 2, "radius": 1.0, "nodes": 96,
            "generator": {"kind": "flat"}}


@pytest.fixture()
def runner():
    return CliRunner()


def _write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_version_and_schema(runner):
    res = runner.invoke(main, ["--version"])
    assert res.exit_code == 0 and "metricsmooth" in res.output
    res = runner.invoke(main, ["--schema"])
    assert res.exit_code == 0
    assert json.loads(res.output)["schema"].startswith("metricsmooth-report/")


def test_missing_file_names_path(runner, tmp_path):
    res = runner.invoke(main, ["cell", "--metric", str(tmp_path / "none.json"),
                               "--i0", "0.2", "--out", str(tmp_path / "o")])
    assert res.exit_code != 0
    assert "none.json" in res.output


def test_cell_subcommand(runner, tmp_path):
    metric = _write(tmp_path, "m.json", FLAT_DOC)
    out = tmp_path / "cell.json"
    res = runner.invoke(main, ["cell", "--metric", metric, "--center", "0,0",
                               "--i0", "0.2", "--out", str(out)])
    assert res.exit_code == 0, res.output
    doc = json.loads(out.read_text())
    assert doc["deviation"]["eps_value"] < 1e-3
    assert len(doc["values"]) == len(doc["dist"])


def test_norm_subcommand(runner, tmp_path):
    metric = _write(tmp_path, "m.json", FLAT_DOC)
    out = tmp_path / "norm.json"
    res = runner.invoke(main, ["norm", "--atlas", metric, "--scale", "0.8",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    doc = json.loads(out.read_text())
    assert doc["norm_value"] == 0.0 and doc["covered"] is True


def test_smooth_subcommand(runner, tmp_path):
    metric = _write(tmp_path, "m.json", FLAT_DOC)
    out = tmp_path / "gt.json"
    res = runner.invoke(main, ["smooth", "--metric", metric, "--i0", "0.25",
                               "--net", "24", "--out", str(out)])
    assert res.exit_code == 0, res.output
    doc = json.loads(out.read_text())
    assert doc["max_log_ratio"] < 0.05
    assert len(doc["gtilde"]) == len(doc["points"])


def test_pipeline_subcommand(runner, tmp_path):
    cfg = _write(tmp_path, "cfg.json", {
        "metric": FLAT_DOC,
        "i0": [0.25],
        "stages": ["norm", "cell"],
    })
    out = tmp_path / "run"
    res = runner.invoke(main, ["pipeline", "--config", cfg,
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is True
    assert (out / "cell_profile.csv").exists()
    assert (out / "cell_profile.png").exists()
    assert (out / "timings.json").exists()


def test_pipeline_bad_config(runner, tmp_path):
    cfg = _write(tmp_path, "cfg.json", {
        "metric": FLAT_DOC, "i0": [0.25], "stages": ["unknown"],
    })
    res = runner.invoke(main, ["pipeline", "--config", cfg,
                               "--out", str(tmp_path / "x")])
    assert res.exit_code != 0
    assert "unknown" in res.output
