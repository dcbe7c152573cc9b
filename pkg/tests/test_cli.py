import csv
import json

import numpy as np
import pytest

from formnet import _io
from formnet.cli import main, run


def ok(argv):
    code, result = run(argv)
    assert code == 0, result
    return result


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    o = ["--out", str(out)]
    ok(["net", "--grid", "5x5", "--seed", "7", *o])
    ok(["gen", "--n-samples", "450", "--bounds-mm", "5", "--seed", "1", *o])
    ok(["train", "--split", "400/50", "--seed", "1", "--tie-hypers", *o])
    summary = ok(["eval", *o])
    return out, summary


def test_net_is_deterministic(tmp_path):
    ok(["net", "--grid", "5x5", "--seed", "7", "--out", str(tmp_path / "a")])
    ok(["net", "--grid", "5x5", "--seed", "7", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/net.json").read_bytes() == (tmp_path / "b/net.json").read_bytes()
    meta = json.loads((tmp_path / "a/net.json.meta.json").read_text())
    assert meta["sha256"] == _io.file_hash(tmp_path / "a/net.json")


def test_stress_grid_counts(tmp_path):
    res = ok(["net", "--grid", "26x14", "--out", str(tmp_path)])
    assert abs(res["m_I"] - 536) <= 53.6
    assert res["n_I"] == 288


@pytest.mark.parametrize(
    "argv",
    [
        ["net", "--grid", "2x2"],
        ["net", "--grid", "five"],
        ["gen", "--n-samples", "0"],
        ["gen", "--bounds-mm", "-1"],
        ["train", "--split", "400-50"],
        ["train", "--split", "1/0"],
    ],
)
def test_usage_errors(tmp_path, capsys, argv):
    code, record = run([*argv, "--out", str(tmp_path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and err["command"] == argv[0]


def test_argparse_errors_exit_nonzero(capsys):
    assert run(["bogus"])[0] == 2
    with pytest.raises(SystemExit) as info:
        main(["net", "--grid"])
    assert info.value.code == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"grid": "4x6", "seed": 3, "out": str(tmp_path / "r")}))
    res = ok(["net", "--config", str(cfg)])
    assert res["n_I"] == 8
    cfg.write_text(json.dumps({"grid": "4x6", "colour": "red"}))
    assert run(["net", "--config", str(cfg)])[0] == 2


def test_missing_inputs_fail(tmp_path):
    code, record = run(["gen", "--out", str(tmp_path)])
    assert code != 0 and record["error"] == "FileNotFoundError"


def test_full_pipeline(pipeline):
    out, summary = pipeline
    assert summary["mrse"] <= 0.05 and summary["mse"] <= 1e-6
    assert summary["median_rmse_ratio"] <= 0.25
    report = json.loads((out / "report.json").read_text())
    assert report["n_validation"] == 50 and report["m_I"] == 12
    assert report["provenance"]["model_sha256"] == _io.file_hash(out / "model.json")
    model = json.loads((out / "model.json").read_text())
    assert model["provenance"]["dataset_sha256"] == _io.file_hash(out / "dataset.jsonl")
    assert len(model["train_indices"]) == 400


def test_eval_is_idempotent(pipeline):
    out, _ = pipeline
    before = (out / "report.json").read_bytes()
    ok(["eval", "--out", str(out)])
    assert (out / "report.json").read_bytes() == before


def test_plot_errors_csv(pipeline):
    out, _ = pipeline
    ok(["plot", "--fig", "errors", "--out", str(out)])
    rows = list(csv.reader(open(out / "fig_errors.csv")))
    assert rows[0] == ["edge", "delta_l0_true", "delta_l0_hat", "error"]
    assert len(rows) == 13
    report = json.loads((out / "report.json").read_text())
    for r in rows[1:]:
        i = int(r[0])
        assert float(r[1]) == report["delta_true"][0][i]
        assert float(r[2]) == report["delta_hat"][0][i]
        assert float(r[1]) - float(r[2]) == pytest.approx(float(r[3]), abs=1e-18)
    assert (out / "fig_errors.svg").read_text().lstrip().startswith("<?xml")


@pytest.mark.parametrize("fig", ["boxplot", "deviations"])
def test_other_plots_are_deterministic(pipeline, fig):
    out, _ = pipeline
    ok(["plot", "--fig", fig, "--out", str(out)])
    first = (out / f"fig_{fig}.svg").read_bytes(), (out / f"fig_{fig}.csv").read_bytes()
    ok(["plot", "--fig", fig, "--out", str(out)])
    assert first == ((out / f"fig_{fig}.svg").read_bytes(), (out / f"fig_{fig}.csv").read_bytes())


def test_identify_command(pipeline, tmp_path):
    out, _ = pipeline
    lines = (out / "dataset.jsonl").read_text().splitlines()
    sample = json.loads(lines[5])
    meas = tmp_path / "meas.json"
    meas.write_text(json.dumps({"delta_r_I": sample["delta_rI"]}))
    res = ok(["identify", "--measurement", str(meas), "--out", str(out)])
    doc = json.loads((out / "identification.json").read_text())
    assert np.abs(np.array(doc["delta_l0_hat"]) - sample["delta_l0I"]).max() < 1e-4
    assert res["max_abs_delta"] <= 0.006
    header = json.loads(lines[0])
    meas.write_text(json.dumps({"r_I": (np.array(header["nominal_r_I"]) + sample["delta_rI"]).tolist()}))
    ok(["identify", "--measurement", str(meas), "--out", str(out)])
    doc2 = json.loads((out / "identification.json").read_text())
    np.testing.assert_allclose(doc2["delta_l0_hat"], doc["delta_l0_hat"], atol=1e-9)


def test_eval_refuses_foreign_net(pipeline, tmp_path):
    out, _ = pipeline
    other = tmp_path / "other"
    ok(["net", "--grid", "5x5", "--seed", "8", "--out", str(other)])
    code, record = run(["eval", "--out", str(out), "--net", str(other / "net.json")])
    assert code == 3 and record["error"] == "ProvenanceError"


def test_eval_refuses_model_from_other_dataset(pipeline, tmp_path):
    out, _ = pipeline
    other = tmp_path / "run2"
    other.mkdir()
    for name in ("net.json", "dataset.jsonl", "model.json"):
        (other / name).write_bytes((out / name).read_bytes())
    ok(["gen", "--n-samples", "450", "--seed", "2", "--out", str(other)])
    code, record = run(["eval", "--out", str(other)])
    assert code == 3
