import csv
import json

import numpy as np
import pytest

from llpbp.cli import main
from oracles import exact_marginals

FAST = ["--k", "10", "--delta-d", "1e9", "--metric", "euclidean", "--kernel", "rbf", "--lambda-b", "0.01",
        "--hidden", "32,16", "--max-epochs", "5", "--batch-size", "256", "--bag-size", "16"]


def read_col(path, col):
    with open(path, newline="") as fh:
        return [float(r[col]) for r in csv.DictReader(fh)]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--m", "600", "--seed", "1", "--out", str(d / "d.csv")]) == 0
    return d


def hand_model(d, nodes, pairs):
    (d / "h.csv").write_text("instance_index,h\n" + "".join(f"{i},{v}\n" for i, v in enumerate(nodes)))
    (d / "J.csv").write_text("i,j,J\n" + "".join(f"{i},{j},{v}\n" for i, j, v in pairs))
    return ["--nodes", str(d / "h.csv"), "--pairs", str(d / "J.csv")]


def test_bp_on_hand_built_model(tmp_path):
    h = [0.4, -1.2, 0.3]
    pairs = [(0, 1, 1.5), (1, 2, -0.7)]
    files = hand_model(tmp_path, h, pairs)
    assert main(["bp", *files, "--out-dir", str(tmp_path / "o")]) == 0
    p = read_col(tmp_path / "o" / "marginals.csv", "p")
    ref = exact_marginals(np.array(h), np.array([[0, 1], [1, 2]]), np.array([1.5, -0.7]))
    np.testing.assert_allclose(p, ref, atol=1e-9)
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["metrics"]["converged"] is True


def test_bp_max_product(tmp_path):
    files = hand_model(tmp_path, [1.0, -2.0], [(0, 1, 0.5)])
    assert main(["bp", *files, "--max-product", "--out-dir", str(tmp_path / "o")]) == 0
    assert read_col(tmp_path / "o" / "map.csv", "y") == [1, 0]


def test_stability_path_graph(tmp_path, capsys):
    files = hand_model(tmp_path, [0, 0, 0], [(0, 1, 1.0), (1, 2, 1.0)])
    assert main(["stability", *files]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["spectral_norm"] == pytest.approx(1.0, abs=1e-9)
    assert out["threshold"] == "inf"


def test_pipeline_two_iterations(data, tmp_path):
    out = tmp_path / "run"
    assert main(["pipeline", "--data", str(data / "d.csv"), "--iterations", "2", *FAST, "--out-dir", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["iterations"]) == 2
    for r in (0, 1):
        for name in (f"marginals_iter{r}.csv", f"pseudo_labels_iter{r}.csv", f"model_iter{r}.json"):
            assert (out / name).exists()
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert [r["iteration"] for r in rows] == ["0", "1"]
    # the manifest reloads as a config and reproduces the run
    out2 = tmp_path / "rerun"
    assert main(["pipeline", "--config", str(out / "manifest.json"), "--out-dir", str(out2)]) == 0
    a = (out / "marginals_iter1.csv").read_bytes()
    assert a == (out2 / "marginals_iter1.csv").read_bytes()
    assert (out / "model_iter1.json").read_bytes() == (out2 / "model_iter1.json").read_bytes()


def test_config_file_and_flag_precedence(data, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# desk settings\ndata = {data / 'd.csv'}\nbag_size = 16\ntau = 0.9\niter1.tau = 0.4\n")
    assert main(["bags", "--config", str(cfg), "--bag-size", "32", "--out-dir", str(tmp_path / "b")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["bag_size"] == 32
    assert info["bags"] == 480 // 32


def test_dllp_and_eval(data, tmp_path, capsys):
    out = tmp_path / "dllp"
    assert main(["dllp", "--data", str(data / "d.csv"), *FAST, "--out-dir", str(out)]) == 0
    res = json.loads(capsys.readouterr().out)
    bags_dir = out_dir_with_split(data, tmp_path)
    capsys.readouterr()
    assert main(["eval", "--data", str(data / "d.csv"), "--model", str(out / "model_dllp.json"),
                 "--bags-dir", str(bags_dir)]) == 0
    ev = json.loads(capsys.readouterr().out)
    assert ev["auroc"] == pytest.approx(res["test_auroc"], abs=1e-12)


def out_dir_with_split(data, tmp_path):
    d = tmp_path / "bags"
    assert main(["bags", "--data", str(data / "d.csv"), "--bag-size", "16", "--out-dir", str(d)]) == 0
    return d


def test_grid(data, tmp_path, capsys):
    out = tmp_path / "grid"
    assert main(["grid", "--data", str(data / "d.csv"), *FAST, "--iterations", "1",
                 "--grid", "lambda_b=0.01,0.03", "--out-dir", str(out)]) == 0
    rows = list(csv.DictReader((out / "grid.csv").open()))
    assert [r["lambda_b"] for r in rows] == ["0.01", "0.03"]


def test_errors_are_one_json_line(tmp_path, capsys):
    assert main(["bp", "--nodes", str(tmp_path / "none.csv"), "--pairs", "x", "--out-dir", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and json.loads(err[0])["error"] == "FileNotFoundError"
    assert main(["pipeline", "--tau", "abc"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "UsageError"
    assert main(["pipeline", "--out-dir", str(tmp_path)]) == 2
    assert "--data" in json.loads(capsys.readouterr().err)["message"]


def test_bad_data_reports_row(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("a,b,y\n1,2,0\n3,x,1\n")
    assert main(["bags", "--data", str(tmp_path / "bad.csv"), "--bag-size", "1", "--out-dir", str(tmp_path)]) == 1
    msg = json.loads(capsys.readouterr().err)["message"]
    assert "row" in msg and "'b'" in msg
