import csv
import json
from pathlib import Path

import numpy as np
import pytest

from rlcp.abalone import IngestionError, load_abalone, split_sizes, write_synthetic_abalone
from rlcp.cli import config_hash, main

GOLDEN = Path(__file__).parent / "golden"
MINI = ["simulate", "--setting", "setting1", "--method", "split,rlcp,callcp", "--kernel", "gaussian:h=0.5",
        "--trials", "2", "--n", "30", "--n-pre", "30", "--n-test", "8", "--seed", "11", "--smoothed"]


def run(argv, out, capsys=None):
    code = main(argv + ["--out", str(out)])
    dirs = sorted(p for p in Path(out).iterdir() if p.is_dir())
    return code, dirs


def data_lines(path):
    return [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]


def read_rows(path):
    return list(csv.DictReader(data_lines(path)))


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("LCP_SEED", raising=False)


def test_golden_miniature_run(tmp_path):
    code, (d,) = run(MINI, tmp_path)
    assert code == 0
    assert data_lines(d / "points.csv") == (GOLDEN / "mini_points.csv").read_text().splitlines()
    assert data_lines(d / "regions.csv") == (GOLDEN / "mini_regions.csv").read_text().splitlines()


def test_point_rows_are_self_consistent(tmp_path):
    _, (d,) = run(MINI, tmp_path)
    for r in read_rows(d / "points.csv"):
        thr, y, c = float(r["threshold"]), float(r["y"]), float(r["center"])
        if np.isfinite(thr) and thr >= 0:
            assert float(r["width"]) == pytest.approx(2 * thr)
            inside = abs(y - c) < thr or (r["closed"] == "1" and abs(y - c) <= thr)
            assert r["covered"] == ("1" if inside else "0")


def test_byte_identical_reruns(tmp_path):
    _, (a,) = run(MINI, tmp_path / "a")
    _, (b,) = run(MINI, tmp_path / "b")
    assert a.name == b.name
    for name in ("points.csv", "regions.csv", "curve.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_workers_do_not_change_results(tmp_path):
    _, (a,) = run(MINI, tmp_path / "a")
    _, (b,) = run(MINI + ["--workers", "2"], tmp_path / "b")
    assert data_lines(a / "points.csv") == data_lines(b / "points.csv")


def test_summary_provenance(tmp_path):
    _, (d,) = run(MINI, tmp_path)
    s = json.loads((d / "summary.json").read_text())
    assert s["seed"] == 11 and s["config"]["seed"] == 11 and s["version"]
    assert d.name == "simulate-" + config_hash(s["config"])
    assert (d / "points.csv").read_text().startswith("# config=")


def test_env_seed_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("LCP_SEED", "5")
    _, (d,) = run(MINI, tmp_path)
    assert json.loads((d / "summary.json").read_text())["seed"] == 5


def test_flat_baselcp_matches_split(tmp_path):
    common = ["simulate", "--setting", "setting1", "--trials", "2", "--n", "100", "--n-pre", "100",
              "--n-test", "100", "--seed", "3"]
    _, (a,) = run(common + ["--method", "baselcp", "--kernel", "flat:lo=-5,hi=5"], tmp_path / "a")
    _, (b,) = run(common + ["--method", "split"], tmp_path / "b")
    ra, rb = read_rows(a / "points.csv"), read_rows(b / "points.csv")
    assert [r["covered"] for r in ra] == [r["covered"] for r in rb]
    assert [r["threshold"] for r in ra] == [r["threshold"] for r in rb]


def test_usage_errors_exit_nonzero(tmp_path):
    assert run(["simulate", "--setting", "bogus", "--method", "split"], tmp_path)[0] != 0
    assert run(["simulate", "--setting", "setting1", "--method", "rlcp"], tmp_path)[0] != 0
    assert run(["simulate", "--setting", "setting1", "--method", "split", "--trials", "0"], tmp_path)[0] != 0
    assert main(["simulate"]) != 0
    assert main(["nonsense"]) != 0


def test_bandwidth_json_and_saturation(tmp_path):
    code, (d,) = run(["bandwidth", "--setting", "setting1", "--variant", "plain", "--kernel", "box",
                      "--target-neff", "300", "--n-pre", "300", "--seed", "4"], tmp_path)
    assert code == 0
    s = json.loads((d / "bandwidth.json").read_text())
    assert s["seed"] == 4 and s["config"]["target_neff"] == 300 and s["config"]["variant"] == "plain"
    assert s["solution"]["saturated"] and s["solution"]["h"] == s["solution"]["h_hi"]


@pytest.mark.parametrize("variant", ["plain", "prototype"])
def test_bandwidth_round_trip(tmp_path, variant):
    code, (d,) = run(["bandwidth", "--setting", "setting1", "--variant", variant, "--target-neff", "50",
                      "--n-pre", "500"], tmp_path)
    sol = json.loads((d / "bandwidth.json").read_text())["solution"]
    assert abs(sol["n_eff"] - 50) <= 5


def test_deviation_command(tmp_path):
    code, (d,) = run(["deviation", "--h", "0.4", "--draws", "1", "--points", "5", "--redraws", "30",
                      "--n", "100", "--n-pre", "100"], tmp_path)
    assert code == 0
    rows = read_rows(d / "deviation.csv")
    assert len(rows) == 1 and float(rows[0]["D"]) >= 0


def test_shift_command(tmp_path):
    code, (d,) = run(["shift", "--setting", "setting1", "--method", "rlcp", "--kernel", "gaussian:h=0.4",
                      "--tilt", "ball:r=1", "--trials", "1", "--n", "100", "--n-pre", "100", "--n-test", "50"],
                     tmp_path)
    assert code == 0
    s = json.loads((d / "summary.json").read_text())
    assert "set_conditional" in s["methods"]["rlcp"]
    X = np.array([float(r["x0"]) for r in read_rows(d / "points.csv")])
    assert np.all(np.abs(X) <= 1)


# -- abalone ingestion --------------------------------------------------------------------

def test_split_sizes_canonical():
    assert split_sizes(4177) == [1393, 1392, 1392]
    assert split_sizes(4177, (0.5, 0.25, 0.25)) == [2089, 1044, 1044]


def test_synthetic_abalone_loads(tmp_path):
    path = tmp_path / "ab.csv"
    write_synthetic_abalone(path, 50)
    data = load_abalone(path)
    assert data.n == 50 and data.d == 5 and data.categorical == (True, False, False, False, False)
    assert set(np.unique(data.features[:, 0])) <= {0.0, 1.0, 2.0}


def _corrupt(tmp_path, row, col, value):
    path = tmp_path / "ab.csv"
    write_synthetic_abalone(path, 10)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    fields = lines[row].split(",")
    fields[header.index(col)] = value
    lines[row] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    return path


def test_bad_sex_code_names_row(tmp_path):
    path = _corrupt(tmp_path, 4, "sex", "Q")
    with pytest.raises(IngestionError, match=r"row 4, column 'sex'"):
        load_abalone(path)
    assert main(["real", "--data", str(path), "--method", "split", "--out", str(tmp_path)]) != 0


def test_non_numeric_field(tmp_path):
    with pytest.raises(IngestionError, match=r"row 2, column 'height'"):
        load_abalone(_corrupt(tmp_path, 2, "height", "tall"))


def test_missing_column(tmp_path):
    path = tmp_path / "ab.csv"
    path.write_text("sex,length,diameter,height,rings\nM,0.5,0.4,0.1,9\n")
    with pytest.raises(IngestionError, match="whole_weight"):
        load_abalone(path)


def test_uci_style_header(tmp_path):
    path = tmp_path / "ab.csv"
    path.write_text("Sex,Length,Diameter,Height,Whole weight,Shucked weight,Rings\nI,0.3,0.2,0.1,0.2,0.1,7\n")
    assert load_abalone(path).response.tolist() == [7.0]


def test_real_command_outputs(tmp_path):
    path = tmp_path / "ab.csv"
    write_synthetic_abalone(path, 300, seed=2)
    code, dirs = run(["real", "--data", str(path), "--method", "rlcp,split", "--h", "0.1,0.3",
                      "--trials", "2", "--smoothed"], tmp_path / "out")
    assert code == 0
    (d,) = dirs
    s = json.loads((d / "summary.json").read_text())
    assert set(s["methods"]) == {"rlcp@h=0.1", "rlcp@h=0.3", "split"}
    assert s["kernel_features"] == "raw" and s["config"]["split_sizes"] == [100, 100, 100]
    regions = read_rows(d / "regions.csv")
    for label, m in s["methods"].items():
        rows = [r for r in regions if r["method"] == label]
        assert {r["region"] for r in rows} == {"M", "F", "I"}
        assert sum(int(r["n_points"]) for r in rows) == m["n_points"] == 200
        hits = sum(int(r["n_covered"]) for r in rows)
        assert hits / 200 == pytest.approx(m["coverage"], abs=1e-12)
    assert read_rows(d / "curve.csv")
