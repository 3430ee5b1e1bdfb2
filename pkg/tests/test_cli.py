import csv
import io
import json

import pytest

from noisygt.cli import main, parse_grid


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _csv_rows(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def test_parse_grid():
    assert parse_grid("0.1:0.3:0.1") == [0.1, 0.2, 0.3]
    assert parse_grid("1,2.5") == [1.0, 2.5]


def test_bounds_csv(capsys):
    code, out, _ = run(capsys, "bounds", "--rho", "0.11", "--theta", "0.25:0.75:0.25")
    assert code == 0
    assert out.startswith("# tool:")
    rows = _csv_rows(out)
    assert [r["which"] for r in rows].count("Converse") == 3
    assert list(rows[0]) == ["theta", "rate_bits_per_test", "which", "rho"]


def test_bounds_counts_json(capsys):
    code, out, _ = run(capsys, "bounds", "--rho", "0.11", "--pk", "1000000,100", "--format", "json")
    assert code == 0
    data = json.loads(out)
    assert "header" in data


@pytest.mark.parametrize("rho", ["0", "0.5", "-0.1"])
def test_bounds_rejects_bad_rho(capsys, rho):
    code, _, err = run(capsys, "bounds", "--rho", rho)
    assert code == 2
    assert "rho" in err


def test_simulate_json_and_trace(capsys, tmp_path):
    trace = tmp_path / "t.csv"
    code, out, _ = run(capsys, "simulate", "--p", "1024", "--k", "8", "--rho", "0.05",
                       "--budget-mult", "5", "--trials", "3", "--seed", "1", "--trace", str(trace))
    assert code == 0
    data = json.loads(out)
    assert data["trials"] == 3
    assert set(data["mean_n_per_stage"]) == {"Inner-BinID", "Inner-Code", "Step2a", "Step2b", "Step3"}
    assert data["header"]["seed"] == 1
    rows = list(csv.reader(trace.open()))
    assert rows[0] == ["seq", "stage", "pool_size", "outcome"]
    assert len(rows) > 1


def test_simulate_usage_errors(capsys):
    code, _, _ = run(capsys, "simulate", "--p", "1024", "--k", "8", "--theta", "0.3", "--rho", "0.05")
    assert code == 2
    code, _, _ = run(capsys, "simulate", "--p", "1024", "--k", "8", "--rho", "0.05",
                     "--alpha1", "2")
    assert code == 2


def test_sweep_outdir(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("NOISYGT_OUTDIR", str(tmp_path))
    code, out, _ = run(capsys, "sweep", "--p", "512", "--k", "5", "--rho", "0.05",
                       "--budget-mult", "5", "--axis", "rho=0.02,0.05", "--trials", "2")
    assert code == 0 and out == ""
    rows = _csv_rows((tmp_path / "sweep.csv").read_text())
    assert [r["rho"] for r in rows] == ["0.02", "0.05"]


def test_sweep_cap_refusal(capsys):
    code, _, err = run(capsys, "sweep", "--p", "512", "--k", "5", "--rho", "0.05",
                       "--axis", "rho=0.01,0.02,0.03", "--cap", "2")
    assert code == 2
    assert "cap" in err


def test_codes_test(capsys):
    code, out, _ = run(capsys, "codes-test", "--pprime", "16", "--rho", "0.05", "--trials", "200")
    assert code == 0
    data = json.loads(out)
    assert data["n_prime"] >= 4
    assert 0.0 <= data["error_rate"] <= 1.0


def test_config_file_roundtrip(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"config": {"c_check": 5.0}}))
    code, out, _ = run(capsys, "simulate", "--p", "512", "--k", "5", "--rho", "0.0",
                       "--trials", "1", "--config-file", str(cfg))
    assert code == 0
    assert json.loads(out)["header"]["config"]["c_check"] == 5.0
