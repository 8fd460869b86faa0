import csv
import json
import subprocess
import sys

import pytest
import yaml

from klflow import cli, spectral


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def basis_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("bases")
    assert cli.main(["klbasis", "--dim", "2", "--sides", "1", "--nodes", "16", "--lambda", "0.3",
                     "--trunc", "40", "--out", str(d / "b2.bin")]) == 0
    assert cli.main(["klbasis", "--dim", "1", "--nodes", "32", "--kernel", "dirichlet",
                     "--trunc", "4", "--out", str(d / "dir.bin")]) == 0
    return d


def test_klbasis_happy_path(tmp_path, capsys):
    code, out, _ = run(["klbasis", "--dim", "1", "--sides", "1", "--nodes", "64", "--kernel", "gaussian",
                        "--lambda", "0.2", "--trunc", "40", "--out", tmp_path / "b.bin"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["schema_version"] == cli.SCHEMA_VERSION
    assert rep["result"]["orthonormality_error"] < 1e-8
    assert spectral.load_basis(tmp_path / "b.bin").size == rep["result"]["basis"]["N"]


def test_beta_out_of_range(basis_files, capsys):
    code, _, err = run(["dissipation", "--basis", basis_files / "b2.bin", "--beta", "0.6"], capsys)
    assert code == 1
    assert "beta must lie in (0, 0.5]" in json.loads(err)["message"]


@pytest.mark.parametrize("argv", [["dissipation", "--bogus", "1"], ["nonsense"], [],
                                  ["klbasis", "--nodes", "many"]])
def test_bad_command_lines(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1
    assert json.loads(err)["error"] == "invalid-input"


@pytest.mark.parametrize("text", ["flow: [1", "- just\n- a list\n", "flow: 3\n", "bogus: {a: 1}\n",
                                  "flow: {speed: 1}\n"])
def test_malformed_config(tmp_path, text, capsys):
    path = tmp_path / "c.yaml"
    path.write_text(text)
    code, _, err = run(["klbasis", "--config", path], capsys)
    assert code == 1 and "error" in json.loads(err)


def test_missing_files(tmp_path, capsys):
    assert run(["klbasis", "--config", tmp_path / "none.yaml"], capsys)[0] == 1
    assert run(["spectral-check", "--basis", tmp_path / "none.bin"], capsys)[0] == 1


def test_domain_basis_mismatch(basis_files, capsys):
    code, _, err = run(["spectral-check", "--basis", basis_files / "b2.bin", "--nodes", "8"], capsys)
    assert code == 1 and "nodes" in json.loads(err)["message"]


def test_numerical_failure_exit_code(monkeypatch, capsys):
    def boom(*a, **k):
        raise spectral.NumericalError("eigensolver did not converge")
    monkeypatch.setattr(spectral, "solve_nystrom", boom)
    code, _, err = run(["klbasis", "--nodes", "8", "--trunc", "2"], capsys)
    assert code == 2 and json.loads(err)["error"] == "numerical"


def test_dissipation_end_to_end(basis_files, tmp_path, capsys):
    cfg = tmp_path / "f.yaml"
    cfg.write_text(yaml.safe_dump({"flow": {"u": [0.6, 0.8], "re_star": 2000.0},
                                   "experiment": {"nu_points": 11, "draws": 2000, "seed": 5}}))
    code, _, _ = run(["dissipation", "--basis", basis_files / "b2.bin", "--config", cfg, "--beta", "0.5",
                      "--nu-min", "1e-6", "--nu-max", "1e-1", "--out", tmp_path / "r.json",
                      "--csv", tmp_path / "c.csv", "--emit-config", tmp_path / "resolved.json"], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["result"]["verdict"] == "anomalous"
    assert rep["seed"] == 5 and rep["config"]["flow"]["beta"] == 0.5
    rows = list(csv.reader((tmp_path / "c.csv").open()))
    assert rows[0] == ["nu", "RE", "D_mc", "D_se", "D_analytic"]
    assert len(rows) == 12 and float(rows[1][0]) == pytest.approx(0.1)
    # Replay from the resolved config with a different worker count.
    code, _, _ = run(["dissipation", "--config", tmp_path / "resolved.json", "--out", tmp_path / "r2.json",
                      "--workers", "3"], capsys)
    assert code == 0
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_flags_override_config(basis_files, tmp_path, capsys):
    cfg = tmp_path / "f.json"
    cfg.write_text(json.dumps({"flow": {"beta": 0.25}, "experiment": {"draws": 0}}))
    code, out, _ = run(["dissipation", "--basis", basis_files / "b2.bin", "--config", cfg, "--beta", "0.4"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["config"]["flow"]["beta"] == 0.4
    assert rep["result"]["slope"] == pytest.approx(0.2, abs=0.05)


@pytest.mark.parametrize("command", ["grf-verify", "flow-verify"])
def test_verify_commands_reproducible(command, basis_files, tmp_path, capsys):
    args = [command, "--basis", basis_files / "b2.bin", "--draws", "5000", "--seed", "9"]
    assert run(args + ["--report", tmp_path / "a.json", "--workers", "1"], capsys)[0] == 0
    assert run(args + ["--report", tmp_path / "b.json", "--workers", "4"], capsys)[0] == 0
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    rep = json.loads(a)
    # Pass/fail of the statistical checks is covered in the module tests; here
    # only the report shape matters.
    assert rep["seed"] == 9 and rep["result"]["checks"]


def test_flow_verify_subset_of_checks(basis_files, capsys):
    code, out, _ = run(["flow-verify", "--basis", basis_files / "b2.bin", "--draws", "2000",
                        "--checks", "mean,cov"], capsys)
    assert code == 0
    names = {c["name"] for c in json.loads(out)["result"]["checks"]}
    assert "covariance_factorization" in names and "h1_norm_expectation" not in names
    assert run(["flow-verify", "--basis", basis_files / "b2.bin", "--checks", "vorticity"], capsys)[0] == 1


def test_spectral_check_dirichlet(basis_files, capsys):
    code, out, _ = run(["spectral-check", "--basis", basis_files / "dir.bin"], capsys)
    assert code == 0
    assert json.loads(out)["result"]["quality"]["max_abs_H_grad_minus_Z_rel"] < 1e-10


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "klflow.cli", "klbasis", "--nodes", "16", "--trunc", "4"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0 and json.loads(proc.stdout)["command"] == "klbasis"
    proc = subprocess.run([sys.executable, "-m", "klflow.cli", "dissipation", "--beta", "0.6"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 1 and "beta must lie in (0, 0.5]" in proc.stderr
