import csv
import json
import subprocess
import sys

import pytest

from magtrace import cli

REQUIRED = {"stokes_triangle", "covariant_ftc", "gauge_check", "seminorm", "trace_ineq", "extension_ineq",
            "poincare", "constant_field_trace", "variant_gap", "transport_gap", "whole_space_ext",
            "reflection_demo", "moments"}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_list_sorted_and_json(capsys):
    code, out, _ = run(["list"], capsys)
    assert code == 0
    names = [line.split()[0] for line in out.strip().splitlines()]
    assert names == sorted(names) and REQUIRED <= set(names)
    code, out, _ = run(["list", "--json"], capsys)
    items = json.loads(out)
    assert [i["name"] for i in items] == names
    assert all("description" in i and "keys" in i for i in items)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "magtrace", "list", "--json"], capture_output=True, text=True)
    assert out.returncode == 0 and REQUIRED <= {i["name"] for i in json.loads(out.stdout)}


def test_every_experiment_has_bundled_config():
    names = {i["name"] for i in cli.list_experiments()}
    bundled = {cli.load_config(n)["experiment"] for n in cli.bundled_names()}
    assert names <= bundled


def test_stokes_run_writes_report_and_ledger(tmp_path, capsys):
    code, _, _ = run(["run", "--config", "stokes_triangle", "--out", str(tmp_path)], capsys)
    assert code == 0
    reports = list(tmp_path.glob("stokes_triangle-*.json"))
    assert len(reports) == 1
    rep = json.loads(reports[0].read_text())
    assert rep["result"]["max_residual"] <= 1e-10 and "timestamp" in rep
    rows = list(csv.reader((tmp_path / "ledger.csv").open()))
    assert rows[0] == ["timestamp", "experiment", "params_hash", "resolution", "lhs", "rhs",
                       "ratio_or_slope", "converged"]
    run(["run", "--config", "stokes_triangle", "--out", str(tmp_path)], capsys)
    assert len(list(csv.reader((tmp_path / "ledger.csv").open()))) == 3


def test_gauge_check_exit_zero(tmp_path, capsys):
    code, out, _ = run(["run", "--config", "gauge_check", "--out", str(tmp_path), "--json"], capsys)
    assert code == 0
    assert json.loads(out)["result"]["max_relative_drift"] < 1e-8


def test_malformed_config_names_field(tmp_path, capsys):
    cfg = cli.load_config("trace_ineq")
    cfg["s"] = 1.5
    code, _, err = run(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)], capsys)
    assert code == 1 and "'s'" in err


def test_unknown_experiment(tmp_path, capsys):
    code, _, err = run(["run", "--config", write_cfg(tmp_path, {"experiment": "nope"})], capsys)
    assert code == 1 and "experiment" in err


def test_sweep_validation(tmp_path, capsys):
    cfg = cli.load_config("poincare")
    cfg["beta_list"] = [4.0]
    code, _, err = run(["sweep", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)], capsys)
    assert code == 1 and "beta_list" in err
    cfg["beta_list"] = [1.0, 2.0, 4.0, 8.0, 16.0]
    cfg["scales"] = [0.1, 0.2, 0.4, 0.8]
    code, _, err = run(["sweep", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)], capsys)
    assert code == 1


def test_poincare_sweep(tmp_path, capsys):
    code, out, _ = run(["sweep", "--config", "poincare", "--out", str(tmp_path), "--json"], capsys)
    rep = json.loads(out)
    assert code == 0 and len(rep["result"]["points"]) == 5
    assert {"slope", "r_squared", "threshold"} <= set(rep["result"])
    assert len(list(tmp_path.glob("poincare-*.json"))) == 1


def test_variant_gap_sweep_six_scales(tmp_path, capsys):
    cfg = cli.load_config("variant_gap")
    cfg["scales"] = [0.001, 0.003, 0.01, 0.03, 0.1, 0.3]
    code, out, _ = run(["sweep", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path), "--json"], capsys)
    rep = json.loads(out)
    assert code == 0 and len(rep["result"]["points"]) == 6 and "r_squared" in rep["result"]


def test_gamma_derived_unless_override():
    cfg = cli.load_config("extension_ineq")
    cfg["grid"]["gamma"] = 0.3
    with pytest.raises(cli.ConfigError):
        cli.execute(cfg)


def test_params_hash_ignores_output_dir():
    cfg = cli.load_config("stokes_triangle")
    h = cli.params_hash(cfg)
    assert cli.params_hash({**cfg, "output_dir": "elsewhere"}) == h
    assert cli.params_hash({**cfg, "count": 7}) != h


def test_bit_reproducible_across_threads():
    cfg = cli.load_config("poincare")
    a = cli.execute(cfg, 1, 1)
    b = cli.execute(cfg, 1, 4)
    assert cli.report_bytes(a) == cli.report_bytes(b)
