import json
import os
import subprocess
import sys

import pytest

from tcval import cli

BASE = {
    "model": {"kind": "ABM", "params": {"a": 0.0, "b": 1.0}},
    "payoff": {"kind": "Linear", "params": [1.0, 0.0]},
    "grid": {"T": 1.0, "n_time": 512, "n_space": 481},
    "principle": {"kind": "Variance", "alpha": 1.0},
    "engine": "all",
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, command, cfg, *extra):
    return cli.main([command, "--config", write(tmp_path, cfg), "--out", str(tmp_path / "out" / "run"), *extra])


def summary(tmp_path):
    return json.loads((tmp_path / "out" / "run_summary.json").read_text())


def test_calibrate_prints_three_digits(tmp_path, capsys):
    assert run(tmp_path, "calibrate", {"q": 0.995}) == 0
    assert json.loads(capsys.readouterr().out) == {"q": 0.995, "k": 2.58, "l": 0.971}


def test_calibrate_bad_level(tmp_path, capsys):
    assert run(tmp_path, "calibrate", {"q": 0.4}) == 2
    assert "q" in capsys.readouterr().err


def test_all_engines_agree_on_identity(tmp_path):
    assert run(tmp_path, "price", BASE) == 0
    s = summary(tmp_path)
    for name in ("lattice", "pde", "closedform"):
        assert abs(s["engines"][name]["price"] - 0.5) < 5e-3
    pairs = {row["pair"] for row in s["agreement"]}
    assert pairs == {"lattice-pde", "lattice-closedform", "pde-closedform"}
    assert "runtime_s" not in s
    for name in ("lattice", "pde", "closedform"):
        header = (tmp_path / "out" / f"run_surface_{name}.csv").read_bytes().decode().split("\r\n")[0]
        assert header == "t,y,price"


@pytest.mark.parametrize("model", [
    {"kind": "ABM", "params": {"a": 0.3, "b": 0.8}},
    {"kind": "GBM", "params": {"mu": 0.0, "sigma": 0.3}},
])
def test_alpha_zero_lattice_matches_closed_form(tmp_path, model):
    cfg = dict(BASE, model=model, engine="all", principle={"kind": "Variance", "alpha": 0.0},
               grid={"T": 1.0, "n_time": 64, "n_space": 201, "y_center": 1.0})
    assert run(tmp_path, "price", cfg) == 0
    agreement = {row["pair"]: row["sup_diff"] for row in summary(tmp_path)["agreement"]}
    assert agreement["lattice-closedform"] < 1e-6


def test_output_is_byte_identical(tmp_path):
    cfg = dict(BASE, grid={"T": 1.0, "n_time": 32, "n_space": 61})
    assert run(tmp_path, "price", cfg) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    assert run(tmp_path, "price", cfg, "--threads", "3") == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    assert first == second


def test_timing_flag_adds_runtime(tmp_path):
    cfg = dict(BASE, engine="pde", grid={"T": 1.0, "n_time": 16, "n_space": 41})
    assert run(tmp_path, "price", cfg, "--timing") == 0
    assert summary(tmp_path)["runtime_s"] >= 0


@pytest.mark.parametrize("mutate,path", [
    (lambda c: c["principle"].update(alpah=1.0), "principle.alpah"),
    (lambda c: c.update(engine="fast"), "engine"),
    (lambda c: c["grid"].update(n_time=0), "grid.n_time"),
    (lambda c: c.pop("payoff"), "<root>"),
    (lambda c: c["model"]["params"].update(c=1.0), "model.params.c"),
    (lambda c: c["principle"].update(alpha=-1.0), "principle.alpha"),
    (lambda c: c.update(engine="lattice", principle={"kind": "CostOfCapital", "delta": 0.1}, tree="binomial"), "tree"),
])
def test_schema_errors_exit_2_with_field_path(tmp_path, capsys, mutate, path):
    cfg = json.loads(json.dumps(BASE))
    mutate(cfg)
    assert run(tmp_path, "price", cfg) == 2
    err = capsys.readouterr().err
    assert f"configuration error at {path}" in err
    assert not (tmp_path / "out").exists()


def test_engine_errors_exit_3_without_partial_files(tmp_path, capsys):
    cfg = dict(BASE, model={"kind": "GBM", "params": {"mu": 0.0, "sigma": 0.2}},
               principle={"kind": "CurrentPriceBenchmark", "gamma": 1.0},
               grid={"T": 1.0, "n_time": 32, "n_space": 41, "y_center": 1.0})
    assert run(tmp_path, "price", cfg) == 3
    assert "DomainError" in capsys.readouterr().err
    assert not (tmp_path / "out").exists() or not any((tmp_path / "out").iterdir())


def test_cfl_violation_is_an_engine_error(tmp_path, capsys):
    cfg = dict(BASE, engine="pde", principle={"kind": "StdDev", "beta": 3.0},
               grid={"T": 1.0, "n_time": 2, "n_space": 401})
    assert run(tmp_path, "price", cfg) == 3
    assert "n_time >=" in capsys.readouterr().err


def test_converge_writes_reports(tmp_path):
    cfg = dict(BASE, payoff={"kind": "Call", "params": [0.0]}, grid={"T": 1.0, "n_time": 16, "n_space": 41},
               converge={"dt_sequence": [1 / 16, 1 / 32, 1 / 64, 1 / 128], "case_id": "call"})
    del cfg["engine"]
    assert run(tmp_path, "converge", cfg) == 0
    text = (tmp_path / "out" / "run_convergence.csv").read_bytes().decode()
    assert text.startswith("case_id,dt,error,fitted_order,reference\r\n")
    rep = json.loads((tmp_path / "out" / "run_convergence.json").read_text())
    assert 0.8 <= rep["fitted_order"] <= 1.2


def test_converge_cost_of_capital(tmp_path):
    cfg = dict(BASE, principle={"kind": "CostOfCapital", "delta": 0.06, "q": 0.995},
               grid={"T": 1.0, "n_time": 16, "n_space": 41},
               converge={"dt_sequence": [1 / 16, 1 / 32, 1 / 64, 1 / 128]})
    del cfg["engine"]
    assert run(tmp_path, "converge", cfg) == 0
    rep = json.loads((tmp_path / "out" / "run_convergence.json").read_text())
    assert rep["exact_zero"]


def test_davis_command(tmp_path):
    cfg = dict(BASE, principle={"kind": "VarianceDiscounted", "gamma": 1.0, "X0": 1.0},
               grid={"T": 1.0, "n_time": 200, "n_space": 241},
               davis={"perturbation": {"kind": "Linear", "params": [1.0, 0.0]}, "eps": [0.1, 0.01, 0.001, 0.0001]})
    del cfg["engine"]
    assert run(tmp_path, "davis", cfg) == 0
    out = tmp_path / "out"
    assert {"run_base.csv", "run_davis.csv", "run_davis_check.csv", "run_summary.json"} <= {p.name for p in out.iterdir()}
    s = summary(tmp_path)
    assert s["davis_price"] == pytest.approx(1.0, abs=1e-9)
    assert s["gaps"][-1] < 1e-3


def test_command_mismatch(tmp_path):
    assert run(tmp_path, "calibrate", dict(BASE, command="price", q=0.99)) == 2


def test_env_threads(tmp_path, monkeypatch):
    monkeypatch.setenv("TCVAL_THREADS", "nope")
    assert run(tmp_path, "price", dict(BASE, engine="lattice")) == 2
    monkeypatch.setenv("TCVAL_THREADS", "2")
    assert run(tmp_path, "price", dict(BASE, engine="lattice")) == 0


def test_bad_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["price", "--config", str(p)]) == 2


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, {"q": 0.99})
    proc = subprocess.run([sys.executable, "-m", "tcval", "calibrate", "--config", cfg],
                          capture_output=True, text=True, env={**os.environ})
    assert proc.returncode == 0
    assert json.loads(proc.stdout) == {"q": 0.99, "k": 2.33, "l": 0.954}
