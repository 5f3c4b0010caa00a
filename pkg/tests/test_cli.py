import csv
import json

import numpy as np
import pytest

from h2rail.cli import (LONG_LINE_TAU, RunConfig, config_to_toml, default_target_time, load_config, main)
from h2rail.powertrain import default_motor_map, write_motor_map
from h2rail.route import load_route, synthetic_route
from h2rail.trajectory import CSV_COLUMNS


@pytest.fixture(scope="module")
def both_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("both")
    code = main(["optimize", "--pipeline", "both", "--out", str(out)])
    return code, out


def test_optimize_both_writes_artifacts(both_run):
    code, out = both_run
    assert code == 0
    for name in ("concurrent", "sequential"):
        for stem in ("trajectory", "simulation"):
            assert (out / f"{stem}_{name}.csv").is_file()
        for stem in ("tightness", "simulation"):
            assert (out / f"{stem}_{name}.txt").is_file()
        assert (out / f"solver_{name}.log").is_file()
    assert (out / "comparison.txt").is_file()


def test_artifacts_carry_config_hash(both_run):
    _, out = both_run
    heads = {p.name: p.read_text().splitlines()[0] for p in out.iterdir()}
    assert all(h.startswith("# config_hash ") for h in heads.values()), heads
    assert len(set(heads.values())) == 1


def test_trajectory_columns_and_solver_log(both_run):
    _, out = both_run
    lines = (out / "trajectory_concurrent.csv").read_text().splitlines()
    assert tuple(next(csv.reader([lines[1]]))) == CSV_COLUMNS
    log = (out / "solver_sequential.log").read_text()
    assert "[speed]" in log and "[ems]" in log
    assert "kkt_nnz" in log and "factor_nnz" in log


def test_rerun_is_byte_identical(both_run, tmp_path):
    _, first = both_run
    assert main(["optimize", "--pipeline", "both", "--out", str(tmp_path)]) == 0
    for path in sorted(first.iterdir()):
        assert (tmp_path / path.name).read_bytes() == path.read_bytes(), path.name


def test_missing_route_file(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[paths]\nroute = "nowhere.csv"\nstations = "nowhere_st.csv"\n[run]\ntau = 800\n')
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "nowhere.csv" in err and len(err.strip().splitlines()) == 1


def test_impossible_target_time(tmp_path, capsys):
    assert main(["optimize", "--tau", "1", "--out", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    assert "lower bound" in err


def test_gen_route_rejects_single_stop(tmp_path):
    assert main(["gen-route", "--stops", "1", "--out", str(tmp_path)]) == 1


def test_gen_route_deterministic_and_loadable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["gen-route", "--length", "8000", "--stops", "4", "--seed", "3", "--out", str(d)]) == 0
    for name in ("route.csv", "stations.csv", "run.toml"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    cfg = load_config(a / "run.toml")
    route = load_route(cfg.path("route"), cfg.path("stations"))
    ref = synthetic_route(8000, 4, 3)
    assert route.total_length == pytest.approx(ref.total_length)
    assert len(route.stations) == 4
    np.testing.assert_allclose([s for s, _ in route.stations], [s for s, _ in ref.stations])
    assert cfg.tau == default_target_time(ref, cfg.ds)


def test_gen_route_long_line(tmp_path):
    assert main(["gen-route", "--length", "63000", "--stops", "18", "--seed", "7", "--out", str(tmp_path)]) == 0
    cfg = load_config(tmp_path / "run.toml")
    route = load_route(cfg.path("route"), cfg.path("stations"))
    assert route.total_length == pytest.approx(63_000.0)
    assert len(route.stations) == 18
    assert cfg.tau == LONG_LINE_TAU


def test_config_round_trip(tmp_path):
    cfg = RunConfig(tau=900.0, ds=20.0, pipeline="both", seed=2, feas_tol=1e-6)
    path = tmp_path / "run.toml"
    path.write_text(config_to_toml(cfg))
    back = load_config(path)
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_unknown_config_key(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("[grid]\nspacing = 3\n")
    assert main(["optimize", "--config", str(path), "--out", str(tmp_path)]) == 1


def test_fit_outputs_are_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["fit", "--out", str(a)]) == 0
    assert main(["fit", "--out", str(b)]) == 0
    assert (a / "fits.json").read_bytes() == (b / "fits.json").read_bytes()
    assert (a / "fits.txt").read_bytes() == (b / "fits.txt").read_bytes()
    printed = capsys.readouterr().out
    assert "convex True" in printed
    data = json.loads((a / "fits.json").read_text())
    assert "config_hash" in data


def test_fit_rejects_efficiency_above_one(tmp_path, params, capsys):
    path = tmp_path / "motor.csv"
    write_motor_map(default_motor_map(params), path)
    text = path.read_text().splitlines()
    f, v, _ = text[1].split(",")
    text[1] = f"{f},{v},1.2"
    path.write_text("\n".join(text) + "\n")
    cfg = tmp_path / "run.toml"
    cfg.write_text('[paths]\nmotor_map = "motor.csv"\n')
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and "efficienc" in err
