from __future__ import annotations

import json

import numpy as np
import pytest

from reefmap.cli import main
from reefmap.io_formats import read_csv, read_grid


@pytest.fixture
def sim_run(tiny_config_path, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(tiny_config_path), "--out", str(out)]) == 0
    return out


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "none.toml"), "--out",
                 str(tmp_path / "o")]) == 2
    assert "config not found" in capsys.readouterr().err


def test_bad_arguments_are_usage_errors(capsys):
    assert main([]) == 2
    assert main(["simulate"]) == 2
    assert main(["frobnicate"]) == 2


def test_invalid_config_is_usage_error(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[map]\nresolution = 0\n")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "resolution" in capsys.readouterr().err


def test_simulate_outputs_and_manifest(sim_run):
    for name in ("map.egrid", "truth.egrid", "logs.csv", "config.json", "manifest.json"):
        assert (sim_run / name).exists()
    m = json.loads((sim_run / "manifest.json").read_text())
    assert m["seed"] == 0 and len(m["config_hash"]) == 64
    assert set(m["outputs"]) == {"map.egrid", "truth.egrid", "logs.csv", "config.json"}
    assert "total" in m["timings"] and m["backend"] in ("python", "cython")
    head, rows = read_csv(sim_run / "logs.csv")
    assert head[:3] == ["step", "time", "x"] and len(rows) == 5
    assert read_grid(sim_run / "map.egrid").observed.any()


def test_evaluate_outputs(sim_run):
    assert main(["evaluate", "--run", str(sim_run)]) == 0
    head, rows = read_csv(sim_run / "metrics.csv")
    assert "corridor_rmse" in head and len(rows) == 1
    head, rows = read_csv(sim_run / "cross_section.csv")
    assert head == ["coord", "h_est", "h_min", "h_max", "h_true"]
    coords = [float(r[0]) for r in rows]
    assert coords == sorted(coords)
    assert (sim_run / "cross_section_y0.5.csv").exists()
    assert (sim_run / "cross_section_y1.csv").exists()
    assert (sim_run / "error.pgm").read_bytes().startswith(b"P5\n")
    assert "gray 65535" in (sim_run / "error.txt").read_text()
    m = json.loads((sim_run / "manifest.json").read_text())
    assert "metrics.csv" in m["outputs"] and m["evaluated"]


def test_evaluate_is_idempotent(sim_run):
    main(["evaluate", "--run", str(sim_run)])
    first = {p.name: p.read_bytes() for p in sim_run.iterdir() if p.suffix != ".json"}
    main(["evaluate", "--run", str(sim_run)])
    second = {p.name: p.read_bytes() for p in sim_run.iterdir() if p.suffix != ".json"}
    assert first == second


def test_evaluate_section_outside_grid(sim_run, capsys):
    assert main(["evaluate", "--run", str(sim_run), "--sections", "40"]) == 2
    assert "outside" in capsys.readouterr().err


def test_tampered_grid_is_io_error(sim_run, capsys):
    p = sim_run / "map.egrid"
    p.write_bytes(p.read_bytes()[:-10])
    assert main(["evaluate", "--run", str(sim_run)]) == 3
    assert "expected" in capsys.readouterr().err


def test_evaluate_without_run_is_io_error(tmp_path):
    assert main(["evaluate", "--run", str(tmp_path)]) == 3


def test_sweep(tiny_config_path, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(tiny_config_path), "--eps", "0,0.25,0.5",
                 "--out", str(out)]) == 0
    head, rows = read_csv(out / "sweep.csv")
    assert head == ["epsilon", "mean_sigma2_z", "rmse", "coverage"]
    assert [float(r[0]) for r in rows] == [0.0, 0.25, 0.5]
    sig = [float(r[1]) for r in rows]
    assert sig[0] == 0.0 and sig[0] < sig[1] < sig[2]


def test_sweep_rejects_epsilon_out_of_range(tiny_config_path, tmp_path, capsys):
    assert main(["sweep", "--config", str(tiny_config_path), "--eps", "0,1.5",
                 "--out", str(tmp_path / "sw")]) == 2
    assert main(["sweep", "--config", str(tiny_config_path), "--eps", "a,b",
                 "--out", str(tmp_path / "sw")]) == 2


def test_bench_prints_stages(tiny_config_path, tmp_path, capsys):
    assert main(["bench", "--config", str(tiny_config_path), "--iterations", "5",
                 "--out", str(tmp_path / "b")]) == 0
    text = capsys.readouterr().out
    for stage in ("sense", "motion_update", "integrate_scan", "update(total)", "fuse"):
        assert stage in text
    head, rows = read_csv(tmp_path / "b" / "bench.csv")
    assert len(rows) == 5


def test_seed_precedence(tiny_config_path, tmp_path, monkeypatch):
    def seed_of(out):
        return json.loads((out / "manifest.json").read_text())["seed"]

    base = ["simulate", "--config", str(tiny_config_path)]
    monkeypatch.setenv("REEFMAP_SEED", "21")
    assert main(base + ["--out", str(tmp_path / "env")]) == 0
    assert seed_of(tmp_path / "env") == 21
    assert main(base + ["--out", str(tmp_path / "flag"), "--seed", "5"]) == 0
    assert seed_of(tmp_path / "flag") == 5
    monkeypatch.setenv("REEFMAP_SEED", "x")
    assert main(base + ["--out", str(tmp_path / "bad")]) == 2


def test_same_seed_same_bytes_different_seed_differs(tiny_config_path, tmp_path):
    outs = []
    for name, seed in (("a", "3"), ("b", "3"), ("c", "4")):
        out = tmp_path / name
        main(["simulate", "--config", str(tiny_config_path), "--out", str(out), "--seed", seed])
        outs.append((out / "map.egrid").read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]


def test_non_finite_map_is_numeric_error(tiny_config_path, tmp_path, monkeypatch):
    import reefmap.simworld as sw

    real = sw.run_config

    def broken(cfg, **kw):
        res = real(cfg, **kw)
        res.map_grid.layers["fused_height"][res.map_grid.observed] = np.inf
        return res

    monkeypatch.setattr(sw, "run_config", broken)
    assert main(["simulate", "--config", str(tiny_config_path), "--out",
                 str(tmp_path / "n")]) == 4
