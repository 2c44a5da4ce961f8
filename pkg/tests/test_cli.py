import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from gsmsynth.cli import (EXIT_IO, EXIT_OK, EXIT_VALIDATION, PRESETS, cmd_evaluate, cmd_optimize, cmd_preprocess,
                          cmd_realize, complex_dof_count, load_config, main)
from gsmsynth.errors import ConfigurationError
from gsmsynth.manifolds import DesignPoint, ExcitationSet
from gsmsynth.optimizer import dof_strategy, initial_design
from gsmsynth.realization import random_toy_element
from gsmsynth.toyem import import_dataset, save_checkpoint


def quiet(*_):
    pass


def small_config(tmp_path, rows=2, cols=2, name="run.json", **extra):
    d = {"grid": {"rows": rows, "cols": cols}, "strategy": "EqualElements",
         "beams": {"scan": [-10, 15], "sll_db": -15.0, "xpr_db": -30.0},
         "schedule": {"alphas": [0, 1, 100], "max_iter": 30}}
    d.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return path


@pytest.fixture(scope="module")
def dataset_8x8(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds8")
    cmd_preprocess(load_config(preset="paper-8x8", overrides={"out": str(out)}), quiet)
    return out


def test_preprocess_small_grid(tmp_path, capsys):
    out = tmp_path / "ds"
    assert main(["preprocess", "--config", str(small_config(tmp_path)), "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "16 total, 12 nonzero" in text
    model, G, _ = import_dataset(out)
    assert model.n_elements == 4
    nonzero = sum(np.any(G.block(k, l) != 0) for k in range(4) for l in range(4))
    assert nonzero == 12


def test_preprocess_is_deterministic(tmp_path):
    cfg = small_config(tmp_path)
    for name in ("a", "b"):
        main(["preprocess", "--config", str(cfg), "--out", str(tmp_path / name)])
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_preprocess_8x8_shapes(dataset_8x8):
    model, G, _ = import_dataset(dataset_8x8)
    assert model.n_elements == 64 and G.n_modes == 2 and G.matrix.shape == (128, 128)


def test_dof_formula():
    assert complex_dof_count(2, 1, 32, 8, 8, 13) == 456
    assert complex_dof_count(2, 1, 1, 8, 8, 13) == 177


@pytest.mark.parametrize("strategy,expected", [("PointSymmetry", 456), ("EqualElements", 177)])
def test_dry_run_counts(dataset_8x8, strategy, expected):
    cfg = load_config(preset="paper-8x8", overrides={"dataset": str(dataset_8x8), "strategy": strategy})
    summary = cmd_optimize(cfg, quiet, dry_run=True)
    assert summary["complex_dof"] == expected
    assert summary["real_parameters"] == 2 * expected


def test_optimize_evaluate_realize_pipeline(tmp_path):
    cfg_path = small_config(tmp_path)
    ds, run, ev, rz = (tmp_path / n for n in ("ds", "run", "ev", "rz"))
    assert main(["preprocess", "--config", str(cfg_path), "--out", str(ds)]) == EXIT_OK
    args = ["optimize", "--config", str(cfg_path), "--dataset", str(ds), "--out", str(run), "--seed", "3"]
    assert main(args) == EXIT_OK
    assert {"checkpoint", "trace.csv", "summary.txt"} <= {p.name for p in run.iterdir()}
    summary = dict(line.split(" = ") for line in (run / "summary.txt").read_text().splitlines())
    assert summary["complex_dof"] == str(complex_dof_count(2, 1, 1, 2, 2, 2))
    assert main(["evaluate", "--config", str(cfg_path), "--dataset", str(ds), "--checkpoint",
                 str(run / "checkpoint"), "--out", str(ev)]) == EXIT_OK
    rows = list(csv.DictReader(open(ev / "metrics.csv")))
    assert len(rows) == 2 and (ev / "pattern_beam02.csv").exists()
    met = summary["targets_met"] == "True"
    assert met == all(r["pass"] == "True" for r in rows)
    assert main(["realize", "--config", str(cfg_path), "--checkpoint", str(run / "checkpoint"),
                 "--out", str(rz)]) == EXIT_OK
    assert (rz / "class01_chi_sweep.csv").exists()
    assert len(list(csv.DictReader(open(rz / "realization_summary.csv")))) == 1


def test_optimize_twice_gives_identical_final_cost(tmp_path):
    cfg_path = small_config(tmp_path)
    main(["preprocess", "--config", str(cfg_path), "--out", str(tmp_path / "ds")])
    finals = []
    for name in ("r1", "r2"):
        cfg = load_config(cfg_path, overrides={"dataset": str(tmp_path / "ds"), "out": str(tmp_path / name)})
        finals.append(cmd_optimize(cfg, quiet)["final_cost"])
    assert finals[0] == finals[1]
    a = (tmp_path / "r1" / "checkpoint")
    b = (tmp_path / "r2" / "checkpoint")
    assert all((a / p.name).read_bytes() == (b / p.name).read_bytes() for p in a.iterdir())


def test_evaluate_initial_checkpoint_reports_format(tmp_path):
    cfg_path = small_config(tmp_path)
    main(["preprocess", "--config", str(cfg_path), "--out", str(tmp_path / "ds")])
    x0 = initial_design(dof_strategy("EqualElements", 2, 2), 2, 1, 2, 0)
    save_checkpoint(x0, tmp_path / "ck", dof_strategy("EqualElements", 2, 2))
    cfg = load_config(cfg_path, overrides={"dataset": str(tmp_path / "ds"), "checkpoint": str(tmp_path / "ck"),
                                           "out": str(tmp_path / "ev")})
    rows = cmd_evaluate(cfg, quiet)
    assert set(rows[0]) == {"beam", "theta_t", "directivity_dBi", "sll_dB", "xpr_dB", "sll_target",
                            "xpr_target", "pass"}


def test_evaluate_baseline_broadside(tmp_path):
    cfg = load_config(preset="paper-8x8", overrides={"out": str(tmp_path)})
    rows = cmd_evaluate(cfg, quiet, baseline=True)
    broadside = [r for r in rows if r["theta_t"] == 0.0][0]
    assert abs(broadside["sll_dB"] + 15.0) <= 0.1
    assert len(rows) == 13 and (tmp_path / "baseline_beam07.csv").exists()


def test_realize_point_symmetry_8x8_reports(tmp_path):
    a = dof_strategy("PointSymmetry", 8, 8)
    save_checkpoint(initial_design(a, 2, 1, 13, 0), tmp_path / "ck", a)
    cfg = load_config(preset="paper-8x8", overrides={"checkpoint": str(tmp_path / "ck"), "out": str(tmp_path / "rz")})
    rows = cmd_realize(cfg, quiet)
    assert len(rows) == 32
    assert len(list((tmp_path / "rz").glob("class*_chi_sweep.csv"))) == 32
    assert (tmp_path / "rz" / "realization.txt").read_text().count("[class ") == 32


def test_realize_forward_generated_toy_checkpoint(tmp_path):
    a = dof_strategy("Alternating", 2, 2)
    gsms = tuple(random_toy_element(phi, lam, seed).gsm()
                 for phi, lam, seed in ((12.0, (0.8, -1.5), 1), (-33.0, (0.1, 2.2), 2)))
    x = DesignPoint(gsms, ExcitationSet.uniform(2, 2, 2))
    save_checkpoint(x, tmp_path / "ck", a)
    cfg = load_config(small_config(tmp_path), overrides={"checkpoint": str(tmp_path / "ck"),
                                                         "out": str(tmp_path / "rz")})
    rows = cmd_realize(cfg, quiet)
    assert len(rows) == 2
    for r in rows:
        assert "error" not in r and "fit_error" not in r
        assert r["residual"] <= 1e-9
        assert r["residual_snapped"] <= r["snap_bound"] + 1e-12


def test_exit_codes(tmp_path):
    cfg_path = small_config(tmp_path)
    assert main(["optimize", "--config", str(cfg_path), "--dataset", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert main(["optimize", "--config", str(cfg_path)]) == EXIT_VALIDATION
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["preprocess", "--config", str(cfg_path), "--out", str(blocker / "sub")]) == EXIT_IO
    bad = small_config(tmp_path, rows=3, name="bad.json")
    main(["preprocess", "--config", str(cfg_path), "--out", str(tmp_path / "ds")])
    assert main(["optimize", "--config", str(bad), "--dataset", str(tmp_path / "ds"), "--dry-run"]) == EXIT_VALIDATION


@pytest.mark.parametrize("patch", [
    {"grid": {"rows": 0}},
    {"grid": {"dx": -0.5}},
    {"strategy": "Spiral"},
    {"beams": {"scan": [100]}},
    {"beams": {"sll_db": 3.0}},
    {"beams": {"table": "other", "scan": None}},
    {"schedule": {"alphas": [1, 0]}},
    {"schedule": {"tol": -1}},
    {"margin_db": -1},
    {"dataset": "/nonexistent/path"},
])
def test_config_validation(patch):
    base = dict(PRESETS["toy-4x4"])
    merged = json.loads(json.dumps(base))
    for k, v in patch.items():
        if isinstance(v, dict):
            merged[k] = {**merged[k], **v}
            merged[k] = {kk: vv for kk, vv in merged[k].items() if vv is not None}
        else:
            merged[k] = v
    from gsmsynth.cli import RunConfig
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict(merged)


def test_config_errors():
    with pytest.raises(ConfigurationError):
        load_config()
    with pytest.raises(ConfigurationError):
        load_config(preset="nope")


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert main(["preprocess", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "gsmsynth.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "preprocess" in r.stdout
