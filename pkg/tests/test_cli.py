import json
import subprocess
import sys

import numpy as np

from atlas.cli import build_parser, main
from atlas.model import AtlasModel, Variant, random_model

TINY = ["--M", "1", "--r", "1", "--samples", "60", "--batch-size", "20"]


def test_grid_command(tmp_path, capsys):
    out = tmp_path / "g"
    code = main(["grid", "--dims", "1", "--widths", "0.5", "--trials", "1", "--epochs-task1", "1",
                 "--epochs-task2", "1", "--lr", "0.01", "--noise", "0.1", "--save-models",
                 "--out", str(out), *TINY])
    assert code == 0
    assert "2 records (0 failed)" in capsys.readouterr().out
    assert (out / "results.csv").exists() and len(list((out / "models").glob("*.json"))) == 2
    # rerun from the manifest reproduces the same records without retraining
    assert main(["grid", "--config", str(out / "manifest.json"), "--out", str(out)]) == 0


def test_grid_defaults_are_reduced():
    args = build_parser().parse_args(["grid"])
    from atlas.cli import _grid_config
    c = _grid_config(args)
    assert c.dims == [1, 2] and c.trials == 5 and c.lr_mode == "random_uniform"
    full = _grid_config(build_parser().parse_args(["grid", "--full", "--seed", "4"]))
    assert full.dims == [1, 2, 8] and full.trials == 30 and full.master_seed == 4


def test_seed_from_environment(monkeypatch):
    from atlas.cli import _grid_config
    monkeypatch.setenv("ATLAS_SEED", "17")
    assert _grid_config(build_parser().parse_args(["grid"])).master_seed == 17


def test_appendix_command(tmp_path, capsys):
    code = main(["appendix", "--experiment", "D", "--segments", "2", "--epochs-per-segment", "1",
                 "--epochs-task2", "1", "--out", str(tmp_path), *TINY])
    assert code == 0
    text = capsys.readouterr().out
    assert "segment 2" in text and "expansion before segment 2" in text


def test_verify_command(tmp_path, capsys):
    path = tmp_path / "m.json"
    random_model(2, 2, 2, np.random.default_rng(0)).save(path)
    assert main(["verify", str(path), "--points", "50", "--pairs", "200", "--fd-points", "3"]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert len(lines) == 5 and all(x["pass"] for x in lines)


def test_verify_property_failure_exit_code(tmp_path, capsys):
    path = tmp_path / "m.json"
    random_model(2, 2, 3, np.random.default_rng(0), variant=Variant.ALL_DENSITIES_TRAINABLE).save(path)
    code = main(["verify", str(path), "--points", "20", "--pairs", "500", "--fd-points", "2"])
    assert code == 2
    lines = {x["property"]: x for x in map(json.loads, capsys.readouterr().out.splitlines())}
    assert lines["distal_orthogonality"]["pass"] is False


def test_eval_command(tmp_path):
    m = random_model(2, 2, 1, np.random.default_rng(1))
    m.save(tmp_path / "m.json")
    X = np.random.default_rng(2).random((7, 2))
    np.savetxt(tmp_path / "x.csv", X, delimiter=",")
    assert main(["eval", str(tmp_path / "m.json"), str(tmp_path / "x.csv"), "--out", str(tmp_path / "y.csv")]) == 0
    got = np.loadtxt(tmp_path / "y.csv", delimiter=",", ndmin=2)
    np.testing.assert_array_equal(got, m.predict(np.loadtxt(tmp_path / "x.csv", delimiter=",")))


def test_error_exit_code(tmp_path, capsys):
    assert main(["verify", str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err
    AtlasModel(1).save(tmp_path / "m.json")
    (tmp_path / "bad.csv").write_text("0.5\n1.5\n")
    assert main(["eval", str(tmp_path / "m.json"), str(tmp_path / "bad.csv")]) == 1


def test_console_entry_point(tmp_path):
    AtlasModel(1).save(tmp_path / "m.json")
    (tmp_path / "x.csv").write_text("0.25\n")
    res = subprocess.run([sys.executable, "-m", "atlas.cli", "eval", str(tmp_path / "m.json"),
                          str(tmp_path / "x.csv")], capture_output=True, text=True)
    assert res.returncode == 0 and float(res.stdout) == 0.0
