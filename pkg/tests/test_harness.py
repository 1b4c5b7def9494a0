import csv
import json
from collections import defaultdict

import numpy as np
import pytest

from atlas.harness import (RESULT_HEADER, ExperimentConfig, TrialRecord, aggregate, emit_results,
                           grid_keys, grid_trial_data, read_records, result_rows, run_appendix,
                           run_grid, run_grid_trial)
from atlas.model import AtlasModel
from atlas.targets import expected_off_target


def tiny(**kw):
    base = dict(dims=[1], widths=[0.5], trials=2, M=1, r=1, batch_size=20, epochs_task1=2,
                epochs_task2=2, lr_mode="fixed", lr=0.01, noise_mode="fixed", noise=0.1, samples=60)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_defaults_and_validation():
    c = ExperimentConfig()
    assert c.dims == [1, 2, 8] and c.trials == 30 and c.widths[0] == 0.1 and c.widths[-1] == 0.9
    assert len(grid_keys(c)) * 2 == 1620
    r = ExperimentConfig.reduced()
    assert r.dims == [1, 2] and r.trials == 5
    for bad in (dict(trials=0), dict(widths=[1.0]), dict(lr_mode="x"), dict(protocol="y")):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)
    assert ExperimentConfig.from_dict(c.to_dict()) == c


def test_trial_data_shared_and_deterministic():
    c = tiny(lr_mode="random_uniform", noise_mode="exponential", noise=1.0)
    a, b = grid_trial_data(c, 2, 0.3, 1), grid_trial_data(c, 2, 0.3, 1)
    assert a["lr"] == b["lr"] and 1e-6 <= a["lr"] <= 0.01 + 1e-6 and a["noise"] > 0
    for task in ("task1", "task2"):
        for x, y in zip(a["data"][task], b["data"][task]):
            assert np.array_equal(x.inputs, y.inputs) and np.array_equal(x.targets, y.targets)
    other = grid_trial_data(c, 2, 0.3, 2)
    assert other["lr"] != a["lr"]


def test_task2_training_inside_region():
    c = tiny()
    d = grid_trial_data(c, 2, 0.2, 0)
    lo = d["task2_target"].region_lo
    train, val, _ = d["data"]["task2"]
    assert np.all((train.inputs >= lo) & (train.inputs <= lo + 0.2))
    assert np.any(np.any((val.inputs < lo) | (val.inputs > lo + 0.2), axis=1))
    # validation and test are noise-free in this protocol
    np.testing.assert_array_equal(val.targets[:, 0], d["task2_target"].batch(val.inputs))


def test_run_grid_trial_records():
    c = tiny()
    recs = run_grid_trial(c, 1, 0.5, 0)
    assert [r.variant for r in recs] == ["distal_orthogonal", "all_densities_trainable"]
    for r in recs:
        assert r.status == "ok"
        assert len(r.curves["task1"]["train"]) == 2 and len(r.curves["task2"]["validation"]) == 2
        assert r.final_test["task2"] >= 0 and r.final_test["task1"] >= 0
    again = run_grid_trial(c, 1, 0.5, 0)
    assert [r.curves for r in again] == [r.curves for r in recs]
    assert [r.final_test for r in again] == [r.final_test for r in recs]


def test_run_grid_trial_overflow_recorded():
    c = tiny(lr=5000.0, epochs_task1=3, samples=100)
    with np.errstate(over="ignore"):
        recs = run_grid_trial(c, 1, 0.5, 0)
    assert [r.status for r in recs] == ["failed", "failed"]
    assert all("exceeds" in r.error for r in recs)
    assert aggregate(recs) == []


def test_run_grid_counts_and_outputs(tmp_path):
    c = tiny()
    recs, table = run_grid(c, tmp_path)
    assert len(recs) == 4
    assert {f.name for f in tmp_path.iterdir()} >= {"records.jsonl", "results.csv", "summary.csv",
                                                    "manifest.json"}
    assert len(table) == 2 and all(row["trials"] == 2 for row in table)
    assert table[0]["expected_off_target"] == expected_off_target(1, 0.5)


def test_aggregate_recomputed_from_csv(tmp_path):
    c = tiny(dims=[1, 2], widths=[0.3, 0.6], trials=1)
    _, table = run_grid(c, tmp_path)
    sums = defaultdict(list)
    with (tmp_path / "results.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == RESULT_HEADER
    for row in rows:
        if row["split"] == "test":
            sums[(int(row["n"]), float(row["delta"]), row["variant"])].append(float(row["mae"]))
    for row in table:
        assert abs(np.mean(sums[(row["n"], row["delta"], row["variant"])]) - row["mean_task2_test_mae"]) <= 1e-12
    with (tmp_path / "summary.csv").open() as fh:
        summ = list(csv.DictReader(fh))
    for a, b in zip(summ, table):
        assert abs(float(a["mean_task2_test_mae"]) - b["mean_task2_test_mae"]) <= 1e-12


def test_resume_skips_completed(tmp_path):
    c = tiny()
    run_grid(c, tmp_path)
    lines = (tmp_path / "records.jsonl").read_text().splitlines()
    # drop the last trial and add a torn line, as an interrupted run would leave
    (tmp_path / "records.jsonl").write_text("\n".join(lines[:2]) + "\n{\"trial_id\": \"n1")
    recs, _ = run_grid(c, tmp_path)
    assert len(recs) == 4
    assert len(read_records(tmp_path / "records.jsonl")) == 4
    full, _ = run_grid(tiny(), tmp_path / "fresh")
    assert [r.final_test for r in recs] == [r.final_test for r in full]


def test_manifest_guards_and_reruns(tmp_path):
    c = tiny()
    run_grid(c, tmp_path / "a")
    with pytest.raises(ValueError):
        run_grid(tiny(lr=0.02), tmp_path / "a")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["master_seed"] == 0 and len(manifest["trials"]) == 2
    c2 = ExperimentConfig.from_dict(manifest["config"])
    recs, _ = run_grid(c2, tmp_path / "b")
    first = read_records(tmp_path / "a" / "records.jsonl")
    assert sorted(r.final_test["task2"] for r in recs) == sorted(r.final_test["task2"] for r in first)


def test_parallel_workers_match_serial(tmp_path):
    c = tiny(trials=1)
    serial, _ = run_grid(c, tmp_path / "s")
    parallel, _ = run_grid(c, tmp_path / "p", workers=2)
    assert [r.final_test for r in serial] == [r.final_test for r in parallel]


def test_save_models(tmp_path):
    run_grid(tiny(trials=1), tmp_path, save_models=True)
    files = sorted((tmp_path / "models").glob("*.json"))
    assert len(files) == 2
    m = AtlasModel.load(files[0])
    assert (m.n, m.M, m.r) == (1, 1, 1)


def _record(epochs=2):
    curve = {"train": [0.5] * epochs, "validation": [0.4] * epochs}
    return TrialRecord("n1_d0.5_t0", "grid", 1, 0.5, 0, "distal_orthogonal", 0.01, 0.1, 0,
                       curves={"task1": curve, "task2": curve}, final_test={"task1": 0.3, "task2": 0.35})


def test_result_rows_schema():
    rows = result_rows(_record())
    assert len(rows) == 1 + 2 * 2 * 2
    assert rows[0][6:] == ["task2", "test", 2, 0.35]
    assert all(len(r) == len(RESULT_HEADER) for r in rows)


def test_emit_results_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_results([], tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_results([_record()], blocker / "sub")


def test_aggregate_degradation():
    a, b = _record(), _record()
    b.final_test = {"task1": 0.1, "task2": 0.5}
    (row,) = aggregate([a, b])
    assert row["trials"] == 2
    assert row["mean_degradation"] == pytest.approx(((0.35 - 0.3) + (0.5 - 0.1)) / 2)


def test_appendix_small_run(tmp_path):
    c = ExperimentConfig(protocol="appendix", experiment="C", segments=3, epochs_per_segment=1,
                         epochs_appendix_task2=1, samples=300)
    rec, snaps = run_appendix(c, out_dir=tmp_path)
    assert rec.status == "ok"
    assert [s["r"] for s in rec.extras["shapes"]] == [0, 1, 2]
    assert [s["M"] for s in rec.extras["shapes"]] == [0, 2, 4]
    assert len(snaps) == 4 and len(rec.extras["boundaries"]) == 2
    for b in rec.extras["boundaries"]:
        assert b["abs_change"] <= 1e-9
    assert set(rec.curves) == {"task1_seg1", "task1_seg2", "task1_seg3", "task2"}
    assert (tmp_path / "models" / "appendix_C_task2.json").exists()
    rec2, _ = run_appendix(c)
    assert rec2.curves == rec.curves


def test_appendix_rejects_unknown_experiment():
    with pytest.raises(ValueError):
        run_appendix(ExperimentConfig(protocol="appendix"), "Z")
