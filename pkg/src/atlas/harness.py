"""Continual-learning experiments: the randomised width grid and the train-expand runs.

Every random draw of a grid trial comes from ``Stream(master_seed, "grid", n, delta, trial)``;
an appendix run uses ``Stream(master_seed, "appendix", experiment_id)``. Results are
appended to ``records.jsonl`` as trials finish, which is also what a resumed run reads
to skip completed trials.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericRangeError
from .model import AtlasModel, Variant
from .optim import evaluate, train_epochs
from .rng import Stream
from .targets import (APPENDIX_REGION, AnalyticTarget, ConstantTarget, PatchedTarget,
                      expected_off_target, sample_dataset, sample_rbf_target,
                      sample_update_region)

log = logging.getLogger(__name__)

DEFAULT_WIDTHS = [round(0.1 * i, 1) for i in range(1, 10)]
RESULT_HEADER = ["trial_id", "n", "delta", "variant", "lr", "noise", "task", "split", "epoch", "mae"]
SUMMARY_HEADER = ["n", "delta", "variant", "trials", "mean_task2_test_mae", "mean_task1_test_mae",
                  "mean_degradation", "expected_off_target"]
VARIANTS = (Variant.DISTAL_ORTHOGONAL, Variant.ALL_DENSITIES_TRAINABLE)


@dataclass
class ExperimentConfig:
    protocol: str = "grid"
    dims: list = field(default_factory=lambda: [1, 2, 8])
    widths: list = field(default_factory=lambda: list(DEFAULT_WIDTHS))
    trials: int = 30
    M: int = 10
    r: int = 4
    batch_size: int = 100
    epochs_task1: int = 20
    epochs_task2: int = 10
    lr_mode: str = "random_uniform"  # or "fixed"
    lr: float = 0.01
    noise_mode: str = "exponential"  # or "fixed"
    noise: float = 1.0  # mean of the exponential draw, or the fixed sigma
    master_seed: int = 0
    expA_theta: str = "as_written"
    adam_mode: str = "dense"  # or "lazy"
    samples: int = 10_000
    # train-expand protocol
    experiment: str = "A"
    segments: int = 5
    epochs_per_segment: int = 30
    epochs_appendix_task2: int = 6
    delta_M: int = 2

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        self.widths = [float(w) for w in self.widths]
        if self.protocol not in ("grid", "appendix"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(not 0.0 < w < 1.0 for w in self.widths):
            raise ValueError("widths must lie in (0, 1)")
        if self.lr_mode not in ("random_uniform", "fixed"):
            raise ValueError(f"unknown lr_mode {self.lr_mode!r}")
        if self.noise_mode not in ("exponential", "fixed"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        if self.adam_mode not in ("dense", "lazy"):
            raise ValueError(f"unknown adam_mode {self.adam_mode!r}")

    @classmethod
    def reduced(cls, **overrides) -> ExperimentConfig:
        """Desk-scale default grid: dims {1, 2}, five trials per cell."""
        base = dict(dims=[1, 2], trials=5)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrialRecord:
    trial_id: str
    protocol: str
    n: int
    delta: float
    trial_index: int
    variant: str
    lr: float
    noise: float
    seed: int
    curves: dict = field(default_factory=dict)  # task -> {"train": [...], "validation": [...]}
    final_test: dict = field(default_factory=dict)  # task -> MAE
    wall_clock: float = 0.0
    status: str = "ok"
    error: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.trial_id, self.variant)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrialRecord:
        return cls(**d)


def trial_id(n: int, delta: float, trial_index: int) -> str:
    return f"n{n}_d{delta:g}_t{trial_index}"


def _adam_lazy(config: ExperimentConfig) -> bool:
    return config.adam_mode == "lazy"


# -------------------------------------------------------------------- grid
def grid_trial_data(config: ExperimentConfig, n: int, delta: float, trial_index: int) -> dict:
    """Draw every random quantity of one trial, in a fixed order, from its own stream."""
    stream = Stream(config.master_seed, "grid", n, delta, trial_index)
    if config.lr_mode == "random_uniform":
        lr = float(stream.uniform(1e-6, 0.01 + 1e-6))
    else:
        lr = float(config.lr)
    noise = float(stream.exponential(config.noise)) if config.noise_mode == "exponential" else float(config.noise)
    task1 = sample_rbf_target(n, stream)
    replacement = sample_rbf_target(n, stream)
    lo = sample_update_region(n, delta, stream)
    task2 = PatchedTarget(task1, lo, delta, replacement)
    count = config.samples
    data = {
        "task1": (sample_dataset(task1, n, count, stream, noise_sigma=noise),
                  sample_dataset(task1, n, count, stream),
                  sample_dataset(task1, n, count, stream)),
        "task2": (sample_dataset(task2, n, count, stream, box=(lo, lo + delta), noise_sigma=noise),
                  sample_dataset(task2, n, count, stream),
                  sample_dataset(task2, n, count, stream)),
    }
    return {"lr": lr, "noise": noise, "task1_target": task1, "task2_target": task2,
            "data": data, "shuffle": (config.master_seed, "grid", n, delta, trial_index, "shuffle")}


def _train_variant(config: ExperimentConfig, variant: Variant, n: int, delta: float,
                   trial_index: int, drawn: dict) -> tuple[TrialRecord, AtlasModel | None]:
    tid = trial_id(n, delta, trial_index)
    rec = TrialRecord(tid, "grid", n, delta, trial_index, variant.value, drawn["lr"], drawn["noise"],
                      config.master_seed)
    start = time.perf_counter()
    shuffle = Stream(*drawn["shuffle"])
    model = AtlasModel(n, config.M, config.r, 1, variant)
    try:
        for task, epochs in (("task1", config.epochs_task1), ("task2", config.epochs_task2)):
            train, val, test = drawn["data"][task]
            model, curve = train_epochs(model, train, val, epochs, config.batch_size, drawn["lr"],
                                        shuffle, lazy=_adam_lazy(config))
            rec.curves[task] = {"train": curve.train, "validation": curve.validation}
            rec.final_test[task] = evaluate(model, test.inputs, test.targets)
        t1_test = drawn["data"]["task1"][2]
        rec.extras["task1_test_after_task2"] = evaluate(model, t1_test.inputs, t1_test.targets)
    except NumericRangeError as exc:
        rec.status, rec.error = "failed", str(exc)
        model = None
    rec.wall_clock = time.perf_counter() - start
    return rec, model


def run_grid_trial(config: ExperimentConfig, n: int, delta: float, trial_index: int,
                   return_models: bool = False):
    """Train both variants on identical data. Returns [distal, ablation] records."""
    drawn = grid_trial_data(config, n, delta, trial_index)
    out = [_train_variant(config, v, n, delta, trial_index, drawn) for v in VARIANTS]
    if return_models:
        return [r for r, _ in out], [m for _, m in out]
    return [r for r, _ in out]


def _grid_job(config_dict: dict, n: int, delta: float, trial_index: int, save_models: bool):
    config = ExperimentConfig.from_dict(config_dict)
    recs, models = run_grid_trial(config, n, delta, trial_index, return_models=True)
    dumped = [m.to_dict() if (save_models and m is not None) else None for m in models]
    return [r.to_dict() for r in recs], dumped


def grid_keys(config: ExperimentConfig) -> list[tuple]:
    return [(n, d, t) for n in config.dims for d in config.widths for t in range(config.trials)]


def read_records(path) -> list[TrialRecord]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            out.append(TrialRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError):
            # a torn final line from an interrupted run
            log.warning("skipping unreadable record line")
    return out


def _drop_torn_tail(path: Path) -> None:
    """Cut an unterminated last line so appended records start on a fresh line."""
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        log.warning("truncating an incomplete final record in %s", path)
        with path.open("r+b") as fh:
            fh.truncate(data.rfind(b"\n") + 1)


def _check_manifest(out: Path, config: ExperimentConfig) -> None:
    man = out / "manifest.json"
    if man.exists():
        old = json.loads(man.read_text()).get("config", {})
        if old != config.to_dict():
            raise ValueError(f"{man} was written by a different configuration; use a new --out")


def write_manifest(out: Path, config: ExperimentConfig, keys=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "package_version": __version__,
        "config": config.to_dict(),
        "rng": {"generator": "philox", "seeding": "numpy SeedSequence(master_seed, spawn_key)",
                "normal": "box-muller", "exponential": "inverse-cdf"},
        "stream_keys": {"grid": "(master_seed, 'grid', n, delta*1e6, trial_index)",
                        "appendix": "(master_seed, 'appendix', experiment)"},
    }
    if keys is not None:
        doc["trials"] = [{"trial_id": trial_id(*k), "n": k[0], "delta": k[1], "trial_index": k[2]}
                         for k in keys]
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


def run_grid(config: ExperimentConfig, out_dir, workers: int = 1, save_models: bool = False):
    """Run every (n, delta, trial) cell not already present in ``out_dir/records.jsonl``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _check_manifest(out, config)
    keys = grid_keys(config)
    write_manifest(out, config, keys)
    sink = out / "records.jsonl"
    _drop_torn_tail(sink)
    done = {}
    for rec in read_records(sink):
        done.setdefault(rec.trial_id, set()).add(rec.variant)
    pending = [k for k in keys if len(done.get(trial_id(*k), ())) < len(VARIANTS)]
    log.info("%d trials total, %d pending", len(keys), len(pending))

    def _sink(recs, models):
        with sink.open("a") as fh:
            for r in recs:
                fh.write(json.dumps(r) + "\n")
        if save_models:
            (out / "models").mkdir(exist_ok=True)
            for r, m in zip(recs, models):
                if m is not None:
                    (out / "models" / f"{r['trial_id']}_{r['variant']}.json").write_text(json.dumps(m))
        log.info("finished %s", recs[0]["trial_id"])

    cfg = config.to_dict()
    if workers <= 1:
        for k in pending:
            _sink(*_grid_job(cfg, *k, save_models))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_grid_job, cfg, *k, save_models) for k in pending]
            for fut in as_completed(futures):
                _sink(*fut.result())

    wanted = {trial_id(*k) for k in keys}
    records = [r for r in read_records(sink) if r.trial_id in wanted]
    records.sort(key=lambda r: (r.n, r.delta, r.trial_index, r.variant))
    emit_results(records, out, config)
    return records, aggregate(records)


# ------------------------------------------------------------ train-expand
def run_appendix(config: ExperimentConfig, experiment_id: str | None = None, out_dir=None):
    """Grow a model from r=0, M=0 through ``segments`` train/expand rounds, then train Task 2.

    Returns ``(record, snapshots)`` where ``snapshots`` holds a model dict after each
    Task-1 segment and one after Task 2.
    """
    exp_id = (experiment_id or config.experiment).upper()
    if exp_id not in "ABCD" or len(exp_id) != 1:
        raise ValueError(f"experiment must be one of A, B, C, D (got {experiment_id!r})")
    stream = Stream(config.master_seed, "appendix", exp_id)
    noise, lr = 0.1, 0.01
    count = config.samples
    y1 = AnalyticTarget(exp_id, config.expA_theta)
    y2 = AnalyticTarget(exp_id, config.expA_theta, task2=True)
    lo, hi = APPENDIX_REGION
    train1 = sample_dataset(y1, 2, count, stream, noise_sigma=noise)
    test1 = sample_dataset(y1, 2, count, stream, noise_sigma=noise)
    train2 = sample_dataset(ConstantTarget(2, 0.0), 2, count, stream, box=(lo, hi), noise_sigma=noise)
    test2 = sample_dataset(y2, 2, count, stream, noise_sigma=noise)
    shuffle = stream.child("shuffle")

    rec = TrialRecord(f"appendix_{exp_id}", "appendix", 2, hi - lo, 0, Variant.DISTAL_ORTHOGONAL.value,
                      lr, noise, config.master_seed)
    start = time.perf_counter()
    model = AtlasModel(2, 0, 0, 1)
    snapshots, boundaries, shapes = [], [], []
    try:
        for seg in range(1, config.segments + 1):
            if seg > 1:
                before = evaluate(model, test1.inputs, test1.targets)
                model = model.expand_density_all().expand_exponentials(config.delta_M)
                after = evaluate(model, test1.inputs, test1.targets)
                boundaries.append({"segment": seg, "validation_before": before,
                                   "validation_after": after, "abs_change": abs(after - before)})
            shapes.append({"segment": seg, "r": model.r, "M": model.M})
            model, curve = train_epochs(model, train1, test1, config.epochs_per_segment,
                                        config.batch_size, lr, shuffle, lazy=_adam_lazy(config))
            rec.curves[f"task1_seg{seg}"] = {"train": curve.train, "validation": curve.validation}
            snapshots.append(model.to_dict())
        rec.final_test["task1"] = evaluate(model, test1.inputs, test1.targets)
        model, curve = train_epochs(model, train2, test2, config.epochs_appendix_task2,
                                    config.batch_size, lr, shuffle, lazy=_adam_lazy(config))
        rec.curves["task2"] = {"train": curve.train, "validation": curve.validation}
        rec.final_test["task2"] = evaluate(model, test2.inputs, test2.targets)
        snapshots.append(model.to_dict())
        inside = _appendix_inside(test2.inputs)
        pred = model.predict(test2.inputs)[:, 0]
        err = np.abs(pred - test2.targets[:, 0])
        rec.extras["task2_mae_inside_region"] = float(err[inside].mean()) if inside.any() else math.nan
        rec.extras["task2_mae_outside_region"] = float(err[~inside].mean())
    except NumericRangeError as exc:
        rec.status, rec.error = "failed", str(exc)
    rec.extras["boundaries"] = boundaries
    rec.extras["shapes"] = shapes
    rec.extras["experiment"] = exp_id
    rec.wall_clock = time.perf_counter() - start

    if out_dir is not None:
        out = Path(out_dir)
        write_manifest(out, config)
        (out / "models").mkdir(parents=True, exist_ok=True)
        for i, snap in enumerate(snapshots, 1):
            name = f"appendix_{exp_id}_seg{i}.json" if i <= config.segments else f"appendix_{exp_id}_task2.json"
            (out / "models" / name).write_text(json.dumps(snap))
        sink = out / "records.jsonl"
        _drop_torn_tail(sink)
        with sink.open("a") as fh:
            fh.write(json.dumps(rec.to_dict()) + "\n")
        emit_results(read_records(sink), out, config)
    return rec, snapshots


def _appendix_inside(X) -> np.ndarray:
    lo, hi = APPENDIX_REGION
    return np.all((X > lo) & (X < hi), axis=1)


# ----------------------------------------------------------------- outputs
def result_rows(rec: TrialRecord) -> list[list]:
    head = [rec.trial_id, rec.n, rec.delta, rec.variant, rec.lr, rec.noise]
    rows = []
    final_tasks = [t for t in rec.curves if t.startswith("task2")]
    final_epoch = len(rec.curves[final_tasks[-1]]["validation"]) if final_tasks else 0
    rows.append(head + ["task2", "test", final_epoch, rec.final_test.get("task2", math.nan)])
    for task, splits in rec.curves.items():
        for split in ("train", "validation"):
            for epoch, value in enumerate(splits[split], 1):
                rows.append(head + [task, split, epoch, value])
    return rows


def aggregate(records) -> list[dict]:
    """Mean final metrics per (n, delta, variant) over successful trials."""
    groups: dict[tuple, list[TrialRecord]] = {}
    for rec in records:
        if rec.status == "ok" and rec.protocol == "grid":
            groups.setdefault((rec.n, rec.delta, rec.variant), []).append(rec)
    rows = []
    for (n, delta, variant), recs in sorted(groups.items()):
        t2 = [r.final_test["task2"] for r in recs]
        t1 = [r.final_test["task1"] for r in recs]
        rows.append({
            "n": n, "delta": delta, "variant": variant, "trials": len(recs),
            "mean_task2_test_mae": float(np.mean(t2)),
            "mean_task1_test_mae": float(np.mean(t1)),
            "mean_degradation": float(np.mean(np.subtract(t2, t1))),
            "expected_off_target": expected_off_target(n, delta),
        })
    return rows


def emit_results(records, path, config: ExperimentConfig | None = None) -> dict:
    """Write results.csv, summary.csv and (with a config) manifest.json under ``path``."""
    records = list(records)
    if not records:
        raise ValueError("no records to emit")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    res = out / "results.csv"
    with res.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_HEADER)
        for rec in records:
            w.writerows(result_rows(rec))
    summ = out / "summary.csv"
    with summ.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_HEADER)
        w.writeheader()
        w.writerows(aggregate(records))
    paths = {"results": res, "summary": summ}
    if config is not None:
        paths["manifest"] = write_manifest(out, config, sorted({(r.n, r.delta, r.trial_index) for r in records
                                                                if r.protocol == "grid"}))
    return paths
