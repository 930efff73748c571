"""Experiment configuration, seed sweeps, grids and CSV emission."""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    fc_batch_logits,
    fc_train,
    init_fc_head,
    init_undecomposed,
    undecomposed_logits,
    undecomposed_train,
)
from .data import (
    Batch,
    Scenario,
    SyntheticSpec,
    gen_synthetic,
    load_feature_set,
    simulate_missing,
    split_train_test,
)
from .errors import ConfigInvalid, DataUnavailable, DPLError, IoFailure
from .losses import LossConfig
from .metrics import auroc, f1_macro, top1_accuracy
from .optim import OptimConfig, train
from .prototypes import init_bank
from .scoring import bank_logits

log = logging.getLogger(__name__)

TASKS = ("multiclass", "multilabel")
HEADS = ("dpl", "dpl_undecomposed", "fc")
METRICS = ("auto", "accuracy", "f1_macro", "auroc")


@dataclass
class FeatureSource:
    path: str
    test_path: str | None = None


@dataclass
class ExperimentConfig:
    task: str = "multiclass"
    head: str = "dpl"
    missing_aware: bool = True
    scenario: str = "mixed"
    train_eta: float = 0.7
    test_eta: float = 0.7
    n_seeds: int = 10
    master_seed: int = 0
    test_fraction: float = 0.25
    metric: str = "auto"
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: SyntheticSpec | FeatureSource = field(default_factory=SyntheticSpec)
    output_dir: str = "results"
    record_timing: bool = False
    plots: bool = True

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigInvalid(f"task must be one of {TASKS}")
        if self.head not in HEADS:
            raise ConfigInvalid(f"head must be one of {HEADS}")
        if self.metric not in METRICS:
            raise ConfigInvalid(f"metric must be one of {METRICS}")
        try:
            Scenario(self.scenario)
        except ValueError:
            raise ConfigInvalid(f"scenario must be one of {[s.value for s in Scenario]}") from None
        for eta in (self.train_eta, self.test_eta):
            if not 0.0 <= eta <= 1.0:
                raise ConfigInvalid("missing rates must lie in [0, 1]")
        if self.n_seeds < 1:
            raise ConfigInvalid("n_seeds must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigInvalid("test_fraction must be in (0, 1)")
        self.loss.validate()
        self.optim.validate()
        if isinstance(self.data, SyntheticSpec):
            try:
                self.data.validate()
            except DPLError as exc:
                raise ConfigInvalid(str(exc)) from exc
            if self.task == "multilabel" and not self.data.multilabel:
                raise ConfigInvalid("multilabel task needs data.multilabel = true")


# -- (de)serialization ------------------------------------------------------

_RENAMES = {"lambda": "lambda_"}
_NONSEMANTIC = {"output_dir", "record_timing", "plots", "n_seeds"}


def _build(cls, values: dict, where: str):
    types = {f.name: str(f.type) for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in values.items():
        name = _RENAMES.get(key, key)
        if name not in types:
            raise ConfigInvalid(f"unknown field {where}{key!r}")
        # 1 and 1.0 must describe (and fingerprint) the same config
        if types[name] == "float" and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        kwargs[name] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from exc


def config_from_dict(values: dict) -> ExperimentConfig:
    values = dict(values)
    nested = {}
    if "loss" in values:
        nested["loss"] = _build(LossConfig, values.pop("loss"), "loss.")
    if "optim" in values:
        nested["optim"] = _build(OptimConfig, values.pop("optim"), "optim.")
    if "data" in values:
        data = values.pop("data")
        if isinstance(data, str):
            data = {"path": data}
        cls = FeatureSource if "path" in data else SyntheticSpec
        nested["data"] = _build(cls, data, "data.")
    values.pop("grid", None)
    cfg = _build(ExperimentConfig, values, "")
    for key, val in nested.items():
        setattr(cfg, key, val)
    cfg.validate()
    return cfg


def config_to_dict(config: ExperimentConfig) -> dict:
    out = dataclasses.asdict(config)
    out["loss"]["lambda"] = out["loss"].pop("lambda_")
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigInvalid(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config file is not valid JSON: {exc}") from exc


def set_path(values: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted key path such as ``loss.lambda``."""
    keys = dotted.split(".")
    node = values
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def expand_grid(values: dict) -> list[tuple[dict, ExperimentConfig]]:
    """Cartesian product over the optional ``grid`` mapping of dotted paths to lists."""
    grid = values.get("grid") or {}
    if not isinstance(grid, dict) or any(not isinstance(v, list) or not v for v in grid.values()):
        raise ConfigInvalid("grid must map dotted field paths to nonempty lists")
    keys = list(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cell = copy.deepcopy(values)
        point = dict(zip(keys, combo))
        for key, val in point.items():
            set_path(cell, key, val)
        cells.append((point, config_from_dict(cell)))
    return cells


def fingerprint(config: ExperimentConfig) -> str:
    """Hash of the semantic config; key order and float spelling do not matter."""
    sem = config_to_dict(config)
    for key in _NONSEMANTIC:
        sem.pop(key, None)
    sem["optim"].pop("seed", None)  # the harness derives shuffle seeds itself
    blob = json.dumps(sem, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- seeds ------------------------------------------------------------------

def mix_seed(seed: int, role: str, index: int = 0) -> int:
    """Independent 63-bit child seed for a named stream."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(role.encode()), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# -- one run ----------------------------------------------------------------

@dataclass
class RunResult:
    fingerprint: str
    seed: int
    metric_name: str
    value: float
    wall_time_seconds: float
    head: str = ""
    scenario: str = ""
    train_eta: float = 0.0
    test_eta: float = 0.0
    missing_aware: bool = True
    grid_point: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def resolve_data(config: ExperimentConfig):
    """(train, test, K, d_img, d_txt) with complete samples, fixed across seeds."""
    data = config.data
    if isinstance(data, SyntheticSpec):
        samples = gen_synthetic(data)
        train_set, test_set = split_train_test(samples, config.test_fraction, mix_seed(data.seed, "split"))
        return train_set, test_set, data.K, data.d, data.d
    if not data.path:
        raise DataUnavailable("no feature file given")
    fs = load_feature_set(data.path)
    if (fs.multilabel) != (config.task == "multilabel"):
        raise ConfigInvalid(f"feature file multilabel={fs.multilabel} does not match task {config.task}")
    if data.test_path:
        test = load_feature_set(data.test_path)
        if (test.K, test.d_img, test.d_txt, test.multilabel) != (fs.K, fs.d_img, fs.d_txt, fs.multilabel):
            raise ConfigInvalid("train and test feature files disagree on K or dimensions")
        return fs.samples, test.samples, fs.K, fs.d_img, fs.d_txt
    train_set, test_set = split_train_test(fs.samples, config.test_fraction, mix_seed(0, "split"))
    return train_set, test_set, fs.K, fs.d_img, fs.d_txt


def resolve_metric(config: ExperimentConfig, K: int) -> str:
    if config.metric != "auto":
        return config.metric
    if config.task == "multilabel":
        return "f1_macro"
    return "auroc" if K == 2 else "accuracy"


def evaluate_logits(z: np.ndarray, batch: Batch, metric: str) -> float:
    if metric == "f1_macro":
        return f1_macro(z > 0, batch.labels).value
    if metric == "auroc":
        if batch.multilabel:
            raise ConfigInvalid("auroc needs a binary multiclass task")
        return auroc(z[:, 1] - z[:, 0], batch.labels == 1).value
    return top1_accuracy(np.argmax(z, axis=1), batch.labels).value


def train_head(config: ExperimentConfig, train_set, test_set, K: int, d_img: int, d_txt: int, seed: int):
    """Train the configured head; returns (predict(batch) -> (logits, patterns), history)."""
    optim = dataclasses.replace(config.optim, seed=mix_seed(seed, "shuffle"))
    init_seed = mix_seed(seed, "init")
    evals = {"test": test_set}
    if config.head == "dpl":
        if d_img != d_txt:
            raise ConfigInvalid("the decomposed head needs equal image and text dimensions")
        bank, history = train(init_bank(K, d_img, init_seed), train_set, config.loss, optim, config.task, evals)
        return lambda b: bank_logits(bank, b, config.missing_aware), history
    if config.head == "dpl_undecomposed":
        ubank, history = undecomposed_train(
            init_undecomposed(K, d_img, d_txt, init_seed), train_set, config.loss, optim, config.task, evals)
        return lambda b: undecomposed_logits(ubank, b, config.missing_aware), history
    head, history = fc_train(init_fc_head(K, d_img, d_txt, init_seed), train_set, optim, config.task, evals)
    return lambda b: (fc_batch_logits(head, b), b.pattern.copy()), history


def run_seed(config: ExperimentConfig, seed: int, grid_point: dict | None = None) -> RunResult:
    start = time.perf_counter()
    train_set, test_set, K, d_img, d_txt = resolve_data(config)
    scenario = Scenario(config.scenario)
    train_set = simulate_missing(train_set, scenario, config.train_eta, mix_seed(seed, "train_missing"))
    test_set = simulate_missing(test_set, scenario, config.test_eta, mix_seed(seed, "test_missing"))
    predict, history = train_head(config, train_set, test_set, K, d_img, d_txt, seed)
    metric = resolve_metric(config, K)
    test_batch = Batch.from_samples(test_set, d_img, d_txt)
    logits, _ = predict(test_batch)
    value = evaluate_logits(logits, test_batch, metric)
    return RunResult(
        fingerprint(config), seed, metric, value, time.perf_counter() - start,
        config.head, config.scenario, config.train_eta, config.test_eta, config.missing_aware,
        dict(grid_point or {}), history,
    )


def _run_job(job):
    return run_seed(*job)


def worker_count(n_jobs: int) -> int:
    env = os.environ.get("DPL_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def run_grid(cells: list[tuple[dict, ExperimentConfig]]) -> list[RunResult]:
    """Run every (cell, seed) job; results come back in cell-then-seed order."""
    jobs = [(cfg, cfg.master_seed + i, point) for point, cfg in cells for i in range(cfg.n_seeds)]
    workers = worker_count(len(jobs))
    log.info("running %d jobs on %d workers", len(jobs), workers)
    if workers == 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def run_experiment(config: ExperimentConfig) -> list[RunResult]:
    config.validate()
    return run_grid([({}, config)])


# -- output -----------------------------------------------------------------

RESULT_COLUMNS = ["fingerprint", "seed", "head", "scenario", "train_eta", "test_eta",
                  "missing_aware", "metric", "value", "wall_time"]
SUMMARY_COLUMNS = ["fingerprint", "head", "scenario", "train_eta", "test_eta", "missing_aware", "metric",
                   "grid_point", "n", "mean", "std", "min", "q1", "median", "q3", "max"]
HISTORY_COLUMNS = ["fingerprint", "seed", "epoch", "split", "loss", "metric"]


def summarize(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "n": v.size,
        "mean": float(v.mean()),
        "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "min": float(v.min()),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "max": float(v.max()),
    }


def group_results(results: list[RunResult]) -> dict[str, list[RunResult]]:
    groups: dict[str, list[RunResult]] = {}
    for r in results:
        groups.setdefault(r.fingerprint, []).append(r)
    return groups


def summary_rows(results: list[RunResult]) -> list[dict]:
    rows = []
    for fp, runs in group_results(results).items():
        first = runs[0]
        row = {
            "fingerprint": fp, "head": first.head, "scenario": first.scenario,
            "train_eta": first.train_eta, "test_eta": first.test_eta,
            "missing_aware": first.missing_aware, "metric": first.metric_name,
            "grid_point": json.dumps(first.grid_point, sort_keys=True),
        }
        row.update(summarize([r.value for r in runs]))
        rows.append(row)
    return rows


def _write_csv(path: Path, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in columns})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def emit_results(results: list[RunResult], output_dir, record_timing: bool = False) -> list[Path]:
    """Write results.csv, summary.csv, history.csv and timings.csv.

    Wall times go to timings.csv; the ``wall_time`` column of results.csv is
    left blank unless ``record_timing`` is set, so reruns are byte-identical.
    """
    if not results:
        raise ConfigInvalid("no results to emit")
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        result_rows = [{
            "fingerprint": r.fingerprint, "seed": r.seed, "head": r.head, "scenario": r.scenario,
            "train_eta": float(r.train_eta), "test_eta": float(r.test_eta), "missing_aware": r.missing_aware,
            "metric": r.metric_name, "value": float(r.value),
            "wall_time": float(r.wall_time_seconds) if record_timing else "",
        } for r in results]
        paths = [out / "results.csv", out / "summary.csv", out / "history.csv", out / "timings.csv"]
        _write_csv(paths[0], RESULT_COLUMNS, result_rows)
        _write_csv(paths[1], SUMMARY_COLUMNS, summary_rows(results))
        _write_csv(paths[2], HISTORY_COLUMNS, (
            {"fingerprint": r.fingerprint, "seed": r.seed, **h} for r in results for h in r.history
        ))
        _write_csv(paths[3], ["fingerprint", "seed", "wall_time"], (
            {"fingerprint": r.fingerprint, "seed": r.seed, "wall_time": float(r.wall_time_seconds)}
            for r in results
        ))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return paths
