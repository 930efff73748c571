import csv
import dataclasses
import json

import numpy as np
import pytest

from dpl import cli
from dpl.data import Batch, SyntheticSpec, load_features, simulate_missing, Scenario
from dpl.errors import ConfigInvalid
from dpl.harness import (
    ExperimentConfig, RunResult, config_from_dict, config_to_dict, emit_results, expand_grid, fingerprint, mix_seed,
    resolve_data, run_experiment, run_seed, summarize, worker_count,
)
from dpl.losses import LossConfig
from dpl.optim import OptimConfig
from dpl.plotting import render_report
from dpl.prototypes import MissingPattern, PrototypeBank, init_bank
from dpl.scoring import bank_logits

TINY = dict(data={"K": 3, "d": 4, "n_per_class": 8, "seed": 1}, optim={"epochs": 2}, n_seeds=2)


def tiny(**kw) -> ExperimentConfig:
    values = json.loads(json.dumps(TINY))
    values.update(kw)
    return config_from_dict(values)


def test_config_roundtrip():
    cfg = tiny(head="fc", loss={"lambda": 0.5})
    assert cfg.loss.lambda_ == 0.5
    again = config_from_dict(config_to_dict(cfg))
    assert again == cfg


@pytest.mark.parametrize("bad", [
    {"head": "mlp"}, {"task": "regression"}, {"train_eta": 1.5}, {"bogus": 1}, {"loss": {"s_complete": -1}},
    {"optim": {"epochs": -1}}, {"task": "multilabel"}, {"data": {"K": 1}}, {"scenario": "both"},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigInvalid):
        tiny(**bad)


def test_fingerprint_ignores_nonsemantic_fields():
    a = tiny()
    b = dataclasses.replace(a, output_dir="elsewhere", record_timing=True, plots=False, n_seeds=7)
    assert fingerprint(a) == fingerprint(b)
    shuffled = config_from_dict(dict(reversed(list(config_to_dict(a).items()))))
    assert fingerprint(shuffled) == fingerprint(a)
    assert fingerprint(dataclasses.replace(a, train_eta=0.5)) != fingerprint(a)
    assert fingerprint(tiny(loss={"lambda": 1})) == fingerprint(tiny(loss={"lambda": 1.0}))


def test_mix_seed_streams_are_distinct():
    seeds = {mix_seed(s, role) for s in range(10) for role in ("init", "shuffle", "train_missing", "test_missing")}
    assert len(seeds) == 40 and all(0 <= s < 2**63 for s in seeds)
    assert mix_seed(3, "init") == mix_seed(3, "init")


def test_seed_sweep_shares_fingerprint():
    cfg = tiny(n_seeds=10, optim={"epochs": 0})
    results = run_experiment(cfg)
    assert [r.seed for r in results] == list(range(10))
    assert len({r.fingerprint for r in results}) == 1


def test_split_is_fixed_across_seeds():
    cfg = tiny()
    a, b = resolve_data(cfg), resolve_data(cfg)
    assert [s.label for s in a[1]] == [s.label for s in b[1]]
    assert all(np.array_equal(x.image, y.image) for x, y in zip(a[1], b[1]))


def test_zero_epochs_equals_untrained_bank():
    cfg = tiny(optim={"epochs": 0})
    result = run_seed(cfg, seed=4)
    _, test, K, d, _ = resolve_data(cfg)
    test = simulate_missing(test, Scenario.MIXED, cfg.test_eta, mix_seed(4, "test_missing"))
    batch = Batch.from_samples(test)
    z, _ = bank_logits(init_bank(K, d, mix_seed(4, "init")), batch)
    assert result.value == np.mean(np.argmax(z, 1) == batch.labels)


@pytest.mark.parametrize("head", ["dpl", "dpl_undecomposed", "fc"])
def test_every_head_runs(head):
    r = run_seed(tiny(head=head), 0)
    assert r.metric_name == "accuracy" and 0.0 <= r.value <= 1.0 and r.history


def test_binary_and_multilabel_metrics():
    assert run_seed(tiny(data={"K": 2, "d": 4, "n_per_class": 8}), 0).metric_name == "auroc"
    ml = tiny(task="multilabel", data={"K": 3, "d": 4, "n_per_class": 8, "multilabel": True})
    assert run_seed(ml, 0).metric_name == "f1_macro"


def test_grid_expansion():
    values = dict(TINY, grid={"train_eta": [0.1, 0.5], "loss.lambda": [0, 1], "head": ["dpl", "fc"]})
    cells = expand_grid(values)
    assert len(cells) == 8
    assert {c.loss.lambda_ for _, c in cells} == {0, 1}
    assert len({fingerprint(c) for _, c in cells}) == 8
    with pytest.raises(ConfigInvalid):
        expand_grid(dict(TINY, grid={"train_eta": []}))


def test_summary_statistics():
    s = summarize([0.3, 0.1, 0.2])
    assert s["mean"] == pytest.approx(0.2) and s["median"] == pytest.approx(0.2)
    assert s["std"] == pytest.approx(0.1) and (s["min"], s["max"]) == (0.1, 0.3)
    assert summarize([0.5] * 4)["std"] == 0.0


def fake_results(values):
    return [RunResult("abc", i, "accuracy", v, 1.0 + i, "dpl", "mixed", 0.7, 0.7) for i, v in enumerate(values)]


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_emit_results(tmp_path):
    emit_results(fake_results([0.1, 0.2, 0.3]), tmp_path)
    rows = read(tmp_path / "results.csv")
    assert len(rows) == 3 and all(r["wall_time"] == "" for r in rows)
    summary = read(tmp_path / "summary.csv")
    assert float(summary[0]["mean"]) == pytest.approx(0.2) and float(summary[0]["median"]) == pytest.approx(0.2)
    assert [float(r["wall_time"]) for r in read(tmp_path / "timings.csv")] == [1.0, 2.0, 3.0]
    emit_results(fake_results([0.1, 0.2, 0.3]), tmp_path / "timed", record_timing=True)
    assert read(tmp_path / "timed" / "results.csv")[0]["wall_time"] == "1.0"


def test_rerun_is_byte_identical(tmp_path):
    cfg = tiny()
    emit_results(run_experiment(cfg), tmp_path / "a")
    emit_results(run_experiment(cfg), tmp_path / "b")
    for name in ("results.csv", "summary.csv", "history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("DPL_THREADS", "1")
    assert worker_count(20) == 1
    monkeypatch.setenv("DPL_THREADS", "8")
    assert worker_count(3) == 3


def test_missing_awareness_toggle_on_uniform_bank():
    # every incomplete-pattern prototype points the same way for all classes:
    # uniform logits have maximal entropy, so selection always falls back to complete
    rng = np.random.default_rng(0)
    params = rng.standard_normal((3, 3, 2, 4))
    params[:, 1:] = 1.0
    bank = PrototypeBank(params)
    samples = [s for s in resolve_data(tiny())[1]]
    batch = Batch.from_samples(samples)
    aware, _ = bank_logits(bank, batch, True)
    blind, used = bank_logits(bank, batch, False)
    assert np.all(used == MissingPattern.COMPLETE)
    assert np.array_equal(np.argmax(aware, 1), np.argmax(blind, 1))


def test_render_report(tmp_path):
    results = [dataclasses.replace(r, grid_point={"loss.lambda": lam}, fingerprint=f"fp{lam}",
                                   history=[{"epoch": 1, "split": "train", "loss": 1.0, "metric": 0.5}])
               for lam in (0.0, 1.0) for r in fake_results([0.4, 0.5])]
    paths = render_report(results, tmp_path)
    names = {p.name for p in paths}
    assert names == {"seeds_boxplot.png", "history.png", "sweep_loss_lambda.png"}
    assert all(p.stat().st_size > 0 for p in paths)


def test_cli_run(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text(json.dumps(dict(TINY, output_dir=str(tmp_path / "out"))))
    code = cli.main(["run", "--config", str(config), "--grid", "head=dpl,fc", "--n-seeds", "1", "--lambda", "0.5"])
    assert code == 0
    rows = read(tmp_path / "out" / "results.csv")
    assert [r["head"] for r in rows] == ["dpl", "fc"]
    assert (tmp_path / "out" / "seeds_boxplot.png").exists()
    assert "accuracy=" in capsys.readouterr().out


def test_cli_gen_and_feature_run(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"K": 3, "d": 4, "n_per_class": 6}))
    out = tmp_path / "f.dplf"
    assert cli.main(["gen", "--spec", str(spec), "--out", str(out)]) == 0
    assert len(load_features(out)) == 18
    assert cli.main(["run", "--features", str(out), "--n-seeds", "1", "--epochs", "1", "--plots", "false",
                     "--output-dir", str(tmp_path / "r")]) == 0
    assert len(read(tmp_path / "r" / "results.csv")) == 1


def test_cli_checks(capsys):
    assert cli.main(["gradcheck", "--instances", "3"]) == 0
    assert cli.main(["oracle-prc", "--instances", "3"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 7 and "FAIL" not in out


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "none.json")]) == 2
    assert cli.main(["run", "--head", "mlp"]) == 2
    assert cli.main(["run", "--features", str(tmp_path / "none.dplf")]) == 3
    bad = tmp_path / "bad.dplf"
    bad.write_bytes(b"NOPE" + bytes(28))
    assert cli.main(["run", "--features", str(bad)]) == 4
    assert "BadMagic" in capsys.readouterr().err
