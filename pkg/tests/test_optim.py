import math

import numpy as np
import pytest

from dpl.data import Batch, SyntheticSpec, gen_synthetic
from dpl.errors import ConfigInvalid, InvalidStep, NonFiniteGradient
from dpl.losses import LossConfig
from dpl.optim import OptimConfig, OptimState, adamw_step, bank_metric, lr_at, train, warmup_steps
from dpl.prototypes import PrototypeBank, init_bank

SEPARABLE = SyntheticSpec(K=4, d=16, n_per_class=50, class_sep=2.0, noise_sigma=0.1, modality_skew=0.5, seed=3)


def test_optim_defaults():
    cfg = OptimConfig()
    assert (cfg.base_lr, cfg.weight_decay, cfg.warmup_fraction, cfg.batch_size) == (1e-2, 2e-2, 0.10, 4)
    assert (cfg.beta1, cfg.beta2, cfg.eps_adam) == (0.9, 0.999, 1e-8)
    assert cfg.epochs == 20


@pytest.mark.parametrize("bad", [dict(base_lr=0), dict(warmup_fraction=1.0), dict(beta1=1.0), dict(batch_size=0)])
def test_optim_validation(bad):
    with pytest.raises(ConfigInvalid):
        OptimConfig(**bad).validate()


def test_lr_schedule_examples():
    cfg = OptimConfig(base_lr=0.01, warmup_fraction=0.1)
    total = 95
    warm = warmup_steps(total, cfg)
    assert warm == math.ceil(9.5)
    assert lr_at(0, total, cfg) == 0.0
    assert lr_at(warm, total, cfg) == pytest.approx(0.01, abs=1e-12)
    assert lr_at(total, total, cfg) == pytest.approx(0.0, abs=1e-12)
    assert lr_at(warm // 2, total, cfg) == pytest.approx(0.01 * (warm // 2) / warm)
    mid = (warm + total) // 2
    assert lr_at(mid, total, cfg) == pytest.approx(0.01 * (total - mid) / (total - warm))


def test_lr_schedule_shape():
    cfg = OptimConfig()
    lrs = [lr_at(t, 200, cfg) for t in range(201)]
    peak = int(np.argmax(lrs))
    assert peak == 20
    assert np.all(np.diff(lrs[:peak + 1]) > 0) and np.all(np.diff(lrs[peak:]) < 0)


def test_lr_schedule_errors():
    with pytest.raises(InvalidStep):
        lr_at(11, 10, OptimConfig())
    with pytest.raises(InvalidStep):
        lr_at(-1, 10, OptimConfig())
    with pytest.raises(InvalidStep):
        lr_at(0, 0, OptimConfig())


def test_adamw_first_step_closed_form(rng):
    bank = PrototypeBank(rng.standard_normal((2, 3, 2, 3)))
    g = rng.standard_normal(bank.params.shape)
    cfg = OptimConfig(weight_decay=0.05)
    lr = 0.01
    new, state = adamw_step(bank, g, OptimState.zeros_like(bank.params), lr, cfg)
    expected = bank.params - lr * (g / (np.abs(g) + cfg.eps_adam) + cfg.weight_decay * bank.params)
    np.testing.assert_allclose(new.params, expected, rtol=1e-12, atol=1e-15)
    assert state.step == 1
    np.testing.assert_allclose(state.first_moment, 0.1 * g)


def test_adamw_fixed_point_and_decay(rng):
    bank = PrototypeBank(rng.standard_normal((2, 3, 2, 3)))
    zero = np.zeros_like(bank.params)
    same, _ = adamw_step(bank, zero, OptimState.zeros_like(zero), 0.01, OptimConfig(weight_decay=0.0))
    assert np.array_equal(same.params, bank.params)
    shrunk, _ = adamw_step(bank, zero, OptimState.zeros_like(zero), 0.01, OptimConfig(weight_decay=0.02))
    assert np.linalg.norm(shrunk.params) < np.linalg.norm(bank.params)


def test_adamw_rejects_non_finite(rng):
    bank = init_bank(2, 3, 0)
    g = np.zeros_like(bank.params)
    g[0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteGradient):
        adamw_step(bank, g, OptimState.zeros_like(g), 0.01, OptimConfig())


def test_adamw_does_not_mutate_inputs(rng):
    bank = init_bank(2, 3, 0)
    before = bank.params.copy()
    state = OptimState.zeros_like(before)
    adamw_step(bank, np.ones_like(before), state, 0.01, OptimConfig())
    assert np.array_equal(bank.params, before) and state.step == 0


def test_train_zero_epochs_is_noop():
    bank = init_bank(4, 16, 0)
    out, history = train(bank, gen_synthetic(SEPARABLE), LossConfig(), OptimConfig(epochs=0))
    assert out == bank and history == []


def test_train_is_deterministic():
    data = gen_synthetic(SEPARABLE)
    cfg = OptimConfig(epochs=3, seed=11)
    a, ha = train(init_bank(4, 16, 1), data, LossConfig(), cfg)
    b, hb = train(init_bank(4, 16, 1), data, LossConfig(), cfg)
    assert np.array_equal(a.params, b.params) and ha == hb


def test_train_fits_separable_set():
    data = gen_synthetic(SEPARABLE)
    bank, history = train(init_bank(4, 16, 2), data, LossConfig(), OptimConfig(epochs=50, seed=5))
    assert bank_metric("multiclass")(bank.params, Batch.from_samples(data)) >= 0.99
    losses = [h["loss"] for h in history if h["split"] == "train"]
    tail = losses[len(losses) // 5:]
    # non-increasing over the last 80% up to 5% relative fluctuation
    for prev, cur in zip(tail, tail[1:]):
        assert cur <= prev * 1.05


def test_train_history_rows():
    data = gen_synthetic(SEPARABLE)
    _, history = train(init_bank(4, 16, 2), data, LossConfig(), OptimConfig(epochs=2), eval_sets={"test": data[:20]})
    assert [(h["epoch"], h["split"]) for h in history] == [(1, "train"), (1, "test"), (2, "train"), (2, "test")]
    assert all(set(h) == {"epoch", "split", "loss", "metric"} for h in history)


def test_train_never_touches_features():
    data = gen_synthetic(SEPARABLE)
    snapshot = [(s.image.copy(), s.text.copy()) for s in data]
    train(init_bank(4, 16, 2), data, LossConfig(), OptimConfig(epochs=1))
    assert all(np.array_equal(s.image, a) and np.array_equal(s.text, b) for s, (a, b) in zip(data, snapshot))
