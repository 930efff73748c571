"""Finite-difference gradient checks and a brute-force relational loss.

Both are deliberately written without touching the vectorized loss code so
they can serve as independent references from the command line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Batch, Sample
from .numerics import normalize_rows
from .losses import LossConfig, arcface_multiclass, arcface_multilabel, dpl_loss, prc_loss
from .prototypes import PrototypeBank, init_bank

FD_STEP = 1e-4


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        fp = f(x)
        flat[j] = orig - step
        fm = f(x)
        flat[j] = orig
        g[j] = (fp - fm) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max entrywise error scaled by the largest gradient entry.

    Entrywise ratios are meaningless for entries that are zero up to
    rounding, so each error is measured against the gradient's overall size.
    """
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def random_instance(rng: np.random.Generator, multilabel: bool = False):
    """A small random (bank, samples, loss config) triple for gradient checks."""
    K = int(rng.integers(2 if multilabel else 1, 6))
    d = int(rng.integers(2, 9))
    n = int(rng.integers(1, 9))
    # unit-norm components, as produced by init_bank
    bank = PrototypeBank(normalize_rows(rng.standard_normal((K, 3, 2, d)))[0])
    samples = []
    for _ in range(n):
        pattern = int(rng.integers(0, 3))
        img = None if pattern == 1 else rng.standard_normal(d)
        txt = None if pattern == 2 else rng.standard_normal(d)
        label = rng.random(K) < 0.5 if multilabel else int(rng.integers(0, K))
        samples.append(Sample(img, txt, label))
    config = LossConfig(
        lambda_=float(rng.uniform(0, 2)),
        s_complete=float(rng.uniform(1, 30)), m_complete=float(rng.uniform(0, 0.5)),
        s_image_missing=float(rng.uniform(1, 30)), m_image_missing=float(rng.uniform(0, 0.5)),
        s_text_missing=float(rng.uniform(1, 30)), m_text_missing=float(rng.uniform(0, 0.5)),
    )
    return bank, Batch.from_samples(samples), config


@dataclass
class GradcheckReport:
    loss: str
    instances: int
    max_relative_error: float


def gradcheck_losses(n_instances: int = 100, seed: int = 0, step: float = FD_STEP) -> list[GradcheckReport]:
    rng = np.random.default_rng(seed)
    cases = {
        "arcface_multiclass": (False, lambda b, batch, cfg: arcface_multiclass(b, batch, cfg)),
        "arcface_multilabel": (True, lambda b, batch, cfg: arcface_multilabel(b, batch, cfg)),
        "prc_loss": (False, lambda b, batch, cfg: prc_loss(b, cfg)),
        "dpl_loss_multiclass": (False, lambda b, batch, cfg: dpl_loss(b, batch, cfg, "multiclass")),
        "dpl_loss_multilabel": (True, lambda b, batch, cfg: dpl_loss(b, batch, cfg, "multilabel")),
    }
    reports = []
    for name, (multilabel, fn) in cases.items():
        worst = 0.0
        for _ in range(n_instances):
            bank, batch, cfg = random_instance(rng, multilabel)
            analytic = fn(bank, batch, cfg).grads
            numeric = central_difference(lambda p: fn(PrototypeBank(p), batch, cfg).value, bank.params, step)
            worst = max(worst, relative_error(analytic, numeric))
        reports.append(GradcheckReport(name, n_instances, worst))
    return reports


def prc_bruteforce(bank: PrototypeBank) -> float:
    """Relational contrastive loss by explicit loops over classes and components."""
    comps = [(p, m) for p in range(3) for m in range(2)]
    unit = {}
    for k in range(bank.K):
        for p, m in comps:
            v = bank.params[k, p, m]
            unit[k, p, m] = v / math.sqrt(sum(x * x for x in v))
    total = 0.0
    for k in range(bank.K):
        for u in comps:
            denom = 0.0
            for l in range(bank.K):
                for o in comps:
                    if (l == k and u != o) or l != k:
                        denom += math.exp(float(np.dot(unit[(k, *u)], unit[(l, *o)])))
            for v in comps:
                if u != v:
                    num = math.exp(float(np.dot(unit[(k, *u)], unit[(k, *v)])))
                    total -= math.log(num / denom)
    return total


def prc_oracle_check(n_instances: int = 50, seed: int = 0) -> float:
    """Largest |vectorized - brute force| over random banks with K <= 4, d <= 8."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        K, d = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        bank = PrototypeBank(rng.standard_normal((K, 3, 2, d)))
        worst = max(worst, abs(prc_loss(bank).value - prc_bruteforce(bank)))
    return worst


def symmetric_prc_value() -> float:
    """Value for one class whose six components coincide; should equal 30 ln 5."""
    bank = init_bank(1, 4, 0)
    bank.params[:] = bank.params[0, 0, 0]
    return prc_loss(bank).value
