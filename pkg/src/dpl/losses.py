"""Training objectives for the prototype bank, with analytic gradients.

The total objective is a margin-based softmax (or per-class sigmoid) loss on
the cosine logits, using a separate scale and angular margin for each
missing pattern, plus ``lambda`` times a relational contrastive term over
the six components of every class.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Batch, as_batch
from .errors import ConfigInvalid, EmptyBatch, LabelOutOfRange
from .numerics import logsumexp, normalize_backward, sigmoid, softplus, stable_softmax
from .prototypes import PrototypeBank
from .scoring import batch_cosines, batch_cosines_backward

EPS_CLAMP = 1e-7


@dataclass
class LossConfig:
    lambda_: float = 1.0
    s_complete: float = 30.0
    m_complete: float = 0.15
    s_image_missing: float = 30.0
    m_image_missing: float = 0.10
    s_text_missing: float = 30.0
    m_text_missing: float = 0.10

    def scales(self) -> np.ndarray:
        return np.array([self.s_complete, self.s_image_missing, self.s_text_missing], dtype=np.float64)

    def margins(self) -> np.ndarray:
        return np.array([self.m_complete, self.m_image_missing, self.m_text_missing], dtype=np.float64)

    def validate(self) -> None:
        if not self.lambda_ >= 0:
            raise ConfigInvalid(f"lambda must be >= 0, got {self.lambda_}")
        if np.any(~(self.scales() > 0)):
            raise ConfigInvalid("every scale s must be positive")
        m = self.margins()
        if np.any(~((m >= 0) & (m < math.pi / 2))):
            raise ConfigInvalid("every margin m must lie in [0, pi/2)")


@dataclass
class LossValueAndGrad:
    value: float
    grads: np.ndarray


def margin_cosine(z: np.ndarray, m) -> tuple[np.ndarray, np.ndarray]:
    """``cos(arccos(z) + m)`` with clamping and the easy-margin fallback.

    Where ``arccos(z) + m`` exceeds pi the target logit becomes
    ``z - m sin(m)`` so it keeps decreasing in the angle.  Returns the value
    and its derivative with respect to ``z``.
    """
    m = np.broadcast_to(np.asarray(m, dtype=np.float64), np.shape(z))
    lo, hi = -1.0 + EPS_CLAMP, 1.0 - EPS_CLAMP
    zc = np.clip(z, lo, hi)
    inside = (z > lo) & (z < hi)
    theta = np.arccos(zc)
    wrapped = theta + m > math.pi
    phi = np.where(wrapped, zc - m * np.sin(m), np.cos(theta + m))
    sin_theta = np.sqrt(1.0 - zc * zc)
    dphi = np.where(wrapped, 1.0, np.cos(m) + zc * np.sin(m) / sin_theta)
    return phi, np.where(inside, dphi, 0.0)


def _check_labels(batch: Batch, K: int) -> None:
    if batch.multilabel:
        if batch.labels.shape[1] != K:
            raise LabelOutOfRange(f"label vectors have length {batch.labels.shape[1]}, expected {K}")
    elif np.any((batch.labels < 0) | (batch.labels >= K)):
        raise LabelOutOfRange(f"labels must lie in [0, {K})")


def arcface_from_cosines(z: np.ndarray, batch: Batch, config: LossConfig, multilabel: bool) -> tuple[float, np.ndarray]:
    """Margin loss and ``dL/dz`` from cosine logits ``z`` of shape ``(n, K)``."""
    n, K = z.shape
    s = config.scales()[batch.pattern][:, None]
    m = config.margins()[batch.pattern][:, None]
    if multilabel:
        target = batch.labels.astype(bool)
    else:
        target = np.zeros((n, K), dtype=bool)
        target[np.arange(n), batch.labels] = True
    phi, dphi = margin_cosine(z, m)
    adjusted = np.where(target, phi, z)
    logits = s * adjusted
    if multilabel:
        y = target.astype(np.float64)
        value = float(np.mean(softplus(logits) - y * logits))
        dlogits = (sigmoid(logits) - y) / (n * K)
    else:
        value = float(np.mean(logsumexp(logits) - logits[target]))
        dlogits = (stable_softmax(logits) - target) / n
    dz = dlogits * s * np.where(target, dphi, 1.0)
    return value, dz


def _arcface(bank: PrototypeBank, sample_batch, config: LossConfig, multilabel: bool) -> LossValueAndGrad:
    batch = as_batch(sample_batch)
    if batch.n == 0:
        raise EmptyBatch("loss needs at least one sample")
    _check_labels(batch, bank.K)
    unit, norms = bank.normalized()
    z = batch_cosines(unit, batch)
    value, dz = arcface_from_cosines(z, batch, config, multilabel)
    return LossValueAndGrad(value, batch_cosines_backward(unit, norms, batch, dz))


def arcface_multiclass(bank: PrototypeBank, sample_batch, config: LossConfig) -> LossValueAndGrad:
    return _arcface(bank, sample_batch, config, multilabel=False)


def arcface_multilabel(bank: PrototypeBank, sample_batch, config: LossConfig) -> LossValueAndGrad:
    return _arcface(bank, sample_batch, config, multilabel=True)


def relational_contrastive(unit: np.ndarray) -> tuple[float, np.ndarray]:
    """Contrastive loss over grouped unit vectors ``(K, G, D)``.

    Each component is an anchor; the other ``G - 1`` components of its class
    are positives, and the normalizer runs over every other component of
    every class.  Returns the value and the gradient w.r.t. ``unit``.
    """
    K, G, D = unit.shape
    flat = unit.reshape(K * G, D)
    gram = flat @ flat.T
    n = K * G
    off_diag = ~np.eye(n, dtype=bool)
    same_class = np.kron(np.eye(K, dtype=bool), np.ones((G, G), dtype=bool)) & off_diag
    # every entry of gram is in [-1, 1], so exp cannot overflow
    e = np.exp(gram) * off_diag
    denom = e.sum(axis=1)
    value = float((G - 1) * np.sum(np.log(denom)) - np.sum(gram[same_class]))
    dgram = (G - 1) * e / denom[:, None] - same_class
    dflat = (dgram + dgram.T) @ flat
    return value, dflat.reshape(K, G, D)


def prc_loss(bank: PrototypeBank, config: LossConfig | None = None) -> LossValueAndGrad:
    unit, norms = bank.normalized()
    K, d = bank.K, bank.d
    value, dunit = relational_contrastive(unit.reshape(K, 6, d))
    grads = normalize_backward(unit, norms, dunit.reshape(unit.shape))
    return LossValueAndGrad(value, grads)


def dpl_loss(bank: PrototypeBank, sample_batch, config: LossConfig, task: str = "multiclass") -> LossValueAndGrad:
    if task == "multiclass":
        out = arcface_multiclass(bank, sample_batch, config)
    elif task == "multilabel":
        out = arcface_multilabel(bank, sample_batch, config)
    else:
        raise ConfigInvalid(f"unknown task {task!r}")
    if config.lambda_ == 0:
        return out
    reg = prc_loss(bank, config)
    return LossValueAndGrad(out.value + config.lambda_ * reg.value, out.grads + config.lambda_ * reg.grads)
