"""Comparison heads: a fully-connected layer and un-decomposed prototypes.

The FC head scores every sample with the same weights whatever is missing.
The un-decomposed head keeps one prototype per class and pattern but
normalizes image and text halves jointly, so a missing side still shrinks
the logit through the prototype norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Batch, as_batch
from .errors import InvalidShape
from .losses import LossConfig, arcface_from_cosines, relational_contrastive
from .metrics import f1_macro, top1_accuracy
from .numerics import l2_normalize, logsumexp, normalize_backward, normalize_rows, sigmoid, softplus, stable_softmax
from .optim import OptimConfig, fit
from .prototypes import PATTERNS, MissingPattern
from .scoring import Logits, check_presence, compatible_mask, select_min_entropy


def _pad(h, dim: int) -> np.ndarray:
    return np.zeros(dim) if h is None else np.asarray(h, dtype=np.float64)


# -- fully-connected head ---------------------------------------------------

@dataclass
class FcHead:
    weight: np.ndarray  # (K, d_img + d_txt)
    bias: np.ndarray    # (K,)
    d_img: int

    @property
    def K(self) -> int:
        return self.weight.shape[0]

    @property
    def d_txt(self) -> int:
        return self.weight.shape[1] - self.d_img

    def packed(self) -> np.ndarray:
        return np.hstack([self.weight, self.bias[:, None]])

    @classmethod
    def unpack(cls, params: np.ndarray, d_img: int) -> "FcHead":
        return cls(params[:, :-1].copy(), params[:, -1].copy(), d_img)


def init_fc_head(K: int, d_img: int, d_txt: int, seed: int, scale: float = 0.01) -> FcHead:
    if K < 1 or d_img < 1 or d_txt < 1:
        raise InvalidShape("FC head needs K, d_img, d_txt >= 1")
    rng = np.random.default_rng(seed)
    return FcHead(rng.uniform(-scale, scale, (K, d_img + d_txt)), np.zeros(K), d_img)


def fc_score(head: FcHead, h_img, h_txt, pattern=None) -> np.ndarray:
    """``W [pad(h_img); pad(h_txt)] + b``; the pattern is deliberately ignored."""
    x = np.concatenate([_pad(h_img, head.d_img), _pad(h_txt, head.d_txt)])
    return head.weight @ x + head.bias


def _fc_inputs(batch: Batch) -> np.ndarray:
    return np.hstack([batch.img_raw, batch.txt_raw, np.ones((batch.n, 1))])


def fc_batch_logits(head: FcHead, batch: Batch) -> np.ndarray:
    return _fc_inputs(batch) @ head.packed().T


def fc_loss(params: np.ndarray, batch: Batch, task: str) -> tuple[float, np.ndarray]:
    """Cross-entropy (multiclass) or mean BCE (multilabel) and its gradient."""
    x = _fc_inputs(batch)
    z = x @ params.T
    n, K = z.shape
    if task == "multilabel":
        y = batch.labels.astype(np.float64)
        value = float(np.mean(softplus(z) - y * z))
        dz = (sigmoid(z) - y) / (n * K)
    else:
        value = float(np.mean(logsumexp(z) - z[np.arange(n), batch.labels]))
        dz = stable_softmax(z)
        dz[np.arange(n), batch.labels] -= 1
        dz /= n
    return value, dz.T @ x


def _decide_metric(z: np.ndarray, batch: Batch, task: str, threshold_logit: float = 0.0) -> float:
    if task == "multilabel":
        return f1_macro(z > threshold_logit, batch.labels).value
    return top1_accuracy(np.argmax(z, axis=1), batch.labels).value


def fc_train(head: FcHead, train_set, optim_config: OptimConfig, task: str = "multiclass", eval_sets=None):
    batch = as_batch(train_set)
    evals = {k: as_batch(v) for k, v in (eval_sets or {}).items()}
    d_img = head.d_img

    def metric(params, b):
        return _decide_metric(fc_batch_logits(FcHead.unpack(params, d_img), b), b, task)

    params, history = fit(head.packed(), lambda p, b: fc_loss(p, b, task), batch, optim_config, metric, evals)
    return FcHead.unpack(params, d_img), history


# -- un-decomposed prototype head -------------------------------------------

@dataclass
class UndecomposedBank:
    params: np.ndarray  # (K, 3, d_img + d_txt)
    d_img: int

    @property
    def K(self) -> int:
        return self.params.shape[0]

    @property
    def d_txt(self) -> int:
        return self.params.shape[2] - self.d_img


def init_undecomposed(K: int, d_img: int, d_txt: int, seed: int) -> UndecomposedBank:
    if K < 1 or d_img < 1 or d_txt < 1:
        raise InvalidShape("un-decomposed bank needs K, d_img, d_txt >= 1")
    rng = np.random.default_rng(seed)
    return UndecomposedBank(normalize_rows(rng.standard_normal((K, 3, d_img + d_txt)))[0], d_img)


def undecomposed_score(bank: UndecomposedBank, h_img, h_txt, pattern) -> Logits:
    pattern = MissingPattern(pattern)
    check_presence(h_img is not None, h_txt is not None, pattern)
    if pattern is MissingPattern.IMAGE_MISSING:
        h_img = None
    elif pattern is MissingPattern.TEXT_MISSING:
        h_txt = None
    x = l2_normalize(np.concatenate([_pad(h_img, bank.d_img), _pad(h_txt, bank.d_txt)]))
    w = np.stack([l2_normalize(bank.params[k, pattern]) for k in range(bank.K)])
    return Logits(w @ x, pattern)


def _joint_inputs(batch: Batch, patterns: np.ndarray) -> np.ndarray:
    """Jointly normalized ``[img; txt]`` with the side a pattern ignores zeroed."""
    img = np.where((patterns == MissingPattern.IMAGE_MISSING)[:, None], 0.0, batch.img_raw)
    txt = np.where((patterns == MissingPattern.TEXT_MISSING)[:, None], 0.0, batch.txt_raw)
    return normalize_rows(np.hstack([img, txt]))[0]


def undecomposed_batch_logits(unit: np.ndarray, batch: Batch, patterns: np.ndarray | None = None) -> np.ndarray:
    patterns = batch.pattern if patterns is None else patterns
    x = _joint_inputs(batch, patterns)
    return np.einsum("nd,knd->nk", x, unit[:, patterns])


def undecomposed_logits(bank: UndecomposedBank, batch: Batch, missing_aware: bool = True):
    unit, _ = normalize_rows(bank.params)
    if missing_aware:
        return undecomposed_batch_logits(unit, batch), batch.pattern.copy()
    mask = compatible_mask(batch)
    cands = np.full((3, batch.n, bank.K), np.nan)
    for p in PATTERNS:
        if mask[p].any():
            sub = batch.take(mask[p])
            cands[p, mask[p]] = undecomposed_batch_logits(unit, sub, np.full(sub.n, int(p)))
    return select_min_entropy(cands)


def undecomposed_loss(params: np.ndarray, batch: Batch, config: LossConfig, task: str) -> tuple[float, np.ndarray]:
    """Per-pattern margin loss plus ``lambda`` times a 3-component contrastive term."""
    unit, norms = normalize_rows(params)
    x = _joint_inputs(batch, batch.pattern)
    z = np.einsum("nd,knd->nk", x, unit[:, batch.pattern])
    value, dz = arcface_from_cosines(z, batch, config, task == "multilabel")
    dunit = np.zeros_like(unit)
    for p in PATTERNS:
        idx = batch.pattern == p
        if idx.any():
            dunit[:, p] = dz[idx].T @ x[idx]
    if config.lambda_ != 0:
        reg, dreg = relational_contrastive(unit)
        value += config.lambda_ * reg
        dunit = dunit + config.lambda_ * dreg
    return value, normalize_backward(unit, norms, dunit)


def undecomposed_train(bank: UndecomposedBank, train_set, loss_config: LossConfig, optim_config: OptimConfig,
                       task: str = "multiclass", eval_sets=None):
    loss_config.validate()
    batch = as_batch(train_set)
    evals = {k: as_batch(v) for k, v in (eval_sets or {}).items()}

    def metric(params, b):
        return _decide_metric(undecomposed_batch_logits(normalize_rows(params)[0], b), b, task)

    params, history = fit(bank.params, lambda p, b: undecomposed_loss(p, b, loss_config, task),
                          batch, optim_config, metric, evals)
    return UndecomposedBank(params, bank.d_img), history
