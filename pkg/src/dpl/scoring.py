"""Prototype-representation cosine scoring and decision rules.

Complete samples average the image and text cosines against the complete
prototype; a sample missing one modality is scored only with the other
modality against the prototype of its missing pattern.  The absent side is
omitted from the sum, which is what dotting with a zero pad would give.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Batch
from .errors import InvalidThreshold, NoModalityPresent, PatternMismatch
from .numerics import entropy, entropy_rows, l2_normalize, normalize_backward, sigmoid, stable_softmax
from .prototypes import PATTERNS, MissingPattern, PrototypeBank

C, RI, RT = MissingPattern.COMPLETE, MissingPattern.IMAGE_MISSING, MissingPattern.TEXT_MISSING
IMG, TXT = 0, 1


@dataclass(frozen=True)
class Logits:
    values: np.ndarray
    pattern_used: MissingPattern


def check_presence(has_image: bool, has_text: bool, pattern: MissingPattern) -> None:
    pattern = MissingPattern(pattern)
    need_image = pattern in (C, RT)
    need_text = pattern in (C, RI)
    if (need_image and not has_image) or (need_text and not has_text):
        raise PatternMismatch(
            f"pattern {pattern.name} needs image={need_image}, text={need_text}; "
            f"got image={has_image}, text={has_text}"
        )


def score(bank: PrototypeBank, h_img, h_txt, pattern: MissingPattern) -> Logits:
    pattern = MissingPattern(pattern)
    check_presence(h_img is not None, h_txt is not None, pattern)
    if pattern is C:
        u_img, u_txt = l2_normalize(h_img), l2_normalize(h_txt)
        w_img = _unit_rows(bank.params[:, C, IMG])
        w_txt = _unit_rows(bank.params[:, C, TXT])
        z = (w_img @ u_img + w_txt @ u_txt) / 2
    elif pattern is RI:
        z = _unit_rows(bank.params[:, RI, TXT]) @ l2_normalize(h_txt)
    else:
        z = _unit_rows(bank.params[:, RT, IMG]) @ l2_normalize(h_img)
    return Logits(z, pattern)


def _unit_rows(w: np.ndarray) -> np.ndarray:
    return np.stack([l2_normalize(row) for row in w])


def candidate_patterns(has_image: bool, has_text: bool) -> list[MissingPattern]:
    if has_image and has_text:
        return [C, RI, RT]
    if has_text:
        return [RI]
    if has_image:
        return [RT]
    raise NoModalityPresent("both modalities are absent")


def score_min_entropy(bank: PrototypeBank, h_img, h_txt) -> Logits:
    """Score under every compatible pattern and keep the most confident one."""
    best = None
    best_h = np.inf
    for p in candidate_patterns(h_img is not None, h_txt is not None):
        cand = score(bank, h_img if p != RI else None, h_txt if p != RT else None, p)
        h = entropy(stable_softmax(cand.values))
        if h < best_h:  # strict: earlier pattern wins ties
            best, best_h = cand, h
    return best


def decide_multiclass(z) -> int:
    values = z.values if isinstance(z, Logits) else np.asarray(z)
    return int(np.argmax(values))


def decide_multilabel(z, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise InvalidThreshold(f"threshold must be in (0, 1), got {threshold}")
    values = z.values if isinstance(z, Logits) else np.asarray(z)
    return sigmoid(values) > threshold


# -- vectorized batch path used by training and evaluation ------------------

def batch_cosines(unit: np.ndarray, batch: Batch, patterns: np.ndarray | None = None) -> np.ndarray:
    """Logits ``(n, K)`` for a batch given normalized prototypes ``unit``.

    ``patterns`` overrides the batch's own patterns (used for candidate
    scoring); each sample must carry the modalities its pattern needs.
    """
    patterns = batch.pattern if patterns is None else patterns
    z = np.zeros((batch.n, unit.shape[0]))
    idx = patterns == C
    if idx.any():
        z[idx] = (batch.img[idx] @ unit[:, C, IMG].T + batch.txt[idx] @ unit[:, C, TXT].T) / 2
    idx = patterns == RI
    if idx.any():
        z[idx] = batch.txt[idx] @ unit[:, RI, TXT].T
    idx = patterns == RT
    if idx.any():
        z[idx] = batch.img[idx] @ unit[:, RT, IMG].T
    return z


def batch_cosines_backward(unit: np.ndarray, norms: np.ndarray, batch: Batch, dz: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. raw prototype parameters given ``dL/dz`` of shape ``(n, K)``."""
    g = np.zeros_like(unit)
    p = batch.pattern
    idx = p == C
    if idx.any():
        g[:, C, IMG] = dz[idx].T @ batch.img[idx] / 2
        g[:, C, TXT] = dz[idx].T @ batch.txt[idx] / 2
    idx = p == RI
    if idx.any():
        g[:, RI, TXT] = dz[idx].T @ batch.txt[idx]
    idx = p == RT
    if idx.any():
        g[:, RT, IMG] = dz[idx].T @ batch.img[idx]
    return normalize_backward(unit, norms, g)


def select_min_entropy(candidates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pick, per sample, the candidate logits with the lowest softmax entropy.

    ``candidates`` is ``(3, n, K)`` in pattern order with NaN rows for
    incompatible patterns.  Returns (logits ``(n, K)``, chosen pattern ``(n,)``).
    """
    valid = ~np.isnan(candidates[..., 0])
    ent = np.full(valid.shape, np.inf)
    for p in range(candidates.shape[0]):
        if valid[p].any():
            ent[p, valid[p]] = entropy_rows(stable_softmax(candidates[p, valid[p]]))
    chosen = np.argmin(ent, axis=0)  # first minimum, so pattern order breaks ties
    return candidates[chosen, np.arange(candidates.shape[1])], chosen


def compatible_mask(batch: Batch) -> np.ndarray:
    """``(3, n)`` boolean: which patterns each sample can be scored under."""
    has_img, has_txt = batch.has_image(), batch.has_text()
    return np.stack([has_img & has_txt, has_txt, has_img])


def batch_min_entropy(unit: np.ndarray, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    mask = compatible_mask(batch)
    cands = np.full((3, batch.n, unit.shape[0]), np.nan)
    for p in PATTERNS:
        if mask[p].any():
            sub = batch.take(mask[p])
            cands[p, mask[p]] = batch_cosines(unit, sub, np.full(sub.n, int(p)))
    return select_min_entropy(cands)


def bank_logits(bank: PrototypeBank, batch: Batch, missing_aware: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation logits and the pattern each sample was scored under."""
    unit, _ = bank.normalized()
    if missing_aware:
        return batch_cosines(unit, batch), batch.pattern.copy()
    return batch_min_entropy(unit, batch)
