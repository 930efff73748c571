"""Samples, missing-modality simulation, synthetic features and DPLF files.

Missing modalities are structural: an absent modality is ``None`` in memory
and zero-filled on disk.  No dummy content is ever synthesized.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DataUnavailable,
    InconsistentHeader,
    InvalidSpec,
    IoFailure,
    NoModalityPresent,
    NotComplete,
    TruncatedFile,
    VersionMismatch,
)
from .numerics import EPS_NORM, normalize_rows
from .prototypes import MissingPattern


class Scenario(str, enum.Enum):
    IMAGE_MISSING_ONLY = "image_missing"
    TEXT_MISSING_ONLY = "text_missing"
    MIXED = "mixed"


@dataclass(frozen=True, eq=False)
class Sample:
    """One instance: per-modality features (``None`` when absent) and a label.

    ``label`` is a class index for multiclass tasks or a boolean vector of
    length K for multilabel tasks.
    """

    image: np.ndarray | None
    text: np.ndarray | None
    label: int | np.ndarray

    def __post_init__(self):
        if self.image is None and self.text is None:
            raise NoModalityPresent("a sample needs at least one modality")

    @property
    def pattern(self) -> MissingPattern:
        if self.image is None:
            return MissingPattern.IMAGE_MISSING
        if self.text is None:
            return MissingPattern.TEXT_MISSING
        return MissingPattern.COMPLETE

    @property
    def is_multilabel(self) -> bool:
        return isinstance(self.label, np.ndarray)


@dataclass
class Batch:
    """Array view of a list of samples, ready for vectorized scoring.

    ``img``/``txt`` hold L2-normalized features with zero rows where the
    modality is absent; ``img_raw``/``txt_raw`` keep the unnormalized values
    (zero-padded) for heads that are not scale invariant.
    """

    img: np.ndarray
    txt: np.ndarray
    img_raw: np.ndarray
    txt_raw: np.ndarray
    pattern: np.ndarray
    labels: np.ndarray
    multilabel: bool

    @property
    def n(self) -> int:
        return len(self.pattern)

    def has_image(self) -> np.ndarray:
        return self.pattern != MissingPattern.IMAGE_MISSING

    def has_text(self) -> np.ndarray:
        return self.pattern != MissingPattern.TEXT_MISSING

    def take(self, idx) -> "Batch":
        return Batch(
            self.img[idx], self.txt[idx], self.img_raw[idx], self.txt_raw[idx],
            self.pattern[idx], self.labels[idx], self.multilabel,
        )

    @classmethod
    def from_samples(cls, samples, d_img: int | None = None, d_txt: int | None = None) -> "Batch":
        samples = list(samples)
        if not samples:
            raise ValueError("cannot build a batch from zero samples")
        if d_img is None:
            d_img = next((len(s.image) for s in samples if s.image is not None), None)
        if d_txt is None:
            d_txt = next((len(s.text) for s in samples if s.text is not None), None)
        d_img = d_img or d_txt
        d_txt = d_txt or d_img
        n = len(samples)
        img_raw = np.zeros((n, d_img))
        txt_raw = np.zeros((n, d_txt))
        for i, s in enumerate(samples):
            if s.image is not None:
                img_raw[i] = s.image
            if s.text is not None:
                txt_raw[i] = s.text
        pattern = np.array([int(s.pattern) for s in samples], dtype=np.int64)
        has_img = pattern != MissingPattern.IMAGE_MISSING
        has_txt = pattern != MissingPattern.TEXT_MISSING
        img = np.zeros_like(img_raw)
        txt = np.zeros_like(txt_raw)
        if has_img.any():
            img[has_img] = normalize_rows(img_raw[has_img])[0]
        if has_txt.any():
            txt[has_txt] = normalize_rows(txt_raw[has_txt])[0]
        multilabel = samples[0].is_multilabel
        if multilabel:
            labels = np.array([np.asarray(s.label, dtype=bool) for s in samples])
        else:
            labels = np.array([int(s.label) for s in samples], dtype=np.int64)
        return cls(img, txt, img_raw, txt_raw, pattern, labels, multilabel)


def as_batch(samples_or_batch) -> Batch:
    if isinstance(samples_or_batch, Batch):
        return samples_or_batch
    return Batch.from_samples(samples_or_batch)


# -- missing-modality simulation --------------------------------------------

def _round_half_even(x: Fraction) -> int:
    return round(x)  # Fraction.__round__ rounds half to even


def missing_counts(n: int, scenario: Scenario, eta: float) -> tuple[int, int]:
    """(image-missing count, text-missing count) for ``n`` samples at rate ``eta``.

    ``eta`` is taken at its shortest decimal representation so that, e.g.,
    0.7 * 15 is exactly 10.5 before rounding.
    """
    scenario = Scenario(scenario)
    if not 0.0 <= eta <= 1.0:
        raise InvalidSpec(f"missing rate must be in [0, 1], got {eta}")
    frac = Fraction(repr(float(eta)))
    if scenario is Scenario.IMAGE_MISSING_ONLY:
        return _round_half_even(frac * n), 0
    if scenario is Scenario.TEXT_MISSING_ONLY:
        return 0, _round_half_even(frac * n)
    half = _round_half_even(frac * n / 2)
    return half, half


def simulate_missing(samples, scenario: Scenario, eta: float, seed: int) -> list[Sample]:
    samples = list(samples)
    for s in samples:
        if s.pattern is not MissingPattern.COMPLETE:
            raise NotComplete("simulate_missing expects complete samples only")
    n = len(samples)
    n_img_missing, n_txt_missing = missing_counts(n, scenario, eta)
    order = np.random.default_rng(seed).permutation(n)
    drop_image = set(order[:n_img_missing].tolist())
    drop_text = set(order[n_img_missing:n_img_missing + n_txt_missing].tolist())
    out = []
    for i, s in enumerate(samples):
        if i in drop_image:
            out.append(Sample(None, s.text, s.label))
        elif i in drop_text:
            out.append(Sample(s.image, None, s.label))
        else:
            out.append(s)
    return out


# -- synthetic frozen-encoder stand-in --------------------------------------

@dataclass
class SyntheticSpec:
    K: int = 4
    d: int = 16
    n_per_class: int = 100
    class_sep: float = 1.0
    noise_sigma: float = 0.1
    modality_skew: float = 0.5
    seed: int = 0
    multilabel: bool = False
    extra_label_prob: float = 0.25

    def validate(self) -> None:
        if self.K < 2 or self.d < 1 or self.n_per_class < 1:
            raise InvalidSpec("need K >= 2, d >= 1, n_per_class >= 1")
        if not self.noise_sigma > 0:
            raise InvalidSpec("noise_sigma must be positive")
        if not 0.0 <= self.modality_skew <= 1.0:
            raise InvalidSpec("modality_skew must be in [0, 1]")
        if self.class_sep < 0:
            raise InvalidSpec("class_sep must be nonnegative")
        if not 0.0 <= self.extra_label_prob <= 1.0:
            raise InvalidSpec("extra_label_prob must be in [0, 1]")


def _unit(rng: np.random.Generator, *shape) -> np.ndarray:
    return normalize_rows(rng.standard_normal(shape))[0]


def class_means(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm per-class means ``(K, d)`` for the image and text modality.

    Both modalities share one embedding space, as the two towers of a
    contrastive vision-language encoder do: class directions are common to
    image and text, and each modality adds its own offset.  A modality's
    share of the class signal is ``modality_skew`` for image and
    ``1 - modality_skew`` for text, scaled by ``class_sep``.
    """
    rng = np.random.default_rng(spec.seed)
    per_class = _unit(rng, spec.K, spec.d)
    offsets = _unit(rng, 2, spec.d)
    means = []
    for offset, share in zip(offsets, (spec.modality_skew, 1.0 - spec.modality_skew)):
        means.append(normalize_rows(offset + share * spec.class_sep * per_class)[0])
    return means[0], means[1]


def gen_synthetic(spec: SyntheticSpec) -> list[Sample]:
    """Complete samples, class-major order, deterministic in ``spec.seed``."""
    spec.validate()
    mu_img, mu_txt = class_means(spec)
    rng = np.random.default_rng([spec.seed, 1])
    samples = []
    for k in range(spec.K):
        for _ in range(spec.n_per_class):
            if spec.multilabel:
                label = rng.random(spec.K) < spec.extra_label_prob
                label[k] = True
                centre_img = mu_img[label].mean(axis=0)
                centre_txt = mu_txt[label].mean(axis=0)
            else:
                label = k
                centre_img, centre_txt = mu_img[k], mu_txt[k]
            img = centre_img + spec.noise_sigma * rng.standard_normal(spec.d)
            txt = centre_txt + spec.noise_sigma * rng.standard_normal(spec.d)
            samples.append(Sample(img, txt, label))
    return samples


def split_train_test(samples, test_fraction: float, seed: int) -> tuple[list[Sample], list[Sample]]:
    """Seeded split; stratified by class for multiclass labels."""
    samples = list(samples)
    if not 0.0 < test_fraction < 1.0:
        raise InvalidSpec("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    if samples and samples[0].is_multilabel:
        groups = [list(range(len(samples)))]
    else:
        by_class: dict[int, list[int]] = {}
        for i, s in enumerate(samples):
            by_class.setdefault(int(s.label), []).append(i)
        groups = [by_class[k] for k in sorted(by_class)]
    train_idx, test_idx = [], []
    for g in groups:
        g = np.array(g)[rng.permutation(len(g))]
        n_test = int(_round_half_even(Fraction(repr(test_fraction)) * len(g)))
        test_idx.extend(g[:n_test].tolist())
        train_idx.extend(g[n_test:].tolist())
    return [samples[i] for i in sorted(train_idx)], [samples[i] for i in sorted(test_idx)]


# -- DPLF feature files -----------------------------------------------------

FEATURE_MAGIC = b"DPLF"
FEATURE_VERSION = 1
FLAG_MULTILABEL = 1
_FEATURE_HEADER = struct.Struct("<4sIIQIII")


@dataclass
class FeatureSet:
    samples: list[Sample]
    K: int
    d_img: int
    d_txt: int
    multilabel: bool = False
    extra: dict = field(default_factory=dict)


def _record_dtype(K: int, d_img: int, d_txt: int, multilabel: bool) -> np.dtype:
    label = ("label", "u1", (K,)) if multilabel else ("label", "<u4")
    return np.dtype([("mask", "u1"), label, ("img", "<f4", (d_img,)), ("txt", "<f4", (d_txt,))])


def features_to_bytes(fs: FeatureSet) -> bytes:
    dtype = _record_dtype(fs.K, fs.d_img, fs.d_txt, fs.multilabel)
    rec = np.zeros(len(fs.samples), dtype=dtype)
    for i, s in enumerate(fs.samples):
        mask = 0
        if s.image is not None:
            mask |= 1
            rec["img"][i] = s.image
        if s.text is not None:
            mask |= 2
            rec["txt"][i] = s.text
        rec["mask"][i] = mask
        rec["label"][i] = np.asarray(s.label, dtype=np.uint8) if fs.multilabel else int(s.label)
    flags = FLAG_MULTILABEL if fs.multilabel else 0
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, flags, len(fs.samples), fs.K, fs.d_img, fs.d_txt)
    return header + rec.tobytes()


def features_from_bytes(data: bytes) -> FeatureSet:
    if len(data) < _FEATURE_HEADER.size:
        raise TruncatedFile("feature file shorter than its header")
    magic, version, flags, n, K, d_img, d_txt = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise BadMagic(f"expected {FEATURE_MAGIC!r}, found {magic!r}")
    if version != FEATURE_VERSION:
        raise VersionMismatch(f"feature format version {version} unsupported")
    if flags & ~FLAG_MULTILABEL:
        raise InconsistentHeader(f"unknown flag bits {flags:#x}")
    if K < 1 or d_img < 1 or d_txt < 1:
        raise InconsistentHeader(f"header declares K={K}, d_img={d_img}, d_txt={d_txt}")
    multilabel = bool(flags & FLAG_MULTILABEL)
    dtype = _record_dtype(K, d_img, d_txt, multilabel)
    expected = _FEATURE_HEADER.size + n * dtype.itemsize
    if len(data) < expected:
        raise TruncatedFile(f"payload has {len(data)} bytes, header implies {expected}")
    if len(data) > expected:
        raise InconsistentHeader("trailing bytes after the last record")
    rec = np.frombuffer(data, dtype=dtype, count=n, offset=_FEATURE_HEADER.size)
    masks = rec["mask"]
    if np.any((masks == 0) | (masks > 3)):
        raise InconsistentHeader("presence mask must have bit 0 and/or bit 1 set and nothing else")
    labels = rec["label"]
    if multilabel:
        if np.any(labels > 1):
            raise InconsistentHeader("multilabel entries must be 0 or 1")
    elif np.any(labels >= K):
        raise InconsistentHeader("label index exceeds K")
    img = rec["img"].astype(np.float64)
    txt = rec["txt"].astype(np.float64)
    samples = []
    for i in range(n):
        label = labels[i].astype(bool) if multilabel else int(labels[i])
        samples.append(Sample(
            img[i] if masks[i] & 1 else None,
            txt[i] if masks[i] & 2 else None,
            label,
        ))
    return FeatureSet(samples, K, d_img, d_txt, multilabel)


def infer_feature_set(samples, K: int | None = None, d_img: int | None = None, d_txt: int | None = None) -> FeatureSet:
    samples = list(samples)
    if not samples:
        raise InvalidSpec("no samples to describe")
    multilabel = samples[0].is_multilabel
    if K is None:
        K = len(samples[0].label) if multilabel else max(int(s.label) for s in samples) + 1
    if d_img is None:
        d_img = next((len(s.image) for s in samples if s.image is not None), None)
    if d_txt is None:
        d_txt = next((len(s.text) for s in samples if s.text is not None), None)
    if d_img is None or d_txt is None:
        raise InvalidSpec("cannot infer a modality dimension from samples that never carry it")
    return FeatureSet(samples, K, d_img, d_txt, multilabel)


def write_features(data, path, K: int | None = None, d_img: int | None = None, d_txt: int | None = None) -> None:
    fs = data if isinstance(data, FeatureSet) else infer_feature_set(data, K, d_img, d_txt)
    try:
        Path(path).write_bytes(features_to_bytes(fs))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_feature_set(path) -> FeatureSet:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataUnavailable(f"feature file not found: {path}") from exc
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return features_from_bytes(data)


def load_features(path) -> list[Sample]:
    return load_feature_set(path).samples


def zero_filled(sample: Sample, d_img: int, d_txt: int) -> tuple[np.ndarray, np.ndarray]:
    """The on-disk view of a sample: absent modalities become zero vectors."""
    img = np.zeros(d_img) if sample.image is None else np.asarray(sample.image, dtype=np.float64)
    txt = np.zeros(d_txt) if sample.text is None else np.asarray(sample.text, dtype=np.float64)
    return img, txt


def from_zero_filled(img: np.ndarray, txt: np.ndarray, label) -> Sample:
    """Inverse of :func:`zero_filled`: all-zero vectors are read as absent."""
    img_present = np.linalg.norm(img) > EPS_NORM
    txt_present = np.linalg.norm(txt) > EPS_NORM
    return Sample(img if img_present else None, txt if txt_present else None, label)
