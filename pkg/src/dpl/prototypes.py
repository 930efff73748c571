"""Decoupled, decomposed class prototypes.

Every class owns one prototype per missing pattern, and each of those is
split into an image part and a text part.  Raw parameters live in a single
``(K, 3, 2, d)`` array indexed ``[class, pattern, modality, dim]`` and are
normalized per component on read.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    InconsistentHeader,
    InvalidShape,
    IoFailure,
    KeyOutOfRange,
    TruncatedFile,
    VersionMismatch,
)
from .numerics import l2_normalize, normalize_rows


class MissingPattern(enum.IntEnum):
    COMPLETE = 0
    IMAGE_MISSING = 1
    TEXT_MISSING = 2


class Modality(enum.IntEnum):
    IMAGE = 0
    TEXT = 1


PATTERNS = tuple(MissingPattern)
MODALITIES = tuple(Modality)


@dataclass(frozen=True)
class ComponentKey:
    class_index: int
    pattern: MissingPattern
    modality: Modality


class PrototypeBank:
    """Raw prototype parameters with shape ``(K, 3, 2, d)``."""

    def __init__(self, params: np.ndarray):
        params = np.array(params, dtype=np.float64)
        if params.ndim != 4 or params.shape[1:3] != (3, 2) or params.shape[0] < 1 or params.shape[3] < 1:
            raise InvalidShape(f"prototype parameters must be (K, 3, 2, d), got {params.shape}")
        self.params = params

    @property
    def K(self) -> int:
        return self.params.shape[0]

    @property
    def d(self) -> int:
        return self.params.shape[3]

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(self.params.copy())

    def __eq__(self, other) -> bool:
        return isinstance(other, PrototypeBank) and np.array_equal(self.params, other.params)

    def __repr__(self) -> str:
        return f"PrototypeBank(K={self.K}, d={self.d})"

    def _check_key(self, class_index: int, pattern, modality=None) -> None:
        if not 0 <= int(class_index) < self.K:
            raise KeyOutOfRange(f"class index {class_index} outside [0, {self.K})")
        if int(pattern) not in (0, 1, 2):
            raise KeyOutOfRange(f"unknown pattern {pattern!r}")
        if modality is not None and int(modality) not in (0, 1):
            raise KeyOutOfRange(f"unknown modality {modality!r}")

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """All components normalized at once; returns (unit vectors, norms)."""
        return normalize_rows(self.params)


def init_bank(K: int, d: int, seed: int) -> PrototypeBank:
    if K < 1 or d < 1:
        raise InvalidShape(f"need K >= 1 and d >= 1, got K={K}, d={d}")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((K, 3, 2, d))
    unit, _ = normalize_rows(raw)
    return PrototypeBank(unit)


def normalized_component(bank: PrototypeBank, key: ComponentKey) -> np.ndarray:
    bank._check_key(key.class_index, key.pattern, key.modality)
    return l2_normalize(bank.params[key.class_index, int(key.pattern), int(key.modality)])


def concat_normalized(bank: PrototypeBank, class_index: int, pattern) -> np.ndarray:
    """Whole-vector normalization of ``[w_image; w_text]`` (the un-decomposed view)."""
    bank._check_key(class_index, pattern)
    return l2_normalize(bank.params[class_index, int(pattern)].reshape(-1))


# -- checkpoint files -------------------------------------------------------

BANK_MAGIC = b"DPLB"
BANK_VERSION = 1
_BANK_HEADER = struct.Struct("<4sIII")


def bank_to_bytes(bank: PrototypeBank) -> bytes:
    header = _BANK_HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.K, bank.d)
    return header + bank.params.astype("<f8").tobytes(order="C")


def bank_from_bytes(data: bytes) -> PrototypeBank:
    if len(data) < _BANK_HEADER.size:
        raise TruncatedFile("bank checkpoint shorter than its header")
    magic, version, K, d = _BANK_HEADER.unpack_from(data)
    if magic != BANK_MAGIC:
        raise BadMagic(f"expected {BANK_MAGIC!r}, found {magic!r}")
    if version != BANK_VERSION:
        raise VersionMismatch(f"bank format version {version} unsupported")
    if K < 1 or d < 1:
        raise InconsistentHeader(f"header declares K={K}, d={d}")
    expected = _BANK_HEADER.size + 6 * K * d * 8
    if len(data) < expected:
        raise TruncatedFile(f"bank payload has {len(data)} bytes, header implies {expected}")
    if len(data) > expected:
        raise InconsistentHeader("trailing bytes after bank payload")
    params = np.frombuffer(data, dtype="<f8", offset=_BANK_HEADER.size).reshape(K, 3, 2, d)
    return PrototypeBank(params.astype(np.float64))


def save_bank(bank: PrototypeBank, path) -> None:
    try:
        Path(path).write_bytes(bank_to_bytes(bank))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_bank(path) -> PrototypeBank:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return bank_from_bytes(data)
