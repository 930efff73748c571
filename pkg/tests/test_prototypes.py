import numpy as np
import pytest

from dpl.errors import BadMagic, InconsistentHeader, InvalidShape, KeyOutOfRange, NormTooSmall, TruncatedFile, VersionMismatch
from dpl.prototypes import (
    BANK_MAGIC,
    ComponentKey,
    MissingPattern,
    Modality,
    PrototypeBank,
    bank_from_bytes,
    bank_to_bytes,
    concat_normalized,
    init_bank,
    load_bank,
    normalized_component,
    save_bank,
)


def test_pattern_ordering():
    assert list(MissingPattern) == [MissingPattern.COMPLETE, MissingPattern.IMAGE_MISSING, MissingPattern.TEXT_MISSING]
    assert MissingPattern.COMPLETE < MissingPattern.IMAGE_MISSING < MissingPattern.TEXT_MISSING


def test_init_bank_shape_and_norms():
    bank = init_bank(3, 4, seed=7)
    assert bank.params.shape == (3, 3, 2, 4)
    norms = np.linalg.norm(bank.params.reshape(-1, 4), axis=1)
    assert norms.size == 18
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_init_bank_deterministic():
    assert np.array_equal(init_bank(3, 4, 7).params, init_bank(3, 4, 7).params)
    assert not np.array_equal(init_bank(3, 4, 7).params, init_bank(3, 4, 8).params)


@pytest.mark.parametrize("K,d", [(0, 4), (3, 0), (-1, 2)])
def test_init_bank_rejects_bad_shape(K, d):
    with pytest.raises(InvalidShape):
        init_bank(K, d, 7)


def test_init_directions_unbiased():
    # spherical symmetry: the mean direction over many components is near zero
    bank = init_bank(500, 3, 1)
    assert np.linalg.norm(bank.params.reshape(-1, 3).mean(axis=0)) < 0.05


def test_normalized_component_examples():
    bank = init_bank(2, 2, 0)
    bank.params[1, 2, 0] = [3.0, 4.0]
    key = ComponentKey(1, MissingPattern.TEXT_MISSING, Modality.IMAGE)
    np.testing.assert_allclose(normalized_component(bank, key), [0.6, 0.8], atol=1e-15)
    before = bank.params.copy()
    unit_key = ComponentKey(0, MissingPattern.COMPLETE, Modality.TEXT)
    np.testing.assert_allclose(normalized_component(bank, unit_key), bank.params[0, 0, 1], atol=1e-12)
    assert np.array_equal(bank.params, before)


def test_normalized_component_all_unit(rng):
    bank = PrototypeBank(rng.standard_normal((4, 3, 2, 5)) * 3)
    for k in range(4):
        for p in MissingPattern:
            for m in Modality:
                assert np.linalg.norm(normalized_component(bank, ComponentKey(k, p, m))) == pytest.approx(1, abs=1e-12)


def test_normalized_component_scale_invariant(rng):
    bank = PrototypeBank(rng.standard_normal((2, 3, 2, 4)))
    scaled = PrototypeBank(bank.params * rng.uniform(0.1, 10, size=(2, 3, 2, 1)))
    for k in range(2):
        for p in MissingPattern:
            for m in Modality:
                key = ComponentKey(k, p, m)
                np.testing.assert_allclose(normalized_component(bank, key), normalized_component(scaled, key), atol=1e-12)


def test_component_key_errors():
    bank = init_bank(2, 3, 0)
    with pytest.raises(KeyOutOfRange):
        normalized_component(bank, ComponentKey(2, MissingPattern.COMPLETE, Modality.IMAGE))
    bank.params[0, 0, 0] = 0
    with pytest.raises(NormTooSmall):
        normalized_component(bank, ComponentKey(0, MissingPattern.COMPLETE, Modality.IMAGE))
    with pytest.raises(KeyOutOfRange):
        concat_normalized(bank, 5, MissingPattern.COMPLETE)


def test_concat_normalized_examples():
    bank = init_bank(1, 2, 0)
    bank.params[0, 0, 0] = [1.0, 0.0]
    bank.params[0, 0, 1] = [0.0, 1.0]
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(concat_normalized(bank, 0, MissingPattern.COMPLETE), [s, 0, 0, s], atol=1e-15)
    bank.params[0, 1, 0] = [3.0, 4.0]
    bank.params[0, 1, 1] = [1e-3, 0.0]
    assert np.linalg.norm(concat_normalized(bank, 0, MissingPattern.IMAGE_MISSING)) == pytest.approx(1, abs=1e-12)


def test_decomposed_differs_from_undecomposed(rng):
    # whenever the two halves have unequal norms, joint normalization is not
    # the same as stacking the per-half normalizations
    for _ in range(50):
        bank = PrototypeBank(rng.standard_normal((3, 3, 2, 4)))
        for k in range(3):
            for p in MissingPattern:
                n_img, n_txt = np.linalg.norm(bank.params[k, p], axis=1)
                if abs(n_img - n_txt) < 1e-6:
                    continue
                joint = concat_normalized(bank, k, p)
                stacked = np.concatenate([
                    normalized_component(bank, ComponentKey(k, p, Modality.IMAGE)),
                    normalized_component(bank, ComponentKey(k, p, Modality.TEXT)),
                ]) / np.sqrt(2)
                assert not np.allclose(joint, stacked, rtol=0, atol=1e-9)


def test_bank_roundtrip(tmp_path, rng):
    bank = PrototypeBank(rng.standard_normal((3, 3, 2, 5)))
    path = tmp_path / "bank.dplb"
    save_bank(bank, path)
    raw = path.read_bytes()
    assert raw[:4] == BANK_MAGIC
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 3
    assert int.from_bytes(raw[12:16], "little") == 5
    assert len(raw) == 16 + 6 * 3 * 5 * 8
    # (class, pattern, modality, dim) row-major
    first = np.frombuffer(raw[16:24], "<f8")[0]
    assert first == bank.params[0, 0, 0, 0]
    second_modality = np.frombuffer(raw[16 + 5 * 8:16 + 6 * 8], "<f8")[0]
    assert second_modality == bank.params[0, 0, 1, 0]
    assert load_bank(path) == bank


def test_bank_format_errors():
    data = bank_to_bytes(init_bank(2, 3, 0))
    with pytest.raises(BadMagic):
        bank_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(VersionMismatch):
        bank_from_bytes(data[:4] + (2).to_bytes(4, "little") + data[8:])
    with pytest.raises(TruncatedFile):
        bank_from_bytes(data[:-1])
    with pytest.raises(TruncatedFile):
        bank_from_bytes(data[:10])
    with pytest.raises(InconsistentHeader):
        bank_from_bytes(data + b"\0")
