import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arn.data import (
    LabeledImageSet,
    load_idx,
    parse_idx,
    sample_per_class,
    split_per_class,
)
from arn.errors import BadMagicError, CountMismatchError, ParameterError, ParseError, TruncatedError

from conftest import IMAGES, LABELS


def idx_images(pixels: np.ndarray) -> bytes:
    n, r, c = pixels.shape
    return struct.pack(">IIII", 2051, n, r, c) + pixels.astype(np.uint8).tobytes()


def idx_labels(labels) -> bytes:
    return struct.pack(">II", 2049, len(labels)) + bytes(labels)


def pixel_at(raw: bytes, k: int, r: int, c: int, rows: int, cols: int) -> float:
    """Offset oracle written against the file layout, independent of the parser."""
    return raw[16 + k * rows * cols + r * cols + c] / 255


@settings(max_examples=60)
@given(
    n=st.integers(0, 6),
    rows=st.integers(1, 30),
    cols=st.integers(1, 30),
    seed=st.integers(0, 2**32 - 1),
)
def test_parser_matches_offset_oracle(n, rows, cols, seed):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, (n, rows, cols), dtype=np.uint8)
    labels = rng.integers(0, 10, n).tolist()
    raw = idx_images(pixels)
    ds = parse_idx(raw, idx_labels(labels))
    assert ds.images.shape == (n, rows, cols)
    assert ds.labels.tolist() == labels
    for _ in range(20 if n else 0):
        k, r, c = rng.integers(n), rng.integers(rows), rng.integers(cols)
        assert ds.images[k, r, c] == pixel_at(raw, k, r, c, rows, cols)
    assert ds.images.min(initial=0) >= 0 and ds.images.max(initial=0) <= 1


def test_corpus_offsets_match_oracle():
    raw = gzip.decompress(IMAGES.read_bytes())
    ds = load_idx(IMAGES, LABELS)
    rng = np.random.default_rng(0)
    for _ in range(500):
        k, r, c = rng.integers(len(ds)), rng.integers(28), rng.integers(28)
        assert ds.images[k, r, c] == pixel_at(raw, k, r, c, 28, 28)


def test_corpus_counts(digits):
    assert len(digits) == 10000 and digits.images.shape == (10000, 28, 28)
    assert np.bincount(digits.labels).min() > 800


def test_gzip_is_transparent():
    pixels = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    plain = parse_idx(idx_images(pixels), idx_labels([1, 2]))
    zipped = parse_idx(gzip.compress(idx_images(pixels)), gzip.compress(idx_labels([1, 2])))
    assert np.array_equal(plain.images, zipped.images)


def test_swapped_files_bad_magic():
    pixels = np.zeros((2, 2, 2), dtype=np.uint8)
    with pytest.raises(BadMagicError):
        parse_idx(idx_labels([1, 2]), idx_images(pixels))
    with pytest.raises(BadMagicError):
        parse_idx(idx_images(pixels), idx_images(pixels))


@pytest.mark.parametrize("cut", [0, 3, 10, 17, 23])
def test_truncated_images(cut):
    data = idx_images(np.ones((3, 2, 4), dtype=np.uint8))[:cut]
    with pytest.raises(TruncatedError):
        parse_idx(data, idx_labels([0, 1, 2]))


def test_truncated_labels():
    with pytest.raises(TruncatedError):
        parse_idx(idx_images(np.ones((3, 2, 2), dtype=np.uint8)), idx_labels([0, 1, 2])[:-1])


def test_count_mismatch():
    with pytest.raises(CountMismatchError):
        parse_idx(idx_images(np.ones((3, 2, 2), dtype=np.uint8)), idx_labels([0, 1]))


def test_errors_are_distinct():
    kinds = {BadMagicError, TruncatedError, CountMismatchError}
    assert len(kinds) == 3 and all(issubclass(k, ParseError) for k in kinds)
    assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)


def test_trailing_bytes_rejected():
    with pytest.raises(ParseError):
        parse_idx(idx_images(np.ones((1, 2, 2), dtype=np.uint8)) + b"\0", idx_labels([0]))


def test_non_digit_label_rejected():
    with pytest.raises(ParseError):
        parse_idx(idx_images(np.ones((1, 2, 2), dtype=np.uint8)), idx_labels([12]))


# -- sampling -----------------------------------------------------------------------


def test_sample_fifty_per_class(digits):
    s = sample_per_class(digits, 50, seed=0)
    assert len(s) == 500
    assert np.bincount(s.labels).tolist() == [50] * 10
    assert s.labels[:20].tolist() == list(range(10)) * 2


def test_sample_zero(digits):
    s = sample_per_class(digits, 0, seed=0)
    assert len(s) == 0 and s.images.shape[0] == 0


def test_sample_deterministic(digits):
    a = sample_per_class(digits, 20, seed=5)
    b = sample_per_class(digits, 20, seed=5)
    c = sample_per_class(digits, 20, seed=6)
    assert np.array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)


def test_sample_insufficient():
    ds = LabeledImageSet(np.zeros((10, 2, 2)), np.arange(10))
    with pytest.raises(ParameterError):
        sample_per_class(ds, 2, seed=0)


@settings(max_examples=25, deadline=None)
@given(n_train=st.integers(0, 40), n_test=st.integers(0, 40), seed=st.integers(0, 1000))
def test_split_is_stratified_and_disjoint(n_train, n_test, seed):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(10), 80)
    rng.shuffle(labels)
    ds = LabeledImageSet(np.arange(800, dtype=float).reshape(800, 1, 1), labels)
    tr, te = split_per_class(ds, n_train, n_test, seed)
    assert np.bincount(tr.labels, minlength=10).tolist() == [n_train] * 10
    assert np.bincount(te.labels, minlength=10).tolist() == [n_test] * 10
    assert not set(tr.images.ravel()) & set(te.images.ravel())


def test_held_out_set_independent_of_training_size(digits):
    _, small = split_per_class(digits, 50, 15, seed=2)
    _, large = split_per_class(digits, 500, 15, seed=2)
    assert np.array_equal(small.images, large.images)
