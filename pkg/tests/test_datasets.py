import colorsys

import numpy as np
import pytest

from scnn.datasets import (BoundingBox, DatasetFormatError, DatasetKind, DatasetSpec,
                           LabeledExample, crop, decode_cifar_record, decode_stl_record,
                           encode_cifar_record, encode_stl_record, load_cifar,
                           load_stl10, load_stl10_folds, resize_bilinear, rgb_to_hsv)
from conftest import write_stl_root


def test_stl_record_channel_plane_decoding(tmp_path):
    # first channel plane all 7s -> R=7 everywhere, hand-written record
    record = bytes([7] * 9216) + bytes([0] * 9216) + bytes([0] * 9216)
    (tmp_path / "unlabeled_X.bin").write_bytes(record)
    imgs = load_stl10(DatasetSpec(DatasetKind.STL10_UNLABELED, tmp_path))
    assert len(imgs) == 1
    assert np.all(imgs[0][..., 0] == 7)
    assert np.all(imgs[0][..., 1:] == 0)


def test_stl_column_major_layout(tmp_path):
    # byte k of the red plane lands at row k%96, column k//96
    record = bytearray(27648)
    record[1] = 255  # second byte of red plane -> (row 1, col 0)
    img = decode_stl_record(np.frombuffer(bytes(record), dtype=np.uint8))
    assert img[1, 0, 0] == 255
    assert img.sum() == 255


def test_stl_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (96, 96, 3), dtype=np.uint8)
    again = decode_stl_record(np.frombuffer(encode_stl_record(img), dtype=np.uint8))
    assert np.array_equal(img, again)


def test_stl_limit_zero_and_prefix(stl_root):
    spec0 = DatasetSpec(DatasetKind.STL10_UNLABELED, stl_root, limit=0)
    assert load_stl10(spec0) == []
    full = load_stl10(DatasetSpec(DatasetKind.STL10_UNLABELED, stl_root))
    some = load_stl10(DatasetSpec(DatasetKind.STL10_UNLABELED, stl_root, limit=5))
    assert len(some) == 5
    for a, b in zip(some, full):
        assert np.array_equal(a, b)


def test_stl_truncated_file_reports_offset(tmp_path):
    (tmp_path / "unlabeled_X.bin").write_bytes(bytes(27648 + 100))
    with pytest.raises(DatasetFormatError, match="27648"):
        load_stl10(DatasetSpec(DatasetKind.STL10_UNLABELED, tmp_path))


def test_stl_labels_remapped_and_validated(tmp_path):
    root = write_stl_root(tmp_path / "ok", n_unlabeled=1, n_train=10, n_test=5)
    train = load_stl10(DatasetSpec(DatasetKind.STL10_TRAIN, root))
    assert all(0 <= ex.label <= 9 for ex in train)
    folds = load_stl10_folds(root)
    assert len(folds) == 10
    assert all(f.max() < 10 for f in folds)
    # out-of-range label byte
    (root / "train_y.bin").write_bytes(bytes([11] * 10))
    with pytest.raises(DatasetFormatError, match="label 11"):
        load_stl10(DatasetSpec(DatasetKind.STL10_TRAIN, root))


def test_cifar10_synthetic_record(tmp_path):
    (tmp_path / "test_batch.bin").write_bytes(bytes([3]) + bytes(3072))
    examples = load_cifar(DatasetSpec(DatasetKind.CIFAR10_TEST, tmp_path))
    assert len(examples) == 1
    assert examples[0].label == 3
    assert np.all(examples[0].image == 0)


def test_cifar100_fine_label(tmp_path):
    (tmp_path / "test.bin").write_bytes(bytes([1, 42]) + bytes(3072))
    examples = load_cifar(DatasetSpec(DatasetKind.CIFAR100_TEST, tmp_path))
    assert examples[0].label == 42


def test_cifar_roundtrip_and_plane_order(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    rec = encode_cifar_record(img)
    # first 1024 bytes are the red plane, row-major
    assert rec[:1024] == img[..., 0].tobytes()
    assert np.array_equal(decode_cifar_record(np.frombuffer(rec, dtype=np.uint8)), img)


def test_cifar_size_and_label_errors(tmp_path):
    (tmp_path / "test_batch.bin").write_bytes(bytes(3072))  # not a 3073 multiple
    with pytest.raises(DatasetFormatError):
        load_cifar(DatasetSpec(DatasetKind.CIFAR10_TEST, tmp_path))
    (tmp_path / "test_batch.bin").write_bytes(bytes([10]) + bytes(3072))
    with pytest.raises(DatasetFormatError, match="label 10"):
        load_cifar(DatasetSpec(DatasetKind.CIFAR10_TEST, tmp_path))


def test_crop_identity_and_single_pixel():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (10, 12, 3), dtype=np.uint8)
    assert np.array_equal(crop(img, BoundingBox(0, 0, 9, 11)), img)
    single = crop(img, BoundingBox(4, 7, 4, 7))
    assert single.shape == (1, 1, 3)
    assert np.array_equal(single[0, 0], img[4, 7])
    with pytest.raises(ValueError):
        crop(img, BoundingBox(0, 0, 10, 5))


def test_crop_matches_double_loop_oracle():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (15, 17, 3), dtype=np.uint8)
    box = BoundingBox(2, 5, 9, 13)
    got = crop(img, box)
    expected = np.zeros((box.height, box.width, 3), dtype=np.uint8)
    for r in range(box.height):
        for c in range(box.width):
            expected[r, c] = img[box.top + r, box.left + c]
    assert np.array_equal(got, expected)


def test_crop_composition():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, (20, 20, 3), dtype=np.uint8)
    outer = BoundingBox(3, 4, 15, 17)
    inner = BoundingBox(2, 1, 8, 9)  # relative to the outer crop
    composed = BoundingBox(outer.top + inner.top, outer.left + inner.left,
                           outer.top + inner.bottom, outer.left + inner.right)
    assert np.array_equal(crop(crop(img, outer), inner), crop(img, composed))


def test_resize_identity_and_constant():
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, (9, 7, 3), dtype=np.uint8)
    assert np.array_equal(resize_bilinear(img, 7, 9), img)
    const = np.full((5, 5, 3), 123, dtype=np.uint8)
    assert np.all(resize_bilinear(const, 13, 4) == 123)


def _bilinear_oracle(img, out_w, out_h):
    """Scalar half-pixel-centered bilinear evaluated pixel by pixel."""
    in_h, in_w = img.shape[:2]
    out = np.zeros((out_h, out_w, img.shape[2]))
    for r in range(out_h):
        for c in range(out_w):
            sr = (r + 0.5) * in_h / out_h - 0.5
            sc = (c + 0.5) * in_w / out_w - 0.5
            r0 = min(max(int(np.floor(sr)), 0), in_h - 1)
            c0 = min(max(int(np.floor(sc)), 0), in_w - 1)
            r1, c1 = min(r0 + 1, in_h - 1), min(c0 + 1, in_w - 1)
            fr = min(max(sr - r0, 0.0), 1.0)
            fc = min(max(sc - c0, 0.0), 1.0)
            val = (img[r0, c0] * (1 - fr) * (1 - fc) + img[r0, c1] * (1 - fr) * fc
                   + img[r1, c0] * fr * (1 - fc) + img[r1, c1] * fr * fc)
            out[r, c] = np.floor(val + 0.5)
    return out.astype(np.uint8)


def test_resize_matches_scalar_oracle():
    checker = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    img = np.repeat(checker[:, :, None], 3, axis=2)
    assert np.array_equal(resize_bilinear(img, 4, 4), _bilinear_oracle(img, 4, 4))
    rng = np.random.default_rng(6)
    img = rng.integers(0, 256, (5, 8, 3), dtype=np.uint8)
    for out_w, out_h in [(3, 11), (16, 2), (8, 5)]:
        assert np.array_equal(resize_bilinear(img, out_w, out_h),
                              _bilinear_oracle(img, out_w, out_h))


def test_resize_stays_within_input_range():
    rng = np.random.default_rng(7)
    for _ in range(10):
        img = rng.integers(20, 200, (6, 9, 3), dtype=np.uint8)
        out = resize_bilinear(img, 14, 4)
        for ch in range(3):
            assert out[..., ch].min() >= img[..., ch].min()
            assert out[..., ch].max() <= img[..., ch].max()


def test_rgb_to_hsv_anchor_colors():
    red = rgb_to_hsv(np.array([[[255, 0, 0]]], dtype=np.uint8))[0, 0]
    assert np.allclose(red, [0.0, 1.0, 1.0])
    gray = rgb_to_hsv(np.array([[[128, 128, 128]]], dtype=np.uint8))[0, 0]
    assert np.allclose(gray, [0.0, 0.0, 128 / 255])


def test_rgb_to_hsv_matches_colorsys():
    rng = np.random.default_rng(8)
    pixels = np.vstack([rng.integers(0, 256, (30, 3)), [[10, 200, 57]]]).astype(np.uint8)
    got = rgb_to_hsv(pixels[None, :, :])[0]
    for (r, g, b), (h, s, v) in zip(pixels, got):
        eh, es, ev = colorsys.rgb_to_hsv(r / 255, g / 255, b / 255)
        assert abs(h - eh * 360) < 1e-9 or abs(h - eh * 360 - 360) < 1e-9
        assert abs(s - es) < 1e-12 and abs(v - ev) < 1e-12
