import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pixelhop.datasets import (LabeledDataset, convert_color, load_cifar10, load_dataset,
                               load_idx, rgb_to_lab, rgb_to_ycbcr, split_channels, subsample,
                               subsample_indices, ycbcr_to_rgb, zero_pad)
from pixelhop.exceptions import ArgumentError, ConsistencyError, DataIOError, FormatError

from conftest import require


def write_idx(path, array, magic):
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(header + array.tobytes())


def write_pair(tmp_path, images, labels, suffix=""):
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lbl{suffix}"
    write_idx(ip, images, 0x803)
    write_idx(lp, labels, 0x801)
    return ip, lp


class TestIdx:
    def test_single_2x2_image_scaled_to_unit_range(self, tmp_path):
        ip, lp = write_pair(tmp_path, [[[0, 255], [0, 255]]], [3])
        ds = load_idx(ip, lp)
        assert ds.images.shape == (1, 2, 2, 1)
        np.testing.assert_array_equal(ds.images[0, ..., 0].ravel(), [0, 1, 0, 1])
        assert ds.labels.tolist() == [3]
        assert ds.channel_names == ("gray",)

    def test_gzip_input(self, tmp_path):
        ip, lp = write_pair(tmp_path, np.arange(8).reshape(2, 2, 2), [0, 1], suffix=".gz")
        ds = load_idx(ip, lp)
        np.testing.assert_allclose(ds.images[1, ..., 0], [[4 / 255, 5 / 255], [6 / 255, 7 / 255]])

    def test_zero_magic_is_format_error(self, tmp_path):
        ip, lp = write_pair(tmp_path, [[[1]]], [0])
        raw = bytearray(ip.read_bytes())
        raw[:4] = b"\0\0\0\0"
        ip.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_idx(ip, lp)

    def test_swapped_files_are_format_error(self, tmp_path):
        ip, lp = write_pair(tmp_path, [[[1]]], [0])
        with pytest.raises(FormatError):
            load_idx(lp, ip)

    def test_count_mismatch_is_consistency_error(self, tmp_path):
        ip, lp = write_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1, 2])
        with pytest.raises(ConsistencyError):
            load_idx(ip, lp)

    def test_truncated_payload_is_io_error(self, tmp_path):
        ip, lp = write_pair(tmp_path, np.zeros((2, 4, 4)), [0, 1])
        ip.write_bytes(ip.read_bytes()[:-5])
        with pytest.raises(DataIOError):
            load_idx(ip, lp)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(DataIOError):
            load_idx(tmp_path / "nope", tmp_path / "nada")

    def test_identical_bytes_identical_dataset(self, tmp_path, rng):
        imgs = rng.integers(0, 256, (5, 3, 3))
        a = load_idx(*write_pair(tmp_path, imgs, [0, 1, 2, 3, 4], "a"))
        b = load_idx(*write_pair(tmp_path, imgs, [0, 1, 2, 3, 4], "b"))
        np.testing.assert_array_equal(a.images, b.images)

    def test_float32_option(self, tmp_path):
        ip, lp = write_pair(tmp_path, [[[0, 255]]], [0])
        assert load_idx(ip, lp, dtype=np.float32).images.dtype == np.float32


class TestCifar:
    def record(self, label, pixels):
        return bytes([label]) + bytes(pixels)

    def test_constant_white_record(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(self.record(7, [255] * 3072))
        ds = load_cifar10([p])
        assert ds.images.shape == (1, 32, 32, 3)
        assert np.all(ds.images == 1.0)
        assert ds.labels.tolist() == [7]

    def test_planar_to_interleaved(self, tmp_path):
        planes = np.zeros((3, 32, 32), dtype=np.uint8)
        planes[0, 0, 1] = 10   # R at row 0, col 1
        planes[1, 2, 0] = 20   # G at row 2, col 0
        planes[2, 31, 31] = 30  # B at the last pixel
        p = tmp_path / "b.bin"
        p.write_bytes(self.record(1, planes.ravel()))
        img = load_cifar10(p).images[0] * 255
        assert round(img[0, 1, 0]) == 10 and round(img[2, 0, 1]) == 20
        assert round(img[31, 31, 2]) == 30
        assert round(img.sum()) == 60

    def test_bad_length_is_format_error(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(bytes(3074))
        with pytest.raises(FormatError):
            load_cifar10([p])

    def test_label_above_nine_is_consistency_error(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(self.record(10, [0] * 3072))
        with pytest.raises(ConsistencyError):
            load_cifar10([p])


def make_ds(images, labels=None):
    images = np.asarray(images, dtype=np.float64)
    labels = np.zeros(len(images), dtype=np.int64) if labels is None else np.asarray(labels)
    names = ("gray",) if images.shape[3] == 1 else ("R", "G", "B")
    return LabeledDataset(images, labels, 10, "train", names)


class TestPadding:
    def test_mnist_size_gets_two_pixel_border(self, rng):
        ds = make_ds(rng.random((3, 28, 28, 1)))
        out = zero_pad(ds, 32)
        assert out.images.shape == (3, 32, 32, 1)
        np.testing.assert_array_equal(out.images[:, 2:30, 2:30], ds.images)
        border = out.images.copy()
        border[:, 2:30, 2:30] = 0
        assert not border.any()

    def test_same_size_is_identity(self, rng):
        ds = make_ds(rng.random((2, 32, 32, 3)))
        assert zero_pad(ds, 32).images is ds.images

    def test_smaller_target_rejected(self, rng):
        with pytest.raises(ArgumentError):
            zero_pad(make_ds(rng.random((1, 28, 28, 1))), 26)

    def test_odd_margin_rejected(self, rng):
        with pytest.raises(ArgumentError):
            zero_pad(make_ds(rng.random((1, 28, 28, 1))), 31)

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (2, 6, 6, 1), elements=st.floats(0, 1)), st.sampled_from([6, 8, 12]))
    def test_pixel_sums_and_labels_preserved(self, images, target):
        ds = make_ds(images, [4, 2])
        out = zero_pad(ds, target)
        np.testing.assert_allclose(out.images.sum(axis=(1, 2, 3)), images.sum(axis=(1, 2, 3)))
        assert out.labels.tolist() == [4, 2]


class TestColor:
    def test_gray_has_centered_chroma(self):
        v = np.linspace(0, 1, 11)
        ycc = rgb_to_ycbcr(np.stack([v, v, v], axis=-1))
        np.testing.assert_allclose(ycc[:, 0], v, atol=1e-12)
        np.testing.assert_allclose(ycc[:, 1:], 0.5, atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (20, 3), elements=st.floats(0, 1)))
    def test_ycbcr_round_trip(self, rgb):
        np.testing.assert_allclose(ycbcr_to_rgb(rgb_to_ycbcr(rgb)), rgb, atol=1e-6)

    def test_white_has_unit_lightness(self):
        lab = rgb_to_lab(np.ones((1, 3)))
        assert lab[0, 0] == pytest.approx(1.0, abs=1e-4)
        assert lab[0, 1] == pytest.approx(128 / 255, abs=1e-4)

    def test_lab_matches_skimage(self, rng):
        skcolor = pytest.importorskip("skimage.color")
        rgb = rng.random((8, 8, 3))
        ref = skcolor.rgb2lab(rgb, illuminant="D65")
        ours = rgb_to_lab(rgb)
        np.testing.assert_allclose(ours[..., 0] * 100, ref[..., 0], atol=2e-3)
        np.testing.assert_allclose(ours[..., 1] * 255 - 128, ref[..., 1], atol=2e-2)
        np.testing.assert_allclose(ours[..., 2] * 255 - 128, ref[..., 2], atol=2e-2)

    def test_convert_updates_names_and_keeps_dtype(self, rng):
        ds = make_ds(rng.random((3, 4, 4, 3)))
        out = convert_color(ds, "lab")
        assert out.channel_names == ("L", "a", "b")
        ds32 = LabeledDataset(ds.images.astype(np.float32), ds.labels, 10, "train", ds.channel_names)
        assert convert_color(ds32, "ycbcr").images.dtype == np.float32

    def test_non_rgb_rejected(self, rng):
        with pytest.raises(ArgumentError):
            convert_color(make_ds(rng.random((1, 4, 4, 1))), "ycbcr")
        with pytest.raises(ArgumentError):
            convert_color(make_ds(rng.random((1, 4, 4, 3))), "hsv")


class TestSplit:
    def test_l_ab_grouping(self, rng):
        ds = convert_color(make_ds(rng.random((2, 4, 4, 3))), "lab")
        parts = split_channels(ds, [[0], [1, 2]])
        assert [p.images.shape[3] for p in parts] == [1, 2]
        assert parts[0].channel_names == ("L",) and parts[1].channel_names == ("a", "b")

    def test_single_group_is_identity(self, rng):
        ds = make_ds(rng.random((2, 4, 4, 3)))
        (only,) = split_channels(ds, [[0, 1, 2]])
        np.testing.assert_array_equal(only.images, ds.images)

    @pytest.mark.parametrize("grouping", [[[0], [0]], [[3]], [[]]])
    def test_bad_grouping(self, rng, grouping):
        with pytest.raises(ArgumentError):
            split_channels(make_ds(rng.random((1, 2, 2, 3))), grouping)


class TestSubsample:
    def test_one_in_128_of_mnist_size(self):
        assert len(subsample_indices(60_000, 1 / 128, 0)) == 469

    def test_quarter(self):
        assert len(subsample_indices(60_000, 0.25, 3)) == 15_000

    def test_full_fraction_is_permutation(self):
        assert sorted(subsample_indices(100, 1.0, 5)) == list(range(100))

    def test_deterministic(self):
        np.testing.assert_array_equal(subsample_indices(1000, 0.1, 7), subsample_indices(1000, 0.1, 7))
        assert not np.array_equal(subsample_indices(1000, 0.1, 7), subsample_indices(1000, 0.1, 8))

    @pytest.mark.parametrize("fraction", [0.0, -0.5, 1.5, 2.0])
    def test_bad_fraction(self, fraction):
        with pytest.raises(ArgumentError):
            subsample_indices(10, fraction, 0)

    def test_labels_follow_images(self, rng):
        images = rng.random((50, 2, 2, 1))
        ds = make_ds(images, np.arange(50) % 10)
        sub = subsample(ds, 0.3, 1)
        idx = subsample_indices(50, 0.3, 1)
        np.testing.assert_array_equal(sub.images, images[idx])
        np.testing.assert_array_equal(sub.labels, idx % 10)


class TestRealFiles:
    @require("mnist")
    def test_mnist_train(self, data_root):
        ds = load_dataset("mnist", "train", data_root)
        assert ds.images.shape == (60_000, 28, 28, 1)
        assert set(np.unique(ds.labels)) == set(range(10))
        assert 0 <= ds.images.min() and ds.images.max() <= 1

    @require("cifar10")
    def test_cifar_train(self, data_root):
        ds = load_dataset("cifar10", "train", data_root, dtype=np.float32)
        assert ds.images.shape == (50_000, 32, 32, 3)
        assert np.bincount(ds.labels).tolist() == [5000] * 10
