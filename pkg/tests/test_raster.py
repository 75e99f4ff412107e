import numpy as np
import pytest

from alref.raster import (AcquisitionMask, BoundsError, BrasFormatError, LabelRaster,
                          MultiBandRaster, Region, class_frequencies, crop_labels,
                          crop_mask, paste_labels, read_bras, write_bras)


def make_labels(w=6, h=5, k=4, seed=0):
    rng = np.random.default_rng(seed)
    return LabelRaster(rng.integers(0, k, size=(w, h)), k)


class TestTypes:
    def test_multiband_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            MultiBandRaster(np.full((1, 2, 2), 1.5))
        with pytest.raises(ValueError):
            MultiBandRaster(np.full((1, 2, 2), -0.1))

    def test_multiband_dims(self):
        img = MultiBandRaster(np.zeros((5, 3, 7), dtype=np.float32))
        assert (img.bands, img.width, img.height) == (5, 3, 7)

    def test_labels_reject_out_of_range(self):
        with pytest.raises(ValueError):
            LabelRaster(np.array([[0, 4]]), num_classes=4)
        with pytest.raises(ValueError):
            LabelRaster(np.array([[-1, 0]]), num_classes=4)

    def test_mask_rejects_non_binary(self):
        with pytest.raises(ValueError):
            AcquisitionMask(np.array([[0, 2]]))

    def test_region_validation(self):
        with pytest.raises(ValueError):
            Region(0, 0, 0, 0, 3)
        with pytest.raises(ValueError):
            Region(0, -1, 0, 2, 2)


class TestCrop:
    def test_full_extent_crop_is_identity(self):
        lab = make_labels()
        out = crop_labels(lab, Region(0, 0, 0, lab.width, lab.height))
        assert np.array_equal(out.labels, lab.labels)
        assert out.num_classes == lab.num_classes

    def test_single_pixel_crop(self):
        lab = make_labels()
        out = crop_labels(lab, Region(0, 2, 3, 1, 1))
        assert out.labels.shape == (1, 1)
        assert out.labels[0, 0] == lab.labels[2, 3]

    def test_out_of_bounds_raises(self):
        lab = make_labels(4, 4)
        with pytest.raises(BoundsError):
            crop_labels(lab, Region(0, 2, 2, 3, 1))
        with pytest.raises(BoundsError):
            crop_mask(AcquisitionMask.all_ones(4, 4), Region(0, 0, 3, 1, 2))

    def test_crop_mask_all_ones(self):
        out = crop_mask(AcquisitionMask.all_ones(8, 8), Region(0, 1, 2, 3, 4))
        assert out.bits.shape == (3, 4)
        assert np.all(out.bits == 1)

    def test_crop_returns_copy(self):
        lab = make_labels()
        out = crop_labels(lab, Region(0, 0, 0, 2, 2))
        out.labels[0, 0] = (out.labels[0, 0] + 1) % lab.num_classes
        assert not np.array_equal(out.labels, lab.labels[:2, :2])

    def test_crop_then_paste_is_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            w, h = rng.integers(2, 10, size=2)
            lab = LabelRaster(rng.integers(0, 4, size=(w, h)), 4)
            rw = int(rng.integers(1, w + 1))
            rh = int(rng.integers(1, h + 1))
            r = Region(0, int(rng.integers(0, w - rw + 1)), int(rng.integers(0, h - rh + 1)), rw, rh)
            before = lab.labels.copy()
            paste_labels(lab, crop_labels(lab, r), r)
            assert np.array_equal(lab.labels, before)


class TestClassFrequencies:
    def test_all_one_class(self):
        lab = LabelRaster(np.zeros((2, 2), dtype=np.uint8), 4)
        assert np.array_equal(class_frequencies(lab), [1.0, 0.0, 0.0, 0.0])

    def test_uniform(self):
        lab = LabelRaster(np.array([[0, 1], [2, 3]]), 4)
        assert np.array_equal(class_frequencies(lab), [0.25, 0.25, 0.25, 0.25])

    def test_half_half(self):
        lab = LabelRaster(np.array([[0, 0, 1, 1]]), 4)
        assert np.array_equal(class_frequencies(lab), [0.5, 0.5, 0.0, 0.0])

    def test_sums_to_one(self):
        lab = make_labels(13, 9, seed=3)
        assert abs(class_frequencies(lab).sum() - 1.0) < 1e-12

    def test_permutation_equivariant(self):
        rng = np.random.default_rng(5)
        lab = make_labels(8, 8, seed=5)
        perm = rng.permutation(4)
        relabeled = LabelRaster(perm[lab.labels], 4)
        assert np.allclose(class_frequencies(relabeled)[perm], class_frequencies(lab))


class TestBras:
    def test_multiband_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = MultiBandRaster(rng.random((3, 5, 4), dtype=np.float32))
        write_bras(tmp_path / "x.bras", img)
        back = read_bras(tmp_path / "x.bras")
        assert isinstance(back, MultiBandRaster)
        assert np.array_equal(back.values, img.values)

    def test_labels_roundtrip(self, tmp_path):
        lab = make_labels(7, 3)
        write_bras(tmp_path / "l.bras", lab)
        back = read_bras(tmp_path / "l.bras", num_classes=4)
        assert isinstance(back, LabelRaster)
        assert np.array_equal(back.labels, lab.labels)
        assert back.num_classes == 4

    def test_mask_roundtrip(self, tmp_path):
        mask = AcquisitionMask((np.arange(12).reshape(3, 4) % 2).astype(np.uint8))
        write_bras(tmp_path / "m.bras", mask)
        back = read_bras(tmp_path / "m.bras")
        assert isinstance(back, AcquisitionMask)
        assert np.array_equal(back.bits, mask.bits)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bras"
        write_bras(path, make_labels())
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(BrasFormatError):
            read_bras(path)

    def test_rejects_truncated_payload(self, tmp_path):
        path = tmp_path / "t.bras"
        write_bras(path, make_labels())
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(BrasFormatError):
            read_bras(path)

    def test_rejects_trailing_garbage(self, tmp_path):
        path = tmp_path / "g.bras"
        write_bras(path, make_labels())
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(BrasFormatError):
            read_bras(path)
