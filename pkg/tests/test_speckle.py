"""Speckle sampling statistics and patch dataset construction."""

import numpy as np
import pytest

import specklelab as sl
from specklelab.errors import ConfigError, EmptyCorpusError, FormatError, ShapeError
from specklelab.speckle import DATASET_MAGIC


class TestSampleSpeckle:
    def test_exponential_mean_for_single_look(self):
        field = sl.sample_speckle(1000, 1000, 1.0, sl.Rng(1))
        assert 0.997 <= field.mean() <= 1.003  # 3-sigma CLT band

    def test_variance_quarter_for_four_looks(self):
        field = sl.sample_speckle(1000, 1000, 4.0, sl.Rng(2))
        assert 0.2455 <= field.var() <= 0.2545

    def test_strictly_positive(self):
        for L in (1.0, 2.0, 7.5):
            field = sl.sample_speckle(64, 64, L, sl.Rng(3))
            assert np.all(field > 0)

    def test_real_valued_looks_accepted(self):
        field = sl.sample_speckle(200, 200, 2.5, sl.Rng(4))
        assert abs(field.var() - 0.4) < 0.03

    def test_looks_below_one_rejected(self):
        with pytest.raises(ConfigError):
            sl.sample_speckle(4, 4, 0.5, sl.Rng(0))

    def test_bad_dimensions_rejected(self):
        with pytest.raises(ConfigError):
            sl.sample_speckle(0, 4, 1.0, sl.Rng(0))

    def test_consumes_one_parent_draw(self):
        a = sl.Rng(9)
        b = sl.Rng(9)
        sl.sample_speckle(32, 32, 1.0, a)
        b.u64()
        assert a.u64() == b.u64()

    def test_reproducible(self):
        f1 = sl.sample_speckle(16, 16, 4.0, sl.Rng(5))
        f2 = sl.sample_speckle(16, 16, 4.0, sl.Rng(5))
        np.testing.assert_array_equal(f1, f2)


class TestCorrupt:
    def test_unit_speckle_is_identity(self):
        x = np.random.default_rng(0).uniform(0, 1, (5, 5))
        np.testing.assert_array_equal(sl.corrupt(x, np.ones((5, 5))), x)

    def test_zero_clean_gives_zero(self):
        assert not sl.corrupt(np.zeros((3, 3)), np.full((3, 3), 2.0)).any()

    def test_scalar_product(self):
        out = sl.corrupt(np.array([[2.0]]), np.array([[0.5]]))
        assert out[0, 0] == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            sl.corrupt(np.ones((2, 2)), np.ones((3, 3)))

    def test_ratio_recovers_speckle(self):
        rng = sl.Rng(10)
        clean = np.random.default_rng(1).uniform(0.1, 1.0, (32, 32))
        field = sl.sample_speckle(32, 32, 2.0, rng)
        noisy = sl.corrupt(clean, field)
        np.testing.assert_allclose(noisy / clean, field, rtol=1e-12)


class TestHomogeneousScene:
    def test_zero_value(self):
        _, noisy = sl.make_homogeneous_scene(0.0, 16, 16, 1.0, sl.Rng(0))
        assert not noisy.any()

    def test_mean_scales_linearly(self):
        _, noisy = sl.make_homogeneous_scene(10.0, 256, 256, 4.0, sl.Rng(1))
        assert abs(noisy.mean() - 10.0) < 0.1

    def test_enl_matches_looks(self):
        clean, noisy = sl.make_homogeneous_scene(1.0, 256, 256, 4.0, sl.Rng(2))
        full = np.ones_like(clean, dtype=bool)
        assert 3.8 <= sl.enl(noisy, full) <= 4.2


class TestBuildPatchDataset:
    def test_empty_count(self, corpus):
        ds = sl.build_patch_dataset(corpus, 0, 17, 1.0, sl.Rng(0))
        assert len(ds) == 0

    def test_single_crop_position(self):
        img = np.random.default_rng(0).uniform(0.2, 1.0, (65, 65))
        ds = sl.build_patch_dataset([img], 3, 65, 1.0, sl.Rng(7))
        assert len(ds) == 3
        np.testing.assert_array_equal(ds.clean[0], img)
        np.testing.assert_array_equal(ds.clean[1], img)
        assert not np.array_equal(ds.speckle[0], ds.speckle[1])

    def test_noisy_is_elementwise_product(self, corpus):
        ds = sl.build_patch_dataset(corpus, 16, 21, 2.0, sl.Rng(3))
        np.testing.assert_allclose(ds.noisy, ds.clean * ds.speckle, rtol=1e-12)
        assert np.all(ds.noisy >= 0)

    def test_reproducible_bitwise(self, corpus):
        d1 = sl.build_patch_dataset(corpus, 25, 17, 1.0, sl.Rng(42))
        d2 = sl.build_patch_dataset(corpus, 25, 17, 1.0, sl.Rng(42))
        np.testing.assert_array_equal(d1.clean, d2.clean)
        np.testing.assert_array_equal(d1.speckle, d2.speckle)
        np.testing.assert_array_equal(d1.source_indices, d2.source_indices)

    def test_small_images_skipped_with_warning(self):
        big = np.random.default_rng(0).uniform(0.2, 1.0, (40, 40))
        with pytest.warns(UserWarning):
            ds = sl.build_patch_dataset([np.ones((4, 4)), big], 5, 20, 1.0, sl.Rng(0))
        assert np.all(ds.source_indices == 0)  # only the big image is usable

    def test_empty_corpus_error(self):
        with pytest.warns(UserWarning):
            with pytest.raises(EmptyCorpusError):
                sl.build_patch_dataset([np.ones((4, 4))], 5, 20, 1.0, sl.Rng(0))

    def test_negative_source_rejected(self):
        with pytest.raises(ConfigError):
            sl.build_patch_dataset([np.full((30, 30), -1.0)], 2, 10, 1.0, sl.Rng(0))

    def test_full_scale_training_set_count(self, corpus):
        # the full-scale setup uses 30000 training patches; small patches here
        # keep the check light while exercising the count path at full scale
        ds = sl.build_patch_dataset(corpus, 30000, 9, 1.0, sl.Rng(30))
        assert len(ds) == 30000
        assert ds.noisy.shape == (30000, 9, 9)


class TestDatasetFile:
    def test_round_trip_preserves_payload(self, corpus, tmp_path):
        ds = sl.build_patch_dataset(corpus, 12, 19, 3.0, sl.Rng(21))
        path = tmp_path / "d.dat"
        sl.save_dataset(ds, path)
        loaded = sl.load_dataset(path)
        assert len(loaded) == 12
        assert loaded.patch_size == 19
        assert loaded.looks == 3.0
        assert loaded.seed == 21
        np.testing.assert_allclose(loaded.clean, ds.clean, atol=1e-7)
        np.testing.assert_allclose(loaded.noisy, loaded.clean * loaded.speckle, rtol=1e-12)

    def test_second_save_is_byte_identical(self, corpus, tmp_path):
        ds = sl.build_patch_dataset(corpus, 6, 17, 1.0, sl.Rng(2))
        p1, p2 = tmp_path / "a.dat", tmp_path / "b.dat"
        sl.save_dataset(ds, p1)
        sl.save_dataset(sl.load_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dat"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 20)
        with pytest.raises(FormatError, match="magic"):
            sl.load_dataset(path)

    def test_truncated_payload(self, corpus, tmp_path):
        ds = sl.build_patch_dataset(corpus, 4, 9, 1.0, sl.Rng(1))
        path = tmp_path / "t.dat"
        sl.save_dataset(ds, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(FormatError, match="offset"):
            sl.load_dataset(path)

    def test_magic_constant(self):
        assert DATASET_MAGIC == b"DSPKDAT1"


class TestSyntheticScene:
    def test_range_and_determinism(self):
        img1 = sl.synthetic_clean_image(64, 96, sl.Rng(5))
        img2 = sl.synthetic_clean_image(64, 96, sl.Rng(5))
        assert img1.shape == (64, 96)
        assert img1.min() >= 0.0 and img1.max() <= 1.0
        np.testing.assert_array_equal(img1, img2)

    def test_contains_flat_regions(self):
        img = sl.synthetic_clean_image(128, 128, sl.Rng(8))
        masks = sl.homogeneous_masks_from_clean(img)
        assert masks, "synthetic scenes should contain derivable homogeneous regions"
