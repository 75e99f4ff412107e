import numpy as np
import pytest

from alref.synthdata import SceneSpec, draw_class_means, generate_pool, generate_scene


class TestGenerateScene:
    def test_deterministic(self):
        spec = SceneSpec(seed=42, width=48, height=32)
        img1, lab1 = generate_scene(spec)
        img2, lab2 = generate_scene(spec)
        assert np.array_equal(img1.values, img2.values)
        assert np.array_equal(lab1.labels, lab2.labels)

    def test_noise_free_pixels_hit_class_means_exactly(self):
        spec = SceneSpec(seed=9, width=32, height=32, noise_sigma=0.0, small_object_rate=0.0)
        rng = np.random.default_rng(spec.seed)
        means = draw_class_means(rng, spec.num_classes, spec.bands, spec.noise_sigma)
        img, lab = generate_scene(spec, class_means=means)
        expected = np.clip(np.moveaxis(means[lab.labels], -1, 0), 0.0, 1.0).astype(np.float32)
        assert np.array_equal(img.values, expected)

    def test_every_class_occupies_a_pixel(self):
        # checked over 100 seeds before freezing the site-placement scheme
        for seed in range(100):
            _, lab = generate_scene(SceneSpec(seed=seed, width=64, height=64, num_classes=4))
            assert len(np.unique(lab.labels)) == 4, f"seed {seed} lost a class"

    def test_values_and_labels_in_range(self):
        img, lab = generate_scene(SceneSpec(seed=5, width=40, height=40, noise_sigma=0.2))
        assert img.values.min() >= 0.0 and img.values.max() <= 1.0
        assert lab.labels.min() >= 0 and lab.labels.max() < 4

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SceneSpec(seed=0, noise_sigma=-0.1)
        with pytest.raises(ValueError):
            SceneSpec(seed=0, small_object_rate=1.5)
        with pytest.raises(ValueError):
            SceneSpec(seed=0, blob_count=0)


class TestClassMeans:
    def test_pairwise_separation(self):
        for seed in range(30):
            rng = np.random.default_rng(seed)
            means = draw_class_means(rng, 4, 5, noise_sigma=0.05)
            for a in range(4):
                for b in range(a + 1, 4):
                    assert np.abs(means[a] - means[b]).max() >= 0.1

    def test_similar_pair_close_outside_one_band(self):
        rng = np.random.default_rng(1)
        sigma = 0.05
        means = draw_class_means(rng, 4, 5, noise_sigma=sigma)
        diffs = np.abs(means[0] - means[1])
        assert (diffs <= 0.5 * sigma + 1e-12).sum() >= 4  # all but one band


class TestGeneratePool:
    def test_count_and_shape(self):
        pool = generate_pool(7, 6, SceneSpec(seed=0, width=64, height=48))
        assert len(pool) == 6
        for img, lab in pool:
            assert (img.width, img.height) == (64, 48)
            assert (lab.width, lab.height) == (64, 48)

    def test_same_seed_identical(self):
        template = SceneSpec(seed=0, width=32, height=32)
        a = generate_pool(3, 3, template)
        b = generate_pool(3, 3, template)
        for (ia, la), (ib, lb) in zip(a, b):
            assert np.array_equal(ia.values, ib.values)
            assert np.array_equal(la.labels, lb.labels)

    def test_different_seeds_differ(self):
        template = SceneSpec(seed=0, width=32, height=32)
        a = generate_pool(3, 3, template)
        b = generate_pool(4, 3, template)
        assert any(not np.array_equal(la.labels, lb.labels)
                   for (_, la), (_, lb) in zip(a, b))

    def test_shared_class_means_across_pool(self):
        # noise-free pool: each class must look identical in every image
        template = SceneSpec(seed=0, width=48, height=48, noise_sigma=0.0,
                             small_object_rate=0.0)
        pool = generate_pool(11, 3, template)
        palette = {}
        for img, lab in pool:
            for c in np.unique(lab.labels):
                where = lab.labels == c
                spectrum = tuple(img.values[:, where][:, 0].tolist())
                palette.setdefault(int(c), set()).add(spectrum)
        assert all(len(spectra) == 1 for spectra in palette.values())

    def test_rejects_single_image(self):
        with pytest.raises(ValueError):
            generate_pool(0, 1, SceneSpec(seed=0))
