import time

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from prefixdiff.metrics import (
    FeatureExtractor,
    FrechetStats,
    extract_features,
    frechet_distance,
    measure_throughput,
    psnr,
    train_feature_extractor,
)


def random_stats(rng, d=6, n=64):
    feats = rng.normal(size=(n, d))
    return FrechetStats.from_features(feats)


class TestFrechetDistance:
    def test_self_distance_is_zero(self):
        rng = np.random.default_rng(0)
        a = random_stats(rng)
        assert frechet_distance(a, a) <= 1e-6

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = random_stats(rng), random_stats(rng)
        assert abs(frechet_distance(a, b) - frechet_distance(b, a)) <= 1e-8

    def test_equal_identity_covs_measure_mean_shift(self):
        d = 5
        v = np.arange(1.0, d + 1.0)
        a = FrechetStats(mean=np.zeros(d), cov=np.eye(d), n=100)
        b = FrechetStats(mean=v, cov=np.eye(d), n=100)
        assert frechet_distance(a, b) == pytest.approx(float(v @ v), rel=1e-9)

    def test_diagonal_closed_form(self):
        # Diagonal Gaussians: distance = ||mu_a-mu_b||^2 + sum_i (sqrt(s_a,i)-sqrt(s_b,i))^2,
        # recomputed here with an independent scalar loop.
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = int(rng.integers(2, 8))
            mu_a, mu_b = rng.normal(size=d), rng.normal(size=d)
            s_a, s_b = rng.uniform(0.1, 3.0, size=d), rng.uniform(0.1, 3.0, size=d)
            a = FrechetStats(mean=mu_a, cov=np.diag(s_a), n=100)
            b = FrechetStats(mean=mu_b, cov=np.diag(s_b), n=100)
            expected = 0.0
            for i in range(d):
                expected += (mu_a[i] - mu_b[i]) ** 2
                expected += (np.sqrt(s_a[i]) - np.sqrt(s_b[i])) ** 2
            assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-6)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(3)
        feats_a = rng.normal(size=(200, 8))
        feats_b = rng.normal(size=(200, 8)) * 1.4 + 0.3
        base = frechet_distance(FrechetStats.from_features(feats_a),
                                FrechetStats.from_features(feats_b))
        q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
        rotated = frechet_distance(FrechetStats.from_features(feats_a @ q),
                                   FrechetStats.from_features(feats_b @ q))
        assert rotated == pytest.approx(base, abs=1e-5)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError, match="dimension"):
            frechet_distance(random_stats(rng, d=4), random_stats(rng, d=5))

    def test_non_psd_rejected_with_eigenvalue_report(self):
        bad = np.eye(3)
        bad[0, 0] = -0.5
        with pytest.raises(ValueError, match="eigenvalue"):
            FrechetStats(mean=np.zeros(3), cov=bad, n=100)

    def test_low_sample_count_warns(self):
        rng = np.random.default_rng(5)
        feats = rng.normal(size=(4, 8))
        with pytest.warns(UserWarning, match="unstable"):
            FrechetStats.from_features(feats)

    def test_merge_equals_pooled_computation(self):
        rng = np.random.default_rng(6)
        f1, f2 = rng.normal(size=(60, 5)), rng.normal(size=(40, 5)) + 1.0
        merged = FrechetStats.from_features(f1).merge(FrechetStats.from_features(f2))
        pooled = FrechetStats.from_features(np.concatenate([f1, f2]))
        np.testing.assert_allclose(merged.mean, pooled.mean, atol=1e-12)
        np.testing.assert_allclose(merged.cov, pooled.cov, atol=1e-12)
        assert merged.n == pooled.n


class TestPsnr:
    def test_identical_images_hit_cap(self):
        x = np.random.default_rng(0).uniform(-1, 1, size=(3, 8, 8, 3))
        assert (psnr(x, x) == 99.0).all()

    def test_mse_equal_to_peak_squared_gives_zero_db(self):
        x = np.full((1, 4, 4, 3), -1.0)
        y = np.full((1, 4, 4, 3), 1.0)  # mse = 4 = peak^2
        assert psnr(x, y)[0] == pytest.approx(0.0, abs=1e-12)

    def test_known_value_20db(self):
        # mse 0.04 with peak 2 -> 10*log10(4/0.04) = 20 dB
        x = np.zeros((1, 10, 10, 1))
        y = np.full((1, 10, 10, 1), 0.2)
        assert psnr(x, y)[0] == pytest.approx(20.0, abs=1e-9)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 5, 3)))

    def test_monotone_decreasing_in_noise(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-0.5, 0.5, size=(2, 8, 8, 3))
        values = []
        for sigma in (0.01, 0.05, 0.1, 0.2):
            values.append(psnr(x, x + rng.normal(0, sigma, size=x.shape)).mean())
        assert all(b < a for a, b in zip(values, values[1:]))


class TestThroughput:
    def test_sleep_stub_rate(self):
        report = measure_throughput(lambda: time.sleep(0.01), warmup=2, measured=10,
                                    images_per_step=10)
        assert report.images_per_second == pytest.approx(1000.0, rel=0.2)

    def test_warmup_does_not_change_rate_for_constant_stub(self):
        r1 = measure_throughput(lambda: time.sleep(0.005), warmup=0, measured=8, images_per_step=4)
        r2 = measure_throughput(lambda: time.sleep(0.005), warmup=5, measured=8, images_per_step=4)
        assert r2.images_per_second == pytest.approx(r1.images_per_second, rel=0.25)

    def test_measured_must_be_positive(self):
        with pytest.raises(ValueError):
            measure_throughput(lambda: None, warmup=0, measured=0, images_per_step=1)

    def test_more_tokens_is_slower(self):
        # Same latent width, 4x the token count: throughput must drop.
        from prefixdiff.diffusion import DenoiserModel, DiffusionTrainer, vp_trig_schedule
        from prefixdiff.latents import LatentSpec

        spec = LatentSpec(8, 8, (8,))
        rates = {}
        for hw in (2, 4):
            model = DenoiserModel(spec, (hw, hw), n_classes=2, width=64, depth=2, heads=4)
            trainer = DiffusionTrainer(model, vp_trig_schedule(), augmented=False, seed=0)
            batch = torch.randn(16, hw, hw, 8, generator=torch.Generator().manual_seed(0))
            report = measure_throughput(
                lambda: trainer.step(batch), warmup=1, measured=5, images_per_step=16
            )
            rates[hw] = report.images_per_second
        assert rates[4] < rates[2]


@pytest.fixture(scope="module")
def trained():
    from prefixdiff.data import SyntheticShapesSpec, generate_shapes_dataset

    ds = generate_shapes_dataset(SyntheticShapesSpec(
        image_size=16, size=256, seed=3, objects_min=1, objects_max=1,
        texture_amplitude=0.1))
    net = train_feature_extractor(ds.images, ds.labels, ds.n_classes,
                                  width=8, steps=60, batch_size=32, seed=0)
    return net, ds


class TestFeatureExtractor:

    def test_features_deterministic_and_shaped(self, trained):
        net, ds = trained
        f1 = extract_features(net, ds.images[:10])
        f2 = extract_features(net, ds.images[:10])
        assert f1.shape == (10, net.feature_dim)
        np.testing.assert_array_equal(f1, f2)

    def test_identical_images_identical_rows(self, trained):
        net, ds = trained
        batch = np.repeat(ds.images[:1], 4, axis=0)
        feats = extract_features(net, batch)
        assert np.ptp(feats, axis=0).max() == 0.0

    def test_frozen_hash_stable(self, trained):
        net, _ = trained
        assert net.frozen
        assert net.param_hash() == net.param_hash()

    def test_spatial_permutation_changes_features(self, trained):
        net, ds = trained
        image = ds.images[:4]
        rng = np.random.default_rng(0)
        perm = rng.permutation(image.shape[1])
        shuffled = image[:, perm, :, :]
        base = extract_features(net, image)
        moved = extract_features(net, shuffled)
        assert np.abs(base - moved).max() > 1e-4

    def test_feature_dim_floor(self):
        with pytest.raises(ValueError, match=">= 16"):
            FeatureExtractor(n_classes=3, width=4)

    def test_unfrozen_extraction_rejected(self):
        net = FeatureExtractor(n_classes=3, width=8)
        with pytest.raises(ValueError, match="frozen"):
            extract_features(net, np.zeros((1, 16, 16, 3), dtype=np.float32))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_frechet_nonnegative_property(seed):
    rng = np.random.default_rng(seed)
    a = random_stats(rng, d=4, n=32)
    b = random_stats(rng, d=4, n=32)
    assert frechet_distance(a, b) >= 0.0
