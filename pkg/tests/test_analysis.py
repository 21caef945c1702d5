import numpy as np
import pytest

from prefixdiff.analysis import (
    ChannelStats,
    PrefixCurve,
    PrefixCurvePoint,
    channel_average_map,
    per_channel_stats,
    prefix_reconstruction_curve,
    render_channel_maps,
    render_image_grid,
    structure_separation_score,
)
from prefixdiff.autoencoder import masked_reconstruction_error
from prefixdiff.latents import LatentBatch, LatentSpec


def batch(data, channels, ratio=4, grid=None):
    spec = LatentSpec(ratio, channels, tuple(grid) if grid else (channels,))
    return LatentBatch(np.asarray(data, dtype=np.float64), spec)


def make_stats(fractions, h=4, w=4):
    c = len(fractions)
    return ChannelStats(
        mean=np.zeros(c), variance=np.ones(c), energy=np.ones(c),
        low_freq_fraction=np.asarray(fractions, dtype=np.float64),
        n_samples=10, height=h, width=w, cutoff=min(h, w) / 4,
    )


class TestChannelAverageMap:
    def test_two_channel_mean(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 4))
        z = batch(np.stack([a, b], axis=-1), channels=2)
        np.testing.assert_allclose(channel_average_map(z), (a + b) / 2)

    def test_constant_latent(self):
        z = batch(np.full((1, 4, 4, 8), 3.25), channels=8)
        np.testing.assert_array_equal(channel_average_map(z), np.full((1, 4, 4), 3.25))

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        z = batch(rng.normal(size=(2, 3, 3, 8)), channels=8)
        maps = channel_average_map(z)
        for n in range(2):
            for i in range(3):
                for j in range(3):
                    expected = sum(z.data[n, i, j, ch] for ch in range(8)) / 8
                    assert maps[n, i, j] == pytest.approx(expected, rel=1e-12)

    def test_commutes_with_batching(self):
        rng = np.random.default_rng(2)
        data = rng.normal(size=(4, 4, 4, 8))
        z = batch(data, channels=8)
        whole = channel_average_map(z)
        stacked = np.stack([channel_average_map(batch(data[i : i + 1], channels=8))[0]
                            for i in range(4)])
        np.testing.assert_array_equal(whole, stacked)


class TestPerChannelStats:
    def test_all_zero_latents(self):
        z = batch(np.zeros((3, 4, 4, 5)), channels=5)
        stats = per_channel_stats(z)
        np.testing.assert_array_equal(stats.mean, np.zeros(5))
        np.testing.assert_array_equal(stats.variance, np.zeros(5))
        np.testing.assert_array_equal(stats.low_freq_fraction, np.ones(5))

    def test_checkerboard_closed_form(self):
        # Constant 2 plus checkerboard of amplitude 1: spectral energy sits at
        # DC and Nyquist only, so the low band holds 4/(4+1) of the energy.
        h = w = 8
        yy, xx = np.mgrid[0:h, 0:w]
        checker = (-1.0) ** (xx + yy)
        z = batch((2.0 + checker)[None, :, :, None], channels=1)
        stats = per_channel_stats(z)
        assert stats.low_freq_fraction[0] == pytest.approx(4.0 / 5.0, rel=1e-12)
        assert stats.mean[0] == pytest.approx(2.0, rel=1e-12)
        assert stats.variance[0] == pytest.approx(1.0, rel=1e-12)
        assert stats.energy[0] == pytest.approx(5.0, rel=1e-12)

    def test_energy_is_variance_plus_mean_squared(self):
        rng = np.random.default_rng(0)
        stats = per_channel_stats(batch(rng.normal(1.5, 2.0, size=(6, 4, 4, 3)), channels=3))
        np.testing.assert_allclose(stats.energy, stats.variance + stats.mean**2, rtol=1e-12)

    def test_order_invariance(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(10, 4, 4, 4))
        a = per_channel_stats(batch(data, channels=4))
        b = per_channel_stats(batch(data[::-1].copy(), channels=4))
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
        np.testing.assert_allclose(a.low_freq_fraction, b.low_freq_fraction, atol=1e-12)

    def test_parseval_bookkeeping(self):
        # Spectral totals must equal h*w times the spatial energy sums.
        rng = np.random.default_rng(2)
        data = rng.normal(size=(5, 4, 6, 3))
        stats = per_channel_stats(batch(data, channels=3))
        spatial_energy_sum = (data.astype(np.float64) ** 2).sum(axis=(0, 1, 2))
        np.testing.assert_allclose(stats.spectral_total, 4 * 6 * spatial_energy_sum, rtol=1e-9)
        total_energy = stats.energy.sum()
        mean_sq = (data**2).mean(axis=(0, 1, 2)).sum()
        assert total_energy == pytest.approx(mean_sq, rel=1e-6)

    def test_merge_matches_single_pass(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(8, 4, 4, 3))
        whole = per_channel_stats(batch(data, channels=3))
        merged = per_channel_stats(batch(data[:3], channels=3)).merge(
            per_channel_stats(batch(data[3:], channels=3))
        )
        np.testing.assert_allclose(merged.mean, whole.mean, atol=1e-12)
        np.testing.assert_allclose(merged.variance, whole.variance, atol=1e-12)
        np.testing.assert_allclose(merged.low_freq_fraction, whole.low_freq_fraction, atol=1e-12)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            per_channel_stats([])

    def test_mixed_geometry_rejected(self):
        z1 = batch(np.zeros((1, 4, 4, 2)), channels=2)
        z2 = batch(np.zeros((1, 8, 8, 2)), channels=2, ratio=4)
        with pytest.raises(ValueError, match="geometry"):
            per_channel_stats([z1, z2])


class TestSeparationScore:
    def test_uniform_fractions_score_zero(self):
        assert structure_separation_score(make_stats([0.6] * 8), 0.25) == 0.0

    def test_extreme_separation(self):
        stats = make_stats([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        assert structure_separation_score(stats, 0.25) == pytest.approx(1.0)

    def test_antisymmetric_under_channel_reversal(self):
        rng = np.random.default_rng(0)
        fractions = rng.uniform(0, 1, size=8)
        forward = structure_separation_score(make_stats(fractions), 0.5)
        backward = structure_separation_score(make_stats(fractions[::-1]), 0.5)
        assert forward == pytest.approx(-backward, abs=1e-12)

    def test_prefix_fraction_domain(self):
        stats = make_stats([0.5] * 8)
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                structure_separation_score(stats, bad)

    def test_no_suffix_left_rejected(self):
        with pytest.raises(ValueError, match="suffix"):
            structure_separation_score(make_stats([0.5] * 2), 0.9)

    def test_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            score = structure_separation_score(make_stats(rng.uniform(0, 1, 8)), 0.25)
            assert -1.0 <= score <= 1.0


class TestPrefixCurve:
    def test_points_must_be_sorted(self):
        with pytest.raises(ValueError, match="sorted"):
            PrefixCurve(points=[PrefixCurvePoint(8, 0.1, 10.0), PrefixCurvePoint(4, 0.2, 7.0)],
                        finetuned=False, finetune_steps=0)

    def test_full_channel_point_equals_full_reconstruction(self, tiny_trained_ae, shapes_small):
        _, train, heldout = shapes_small
        curve = prefix_reconstruction_curve(
            tiny_trained_ae, train.images, heldout.images, grid=(16,), finetune_steps=0
        )
        full = masked_reconstruction_error(tiny_trained_ae, heldout.images, 16)
        assert curve.points[0].mse == pytest.approx(full, rel=1e-9)
        assert not curve.finetuned

    def test_unfinetuned_curve_is_sorted_by_channels(self, tiny_trained_ae, shapes_small):
        _, train, heldout = shapes_small
        curve = prefix_reconstruction_curve(
            tiny_trained_ae, train.images, heldout.images, grid=(4, 10, 16), finetune_steps=0
        )
        assert [p.channel_count for p in curve.points] == [4, 10, 16]

    def test_grid_out_of_range_rejected(self, tiny_trained_ae, shapes_small):
        _, train, heldout = shapes_small
        with pytest.raises(ValueError, match="grid"):
            prefix_reconstruction_curve(
                tiny_trained_ae, train.images, heldout.images, grid=(4, 32), finetune_steps=0
            )


class TestRendering:
    def test_image_grid_shape(self):
        images = np.zeros((5, 8, 8, 3), dtype=np.float32)
        grid = render_image_grid(images, n_cols=3, pad=1)
        assert grid.dtype == np.uint8
        assert grid.shape == (2 * 9 + 1, 3 * 9 + 1, 3)

    def test_channel_maps_metadata_records_minmax(self):
        maps = np.stack([np.zeros((4, 4)), np.linspace(-2, 6, 16).reshape(4, 4)])
        grid, meta = render_channel_maps(maps, n_cols=2)
        assert grid.dtype == np.uint8
        assert meta[1]["min"] == pytest.approx(-2.0)
        assert meta[1]["max"] == pytest.approx(6.0)
        assert meta[0]["normalization"] == "minmax"
