import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefixdiff.latents import (
    ChannelMask,
    LatentBatch,
    LatentSpec,
    apply_channel_mask,
    default_channel_grid,
    make_prefix_mask,
    sample_channel_count,
)


def spec_with(channels, grid=None, ratio=8):
    return LatentSpec(ratio, channels, tuple(grid) if grid else default_channel_grid(channels))


class TestLatentSpec:
    def test_default_grid_for_16_channels(self):
        assert default_channel_grid(16) == (4, 6, 8, 10, 12, 14, 16)

    def test_grid_must_end_at_channel_count(self):
        with pytest.raises(ValueError, match="end at channels"):
            LatentSpec(8, 16, (4, 8))

    def test_grid_must_be_strictly_increasing(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            LatentSpec(8, 16, (4, 4, 16))

    def test_grid_entries_must_be_positive_and_bounded(self):
        with pytest.raises(ValueError):
            LatentSpec(8, 16, (0, 16))
        with pytest.raises(ValueError):
            LatentSpec(8, 16, (4, 32))

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            LatentSpec(8, 16, ())

    def test_bad_scalars_rejected(self):
        with pytest.raises(ValueError):
            LatentSpec(0, 16, (16,))
        with pytest.raises(ValueError):
            LatentSpec(8, 0, (16,))


class TestMakePrefixMask:
    def test_half_mask_of_four(self):
        mask = make_prefix_mask(4, 2)
        assert mask.bits.tolist() == [1.0, 1.0, 0.0, 0.0]

    def test_full_mask(self):
        mask = make_prefix_mask(4, 4)
        assert mask.bits.tolist() == [1.0, 1.0, 1.0, 1.0]
        assert mask.is_full

    def test_large_mask_popcount(self):
        mask = make_prefix_mask(128, 16)
        assert int(mask.bits.sum()) == 16
        assert mask.bits[:16].all() and not mask.bits[16:].any()

    @given(st.integers(1, 64))
    def test_popcount_matches_active_count(self, channels):
        for active in range(1, channels + 1):
            assert int(make_prefix_mask(channels, active).bits.sum()) == active

    def test_out_of_range_active_rejected(self):
        with pytest.raises(ValueError):
            make_prefix_mask(4, 5)
        with pytest.raises(ValueError):
            make_prefix_mask(4, 0)
        with pytest.raises(ValueError):
            make_prefix_mask(4, -1)

    def test_scattered_bits_rejected_by_construction(self):
        bits = np.array([1.0, 0.0, 1.0, 0.0], dtype=np.float32)
        with pytest.raises(ValueError, match="prefix"):
            ChannelMask(channels=4, active=2, bits=bits)


class TestLatentBatch:
    def test_channel_mismatch_rejected(self):
        spec = spec_with(16)
        with pytest.raises(ValueError, match="channel axis"):
            LatentBatch(np.zeros((1, 4, 4, 8), dtype=np.float32), spec)

    def test_non_finite_rejected(self):
        spec = spec_with(4, grid=[4])
        data = np.zeros((1, 2, 2, 4), dtype=np.float32)
        data[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            LatentBatch(data, spec)

    def test_rank_enforced(self):
        spec = spec_with(4, grid=[4])
        with pytest.raises(ValueError, match="rank 4"):
            LatentBatch(np.zeros((2, 2, 4), dtype=np.float32), spec)


class TestApplyChannelMask:
    def test_full_mask_is_identity(self):
        spec = spec_with(8, grid=[2, 8])
        z = LatentBatch(np.random.default_rng(0).normal(size=(3, 4, 4, 8)).astype(np.float32), spec)
        out = apply_channel_mask(z, make_prefix_mask(8, 8))
        np.testing.assert_array_equal(out.data, z.data)

    def test_two_channel_example(self):
        spec = spec_with(2, grid=[1, 2])
        z = LatentBatch(np.ones((1, 2, 2, 2), dtype=np.float32), spec)
        out = apply_channel_mask(z, make_prefix_mask(2, 1))
        assert (out.data[..., 0] == 1.0).all()
        assert (out.data[..., 1] == 0.0).all()

    def test_elementwise_oracle_c8_active3(self):
        spec = spec_with(8, grid=[3, 8])
        rng = np.random.default_rng(42)
        z = LatentBatch(rng.normal(size=(2, 3, 5, 8)).astype(np.float32), spec)
        mask = make_prefix_mask(8, 3)
        out = apply_channel_mask(z, mask)
        # Scalar-loop oracle.
        for n in range(2):
            for i in range(3):
                for j in range(5):
                    for ch in range(8):
                        expected = z.data[n, i, j, ch] if ch < 3 else 0.0
                        assert out.data[n, i, j, ch] == expected
        assert np.linalg.norm(out.data[..., 3:]) == 0.0
        np.testing.assert_array_equal(out.data[..., :3], z.data[..., :3])

    def test_channel_count_mismatch_rejected(self):
        spec = spec_with(8, grid=[8])
        z = LatentBatch(np.zeros((1, 2, 2, 8), dtype=np.float32), spec)
        with pytest.raises(ValueError, match="channels"):
            apply_channel_mask(z, make_prefix_mask(4, 2))

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_idempotent_and_prefix_chain(self, a, b, seed):
        spec = spec_with(8, grid=[8])
        rng = np.random.default_rng(seed)
        z = LatentBatch(rng.normal(size=(2, 2, 2, 8)).astype(np.float32), spec)
        mask_a, mask_b = make_prefix_mask(8, a), make_prefix_mask(8, b)
        once = apply_channel_mask(z, mask_a)
        twice = apply_channel_mask(once, mask_a)
        np.testing.assert_array_equal(once.data, twice.data)
        # Prefix masks form a chain: the smaller prefix wins under composition.
        small, large = (mask_a, mask_b) if a <= b else (mask_b, mask_a)
        composed = apply_channel_mask(apply_channel_mask(z, small), large)
        np.testing.assert_array_equal(composed.data, apply_channel_mask(z, small).data)


class TestSampleChannelCount:
    def test_values_come_from_grid(self):
        grid = tuple(range(16, 129, 4))
        spec = LatentSpec(32, 128, grid)
        rng = np.random.default_rng(0)
        draws = {sample_channel_count(spec, rng) for _ in range(500)}
        assert draws <= set(grid)
        assert 16 in draws and 128 in draws

    def test_single_entry_grid_is_constant(self):
        spec = spec_with(16, grid=[16])
        rng = np.random.default_rng(1)
        assert all(sample_channel_count(spec, rng) == 16 for _ in range(20))

    def test_two_entry_grid_frequency(self):
        # Uniform sampling: frequency of each entry concentrates at 1/2.
        spec = spec_with(8, grid=[4, 8])
        rng = np.random.default_rng(7)
        draws = np.array([sample_channel_count(spec, rng) for _ in range(10_000)])
        freq4 = float((draws == 4).mean())
        assert 0.48 <= freq4 <= 0.52

    def test_weighted_sampling(self):
        spec = spec_with(8, grid=[4, 8])
        rng = np.random.default_rng(3)
        assert all(sample_channel_count(spec, rng, weights=(1.0, 0.0)) == 4 for _ in range(20))

    def test_bad_weights_rejected(self):
        spec = spec_with(8, grid=[4, 8])
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            sample_channel_count(spec, rng, weights=(1.0,))
        with pytest.raises(ValueError):
            sample_channel_count(spec, rng, weights=(-1.0, 2.0))
