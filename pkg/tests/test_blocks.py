import numpy as np
import pytest

from dannet.blocks import (
    clagm,
    dual_pool_attention,
    make_clagm,
    make_dual_pool,
    make_mst,
    mst_block,
)
from dannet.tensor import Tensor

from oracles import clagm_ref, dual_pool_ref, mst_ref


def rand_input(shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return Tensor((rng.standard_normal(shape) * scale).astype(np.float32))


def zero_params(params):
    from dannet.blocks import iter_params

    for _, t in iter_params(params, ""):
        t.data[...] = 0.0


class TestDualPoolAttention:
    def test_zero_weights_quarter_the_input(self):
        rng = np.random.default_rng(0)
        p = make_dual_pool(rng, 8)
        zero_params(p)
        x = rand_input((1, 8, 4, 4), seed=1)
        out = dual_pool_attention(x, p)
        np.testing.assert_allclose(out.data, x.data * 0.25, rtol=1e-6)

    def test_output_bounded_by_input(self):
        rng = np.random.default_rng(2)
        p = make_dual_pool(rng, 8)
        x = rand_input((2, 8, 8, 8), seed=3)
        out = dual_pool_attention(x, p)
        assert (np.abs(out.data) <= np.abs(x.data) + 1e-7).all()

    def test_matches_straight_line_oracle(self):
        rng = np.random.default_rng(4)
        p = make_dual_pool(rng, 4)
        x = rand_input((1, 4, 8, 8), seed=5)
        out = dual_pool_attention(x, p)
        assert np.abs(out.data - dual_pool_ref(x.data, p)).max() <= 1e-5

    @pytest.mark.parametrize("variant", ["ca_only", "pa_only"])
    def test_single_gate_variants(self, variant):
        rng = np.random.default_rng(6)
        p = make_dual_pool(rng, 8, variant=variant)
        x = rand_input((1, 8, 4, 4), seed=7)
        out = dual_pool_attention(x, p)
        assert out.data.shape == x.data.shape
        assert np.abs(out.data - dual_pool_ref(x.data, p)).max() <= 1e-5

    def test_rejects_bad_reduction(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ValueError):
            make_dual_pool(rng, 6, reduction=4)
        p = make_dual_pool(rng, 8, reduction=4)
        with pytest.raises(ValueError):
            dual_pool_attention(rand_input((1, 6, 4, 4)), p)

    def test_preserves_shape(self):
        rng = np.random.default_rng(9)
        p = make_dual_pool(rng, 16)
        x = rand_input((2, 16, 8, 8), seed=10)
        assert dual_pool_attention(x, p).data.shape == x.data.shape


class TestMstBlock:
    def test_zeroed_weights_is_identity(self):
        rng = np.random.default_rng(0)
        p = make_mst(rng, 4, "full")
        zero_params(p)
        x = rand_input((1, 4, 8, 8), seed=1)
        np.testing.assert_array_equal(mst_block(x, p).data, x.data)

    def test_vc_zeroed_weights_is_identity(self):
        rng = np.random.default_rng(2)
        p = make_mst(rng, 4, "vc")
        zero_params(p)
        x = rand_input((1, 4, 8, 8), seed=3)
        np.testing.assert_array_equal(mst_block(x, p).data, x.data)

    def test_full_matches_compositional_oracle(self):
        rng = np.random.default_rng(4)
        p = make_mst(rng, 4, "full")
        x = rand_input((1, 4, 8, 8), seed=5, scale=0.5)
        out = mst_block(x, p)
        assert np.abs(out.data - mst_ref(x.data, p)).max() <= 1e-5

    @pytest.mark.parametrize("variant", ["full", "vc", "local_only", "global_only", "no_spectral"])
    def test_all_variants_preserve_shape(self, variant):
        rng = np.random.default_rng(6)
        p = make_mst(rng, 8, variant)
        x = rand_input((2, 8, 8, 8), seed=7)
        assert mst_block(x, p).data.shape == x.data.shape

    def test_rejects_odd_channels(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ValueError, match="even"):
            make_mst(rng, 5, "full")

    def test_rejects_non_power_of_two_dims(self):
        rng = np.random.default_rng(9)
        p = make_mst(rng, 4, "full")
        with pytest.raises(ValueError, match="power"):
            mst_block(rand_input((1, 4, 6, 8)), p)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError, match="variant"):
            make_mst(np.random.default_rng(0), 4, "bogus")


class TestClagm:
    def test_zero_map_weights_halve_the_gated_copy(self):
        rng = np.random.default_rng(0)
        channels = 4
        p = make_clagm(rng, channels)
        zero_params(p)
        # merge picks the gated slot: with a 0.5 gate the output is x / 2
        for c in range(channels):
            p.merge.weight.data[c, channels + c, 1, 1] = 1.0
        x = rand_input((1, channels, 8, 8), seed=1)
        guide = rand_input((1, 3, 8, 8), seed=2)
        out = clagm(x, guide, p)
        np.testing.assert_allclose(out.data, x.data * 0.5, rtol=1e-5, atol=1e-7)

    def test_merge_identity_on_feature_slot(self):
        rng = np.random.default_rng(3)
        channels = 4
        p = make_clagm(rng, channels)
        p.merge.weight.data[...] = 0.0
        p.merge.bias.data[...] = 0.0
        for c in range(channels):
            p.merge.weight.data[c, c, 1, 1] = 1.0
        x = rand_input((1, channels, 8, 8), seed=4)
        guide = rand_input((1, 3, 8, 8), seed=5)
        out = clagm(x, guide, p)
        np.testing.assert_allclose(out.data, x.data, rtol=1e-5, atol=1e-6)

    def test_matches_straight_line_oracle(self):
        rng = np.random.default_rng(6)
        p = make_clagm(rng, 4)
        x = rand_input((1, 4, 8, 8), seed=7, scale=0.5)
        guide = rand_input((1, 3, 8, 8), seed=8, scale=0.5)
        out = clagm(x, guide, p)
        assert np.abs(out.data - clagm_ref(x.data, guide.data, p)).max() <= 1e-5

    def test_spatial_mismatch_rejected(self):
        rng = np.random.default_rng(9)
        p = make_clagm(rng, 4)
        with pytest.raises(ValueError, match="spatial"):
            clagm(rand_input((1, 4, 8, 8)), rand_input((1, 3, 4, 4)), p)

    def test_preserves_shape(self):
        rng = np.random.default_rng(10)
        p = make_clagm(rng, 8)
        x = rand_input((2, 8, 16, 16), seed=11)
        guide = rand_input((2, 3, 16, 16), seed=12)
        assert clagm(x, guide, p).data.shape == x.data.shape
