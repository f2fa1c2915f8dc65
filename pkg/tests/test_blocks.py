import numpy as np
import pytest

from deflare import autodiff as ad
from deflare.autodiff import Tensor
from deflare.blocks import GroupConfig, Rssb, Rssg, Vssm
from deflare.errors import ConfigError
from deflare.scan import hier_scan, local_enhanced_ss2d


def make_vssm(rng, channels=4, variant="local", window=(4, 4), hier_levels=2):
    return Vssm(channels, 3, variant, window, hier_levels, rng)


class TestVssm:
    @pytest.mark.parametrize("variant,shape", [
        ("local", (6, 8, 4)), ("hierarchical", (8, 8, 4)), ("local", (5, 3, 4)),
    ])
    def test_shape_preserved(self, rng, variant, shape):
        v = make_vssm(rng, variant=variant)
        x = ad.Tensor(rng.normal(size=shape))
        assert v(x).shape == shape

    def test_dead_branches_give_constant_output(self, rng):
        v = make_vssm(rng)
        v.phi1_w.data[:] = 0.0
        v.phi1_b.data[:] = 0.0
        v.phi2_w.data[:] = 0.0
        v.phi2_b.data[:] = 0.0
        out = v(ad.Tensor(rng.normal(size=(5, 5, 4)))).data
        flat = out.reshape(-1, 4)
        assert np.allclose(flat, flat[0])

    def test_composition_matches_primitives(self, rng):
        # rebuild the module from the individually tested pieces
        v = make_vssm(rng, channels=4, window=(4, 4))
        x = ad.Tensor(rng.uniform(-1, 1, (8, 8, 4)))
        x1 = ad.layer_norm(x, v.ln1_g, v.ln1_b)
        t = ad.silu(ad.conv2d(x1, v.dw_w, v.dw_b))
        t = local_enhanced_ss2d(t, v.scan_params, (4, 4))
        xm = ad.linear(t, v.phi1_w, v.phi1_b)
        xs = ad.silu(ad.linear(x1, v.phi2_w, v.phi2_b))
        ref = ad.linear(ad.layer_norm(ad.add(xm, xs), v.ln2_g, v.ln2_b),
                        v.phi3_w, v.phi3_b)
        assert np.abs(v(x).data - ref.data).max() <= 1e-12

    def test_hierarchical_composition_matches(self, rng):
        v = make_vssm(rng, channels=2, variant="hierarchical", window=(2, 2))
        x = ad.Tensor(rng.uniform(-1, 1, (6, 6, 2)))
        x1 = ad.layer_norm(x, v.ln1_g, v.ln1_b)
        t = ad.silu(ad.conv2d(x1, v.dw_w, v.dw_b))
        t = hier_scan(t, v.scan_params, (2, 2))
        xm = ad.linear(t, v.phi1_w, v.phi1_b)
        xs = ad.silu(ad.linear(x1, v.phi2_w, v.phi2_b))
        ref = ad.linear(ad.layer_norm(ad.add(xm, xs), v.ln2_g, v.ln2_b),
                        v.phi3_w, v.phi3_b)
        assert np.abs(v(x).data - ref.data).max() <= 1e-12

    def test_raster_mode_uses_whole_grid_window(self, rng):
        v = make_vssm(rng)
        v.scan_mode = "raster"
        assert v._window_for(10, 7) == (10, 7)

    def test_rejects_unknown_variant(self, rng):
        with pytest.raises(ConfigError):
            Vssm(4, 3, "global", (4, 4), 2, rng)


class TestRssb:
    def test_residual_dominates_with_zero_weights(self, rng):
        blk = Rssb(4, 3, "local", (4, 4), 2, rng)
        for _, t in blk.named_params():
            t.data = np.zeros_like(t.data)
        x = rng.normal(size=(5, 5, 4))
        out = blk(ad.Tensor(x)).data
        # all-zero weights collapse every branch: pure residual
        assert np.allclose(out, x)

    def test_bias_only_offset_is_constant(self, rng):
        blk = Rssb(4, 3, "local", (4, 4), 2, rng)
        for name, t in blk.named_params():
            t.data = np.zeros_like(t.data)
        blk.mlp2_b.data = np.full(4, 0.25)
        x = rng.normal(size=(4, 4, 4))
        out = blk(ad.Tensor(x)).data
        assert np.allclose(out, x + 0.25)

    def test_shape_preserved(self, rng):
        blk = Rssb(2, 3, "hierarchical", (2, 2), 2, rng)
        assert blk(ad.Tensor(rng.normal(size=(6, 4, 2)))).shape == (6, 4, 2)

    def test_gradient_reaches_input(self, rng):
        blk = Rssb(2, 2, "local", (2, 2), 2, rng)
        x = Tensor(rng.uniform(-1, 1, (4, 4, 2)))
        err = ad.grad_check(lambda t: ad.tmean(ad.mul(blk(t), blk(t))), x, 1e-6)
        assert err <= 1e-4
        leaf = Tensor(x.data, requires_grad=True)
        ad.backward(ad.tsum(blk(leaf)))
        assert leaf.grad is not None and np.abs(leaf.grad).max() > 0


class TestRssg:
    def test_fresh_group_is_near_identity(self, rng):
        # refinement conv starts near zero: the residual dominates
        g = Rssg(GroupConfig(1, 1, "local", 3), 2, (4, 4), 2, rng)
        x = rng.normal(size=(4, 4, 3))
        assert np.abs(g(ad.Tensor(x)).data - x).max() < 0.2

    def test_zero_refinement_is_exact_identity(self, rng):
        g = Rssg(GroupConfig(1, 1, "local", 3), 2, (4, 4), 2, rng)
        g.conv_w.data = np.zeros_like(g.conv_w.data)
        g.conv_b.data = np.zeros_like(g.conv_b.data)
        x = rng.normal(size=(4, 4, 3))
        assert np.allclose(g(ad.Tensor(x)).data, x)

    def test_encoder_group_block_count(self, rng):
        g = Rssg(GroupConfig(2, 2, "local", 3), 2, (4, 4), 2, rng)
        assert g.block_variants() == ["local", "local"]

    def test_decoder_group_terminal_hierarchical(self, rng):
        g = Rssg(GroupConfig(2, 2, "hierarchical", 3), 2, (4, 4), 2, rng)
        assert g.block_variants() == ["local", "hierarchical"]
        g3 = Rssg(GroupConfig(3, 3, "hierarchical", 3), 2, (4, 4), 2, rng)
        assert g3.block_variants() == ["local", "local", "hierarchical"]

    def test_group_residual_identity_with_all_zero_weights(self, rng):
        g = Rssg(GroupConfig(2, 2, "hierarchical", 2), 2, (2, 2), 2, rng)
        for _, t in g.named_params():
            t.data = np.zeros_like(t.data)
        x = rng.normal(size=(4, 4, 2))
        assert np.allclose(g(ad.Tensor(x)).data, x)

    def test_block_count_validation(self):
        with pytest.raises(ConfigError):
            GroupConfig(1, 0, "local", 4)
        with pytest.raises(ConfigError):
            GroupConfig(1, 1, "banana", 4)

    def test_three_group_stack_gradient_health(self, rng):
        groups = [
            Rssg(GroupConfig(1, 1, "local", 2), 2, (4, 4), 2, rng),
            Rssg(GroupConfig(2, 2, "local", 2), 2, (4, 4), 2, rng),
            Rssg(GroupConfig(1, 1, "hierarchical", 2), 2, (4, 4), 2, rng),
        ]

        def run(t):
            h = t
            for g in groups:
                h = g(h)
            return ad.tmean(ad.mul(h, h))

        x = Tensor(rng.uniform(-1, 1, (16, 16, 2)))
        assert ad.grad_check(run, x, 1e-6) <= 1e-4

        # no parameter gradient is identically zero at init
        leaf = Tensor(x.data, requires_grad=True)
        ad.backward(run(leaf))
        zero_names = [
            name
            for g in groups
            for name, t in g.named_params()
            if t.grad is None or np.abs(t.grad).max() == 0.0
        ]
        # the zero-initialized refinement convs block their own weight
        # gradient only when the input is zero; here everything must flow
        assert zero_names == []
