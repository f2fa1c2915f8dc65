import numpy as np
import pytest

from deflare import autodiff as ad
from deflare.autodiff import Tensor
from deflare.errors import ConfigError, ContractError, DomainError, ShapeError

import oracles


class TestElementwise:
    def test_clip_above_range(self):
        assert ad.clip01(Tensor(np.array(1.5))).item() == 1.0

    def test_clip_inside_and_below(self):
        out = ad.clip01(Tensor(np.array([-0.3, 0.4]))).data
        assert out.tolist() == [0.0, 0.4]

    def test_additive_identity(self):
        x = np.array([0.2, -1.4, 3.0])
        out = ad.add(Tensor(x), Tensor(np.array(0.0)))
        assert np.array_equal(out.data, x)

    def test_sigmoid_origin(self):
        assert ad.sigmoid(Tensor(np.array(0.0))).item() == 0.5

    def test_silu_zero_fixed_point(self):
        assert ad.silu(Tensor(np.array(0.0))).item() == 0.0

    def test_silu_at_one(self):
        # 1 / (1 + e^-1), high-precision value
        assert ad.silu(Tensor(np.array(1.0))).item() == pytest.approx(
            0.7310585786300049, abs=1e-15
        )

    def test_silu_deep_negative_asymptote(self):
        # -30 / (1 + e^30)
        assert ad.silu(Tensor(np.array(-30.0))).item() == pytest.approx(
            -2.8072868906517897e-12, rel=1e-9
        )

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
        assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)

    def test_no_silent_broadcast(self):
        with pytest.raises(ShapeError):
            ad.mul(Tensor(np.zeros((4, 3))), Tensor(np.zeros(3)))

    def test_elementwise_dispatch(self):
        x = Tensor(np.array([0.0, 1.0]))
        assert np.allclose(ad.elementwise("exp", x).data, np.exp(x.data))
        with pytest.raises(ConfigError):
            ad.elementwise("nope", x)
        with pytest.raises(ContractError):
            ad.elementwise("exp", x, x)


class TestLayerNorm:
    def test_hand_computed_three_values(self):
        out = ad.layer_norm(Tensor(np.array([[1.0, 2.0, 3.0]])),
                            Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-12)
        assert np.allclose(out.data, [[-1.2247448, 0.0, 1.2247448]], atol=1e-4)

    def test_constant_vector_maps_to_zero(self):
        out = ad.layer_norm(Tensor(np.full((2, 5), 3.3)),
                            Tensor(np.ones(5)), Tensor(np.zeros(5)))
        assert np.allclose(out.data, 0.0)

    def test_zero_gamma_gives_beta(self):
        beta = np.array([0.3, -0.4, 0.1])
        out = ad.layer_norm(Tensor(np.random.default_rng(0).normal(size=(4, 3))),
                            Tensor(np.zeros(3)), Tensor(beta))
        assert np.allclose(out.data, np.broadcast_to(beta, (4, 3)))

    def test_eps_must_be_positive(self):
        with pytest.raises(ConfigError):
            ad.layer_norm(Tensor(np.zeros((1, 3))), Tensor(np.ones(3)),
                          Tensor(np.zeros(3)), eps=0.0)


class TestConv2d:
    def test_identity_depthwise_kernel(self, rng):
        x = rng.uniform(-1, 1, (5, 6, 3))
        w = np.zeros((3, 3, 3))
        w[1, 1] = 1.0
        out = ad.conv2d(Tensor(x), Tensor(w))
        assert np.allclose(out.data, x)

    def test_ones_kernel_on_constant_matches_direct_sum(self):
        x = np.full((6, 6, 2), 0.7)
        w = np.ones((3, 3, 2))
        out = ad.conv2d(Tensor(x), Tensor(w)).data
        ref = oracles.conv2d_direct(x, w)
        assert np.allclose(out, ref)
        assert np.allclose(out[1:-1, 1:-1], 9 * 0.7)

    def test_stride_two_shape(self, rng):
        out = ad.conv2d(Tensor(rng.normal(size=(8, 8, 2))),
                        Tensor(rng.normal(size=(3, 3, 2, 5))), stride=2)
        assert out.shape == (4, 4, 5)

    def test_dense_matches_direct_sum(self, rng):
        x = rng.uniform(-1, 1, (7, 5, 3))
        w = rng.uniform(-1, 1, (3, 3, 3, 4))
        b = rng.uniform(-1, 1, 4)
        for stride in (1, 2):
            got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
            ref = oracles.conv2d_direct(x, w, b, stride=stride)
            assert np.allclose(got, ref, atol=1e-12)

    def test_valid_kernel_too_large(self):
        with pytest.raises(ShapeError):
            ad.conv2d(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((3, 3, 1))),
                      padding="valid")


class TestLinear:
    def test_identity_weight(self, rng):
        x = rng.normal(size=(4, 3))
        out = ad.linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        assert np.allclose(out.data, x)

    def test_zero_input_gives_bias(self):
        b = np.array([0.5, -1.0])
        out = ad.linear(Tensor(np.zeros((3, 4))), Tensor(np.zeros((4, 2))), Tensor(b))
        assert np.allclose(out.data, np.broadcast_to(b, (3, 2)))

    def test_hand_matrix_multiply(self):
        out = ad.linear(Tensor(np.array([1.0, 2.0])),
                        Tensor(np.array([[1.0, 0.0], [0.0, 2.0]])),
                        Tensor(np.array([0.0, 1.0])))
        assert out.data.tolist() == [1.0, 5.0]

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            ad.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


class TestBackward:
    def test_sum_gradient_is_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        ad.backward(ad.tsum(x))
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic_gradient(self, rng):
        x = Tensor(rng.normal(size=7), requires_grad=True)
        ad.backward(ad.tsum(ad.mul(x, x)))
        assert np.allclose(x.grad, 2 * x.data)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractError):
            ad.backward(Tensor(np.zeros(3), requires_grad=True))

    def test_gradient_accumulates_across_calls(self, rng):
        x = Tensor(rng.normal(size=4), requires_grad=True)
        ad.backward(ad.tsum(x))
        ad.backward(ad.tsum(x))
        assert np.allclose(x.grad, 2.0)

    def test_forward_purity(self, rng):
        x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        before = x.data.copy()
        y = ad.silu(ad.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4))))
        ad.tsum(y)  # recorded then discarded
        assert np.array_equal(x.data, before)

    def test_no_grad_suppresses_recording(self, rng):
        x = Tensor(rng.normal(size=3), requires_grad=True)
        with ad.no_grad():
            y = ad.tsum(ad.mul(x, x))
        assert y._parents == ()


class TestGradCheck:
    def test_linear_functional_is_exact(self, rng):
        err = ad.grad_check(lambda t: ad.tsum(t), Tensor(rng.normal(size=(3, 3))))
        assert err <= 1e-10

    def test_sum_exp(self, rng):
        err = ad.grad_check(lambda t: ad.tsum(ad.texp(t)),
                            Tensor(rng.uniform(-0.5, 0.5, (4, 2))))
        assert err <= 1e-6

    def test_clip_at_interior_points(self, rng):
        x = Tensor(rng.uniform(0.1, 0.9, (5, 3)))
        err = ad.grad_check(lambda t: ad.tsum(ad.mul(ad.clip01(t), ad.clip01(t))), x)
        assert err <= 1e-6

    def test_step_domain(self, rng):
        with pytest.raises(DomainError):
            ad.grad_check(lambda t: ad.tsum(t), Tensor(np.zeros(2)), step=0.5)

    def test_every_primitive_within_tolerance(self, rng):
        gamma = Tensor(rng.uniform(0.5, 1.5, 4))
        beta = Tensor(rng.normal(size=4))
        wd = Tensor(rng.normal(size=(3, 3, 4)))
        wf = Tensor(rng.normal(size=(3, 3, 4, 2)))
        wl = Tensor(rng.normal(size=(4, 6)))
        cases = [
            lambda t: ad.tsum(ad.texp(t)),
            lambda t: ad.tsum(ad.sigmoid(t)),
            lambda t: ad.tsum(ad.softplus(t)),
            lambda t: ad.tsum(ad.silu(t)),
            lambda t: ad.tsum(ad.mul(t, t)),
            lambda t: ad.tsum(ad.sub(ad.texp(t), t)),
            lambda t: ad.tmean(ad.tabs(ad.mul(t, t))),
            lambda t: ad.tsum(ad.layer_norm(t, gamma, beta)),
            lambda t: ad.tsum(ad.conv2d(t, wd)),
            lambda t: ad.tsum(ad.conv2d(t, wf, stride=2)),
            lambda t: ad.tsum(ad.linear(t, wl)),
            lambda t: ad.tsum(ad.nearest_upsample2(t)),
            lambda t: ad.tsum(ad.mul(ad.subsample2(t), ad.subsample2(t))),
            lambda t: ad.tsum(ad.pad_edge2d(ad.mul(t, t), 2)),
        ]
        worst = 0.0
        for f in cases:
            x = Tensor(rng.uniform(-1, 1, (6, 5, 4)))
            worst = max(worst, ad.grad_check(f, x, 1e-5))
        assert worst <= 1e-4


class TestIndexOps:
    def test_permute_rows_roundtrip(self, rng):
        x = Tensor(rng.normal(size=(2, 6, 3)), requires_grad=True)
        perm = rng.permutation(6)
        inv = np.argsort(perm)
        y = ad.permute_rows(ad.permute_rows(x, perm, inv), inv, perm)
        assert np.array_equal(y.data, x.data)

    def test_gather_scatter_inverse(self, rng):
        x = Tensor(rng.normal(size=(12, 3)), requires_grad=True)
        idx = np.array([[0, 3, 6, 9, -1, -1], [1, 4, 7, 10, -1, -1],
                        [2, 5, 8, 11, -1, -1]])
        g = ad.gather_pad(x, idx)
        assert np.allclose(g.data[:, 4:], 0.0)
        back = ad.scatter_cover(g, idx, 12)
        assert np.array_equal(back.data, x.data)
        ad.backward(ad.tsum(ad.mul(back, back)))
        assert np.allclose(x.grad, 2 * x.data)

    def test_scatter_requires_exact_cover(self, rng):
        x = Tensor(rng.normal(size=(2, 2, 1)))
        with pytest.raises(ContractError):
            ad.scatter_cover(x, np.array([[0, 1], [1, 2]]), 4)

    def test_stack_take_roundtrip(self, rng):
        parts = [Tensor(rng.normal(size=(2, 3)), requires_grad=True) for _ in range(4)]
        s = ad.stack(parts, axis=1)
        assert s.shape == (2, 4, 3)
        for i, p in enumerate(parts):
            assert np.array_equal(ad.take_index(s, i, axis=1).data, p.data)

    def test_tile_leading_grad_sums(self, rng):
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        ad.backward(ad.tsum(ad.tile_leading(x, 5)))
        assert np.allclose(x.grad, 5.0)


def test_debug_finite_mode():
    ad.set_debug_finite(True)
    try:
        with pytest.raises(Exception):
            ad.texp(Tensor(np.array(1e309)))
    finally:
        ad.set_debug_finite(False)
