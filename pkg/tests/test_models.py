import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resnest_lab.errors import ShapeError
from resnest_lab.models import (
    AResNEstParams,
    BlockFn,
    DenseNEstConfig,
    DenseNEstParams,
    ResNEstConfig,
    ResNEstParams,
    activate,
    activate_grad,
    aresnest_forward,
    compute_features,
    densenest_forward,
    flatten,
    init_params,
    output_from_features,
    param_arrays,
    params_from_arrays,
    resnest_forward,
    unflatten,
)

CFG = ResNEstConfig(3, 5, 2, 3, (2, 3, 2), (4, 3, 4))


def _scalar_resnest(params, x):
    """Per-sample loop evaluation of the residual recursion."""
    out = np.zeros((params.n_out, x.shape[1]))
    for n in range(x.shape[1]):
        state = [sum(params.w[0][r, c] * x[c, n] for c in range(x.shape[0])) for r in range(params.m)]
        for i, b in enumerate(params.blocks, start=1):
            pre = [sum(b.weight_in[h, r] * state[r] for r in range(params.m)) for h in range(b.hidden)]
            act = [np.tanh(p) for p in pre]
            g = [sum(b.weight_out[k, h] * act[h] for h in range(b.hidden)) for k in range(b.out_dim)]
            state = [state[r] + sum(params.w[i][r, k] * g[k] for k in range(b.out_dim)) for r in range(params.m)]
        for o in range(params.n_out):
            out[o, n] = sum(params.w_out[o, r] * state[r] for r in range(params.m))
    return out


def _scalar_densenest(params, x):
    out = np.zeros((params.w_out.shape[0], x.shape[1]))
    for n in range(x.shape[1]):
        state = list(x[:, n])
        for b in params.blocks:
            z = np.array(state)
            state = state + list(b.weight_out @ np.tanh(b.weight_in @ z))
        out[:, n] = [sum(params.w_out[o, j] * state[j] for j in range(len(state)))
                     for o in range(params.w_out.shape[0])]
    return out


class TestActivations:
    def test_relu_subgradient_zero_at_origin(self):
        np.testing.assert_array_equal(activate_grad(np.array([-1.0, 0.0, 2.0]), "relu"), [0.0, 0.0, 1.0])

    def test_tanh_derivative(self):
        z = np.linspace(-3, 3, 13)
        fd = (activate(z + 1e-6, "tanh") - activate(z - 1e-6, "tanh")) / 2e-6
        np.testing.assert_allclose(activate_grad(z, "tanh"), fd, atol=1e-9)


class TestContainers:
    def test_block_dims_chain(self):
        with pytest.raises(ShapeError):
            BlockFn(np.zeros((3, 2)), np.zeros((2, 4)))

    def test_block_rejects_unknown_activation(self):
        with pytest.raises(ValueError):
            BlockFn(np.zeros((3, 2)), np.zeros((2, 3)), "sigmoid")

    def test_config_lengths(self):
        with pytest.raises(ValueError):
            ResNEstConfig(2, 3, 1, 2, (1,), (2, 2))
        with pytest.raises(ValueError):
            ResNEstConfig(2, 0, 1, 0)

    def test_params_shape_checks(self):
        p = init_params(CFG, 0)
        with pytest.raises(ShapeError):
            ResNEstParams(p.w, np.zeros((2, 4)), p.blocks)
        with pytest.raises(ShapeError):
            ResNEstParams(p.w[:-1], p.w_out, p.blocks)

    def test_aresnest_head_count(self):
        p = init_params(CFG, 0)
        with pytest.raises(ShapeError):
            AResNEstParams((np.zeros((2, 3)),), p.phi)

    def test_dense_widths(self):
        cfg = DenseNEstConfig(3, 2, (2, 4), (3, 3))
        p = init_params(cfg, 1)
        assert cfg.widths == (3, 5, 9)
        assert p.dims == (3, 2, 4)
        assert p.widths == (3, 5, 9)
        assert p.config() == cfg

    def test_config_round_trip(self):
        assert init_params(CFG, 2).config() == CFG

    def test_batch_shape_error(self):
        with pytest.raises(ShapeError):
            resnest_forward(init_params(CFG, 0), np.zeros((4, 2)))


class TestResNEstForward:
    def test_l0_is_two_layer_linear(self, rng):
        p = init_params(ResNEstConfig(3, 4, 2, 0), 5)
        x = rng.standard_normal((3, 7))
        y, _ = resnest_forward(p, x)
        np.testing.assert_allclose(y, p.w_out @ p.w[0] @ x, atol=1e-14)

    def test_zero_residual_blocks(self, rng):
        p = init_params(CFG, 3)
        blocks = tuple(b.replace(weight_out=np.zeros_like(b.weight_out)) for b in p.blocks)
        p0 = ResNEstParams(p.w, p.w_out, blocks)
        x = rng.standard_normal((3, 4))
        y, feats = resnest_forward(p0, x)
        np.testing.assert_allclose(feats.x_res[-1], p.w[0] @ x, atol=1e-15)
        np.testing.assert_allclose(y, p.w_out @ p.w[0] @ x, atol=1e-14)

    def test_matches_scalar_loop(self, rng):
        p = init_params(CFG, 4, 1.5)
        x = rng.standard_normal((3, 3))
        y, _ = resnest_forward(p, x)
        np.testing.assert_allclose(y, _scalar_resnest(p, x), atol=1e-12)

    def test_feature_recursion(self, rng):
        p = init_params(CFG, 6)
        x = rng.standard_normal((3, 5))
        _, f = resnest_forward(p, x)
        np.testing.assert_array_equal(f.v[0], x)
        for i in range(1, p.l + 1):
            np.testing.assert_allclose(f.x_res[i], f.x_res[i - 1] + p.w[i] @ f.v[i], atol=1e-15)

    def test_prediction_weights_do_not_touch_features(self, rng):
        p = init_params(CFG, 7)
        x = rng.standard_normal((3, 5))
        f1 = compute_features(p.phi, x)
        q = p.with_prediction(rng.standard_normal(p.w_l.shape), rng.standard_normal(p.w_out.shape))
        _, f2 = resnest_forward(q, x)
        for a, b in zip(f1.v, f2.v):
            np.testing.assert_array_equal(a, b)

    def test_basis_function_form_l3(self, rng):
        p = init_params(CFG, 8, 2.0)
        _, f = resnest_forward(p, rng.standard_normal((3, 9)))
        y, _ = resnest_forward(p, f.v[0])
        np.testing.assert_allclose(output_from_features(p, f), y, atol=1e-12)

    def test_basis_function_form_many_configs(self):
        worst = 0.0
        for j in range(100):
            g = np.random.default_rng(j)
            l = int(g.integers(0, 4))
            cfg = ResNEstConfig(int(g.integers(1, 5)), int(g.integers(1, 7)), int(g.integers(1, 4)), l,
                                tuple(int(v) for v in g.integers(1, 5, size=l)),
                                tuple(int(v) for v in g.integers(1, 5, size=l)))
            p = init_params(cfg, j, 1.5)
            y, f = resnest_forward(p, g.standard_normal((cfg.n_in, 6)))
            worst = max(worst, np.max(np.abs(y - output_from_features(p, f))))
        assert worst <= 1e-12

    def test_zero_output_weights(self, rng):
        p = init_params(CFG, 9)
        q = p.with_prediction(p.w_l, np.zeros_like(p.w_out))
        _, f = resnest_forward(q, rng.standard_normal((3, 4)))
        np.testing.assert_array_equal(output_from_features(q, f), 0.0)


class TestAResNEst:
    def test_heads_from_resnest_weights(self, rng):
        p = init_params(CFG, 10)
        y, f = resnest_forward(p, rng.standard_normal((3, 6)))
        a = AResNEstParams(tuple(p.w_out @ wi for wi in p.w), p.phi)
        np.testing.assert_allclose(aresnest_forward(a, f), y, atol=1e-12)

    def test_zero_heads(self, rng):
        p = init_params(CFG, 11, model="aresnest")
        f = compute_features(p.phi, rng.standard_normal((3, 4)))
        z = AResNEstParams(tuple(np.zeros_like(h) for h in p.h), p.phi)
        np.testing.assert_array_equal(aresnest_forward(z, f), 0.0)

    def test_linear_head_only(self, rng):
        p = init_params(CFG, 12, model="aresnest")
        x = rng.standard_normal((3, 4))
        f = compute_features(p.phi, x)
        h = (p.h[0],) + tuple(np.zeros_like(hi) for hi in p.h[1:])
        np.testing.assert_allclose(aresnest_forward(AResNEstParams(h, p.phi), f), p.h[0] @ x, atol=1e-15)


class TestDenseNEst:
    def test_zero_block_uses_input_columns(self, rng):
        p = init_params(DenseNEstConfig(3, 2, (2,), (4,)), 0)
        q = DenseNEstParams((p.blocks[0].replace(weight_out=np.zeros((2, 4))),), p.w_out)
        x = rng.standard_normal((3, 5))
        y, _ = densenest_forward(q, x)
        np.testing.assert_allclose(y, p.w_out[:, :3] @ x, atol=1e-15)

    def test_slice_sum(self, rng):
        p = init_params(DenseNEstConfig(3, 2, (2, 3), (4, 4)), 1, 1.5)
        x = rng.standard_normal((3, 6))
        y, f = densenest_forward(p, x)
        total = sum(s @ v for s, v in zip(p.slices(), f.v))
        np.testing.assert_allclose(total, y, atol=1e-12)

    def test_matches_scalar_loop(self, rng):
        p = init_params(DenseNEstConfig(2, 2, (3, 2), (3, 4)), 2, 1.5)
        x = rng.standard_normal((2, 4))
        y, _ = densenest_forward(p, x)
        np.testing.assert_allclose(y, _scalar_densenest(p, x), atol=1e-12)

    def test_states_preserve_prefix(self, rng):
        p = init_params(DenseNEstConfig(2, 1, (3, 2, 1), (2, 2, 2)), 3)
        _, f = densenest_forward(p, rng.standard_normal((2, 5)))
        widths = p.widths
        for i in range(1, len(f.x_res)):
            assert f.x_res[i].shape[0] == widths[i]
            np.testing.assert_array_equal(f.x_res[i][: widths[i - 1]], f.x_res[i - 1])


class TestInit:
    def test_deterministic(self):
        a, b = flatten(init_params(CFG, 42)), flatten(init_params(CFG, 42))
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        assert np.any(flatten(init_params(CFG, 1)) != flatten(init_params(CFG, 2)))

    def test_zero_scale(self):
        np.testing.assert_array_equal(flatten(init_params(CFG, 1, 0.0)), 0.0)

    def test_uniform_bounds(self):
        p = init_params(CFG, 3, 2.0)
        for a in param_arrays(p):
            assert np.max(np.abs(a)) <= 2.0 / np.sqrt(a.shape[1])

    def test_negative_scale_rejected(self):
        with pytest.raises(ValueError):
            init_params(CFG, 0, -1.0)

    @pytest.mark.parametrize("model", ["resnest", "aresnest"])
    def test_flatten_round_trip(self, model):
        p = init_params(CFG, 5, model=model)
        q = unflatten(p, flatten(p))
        np.testing.assert_array_equal(flatten(q), flatten(p))
        assert type(q) is type(p)

    def test_params_from_arrays_dense(self):
        p = init_params(DenseNEstConfig(2, 2, (1, 2), (3, 3)), 0)
        q = params_from_arrays(p, [2 * a for a in param_arrays(p)])
        np.testing.assert_allclose(flatten(q), 2 * flatten(p))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.integers(1, 5), st.integers(0, 10_000))
def test_basis_form_property(l, m, seed):
    g = np.random.default_rng(seed)
    cfg = ResNEstConfig(2, m, 2, l, tuple(int(v) for v in g.integers(1, 4, size=l)), (3,) * l)
    p = init_params(cfg, seed, 1.0)
    y, f = resnest_forward(p, g.standard_normal((2, 5)))
    np.testing.assert_allclose(output_from_features(p, f), y, atol=1e-12)
