import numpy as np
import pytest

from resnest_lab.backprop import (
    grad_aresnest,
    grad_densenest,
    grad_full_resnest,
    grad_norm,
    grad_pphi,
    gradient,
)
from resnest_lab.hessian import assemble_hessian
from resnest_lab.models import (
    AResNEstParams,
    DenseNEstConfig,
    DenseNEstParams,
    ResNEstConfig,
    compute_features,
    densenest_forward,
    init_params,
    resnest_forward,
)
from resnest_lab.optimize import solve_pa_closed_form
from resnest_lab.risk import Dataset, risk_resnest
from resnest_lab.verify import gradient_rel_error


def _data(rng, n_in, n_out, n, loss="squared"):
    x = rng.standard_normal((n_in, n))
    y = rng.dirichlet(np.ones(n_out), n).T if loss == "cross_entropy" else rng.standard_normal((n_out, n))
    return Dataset(x, y)


class TestPredictionGradient:
    def test_exact_fit_zero(self, rng):
        p = init_params(ResNEstConfig(3, 6, 2, 2, (3, 4), (5, 5)), 0)
        x = rng.standard_normal((3, 10))
        y, _ = resnest_forward(p, x)
        d_wl, d_wo = grad_pphi(p.w_l, p.w_out, compute_features(p.phi, x), Dataset(x, y))
        np.testing.assert_array_equal(d_wl, 0.0)
        np.testing.assert_array_equal(d_wo, 0.0)

    def test_zero_output_weights_kill_wl_gradient(self, rng):
        p = init_params(ResNEstConfig(3, 6, 2, 2, (3, 4), (5, 5)), 1)
        ds = _data(rng, 3, 2, 10)
        d_wl, _ = grad_pphi(rng.standard_normal(p.w_l.shape), np.zeros_like(p.w_out),
                            compute_features(p.phi, ds.x), ds)
        np.testing.assert_array_equal(d_wl, 0.0)

    def test_finite_differences(self):
        cfg = ResNEstConfig(3, 6, 2, 2, (3, 4), (5, 5))
        for j in range(5):
            g = np.random.default_rng(j)
            p = init_params(cfg, j, 1.5)
            ds = _data(g, 3, 2, 10)
            feats = compute_features(p.phi, ds.x)
            d_wl, d_wo = grad_pphi(p.w_l, p.w_out, feats, ds)
            z0 = np.concatenate([p.w_l.ravel(), p.w_out.ravel()])

            def f(z):
                return risk_resnest(p.with_prediction(z[:24].reshape(6, 4), z[24:].reshape(2, 6)), ds)

            fd = np.array([(f(z0 + e) - f(z0 - e)) / 2e-5 for e in np.eye(z0.size) * 1e-5])
            analytic = np.concatenate([d_wl.ravel(), d_wo.ravel()])
            assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) <= 1e-6

    def test_agrees_with_full_gradient(self, rng):
        p = init_params(ResNEstConfig(2, 4, 2, 2, (2, 2), (3, 3)), 2)
        ds = _data(rng, 2, 2, 6)
        full = grad_full_resnest(p, ds)
        d_wl, d_wo = grad_pphi(p.w_l, p.w_out, compute_features(p.phi, ds.x), ds)
        np.testing.assert_allclose(full.d_w_l, d_wl, atol=1e-12)
        np.testing.assert_allclose(full.d_w_out, d_wo, atol=1e-12)

    def test_fd_of_gradient_reproduces_hessian(self, rng):
        p = init_params(ResNEstConfig(2, 3, 2, 1, (2,), (3,)), 3)
        ds = _data(rng, 2, 2, 8)
        feats = compute_features(p.phi, ds.x)
        h = assemble_hessian(p.w_l, p.w_out, feats, ds).full
        z0 = np.concatenate([p.w_l.ravel(), p.w_out.ravel()])

        def grad(z):
            a, b = grad_pphi(z[:6].reshape(3, 2), z[6:].reshape(2, 3), feats, ds)
            return np.concatenate([a.ravel(), b.ravel()])

        fd = np.column_stack([(grad(z0 + e) - grad(z0 - e)) / 2e-6 for e in np.eye(z0.size) * 1e-6])
        np.testing.assert_allclose(fd, h, atol=1e-7 * np.abs(h).max())


class TestFullGradients:
    @pytest.mark.parametrize("loss", ["squared", "cross_entropy"])
    def test_tiny_resnest_sweep(self, rng, loss):
        p = init_params(ResNEstConfig(2, 4, 2, 2, (2, 2), (3, 3)), 4, 1.5)
        assert gradient_rel_error(p, _data(rng, 2, 2, 6, loss), loss) <= 1e-6

    @pytest.mark.parametrize("loss", ["squared", "cross_entropy"])
    def test_aresnest(self, rng, loss):
        p = init_params(ResNEstConfig(2, 4, 3, 2, (2, 3), (3, 3)), 5, 1.5, "aresnest")
        assert gradient_rel_error(p, _data(rng, 2, 3, 7, loss), loss) <= 1e-6

    @pytest.mark.parametrize("loss", ["squared", "cross_entropy"])
    def test_densenest(self, rng, loss):
        p = init_params(DenseNEstConfig(2, 2, (2, 1), (3, 3)), 6, 1.5)
        assert gradient_rel_error(p, _data(rng, 2, 2, 6, loss), loss) <= 1e-6

    def test_relu_away_from_kinks(self, rng):
        p = init_params(ResNEstConfig(2, 4, 2, 1, (2,), (3,), "relu"), 7, 1.5)
        ds = _data(rng, 2, 2, 6)
        z = p.blocks[0].weight_in @ p.w0 @ ds.x
        assert np.min(np.abs(z)) > 1e-4
        assert gradient_rel_error(p, ds, "squared") <= 1e-6

    def test_exact_fit_zero(self, rng):
        p = init_params(ResNEstConfig(2, 4, 2, 2, (2, 2), (3, 3)), 8)
        x = rng.standard_normal((2, 6))
        y, _ = resnest_forward(p, x)
        assert grad_norm(grad_full_resnest(p, Dataset(x, y))) == 0.0

    def test_shapes_mirror_params(self, rng):
        p = init_params(ResNEstConfig(2, 4, 2, 2, (2, 3), (3, 5)), 9)
        g = grad_full_resnest(p, _data(rng, 2, 2, 5))
        assert g.d_w0.shape == p.w0.shape
        assert [a.shape for a in g.d_w_all] == [w.shape for w in p.w]
        assert [(a.shape, b.shape) for a, b in g.d_blocks] == \
            [(b.weight_in.shape, b.weight_out.shape) for b in p.blocks]

    def test_dispatch_rejects_unknown(self, rng):
        with pytest.raises(TypeError):
            gradient(object(), _data(rng, 1, 1, 2))


class TestHeadGradients:
    def test_zero_at_least_squares_optimum(self, rng):
        p = init_params(ResNEstConfig(3, 5, 2, 2, (2, 2), (4, 4)), 10, model="aresnest")
        ds = _data(rng, 3, 2, 20)
        heads, _ = solve_pa_closed_form(compute_features(p.phi, ds.x), ds)
        g = grad_aresnest(AResNEstParams(heads, p.phi), ds, include_phi=False)
        assert g.d_w == () and g.d_blocks == ()
        for d in g.d_h:
            assert np.linalg.norm(d) <= 1e-8

    def test_zero_targets_zero_heads(self, rng):
        p = init_params(ResNEstConfig(3, 5, 2, 1, (2,), (4,)), 11, model="aresnest")
        x = rng.standard_normal((3, 6))
        zero = AResNEstParams(tuple(np.zeros_like(h) for h in p.h), p.phi)
        for d in grad_aresnest(zero, Dataset(x, np.zeros((2, 6))), include_phi=False).d_h:
            np.testing.assert_array_equal(d, 0.0)

    def test_linear_in_residual(self, rng):
        p = init_params(ResNEstConfig(3, 5, 2, 1, (2,), (4,)), 12, model="aresnest")
        ds = _data(rng, 3, 2, 8)
        feats = compute_features(p.phi, ds.x)
        y_hat = sum(h @ v for h, v in zip(p.h, feats.v))
        doubled = Dataset(ds.x, y_hat - 2 * (y_hat - ds.y))
        g1 = grad_aresnest(p, ds, include_phi=False).d_h
        g2 = grad_aresnest(p, doubled, include_phi=False).d_h
        for a, b in zip(g1, g2):
            np.testing.assert_allclose(b, 2 * a, atol=1e-13)


class TestDenseGradients:
    def test_output_gradient_loop_oracle(self, rng):
        p = init_params(DenseNEstConfig(2, 2, (2,), (3,)), 13)
        ds = _data(rng, 2, 2, 6)
        g = grad_densenest(p, ds, include_phi=False)
        y_hat, f = densenest_forward(p, ds.x)
        loop = sum(np.outer(2 * (y_hat[:, n] - ds.y[:, n]), f.x_res[-1][:, n]) for n in range(6)) / 6
        np.testing.assert_allclose(g.d_w_out, loop, atol=1e-13)
        assert g.d_blocks == ()

    def test_exact_fit_zero(self, rng):
        p = init_params(DenseNEstConfig(2, 2, (2,), (3,)), 14)
        x = rng.standard_normal((2, 5))
        y, _ = densenest_forward(p, x)
        assert grad_norm(grad_densenest(p, Dataset(x, y))) == 0.0

    def test_zero_blocks(self, rng):
        p = DenseNEstParams((), rng.standard_normal((2, 3)))
        ds = _data(rng, 3, 2, 5)
        assert gradient_rel_error(p, ds, "squared") <= 1e-6
