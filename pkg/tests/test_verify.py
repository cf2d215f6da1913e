import json

import numpy as np
import pytest

from resnest_lab.data import DataSpec, generate
from resnest_lab.errors import PreconditionError
from resnest_lab.models import (
    DenseNEstConfig,
    FeatureMatrices,
    ResNEstConfig,
    densenest_forward,
    init_params,
    resnest_forward,
)
from resnest_lab.optimize import TrainResult
from resnest_lab.risk import risk_resnest
from resnest_lab import verify
from resnest_lab.verify import (
    Check,
    SuiteSettings,
    VerificationReport,
    check_assumptions,
    check_linear_unpredictability,
    embed_densenest,
    emit_report,
    feature_stack_rank,
    gradient_rel_error,
    parse_report,
    run_suite,
    sample_feature_weights,
    worker_count,
)

FAST = SuiteSettings(gradient_instances=2, s_points=3, random_points=5, epsilon_instances=10, theorem1_phi=2,
                     theorem1_inits=2, counterexample_budget=5, counterexample_inits=2, corollary1_inits=2,
                     prefix_instances=10, embed_models=3, embed_inputs=10, saddle_runs=2)


def _report():
    rep = VerificationReport(seed=3, config={"a": 1})
    rep.add(Check("one", "pass", {"x": 1.5, "n": 3, "flag": True}, "fine"))
    rep.add(Check("two", "fail", {}, "a | b"))
    return rep


class TestReport:
    def test_json_round_trip(self):
        rep = _report()
        text = emit_report(rep)
        back = parse_report(text)
        assert emit_report(back) == text
        obj = json.loads(text)
        assert obj["version"] == 1 and obj["seed"] == 3
        assert [c["name"] for c in obj["checks"]] == ["one", "two"]
        assert set(obj["checks"][0]) == {"name", "status", "metrics", "details"}

    def test_bool_metrics_become_ints(self):
        assert _report().get("one").metrics["flag"] == 1

    def test_empty_report(self):
        rep = VerificationReport()
        assert rep.all_pass
        assert json.loads(emit_report(rep))["checks"] == []

    def test_all_pass_ignores_skips(self):
        rep = VerificationReport(checks=[Check("a", "pass"), Check("b", "skip")])
        assert rep.all_pass
        assert not _report().all_pass

    def test_markdown_rows(self):
        md = emit_report(_report(), "markdown")
        rows = [ln for ln in md.splitlines() if ln.startswith("| ") and "check" not in ln]
        assert len(rows) == 2
        assert "a / b" in md

    def test_duplicate_name(self):
        rep = _report()
        with pytest.raises(ValueError, match="duplicate"):
            rep.add(Check("one", "pass"))

    def test_bad_status_and_metric(self):
        with pytest.raises(ValueError):
            Check("x", "ok")
        with pytest.raises(ValueError):
            Check("x", "pass", {"v": float("nan")})

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_report(_report(), "xml")

    def test_get_missing(self):
        with pytest.raises(KeyError):
            _report().get("three")


class TestWorkers:
    def test_default(self, monkeypatch):
        monkeypatch.delenv("RESNEST_LAB_THREADS", raising=False)
        assert worker_count() == 1

    def test_cap(self, monkeypatch):
        monkeypatch.setenv("RESNEST_LAB_THREADS", "3")
        assert worker_count() == 3

    @pytest.mark.parametrize("raw", ["0", "-2", "many"])
    def test_invalid(self, monkeypatch, raw):
        monkeypatch.setenv("RESNEST_LAB_THREADS", raw)
        with pytest.raises(ValueError):
            worker_count()

    def test_parallel_matches_serial(self):
        items = list(range(5))
        assert verify._pmap(abs, items, 2) == verify._pmap(abs, items, 1)


class TestAssumptions:
    def test_bottleneck_phi_has_full_stack_rank(self):
        cfg = ResNEstConfig(4, 16, 2, 2, (4, 4), (8, 8))
        phi = sample_feature_weights(cfg, 0, 0)
        assert feature_stack_rank(phi) == (8, 8)

    def test_narrow_phi_fails_rank(self):
        cfg = ResNEstConfig(4, 4, 2, 2, (4, 4), (8, 8))
        phi = sample_feature_weights(cfg, 0, 0)
        rank, target = feature_stack_rank(phi)
        assert rank < target
        ds = verify.default_regression(0, 64)
        assert not check_assumptions(phi, ds).a4_ok

    def test_sampler_is_deterministic(self):
        cfg = ResNEstConfig(3, 8, 2, 2, (2, 2), (4, 4))
        a, b = sample_feature_weights(cfg, 5, 1), sample_feature_weights(cfg, 5, 1)
        for x, y in zip(a.w, b.w):
            np.testing.assert_array_equal(x, y)

    def test_excess_risk_run_rejects_narrow_width(self):
        with pytest.raises(PreconditionError):
            verify.run_theorem1(verify.NARROW, verify.default_regression(0, 16), 1, 1, 0)


class TestOracles:
    def test_gradient_error_small(self):
        params, ds = verify._gradient_instance("resnest", 0, 0, "squared")
        assert gradient_rel_error(params, ds, "squared") < 1e-7

    def test_gradient_error_detects_wrong_gradient(self, monkeypatch):
        params, ds = verify._gradient_instance("densenest", 0, 1, "squared")
        real = verify.analytic_gradient

        def broken(p, d, loss):
            g = real(p, d, loss)
            g.arrays()[0][...] *= 1.01
            return g

        monkeypatch.setattr(verify, "analytic_gradient", broken)
        assert gradient_rel_error(params, ds, "squared") > 1e-3

    def test_fd_hessian_of_quadratic_direction(self):
        cfg = ResNEstConfig(2, 3, 1, 1, (1,), (2,))
        p = init_params(cfg, 1)
        ds = verify.default_regression(1, 6, 2, 1)
        h = verify.fd_hessian(p, ds)
        np.testing.assert_allclose(h, h.T)
        # the risk is quadratic in W_out alone, so that block is exact: 2 X_L X_L^T / N
        _, f = resnest_forward(p, ds.x)
        x_l = f.x_res[-1]
        np.testing.assert_allclose(h[-3:, -3:], 2 * x_l @ x_l.T / ds.n, rtol=1e-6)

    def test_unpredictability_flags_linear_feature(self):
        # a block that outputs a linear copy of x cannot lower the least-squares risk
        ds = verify.default_regression(2, 40)
        dense = init_params(DenseNEstConfig(4, 2, (3,), (5,), "relu"), 2)
        _, feats = densenest_forward(dense, ds.x)
        v = (ds.x, np.vstack([ds.x[:2] * 3.0, np.tanh(ds.x[:1])]))
        rep = check_linear_unpredictability(FeatureMatrices(v=v, x_res=feats.x_res), ds)
        assert rep.non_increasing
        assert rep.strict_drop == (True,)
        v2 = (ds.x, 2.0 * ds.x[:3])
        rep2 = check_linear_unpredictability(FeatureMatrices(v=v2, x_res=feats.x_res), ds)
        assert rep2.strict_drop == (False,)


class TestEmbedding:
    @pytest.mark.parametrize("index", range(6))
    def test_outputs_match(self, index):
        dense = verify.random_densenest(4, index)
        res = embed_densenest(dense)
        x = np.random.default_rng(index).standard_normal((dense.dims[0], 30))
        np.testing.assert_allclose(resnest_forward(res, x)[0], densenest_forward(dense, x)[0], rtol=0, atol=1e-12)
        assert res.m == sum(dense.dims)
        r, target = feature_stack_rank(res.phi)
        assert r == target

    def test_zero_blocks(self):
        dense = init_params(DenseNEstConfig(3, 2, (), ()), 0)
        res = embed_densenest(dense)
        assert res.l == 0 and res.m == 3
        x = np.ones((3, 4))
        np.testing.assert_array_equal(resnest_forward(res, x)[0], densenest_forward(dense, x)[0])


class TestSuite:
    def test_unknown_name(self):
        with pytest.raises(KeyError, match="valid names"):
            run_suite(["nope"])

    @pytest.mark.parametrize("name", ["gradients", "hessian", "proposition1", "proposition2", "proposition4",
                                      "proposition5", "linear_unpredictability", "theorem2"])
    def test_fast_groups_pass(self, name):
        rep = run_suite([name], FAST, seed=0)
        assert rep.checks
        assert rep.all_pass, [(c.name, c.details) for c in rep.checks]

    def test_order_and_determinism(self):
        a = run_suite(["proposition5", "proposition2"], FAST, seed=1)
        b = run_suite(["proposition5", "proposition2"], FAST, seed=1)
        assert [c.name for c in a.checks] == ["proposition5", "proposition2"]
        assert emit_report(a) == emit_report(b)

    def test_dense_least_squares_beats_linear(self):
        rep = run_suite(["proposition4"], FAST, seed=0)
        assert rep.get("proposition4_nonlinear").metrics["rel_improvement"] >= 0.1
        assert rep.get("proposition4_linear").metrics["risk"] <= 1e-8

    @pytest.mark.slow
    def test_excess_risk_group_small(self):
        rep = run_suite(["theorem1"], FAST, seed=0)
        c = rep.get("theorem1")
        assert c.status == "pass" and c.metrics["n_runs"] == 4

    @pytest.mark.slow
    def test_prefix_depth_group_small(self):
        rep = run_suite(["corollary1"], FAST, seed=0)
        assert rep.all_pass and len(rep.checks) == 2

    @pytest.mark.slow
    def test_full_training_beats_linear(self):
        rep = run_suite(["corollary2"], FAST, seed=0)
        assert rep.all_pass
        assert rep.get("corollary2_nonlinear").metrics["rel_improvement"] >= 0.1


def test_refit_never_raises_risk():
    ds = generate(DataSpec("nonlinear_regression", 30, (4, 2), 0.1, seed=3))
    p = init_params(verify.WIDE, 3)
    r0 = risk_resnest(p, ds)
    out = verify._refit_output_layer(TrainResult(p, r0, 1.0, (), False, 0), ds, 1e-8)
    assert out.final_risk <= r0
    np.testing.assert_array_equal(out.final_params.w_l, p.w_l)
