import os
import subprocess
import sys

import numpy as np
import pytest

from resnest_lab import kernels
from resnest_lab.kernels import get_backend


class TestBackends:
    def test_kron(self, backend, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((2, 5))
        np.testing.assert_allclose(backend.kron(a, b), np.kron(a, b), atol=1e-15)

    def test_jacobi_eigh(self, backend, rng):
        b = rng.standard_normal((9, 9))
        a = b + b.T
        w, v, sweeps = backend.jacobi_eigh(a.copy(), 100)
        np.testing.assert_allclose(np.sort(w), np.linalg.eigvalsh(a), atol=1e-11)
        np.testing.assert_allclose(v * w @ v.T, a, atol=1e-10)
        assert 0 < sweeps < 100

    def test_jacobi_svd(self, backend, rng):
        a = rng.standard_normal((8, 5))
        u, s, v, _ = backend.jacobi_svd(a.copy(), 100)
        np.testing.assert_allclose(u * s @ v.T, a, atol=1e-12)
        np.testing.assert_allclose(np.sort(s)[::-1], np.linalg.svd(a, compute_uv=False), rtol=1e-12)

    def test_jacobi_svd_rank_deficient(self, backend, rng):
        a = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 4))
        u, s, v, _ = backend.jacobi_svd(a.copy(), 100)
        np.testing.assert_allclose(u * s @ v.T, a, atol=1e-12)
        assert np.sum(s > 1e-10) == 2

    def test_pphi_train_converges_to_stationary_point(self, backend, rng):
        m, k, n_o, n = 5, 2, 2, 30
        base = rng.standard_normal((m, n))
        vl = rng.standard_normal((k, n))
        y = rng.standard_normal((n_o, n))
        wl = rng.standard_normal((m, k)) * 0.3
        wo = rng.standard_normal((n_o, m)) * 0.3
        out = backend.pphi_train(base, vl, y, wl.copy(), wo.copy(), 0.01, 0.9, 50_000, 1e-9, 1000,
                                 np.zeros(0, dtype=np.int64), 1.0)
        wl_f, wo_f, it, gnorm, status, trace_it, trace_risk = out
        assert status == kernels.STATUS_CONVERGED
        assert gnorm <= 1e-9
        x_l = base + wl_f @ vl
        g = 2.0 * (wo_f @ x_l - y) / n
        assert np.linalg.norm(g @ x_l.T) <= 1e-8
        assert trace_it[0] == 0

    def test_pphi_train_flags_divergence(self, backend, rng):
        base = rng.standard_normal((3, 10)) * 10
        vl = rng.standard_normal((2, 10)) * 10
        y = rng.standard_normal((1, 10))
        out = backend.pphi_train(base, vl, y, np.ones((3, 2)), np.ones((1, 3)), 10.0, 0.0, 1000, 1e-9, 10,
                                 np.zeros(0, dtype=np.int64), 1.0)
        assert out[4] == kernels.STATUS_DIVERGED


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")
class TestBackendAgreement:
    def test_pphi_train_bitwise_close(self, rng):
        m, k, n_o, n = 6, 3, 2, 20
        args = (rng.standard_normal((m, n)), rng.standard_normal((k, n)), rng.standard_normal((n_o, n)))
        wl = rng.standard_normal((m, k)) * 0.2
        wo = rng.standard_normal((n_o, m)) * 0.2
        decay = np.array([500], dtype=np.int64)
        a = get_backend("numpy").pphi_train(*args, wl.copy(), wo.copy(), 0.01, 0.9, 2000, 1e-12, 100, decay, 0.5)
        b = get_backend("numba").pphi_train(*args, wl.copy(), wo.copy(), 0.01, 0.9, 2000, 1e-12, 100, decay, 0.5)
        np.testing.assert_allclose(a[0], b[0], rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-9, atol=1e-12)
        assert a[2] == b[2]
        np.testing.assert_array_equal(a[5], b[5])

    def test_eigh_agreement(self, rng):
        b = rng.standard_normal((12, 12))
        a = b + b.T
        w1 = np.sort(get_backend("numpy").jacobi_eigh(a.copy(), 100)[0])
        w2 = np.sort(get_backend("numba").jacobi_eigh(a.copy(), 100)[0])
        np.testing.assert_allclose(w1, w2, atol=1e-12)


class TestSelection:
    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            get_backend("fortran")

    def test_env_flag_selects_numpy(self):
        env = {**os.environ, "RESNEST_LAB_DISABLE_NUMBA": "1"}
        out = subprocess.run([sys.executable, "-c", "from resnest_lab import kernels; print(kernels.BACKEND)"],
                             env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "numpy"

    @pytest.mark.parametrize("value,expected", [("1", True), ("TRUE", True), ("on", True), ("0", False), ("", False)])
    def test_truthy_parsing(self, monkeypatch, value, expected):
        monkeypatch.setenv("RESNEST_LAB_DISABLE_NUMBA", value)
        assert kernels.numba_disabled() is expected
