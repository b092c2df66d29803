import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qgdirac import kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not importable")


def _case(seed, n=40, m=60, complex_=True):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n) + (1j * rng.standard_normal(n) if complex_ else 0)
    node = rng.integers(0, n // 2, m)
    cell = rng.integers(n // 2, n, m)
    w = rng.uniform(0.01, 0.1, m)
    return u, node, cell, w


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([2.5, 3.0, 4.0, 6.0]))
def test_backends_agree(seed, p):
    u, node, cell, w = _case(seed)
    d = np.random.default_rng(seed + 1).standard_normal(u.size) + 0j
    assert K._psi_sum_nb(u, node, cell, w, p) == pytest.approx(K.psi_sum_np(u, node, cell, w, p),
                                                             rel=1e-12)
    g_nb = K._psi_grad_nb(u, node, cell, w, p, np.zeros_like(u))
    assert np.allclose(g_nb, K.psi_grad_np(u, node, cell, w, p), rtol=1e-12, atol=1e-14)
    h_nb = K._psi_hessvec_nb(u, d, node, cell, w, p, np.zeros_like(u))
    assert np.allclose(h_nb, K.psi_hessvec_np(u, d, node, cell, w, p), rtol=1e-12, atol=1e-14)


def _dense(rows, cols, vals, n):
    H = np.zeros((n, n))
    np.add.at(H, (rows, cols), vals)
    return H


@pytest.mark.parametrize("p", [3.0, 4.0])
def test_hessian_triplets_agree_and_match_hessvec(p):
    u, node, cell, w = _case(7, complex_=False)
    n = u.size
    rows, cols, vals = K.psi_hess_coo_np(u, node, cell, w, p)
    Hn = _dense(rows, cols, vals, n)
    out = (np.empty(4 * node.size, np.int64), np.empty(4 * node.size, np.int64),
           np.empty(4 * node.size))
    K._psi_hess_coo_nb(u, node, cell, w, p, *out)
    assert np.allclose(_dense(*out, n), Hn, rtol=1e-12, atol=1e-14)
    x = np.random.default_rng(2).standard_normal(n)
    assert np.allclose(Hn @ x, K.psi_hessvec_np(u, x, node, cell, w, p).real, rtol=1e-11)


def test_gradient_is_derivative_of_sum():
    p = 3.0
    u, node, cell, w = _case(3, complex_=False)
    g = K.psi_grad_np(u, node, cell, w, p)
    e = np.zeros_like(u)
    for i in (0, 5, 25, 33):
        e[:] = 0
        e[i] = 1e-6
        fd = (K.psi_sum_np(u + e, node, cell, w, p) - K.psi_sum_np(u - e, node, cell, w, p)) / 2e-6
        # psi_sum = Σ w ρ^{p/2}; its derivative is p·(Σ w ρ^{p/2-1} u)
        assert fd == pytest.approx(p * g[i], rel=1e-7)


def test_backend_switch(monkeypatch):
    u, node, cell, w = _case(11)
    monkeypatch.setenv("QGDIRAC_BACKEND", "numpy")
    assert K.backend() == "numpy"
    a = K.psi_grad(u, node, cell, w, 3.0)
    monkeypatch.setenv("QGDIRAC_BACKEND", "numba")
    assert K.backend() == "numba"
    b = K.psi_grad(u, node, cell, w, 3.0)
    assert np.allclose(a, b, rtol=1e-12)


def test_zero_field_hessian_is_finite():
    u = np.zeros(10)
    node, cell, w = np.arange(5), np.arange(5, 10), np.full(5, 0.1)
    rows, cols, vals = K.psi_hess_coo(u, node, cell, w, 3.0)
    assert np.all(np.isfinite(vals))
