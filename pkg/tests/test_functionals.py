import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qgdirac import dirac_core as dc
from qgdirac import functionals as fn
from qgdirac import graph_model as gm
from qgdirac.errors import InvalidParameters, MissingConstant, OutOfDomain

UNIT = dc.DiracParams(1.0, 1.0)
OP = dc.assemble_dirac(gm.tadpole(), UNIT, dc.Grid(h=0.1, L=5))
SPEC = fn.NonlinearitySpec(a=0.5, p=3.0)
PEN = fn.PenalizationSpec(r=3.0, mu=0.05)


def _rand(seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return scale * (rng.standard_normal(OP.N) + 1j * rng.standard_normal(OP.N))


def _smooth(seed, mass):
    """Random field built from low eigenmodes, normalised to the given mass."""
    B = OP.basis
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(OP.N) / (1.0 + np.abs(B.lam)) ** 2
    c *= math.sqrt(mass / np.sum(c ** 2))
    return B.field(c)


# -- specs -------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(a=0.0, p=3.0), dict(a=1.0, p=2.0), dict(a=1.0, p=3.0, sign=0)])
def test_spec_validation(kw):
    with pytest.raises(InvalidParameters):
        fn.NonlinearitySpec(**kw)


@pytest.mark.parametrize("r,mu", [(1.0, 0.1), (2.0, 0.0)])
def test_penalization_validation(r, mu):
    with pytest.raises(InvalidParameters):
        fn.PenalizationSpec(r, mu)


# -- Ψ --------------------------------------------------------------------------

def test_psi_trivial_values():
    assert fn.psi(OP, np.zeros(OP.N), SPEC) == 0.0
    u = np.zeros(OP.N, complex)
    u[:OP.disc.n1] = 1.0  # |u| = 1 wherever u² = 0, on the whole core
    spec = fn.NonlinearitySpec(a=3.0, p=3.0)
    assert fn.psi(OP, u, spec) == pytest.approx(2 * math.pi, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 3.0))
def test_psi_homogeneity(seed, t):
    u = _rand(seed)
    assert fn.psi(OP, t * u, SPEC) == pytest.approx(t ** 3 * fn.psi(OP, u, SPEC), rel=1e-12)
    assert fn.s_value(OP, t * u, 0.1) == pytest.approx(t * t * fn.s_value(OP, u, 0.1), rel=1e-12)


# -- action and residual ----------------------------------------------------------

def test_action_single_mode_linear():
    spec0 = fn.NonlinearitySpec(a=0.0, p=3.0, test_mode=True)
    lam, V = dc.eigen(OP, count=1, sigma=1.7)
    phi = V[:, 0]
    assert lam[0] > 0
    omega = 0.3
    assert fn.action(OP, phi, omega, spec0) == pytest.approx(0.5 * (lam[0] - omega), rel=1e-10)
    assert fn.residual_norm(OP, phi, lam[0], spec0) <= 1e-12
    assert fn.action(OP, np.zeros(OP.N), omega, SPEC) == 0.0
    assert np.all(fn.residual(OP, np.zeros(OP.N), omega, SPEC) == 0)


def test_action_projector_split():
    u = _rand(4, 0.2)
    omega = 0.4
    P = dc.spectral_projectors(OP)
    rhs = 0.5 * P.ynorm2(P.plus(u)) - 0.5 * P.ynorm2(P.minus(u))
    lhs = fn.action(OP, u, omega, SPEC) + fn.psi(OP, u, SPEC) + 0.5 * omega * OP.disc.mass(u)
    assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.parametrize("sign", [1, -1])
def test_residual_is_action_gradient(sign):
    spec = fn.NonlinearitySpec(a=0.7, p=3.0, sign=sign)
    u, omega = _rand(5, 0.3), 0.2
    for k in range(10):
        v = _rand(100 + k)
        eps = 1e-6
        fd = (fn.action(OP, u + eps * v, omega, spec) - fn.action(OP, u - eps * v, omega, spec)) / (2 * eps)
        an = sign * OP.disc.inner(fn.residual(OP, u, omega, spec), v).real
        assert fd == pytest.approx(an, rel=1e-5)


# -- T_μ and f_r -------------------------------------------------------------------

def test_t_mu_limits():
    u = _rand(6)
    Tu = fn.t_mu(OP, u, 1e-12)
    assert np.linalg.norm(Tu - u) <= 1e-8 * np.linalg.norm(u)
    lam, V = dc.eigen(OP, count=1, sigma=-2.0)
    assert np.allclose(fn.t_mu(OP, V[:, 0], 0.3), (1 + 0.3 * abs(lam[0])) * V[:, 0], atol=1e-10)
    P = dc.spectral_projectors(OP)
    assert fn.s_value(OP, u, 0.3) == pytest.approx(OP.disc.mass(u) + 0.3 * P.ynorm2(u), rel=1e-12)


def test_f_r_values():
    assert fn.f_r(0.0, 7.0) == 0.0
    assert fn.f_r(0.5, 2.0) == 0.5
    for bad in (1.0, 1.5, -0.1):
        with pytest.raises(OutOfDomain):
            fn.f_r(bad, 2.0)


@pytest.mark.parametrize("r", [2.0, 5.0, 20.0])
def test_f_r_derivative_dominates(r):
    for s in np.arange(1, 10) / 10:
        f, fp, fpp = fn.f_r(s, r), fn.f_r_prime(s, r), fn.f_r_second(s, r)
        assert fp > r / s * f > 0 and fpp > 0
        h = 1e-6
        assert fp == pytest.approx((fn.f_r(s + h, r) - fn.f_r(s - h, r)) / (2 * h), rel=1e-6)
        assert fpp == pytest.approx((fn.f_r_prime(s + h, r) - fn.f_r_prime(s - h, r)) / (2 * h), rel=1e-6)


# -- perturbed functional ------------------------------------------------------------

def test_perturbed_action_basics():
    assert fn.perturbed_action(OP, np.zeros(OP.N), SPEC, PEN) == 0.0
    with pytest.raises(OutOfDomain):
        fn.perturbed_action(OP, _smooth(0, 2.0), SPEC, PEN)


def test_penalty_radial_bound_and_convexity():
    F = fn.frame(OP, SPEC, pen=PEN)
    rng = np.random.default_rng(8)
    for k in range(20):
        c1 = F.coeffs(_smooth(k, rng.uniform(0.05, 0.8)))
        c2 = F.coeffs(_smooth(100 + k, rng.uniform(0.05, 0.8)))
        for c in (c1, c2):
            if F.in_domain(c):
                assert np.real(np.vdot(F.H_grad(c), c)) >= 2 * PEN.r * F.H(c) * (1 - 1e-12)
        th = rng.uniform()
        if F.in_domain(c1) and F.in_domain(c2):
            assert F.H(th * c1 + (1 - th) * c2) <= th * F.H(c1) + (1 - th) * F.H(c2) + 1e-12


def test_perturbed_gradient_finite_differences():
    F = fn.frame(OP, SPEC, pen=PEN)
    c = F.coeffs(_smooth(3, 0.5))
    g = F.I_pen_grad(c)
    rng = np.random.default_rng(9)
    for _ in range(50):
        x = rng.standard_normal(c.size)
        eps = 1e-6
        fd = (F.I_pen(c + eps * x) - F.I_pen(c - eps * x)) / (2 * eps)
        an = float(np.dot(g, x).real)
        assert abs(fd - an) <= 1e-5 * max(abs(an), 1e-3)


def test_hessian_vector_products():
    F = fn.frame(OP, SPEC, pen=PEN)
    c = F.coeffs(_smooth(4, 0.5))
    Hd = F.psi_hess_dense(c)
    rng = np.random.default_rng(10)
    for _ in range(5):
        x = rng.standard_normal(c.size)
        eps = 1e-6
        fd = (F.psi_grad(c + eps * x) - F.psi_grad(c - eps * x)) / (2 * eps)
        assert np.linalg.norm(Hd @ x - fd) <= 1e-5 * np.linalg.norm(fd)
        assert np.allclose(F.psi_hessvec(c, x).real, Hd @ x, rtol=1e-10, atol=1e-12)
        fdh = (F.H_grad(c + eps * x) - F.H_grad(c - eps * x)) / (2 * eps)
        assert np.linalg.norm(F.H_hessvec(c, x) - fdh) <= 1e-5 * np.linalg.norm(fdh)


# -- reduction -------------------------------------------------------------------------

def test_reduce_trivial_cases():
    assert np.all(fn.reduce(OP, np.zeros(OP.N), SPEC) == 0)
    spec0 = fn.NonlinearitySpec(a=0.0, p=3.0, test_mode=True)
    F = fn.frame(OP, spec0)
    v = F.field(np.where(F.pos, F.coeffs(_smooth(1, 1.0)), 0))
    assert np.abs(fn.reduce(OP, v, spec0)).max() <= 1e-12


@pytest.fixture(scope="module")
def reduced():
    F = fn.frame(OP, SPEC, pen=PEN)
    cv = np.where(F.pos, F.coeffs(_smooth(2, 0.3)), 0)
    c, w, info = F.reduce(cv, tol=1e-11)
    return F, cv, c, w


def test_reduce_stationary_and_maximal(reduced):
    F, cv, c, w = reduced
    assert np.linalg.norm(np.where(F.neg, F.I_pen_grad(c), 0)) <= 1e-9
    best = F.I_pen(c)
    rng = np.random.default_rng(11)
    for _ in range(100):
        probe = np.where(F.neg, rng.standard_normal(c.size), 0) * rng.uniform(1e-3, 0.1) / math.sqrt(c.size)
        if F.in_domain(c + probe):
            assert F.I_pen(c + probe) <= best + 1e-12
    x = np.where(F.neg, rng.standard_normal(c.size), 0)
    curv = -np.dot(x, F.absl * x + F.psi_hessvec(c, x).real + F.H_hessvec(c, x))
    assert curv <= -np.dot(x, x)


def test_reduce_unique_from_random_starts(reduced):
    F, cv, c, w = reduced
    rng = np.random.default_rng(12)
    for _ in range(50):
        w0 = np.where(F.neg, rng.standard_normal(c.size), 0) * 0.02 / math.sqrt(c.size)
        c2, _, _ = F.reduce(cv, w0=w0, tol=1e-11)
        assert np.abs(c2 - c).max() <= 1e-8


def test_reduced_gradient_envelope(reduced):
    F, cv, c, w = reduced
    val, g, _ = F.J(cv, tol=1e-12)
    rng = np.random.default_rng(13)
    for _ in range(5):
        x = np.where(F.pos, rng.standard_normal(c.size), 0) / math.sqrt(c.size)
        eps = 1e-6
        fd = (F.J(cv + eps * x, tol=1e-12)[0] - F.J(cv - eps * x, tol=1e-12)[0]) / (2 * eps)
        assert fd == pytest.approx(float(np.dot(g, x).real), rel=1e-5, abs=1e-9)
    radial = float(np.dot(g, cv).real)
    assert radial == pytest.approx(float(np.dot(F.I_pen_grad(c), c).real), rel=1e-8)


def test_reduced_mountain_pass_geometry():
    F = fn.frame(OP, SPEC, pen=PEN)
    assert F.J(np.zeros(OP.N))[0] == 0.0
    rng = np.random.default_rng(14)
    for _ in range(10):
        cv = np.where(F.pos, rng.standard_normal(OP.N) / (1 + F.absl) ** 2, 0)
        cv *= 0.05 / math.sqrt(F.mass(cv))
        assert F.J(cv)[0] > 0
    cv = np.where(F.pos, F.coeffs(dc.build_phi_b(OP, 0.2, "A")), 0)
    cv /= math.sqrt(F.svalue(cv))
    t = math.sqrt(0.999)
    assert F.J(t * cv)[0] < 0


# -- GNS constants -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def gns3():
    return fn.estimate_gns(OP, gm.CoreOnly(), 3.0, "Y", trials=4, seed=0)


def test_gns_p2_degenerate():
    est = fn.estimate_gns(OP, gm.CoreOnly(), 2.0, "Y", trials=2)
    assert 0.99 < est.value <= 1.0 + 1e-12


def test_gns_scale_invariance():
    u = _rand(15)
    r1 = fn.gns_ratio(OP, u, gm.CoreOnly(), 3.0)
    assert fn.gns_ratio(OP, 2 * u, gm.CoreOnly(), 3.0) == pytest.approx(r1, rel=1e-12)


def test_gns_reproducible_across_seeds():
    a = fn.estimate_gns(OP, gm.CoreOnly(), 4.0, "Y", trials=4, seed=0).value
    b = fn.estimate_gns(OP, gm.CoreOnly(), 4.0, "Y", trials=4, seed=1).value
    assert abs(a - b) <= 0.05 * max(a, b)


def test_gns_fuzz_corpus(gns3):
    rng = np.random.default_rng(16)
    fields = []
    for k in range(1000):
        if k % 2:
            fields.append(rng.standard_normal(OP.N) + 1j * rng.standard_normal(OP.N))
        else:
            fields.append(_smooth(k, 1.0))
    est = gns3.tighten(OP, fields)
    assert est.value >= gns3.value
    assert est.value == gns3.value  # ascent already beats every corpus field
    for u in fields[:200]:
        assert fn.gns_ratio(OP, u, gm.CoreOnly(), 3.0) <= est.value * (1 + 1e-9)


def test_gns_tighten_raises_value(gns3):
    low = fn.GnsEstimate(1e-6, "Y", gm.CoreOnly(), 3.0, 0)
    up = low.tighten(OP, [gns3.maximizer])
    assert up.value == pytest.approx(gns3.value, rel=1e-8)


def test_gns_sup_norm_bound():
    est = fn.estimate_gns(OP, gm.CoreOnly(), norm_kind="inf")
    assert est.value > 0
    for k in range(20):
        u = _smooth(k, 1.0)
        node, cell, _ = OP.disc.quadrature(gm.CoreOnly())
        ut = OP.disc.to_tilde(u)
        sup2 = np.max(np.abs(ut[node]) ** 2 + np.abs(ut[cell]) ** 2)
        h1 = dc.h1_norm_sq(OP, u)
        assert math.sqrt(sup2) <= est.value * h1 ** 0.25 * OP.disc.mass(u) ** 0.25 * (1 + 1e-9)


# -- thresholds ----------------------------------------------------------------------------

@pytest.mark.parametrize("m,c", [(1.0, 1.0), (0.3, 2.5)])
def test_thresholds_at_p4(m, c):
    t = fn.thresholds(dc.DiracParams(m, c), 4.0, C_K=0.5, C_G=0.5)
    assert t.a0 == pytest.approx(1.0, rel=1e-15)
    assert t.a_star0 == pytest.approx(1.0, rel=1e-15)
    assert t.a_tilde0 == pytest.approx(1.0, rel=1e-15)


def test_thresholds_subquartic_tilde_is_a0():
    t = fn.thresholds(UNIT, 3.0, C_K=1.01)
    assert t.a_tilde0 == t.a0 == pytest.approx(1 / 2.02)
    assert t.a_star0 is None


def test_thresholds_missing_constants():
    with pytest.raises(MissingConstant):
        fn.thresholds(UNIT, 3.0)
    t = fn.thresholds(UNIT, 3.0, C_K=1.0)
    with pytest.raises(MissingConstant):
        t.appendix_ok_24(0.1)


def test_appendix_predicates_monotone():
    t = fn.thresholds(UNIT, 3.0, C_K=1.0, S_2p2_K=0.8, S_inf_K=1.3)
    t5 = fn.thresholds(UNIT, 5.0, C_K=1.0, S_2p2_K=0.8, S_inf_K=1.3)
    grid = np.linspace(0.01, 3.0, 300)
    for pred in (t.appendix_ok_24, t5.appendix_ok_46):
        ok = [pred(a) for a in grid]
        assert any(ok) and not all(ok)
        first_bad = ok.index(False)
        assert not any(ok[first_bad:])


# -- level bound ------------------------------------------------------------------------------

def test_mp_level_bound_shift_limit():
    out = fn.mp_level_upper_bound(OP, fn.NonlinearitySpec(a=0.1, p=3.0), shift=0.999, b=0.2)
    assert out["bound"] == pytest.approx(0.0005)


def test_mp_level_bound_mirrored_triangle():
    op = dc.assemble_dirac(gm.triangle((1.0, 1.3, 1.7), half_lines=True), UNIT, dc.Grid(h=0.1, L=5))
    out = fn.mp_level_upper_bound(op, fn.NonlinearitySpec(a=0.1, p=3.0, sign=-1), n_ray=12)
    assert out["satisfied"] and out["value"] < 0.5


def test_gns_best_value_reached_twice():
    op = dc.assemble_dirac(gm.tadpole(), UNIT, dc.Grid(h=0.05, L=15))
    est = fn.estimate_gns(op, gm.CoreOnly(), 3.0, "Y", seed=0)
    assert est.spread < 0.05
    for u in (dc.build_phi_b(op, 0.2), dc.cycle_eigenfunction(op)):
        assert fn.gns_ratio(op, u, gm.CoreOnly(), 3.0) <= est.value
