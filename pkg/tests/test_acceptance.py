"""Acceptance criteria, one marked group per criterion.

The terminal summary prints one PASS/FAIL line per criterion.
"""
import math
import random
import time

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from qgdirac import dirac_core as dc
from qgdirac import functionals as fn
from qgdirac import graph_model as gm
from qgdirac import solver as sv

from test_graph_model import random_connected, random_tree_core

UNIT = dc.DiracParams(1.0, 1.0)
crit = pytest.mark.criterion


# -- shared runs -----------------------------------------------------------------

@pytest.fixture(scope="module")
def tadpole_op():
    return dc.assemble_dirac(gm.tadpole(), UNIT, dc.Grid(h=0.05, L=15))


@pytest.fixture(scope="module")
def run7(tadpole_op):
    op = tadpole_op
    C = fn.estimate_gns(op, gm.CoreOnly(), 3.0, "Y", seed=0)
    a0 = fn.thresholds(UNIT, 3.0, C_K=C).a0
    spec = fn.NonlinearitySpec(a=0.2 * a0, p=3.0)
    t0 = time.time()
    rep = sv.continuation_solve(op, spec)
    elapsed = time.time() - t0
    seed = dc.build_phi_b(op, 0.05, "A")
    direct = sv.direct_solve(op, spec, "mass", seed / math.sqrt(op.disc.mass(seed)), omega0=0.9)
    return dict(op=op, spec=spec, a0=a0, C=C, rep=rep, direct=direct, elapsed=elapsed)


@pytest.fixture(scope="module")
def mirrored(tadpole_op):
    spec = fn.NonlinearitySpec(a=0.1, p=3.0, sign=-1)
    return spec, sv.continuation_solve(tadpole_op, spec)


# -- 1 -----------------------------------------------------------------------------

def _worst_gap_violation(lam, mc2=1.0):
    v = max(0.0, mc2 - float(np.min(np.abs(lam))))
    return 0.0 if v < 1e-10 * mc2 else v


@crit(1, "spectral gap on the tadpole, refinement, runtime")
def test_spectral_gap_tadpole():
    t0 = time.time()
    g = gm.tadpole()
    op = dc.assemble_dirac(g, UNIT, dc.Grid(h=0.01, L=20))
    lam = dc.eigenvalues(op)
    assert np.abs(lam).min() >= 0.95
    fine = dc.assemble_dirac(g, UNIT, dc.Grid(h=0.005, L=20))
    assert fine.N > dc.DENSE_LIMIT
    lam2 = dc.eigenvalues(fine, count=12, sigma=0.0)
    assert np.abs(lam2).min() >= 0.95
    v1, v2 = _worst_gap_violation(lam), _worst_gap_violation(lam2)
    # both are zero: the pairing never places eigenvalues inside the gap
    assert 1.8 * v2 <= v1
    assert time.time() - t0 < 60


# -- 2 -----------------------------------------------------------------------------

@crit(2, "cycle eigenfunction on the triangle core")
def test_cycle_eigenfunction_triangle_core():
    g = gm.parse_graph({"vertices": ["x", "y", "z"],
                        "edges": [{"id": "xy", "from": "x", "to": "y", "length": 1.0},
                                  {"id": "yz", "from": "y", "to": "z", "length": 1.3},
                                  {"id": "zx", "from": "z", "to": "x", "length": 1.7},
                                  {"id": "H", "from": "x", "halfline": True}]})
    op = dc.assemble_dirac(g, UNIT, dc.Grid(h=0.02, L=10))
    phi = dc.cycle_eigenfunction(op)
    d = op.disc
    assert math.sqrt(d.mass(dc.apply(op, phi) + op.mc2 * phi)) <= 1e-12
    P = dc.spectral_projectors(op)
    assert abs(P.ynorm2(phi) - op.mc2 * d.mass(phi)) <= 1e-10
    assert math.sqrt(d.mass(P.plus(phi))) <= 1e-10


# -- 3 -----------------------------------------------------------------------------

@crit(3, "discrete spectrum matches the secular oracle")
@pytest.mark.parametrize("g", [gm.interval(math.pi), gm.cycle(2 * math.pi),
                               gm.triangle((1.0, 1.3, 1.7)), gm.star((1.0, 1.2, 1.5))],
                         ids=["interval", "cycle", "triangle", "star"])
def test_secular_oracle(g):
    op = dc.assemble_dirac(g, UNIT, dc.Grid(h=0.005))
    lam = dc.eigenvalues(op)
    lam = lam[np.abs(lam) <= 3.0]
    roots = np.array(dc.secular_eigenvalues(g, UNIT, (-3.01, 3.01)))
    roots = roots[np.abs(roots) <= 3.0 + 1e-3]
    assert len(roots) == len(lam)
    r, c = linear_sum_assignment(np.abs(roots[:, None] - lam[None, :]))
    assert np.abs(roots[r] - lam[c]).max() <= 1e-3


# -- 4 -----------------------------------------------------------------------------

@crit(4, "test-function estimates on the tadpole")
@pytest.mark.parametrize("b", [0.1, 0.01])
def test_phi_b_estimates(b):
    op = dc.assemble_dirac(gm.tadpole(), UNIT, dc.Grid(h=0.05, L=1.0 / b + 20))
    d, m = op.disc, op.mc2
    n_half = len(op.graph.half_lines)
    phi = dc.build_phi_b(op, b, "A")
    assert d.mass(phi) == pytest.approx(n_half / (3 * b) + 2 * math.pi, rel=0.01)
    P = dc.spectral_projectors(op)
    pm, pp = P.minus(phi), P.plus(phi)
    rhs = 1.05 * n_half * b / (2 * m)
    assert P.ynorm2(pm) + m * d.mass(pm) <= rhs
    assert P.ynorm2(pp) - m * d.mass(pp) <= rhs
    out = fn.mp_level_upper_bound(op, fn.NonlinearitySpec(a=0.1, p=3.0), b=b)
    assert out["satisfied"] and out["value"] < m / 2


# -- 5 -----------------------------------------------------------------------------

@crit(5, "penalization laws on random samples")
def test_penalization_laws():
    op = dc.assemble_dirac(gm.tadpole(), UNIT, dc.Grid(h=0.1, L=5))
    spec = fn.NonlinearitySpec(a=0.5, p=3.0)
    rng = np.random.default_rng(5)
    B = op.basis
    for _ in range(200):
        r, mu = rng.uniform(1.05, 20), 10 ** rng.uniform(-3, 0)
        F = fn.Frame(op, spec, 0.0, fn.PenalizationSpec(r, mu))
        def sample():
            c = rng.standard_normal(op.N) / (1 + np.abs(B.lam)) ** rng.uniform(0.5, 2)
            return c * math.sqrt(rng.uniform(0.01, 0.99) / F.svalue(c))
        c1, c2 = sample(), sample()
        s = F.svalue(c1)
        assert fn.f_r_prime(s, r) > r / s * fn.f_r(s, r)
        assert float(np.dot(F.H_grad(c1), c1)) >= 2 * r * F.H(c1) * (1 - 1e-12)
        mid = 0.5 * (c1 + c2)
        assert F.H(mid) <= 0.5 * (F.H(c1) + F.H(c2)) + 1e-12


# -- 6 -----------------------------------------------------------------------------

def _fd_check(f, grad, x0, dirs, eps=1e-6, rtol=1e-5):
    worst = 0.0
    for d in dirs:
        fd = (f(x0 + eps * d) - f(x0 - eps * d)) / (2 * eps)
        an = float(np.dot(grad, d).real)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    assert worst <= rtol, worst


@crit(6, "analytic gradients against central differences")
@pytest.mark.parametrize("which", ["I_omega", "I_pen", "J_pen"])
def test_gradients(which):
    op = dc.assemble_dirac(gm.tadpole(), UNIT, dc.Grid(h=0.1, L=5))
    spec = fn.NonlinearitySpec(a=0.5, p=3.0)
    pen = fn.PenalizationSpec(3.0, 0.05)
    F = fn.Frame(op, spec, 0.0, pen)
    rng = np.random.default_rng(6)
    B = op.basis
    c = rng.standard_normal(op.N) / (1 + np.abs(B.lam)) ** 2
    c *= math.sqrt(0.4 / F.svalue(c))
    dirs = [rng.standard_normal(op.N) for _ in range(50)]
    if which == "I_omega":
        _fd_check(lambda x: F.I_omega(x, 0.3), F.I_omega_grad(c, 0.3), c, dirs)
    elif which == "I_pen":
        _fd_check(F.I_pen, F.I_pen_grad(c), c, dirs)
    else:
        cv = np.where(F.pos, c, 0.0)
        _, g, _ = F.J(cv, tol=1e-13)
        dirs = [np.where(F.pos, d, 0.0) for d in dirs]
        _fd_check(lambda x: F.J(x, tol=1e-13)[0], g, cv, dirs)


# -- 7 -----------------------------------------------------------------------------

@crit(7, "end-to-end normalized solution on the tadpole")
def test_normalized_solution(run7):
    rep, op = run7["rep"], run7["op"]
    assert run7["a0"] > 0 and run7["spec"].a == pytest.approx(0.2 * run7["a0"])
    assert rep.branch == sv.NORMALIZED
    assert abs(rep.mass - 1) <= 1e-8
    assert -1 < rep.omega < 1
    assert rep.residual_norm <= 1e-8
    assert 0 < rep.energy_level < 0.5
    assert abs(run7["direct"].omega - rep.omega) <= 1e-6
    assert run7["elapsed"] < 600


# -- 8 -----------------------------------------------------------------------------

def _eventually_monotone(xs, noise=1e-3, tail=3):
    """Some suffix of length ≥ tail is monotone up to ``noise``."""
    for start in range(len(xs) - tail + 1):
        d = np.diff(xs[start:])
        if np.all(d <= noise) or np.all(d >= -noise):
            return True
    return False


@crit(8, "stage multipliers bounded by twice the stage level, eventually monotone")
def test_multiplier_tracking(run7):
    stages = run7["rep"].stages
    omegas = [s.omega for s in stages]
    assert _eventually_monotone(omegas)
    bad = [(k, s.omega, s.level) for k, s in enumerate(stages) if not s.omega <= 2 * s.level + 0.1]
    assert not bad, f"stages violating omega_n <= 2 level_n + 0.1: {bad}"


def test_multiplier_bounded_by_limiting_level(run7):
    rep = run7["rep"]
    for s in rep.stages:
        assert s.omega <= 2 * rep.energy_level + 0.1
        assert s.omega == pytest.approx(2 * fn.f_r_prime(s.svalue, s.r), rel=1e-8)


# -- 9 -----------------------------------------------------------------------------

def _below_unit_mass(op, spec, rep, target):
    a_new = spec.a * (rep.mass / target) ** ((spec.p - 2) / 2)
    u = sv.rescale_coupling(op, spec, rep.u, a_new)
    spec2 = fn.NonlinearitySpec(a=a_new, p=spec.p, region=spec.region)
    assert fn.residual_norm(op, u, 0.0, spec2) <= 1e-8
    assert op.disc.mass(u) == pytest.approx(target, rel=1e-10)
    return u, spec2


def _chain(op, u, spec, variant, p_const, kind, s_inf=None):
    est = fn.estimate_gns(op, spec.region, p_const, kind, trials=4).tighten(op, [u])
    return sv.verify_nonexistence_chain(op, u, spec, variant, est, s_inf=s_inf)


@pytest.fixture(scope="module")
def zero_p3(run7):
    op, spec, rep = run7["op"], run7["spec"], run7["rep"]
    z = sv.zero_frequency_solution(op, spec, rep.u, rep.omega)
    assert abs(z.omega) <= 1e-12 and z.residual_norm <= 1e-8
    return (op,) + _below_unit_mass(op, spec, z, 0.8)


@pytest.fixture(scope="module")
def zero_p4(tadpole_op):
    op = tadpole_op
    spec = fn.NonlinearitySpec(a=0.3, p=4.0)
    seed = dc.build_phi_b(op, 0.05, "A")
    start = sv.direct_solve(op, spec, "mass", seed, omega0=0.9)
    z = sv.zero_frequency_solution(op, spec, start.u, start.omega)
    u, spec2 = _below_unit_mass(op, spec, z, 0.9)
    assert 0 < fn.energy_level(op, u, spec2) <= op.mc2 / 2
    return op, u, spec2


@crit(9, "non-existence chains on zero-frequency solutions")
@pytest.mark.parametrize("variant", ["subcritical", "h1-sub", "h1-energy"])
def test_chain_p3(zero_p3, variant):
    op, u, spec = zero_p3
    if variant == "subcritical":
        rep = _chain(op, u, spec, variant, 3.0, "Y")
    elif variant == "h1-sub":
        rep = _chain(op, u, spec, variant, 4.0, "H1")
    else:
        s_inf = fn.estimate_gns(op, spec.region, norm_kind="inf")
        rep = _chain(op, u, spec, variant, 4.0, "H1", s_inf=s_inf)
    assert rep.consistent, rep.failing_step
    assert rep.ratio >= 1


@crit(9, "non-existence chains on zero-frequency solutions")
@pytest.mark.parametrize("variant", ["supercritical", "h1-energy"])
def test_chain_p4(zero_p4, variant):
    op, u, spec = zero_p4
    if variant == "supercritical":
        rep = _chain(op, u, spec, variant, 4.0, "Y")
    else:
        s_inf = fn.estimate_gns(op, spec.region, norm_kind="inf")
        rep = _chain(op, u, spec, variant, 6.0, "H1", s_inf=s_inf)
    assert rep.consistent, rep.failing_step
    assert rep.ratio >= 1


# -- 10 ----------------------------------------------------------------------------

@crit(10, "unique continuation on tree cores, none on cycles")
def test_zero_propagation_random_graphs():
    for seed in range(100):
        rng = random.Random(seed)
        g = random_tree_core(rng, rng.randint(2, 9))
        assert gm.core_is_tree_with_at_most_one_free_leaf(g)[0]
        assert gm.zero_propagation(g, {h.id for h in g.half_lines})[1]
    for seed in range(100):
        rng = random.Random(1000 + seed)
        g = random_connected(rng, rng.randint(2, 8), rng.randint(1, 3), loops=rng.randrange(2),
                             halfs=rng.randint(1, 3))
        assert gm.find_simple_cycle(g) is not None
        assert not gm.zero_propagation(g, {h.id for h in g.half_lines})[1]


@crit(10, "unique continuation on tree cores, none on cycles")
def test_unique_continuation_on_solved_fields(run7, mirrored, tadpole_op):
    op = tadpole_op
    # mirrored solution: u² constant on the loop, numerically zero on the half-line
    spec, rep = mirrored
    assert rep.branch == sv.NORMALIZED
    e = op.disc.by_id["H"]
    assert max(np.abs(rep.u[e.nodes]).max(), np.abs(rep.u[e.cells]).max()) < 1e-8
    assert gm.zero_propagation(op.graph, {"H"}) == (frozenset({"H"}), False)
    assert sv.numerical_unique_continuation(op, rep.u) is False
    assert sv.numerical_unique_continuation(op, run7["rep"].u) is False
    # solved field on a tree core: half-lines carry mass, the propagation has nothing to force
    g = gm.star((1.0, 1.5, 0.7), 2)
    op2 = dc.assemble_dirac(g, UNIT, dc.Grid(h=0.05, L=15))
    rep2 = sv.continuation_solve(op2, fn.NonlinearitySpec(a=0.2, p=3.0),
                                 sv.ContinuationSchedule.default(stages=6))
    assert rep2.branch == sv.NORMALIZED
    assert sv.numerical_unique_continuation(op2, rep2.u) is False
    assert gm.zero_propagation(g, {h.id for h in g.half_lines})[1]


# -- 11 ----------------------------------------------------------------------------

@crit(11, "mirror symmetry of interior residuals")
def test_mirror_symmetry(run7, mirrored, tadpole_op):
    for spec, rep in ((run7["spec"], run7["rep"]), mirrored):
        assert sv.symmetry_defect(tadpole_op, rep.u, rep.omega, spec) <= 1e-10


# -- 12 ----------------------------------------------------------------------------

@crit(12, "pendant transplant keeps the solution and its mass")
def test_pendant_transplant(tadpole_op):
    op = tadpole_op
    ell = 1.0
    spec = fn.NonlinearitySpec(a=0.2, p=4.0, region=gm.CoreUnionSegment("H", ell))
    rep = sv.continuation_solve(op, spec)
    assert rep.branch == sv.NORMALIZED
    op2, v = sv.transplant_pendant(op, rep.u, "H", ell)
    assert op2.graph.edge("H~seg").length == ell
    spec2 = fn.NonlinearitySpec(a=0.2, p=4.0, region=gm.CoreOnly())
    assert fn.residual_norm(op2, v, rep.omega, spec2) <= 1e-8
    assert abs(op2.disc.mass(v) - rep.mass) <= 1e-10
