"""Normalized solutions: penalised mountain-pass continuation, a direct
constrained Newton solver, dichotomy classification and a-posteriori checks.

All nonlinear iterations run in the real gauge: in the tilde coordinates
``ut = (u¹, -i u²)`` the real subspace is invariant, and restricting to it
removes the U(1) phase degeneracy of the equation.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import dirac_core as dc
from . import functionals as fn
from . import graph_model as gm
from . import kernels
from .errors import (CollapseToZero, InvalidParameters, InvariantViolation, LeftUMu,
                     MissingConstant, NoMinimaxPath, NonConvergence, NumericsError,
                     OutOfDomain, SingularJacobian, StageFailure, WrongRegime)

log = logging.getLogger(__name__)

NORMALIZED, SUBNORMALIZED, TRIVIAL, FAILED, UNDECIDED = (
    "Normalized", "SubNormalized", "Trivial", "Failed", "Undecided")


@dataclass(frozen=True)
class ContinuationSchedule:
    r: tuple
    mu: tuple
    tol: float = 1e-10

    def __post_init__(self):
        if len(self.r) != len(self.mu) or not self.r:
            raise InvalidParameters("r and mu need the same, non-zero length")
        if any(b <= a for a, b in zip(self.r, self.r[1:])):
            raise InvalidParameters("r must be strictly increasing")
        if any(b >= a for a, b in zip(self.mu, self.mu[1:])):
            raise InvalidParameters("mu must be strictly decreasing")
        if self.r[0] <= 1 or self.mu[-1] <= 0:
            raise InvalidParameters("need r > 1 and mu > 0")

    @classmethod
    def default(cls, stages: int = 12, r0: float = 2.0, mu0: float = 0.1, tol: float = 1e-10):
        return cls(tuple(r0 + n for n in range(stages)),
                   tuple(mu0 * 2.0 ** (-n) for n in range(stages)), tol)

    def stages(self):
        return [fn.PenalizationSpec(r, m) for r, m in zip(self.r, self.mu)]


@dataclass
class StageRecord:
    r: float
    mu: float
    omega: float
    level: float
    mass: float
    svalue: float
    grad_norm: float
    method: str


@dataclass
class SolveReport:
    u: np.ndarray
    omega: float
    mass: float
    energy_level: float
    residual_norm: float
    branch: str
    shift: float = 0.0
    omega_track: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def check_invariants(self, mc2: float):
        """Raise InvariantViolation if the branch label is not backed by the numbers."""
        if self.branch == NORMALIZED:
            ok = (abs(self.mass - 1) <= 1e-8 and -mc2 < self.omega < mc2
                  and self.residual_norm <= 1e-8 and self.energy_level > 0)
        elif self.branch == SUBNORMALIZED:
            ok = (self.mass < 1 and abs(self.omega - self.shift) <= 1e-6
                  and self.residual_norm <= 1e-8 and math.sqrt(self.mass) >= 1e-6
                  and self.energy_level > 0)
        else:
            ok = True
        if not ok:
            raise InvariantViolation(f"report labelled {self.branch} fails its invariants")
        return True


# -- helpers -----------------------------------------------------------------

def _gauge(op, u):
    """Rotate the phase so the largest |u¹| entry is real positive."""
    u = np.asarray(u, dtype=complex)
    if not np.any(u):
        return u
    n1 = op.disc.n1
    k = int(np.argmax(np.abs(u[:n1])))
    if abs(u[k]) == 0:
        k = int(np.argmax(np.abs(u)))
        ph = u[k] / abs(u[k]) if k < n1 else (u[k] / 1j) / abs(u[k])
    else:
        ph = u[k] / abs(u[k])
    return u / ph if abs(ph) > 0 else u


def _real_tilde(op, u):
    ut = op.disc.to_tilde(_gauge(op, u))
    return ut.real.copy(), float(np.linalg.norm(ut.imag))


def _report_from_tilde(op, spec, ut, omega, shift, branch, **diag):
    u = op.disc.from_tilde(ut)
    u = _gauge(op, u)
    return SolveReport(u=u, omega=float(omega), mass=op.disc.mass(u),
                       energy_level=fn.energy_level(op, u, spec, shift),
                       residual_norm=fn.residual_norm(op, u, omega, spec),
                       branch=branch, shift=float(shift), diagnostics=diag)


# -- mountain pass -----------------------------------------------------------

@dataclass
class CriticalPoint:
    c: np.ndarray           # full coefficient vector v + h(v)
    level: float
    grad_norm: float
    omega: float            # 2 f_r'(S)
    svalue: float
    method: str
    ray_max: Optional[float] = None


def ray_maximizer(F: fn.Frame, cv, n_grid: int = 40):
    """Maximise g(t) = J(t v) for t with (T_μ tv, tv) < 1. Returns (t*, J*, c*)."""
    smax = F.svalue(cv)
    tmax = 1.0 / math.sqrt(smax)
    cache = {}

    def g(t):
        if t in cache:
            return cache[t][0]
        try:
            val, _, c = F.J(t * cv)
        except (LeftUMu, NonConvergence, OutOfDomain):
            val, c = -np.inf, None
        cache[t] = (val, c)
        return val

    ts = tmax * np.linspace(0, 0.999, n_grid + 1)[1:]
    vals = np.array([g(t) for t in ts])
    k = int(np.argmax(vals))
    lo = ts[max(k - 1, 0)]
    hi = ts[min(k + 1, len(ts) - 1)]
    if hi > lo:
        res = sopt.minimize_scalar(lambda t: -g(t), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10 * tmax})
        t = res.x if -res.fun >= vals[k] else ts[k]
    else:
        t = ts[k]
    val = g(t)
    return t, val, cache[t][1]


def _pen_hessian(F: fn.Frame, c):
    """Dense Hessian of I_{r,μ} in real spectral coordinates."""
    Hm = -F.psi_hess_dense(c)
    Hm[np.diag_indices_from(Hm)] += F.lam
    if F.pen is not None:
        s = F.svalue(c)
        dcv = F.d * c
        Hm[np.diag_indices_from(Hm)] -= 2.0 * fn.f_r_prime(s, F.pen.r) * F.d
        Hm -= 4.0 * fn.f_r_second(s, F.pen.r) * np.outer(dcv, dcv)
    return Hm


def newton_critical(F: fn.Frame, c0, tol: float = 1e-10, maxit: int = 40):
    """Damped Newton on ∇I_{r,μ} = 0 for real coefficients."""
    c = np.real(np.asarray(c0)).copy()
    if not F.in_domain(c):
        raise LeftUMu("Newton start outside U_mu")
    g = F.I_pen_grad(c)
    gn = float(np.linalg.norm(g))
    hist = [gn]
    for it in range(maxit):
        if gn <= tol:
            break
        H = _pen_hessian(F, c)
        try:
            step = sla.solve(H, -g, assume_a="sym")
        except (sla.LinAlgError, ValueError) as exc:
            raise SingularJacobian(str(exc)) from exc
        t = 1.0
        while True:
            cand = c + t * step
            if F.in_domain(cand):
                g2 = F.I_pen_grad(cand)
                gn2 = float(np.linalg.norm(g2))
                if gn2 < (1 - 1e-4 * t) * gn or (gn2 < 1e-12 and gn2 <= gn * 1.01):
                    break
            t *= 0.5
            if t < 1e-8:
                raise NonConvergence(f"Newton line search failed at |grad| = {gn:.3e}")
        c, g, gn = cand, g2, gn2
        hist.append(gn)
    if gn > tol:
        raise NonConvergence(f"Newton stopped at |grad| = {gn:.3e}")
    return c, hist


def minimax_descent(F: fn.Frame, cv0, tol: float = 1e-7, maxit: int = 300):
    """Steepest descent of m(v) = max_t J(t v) on the unit sphere of the
    positive block, in the metric induced by |λ|."""
    pos = F.pos
    v = np.where(pos, np.real(cv0), 0.0)
    v /= np.linalg.norm(v)
    t, m, c = ray_maximizer(F, v)
    if c is None or not np.isfinite(m):
        raise NoMinimaxPath("no admissible ray")
    step = 1.0
    for it in range(maxit):
        _, gJ, c = F.J(t * v, w0=c - t * v)
        g = t * np.real(gJ)
        g -= np.dot(g, v) * v
        pg = np.where(pos, g / F.absl, 0)
        pg -= np.dot(pg, v) * v
        gnorm = float(np.sqrt(np.dot(g, pg)))
        if gnorm <= tol:
            return t, v, c, m
        while True:
            vn = v - step * pg
            vn /= np.linalg.norm(vn)
            tn, mn, cn = ray_maximizer(F, vn)
            if cn is not None and mn <= m - 1e-4 * step * gnorm ** 2:
                v, t, m, c = vn, tn, mn, cn
                step = min(step * 2.0, 1e3)
                break
            step *= 0.5
            if step < 1e-10:
                return t, v, c, m
    return t, v, c, m


def mountain_pass_solve(op, spec, pen, shift: float = 0.0, seed=None, b: float = 0.05,
                        tol: float = 1e-10, c_start=None) -> CriticalPoint:
    """Critical point of J_{r,μ} at the mountain-pass level.

    Starts from ``c_start`` (real spectral coefficients, a warm start), from
    the field ``seed``, or from the ray maximiser along the positive part of
    the variant-A test spinor (the cycle eigenfunction for sign -1). Solves
    ∇I_{r,μ} = 0 by damped Newton and falls back to minimax descent.
    """
    F = fn.Frame(op, spec, shift, pen)
    ray_max = None
    c0 = None
    if c_start is None and seed is not None:
        c_start = np.real(F.coeffs(_gauge(op, seed)))
    if c_start is not None:
        c0 = np.real(np.asarray(c_start, dtype=complex)).copy()
        if np.linalg.norm(c0) < 1e-8 or not F.in_domain(c0):
            c0 = None
    if c0 is None:
        phi = dc.build_phi_b(op, b, "A") if spec.sign == 1 else dc.cycle_eigenfunction(op)
        cv = np.where(F.pos, np.real(F.coeffs(_gauge(op, phi))), 0.0)
        if np.linalg.norm(cv) == 0:
            raise NoMinimaxPath("seed has no component in the positive block")
        cv /= np.linalg.norm(cv)
        _, ray_max, c0 = ray_maximizer(F, cv)
        if c0 is None:
            raise NoMinimaxPath("ray maximisation failed")
    attempts = []
    try:
        c, hist = newton_critical(F, c0, tol=tol)
        method = "newton"
    except NumericsError as exc:
        attempts.append(str(exc))
        c = None
    if c is not None and not _acceptable(F, c, ray_max):
        attempts.append("newton reached a non mountain-pass critical point")
        c = None
    if c is None and ray_max is None:
        # warm start rejected: re-scale along its own positive part first
        cv = np.where(F.pos, c0, 0.0)
        if np.linalg.norm(cv) > 0:
            _, rm, cr = ray_maximizer(F, cv / np.linalg.norm(cv))
            if cr is not None:
                try:
                    c, hist = newton_critical(F, cr, tol=tol)
                    method = "ray+newton"
                    if not _acceptable(F, c, rm):
                        c = None
                except NumericsError as exc:
                    attempts.append(str(exc))
                    c = None
                if c is None:
                    c0, ray_max = cr, rm
    if c is None:
        t, v, cfull, m = minimax_descent(F, c0)
        try:
            c, hist = newton_critical(F, cfull, tol=tol)
        except NumericsError as exc:
            raise NonConvergence("; ".join(attempts + [str(exc)])) from exc
        method = "minimax+newton"
        if ray_max is None:
            ray_max = m
    if F.mass(c) < 1e-12:
        raise CollapseToZero("critical point is trivial")
    s = F.svalue(c)
    return CriticalPoint(c, F.I_pen(c), float(np.linalg.norm(F.I_pen_grad(c))),
                         2.0 * fn.f_r_prime(s, pen.r), s, method, ray_max)


def _acceptable(F, c, ray_max):
    if F.mass(c) < 1e-12:
        return False
    lvl = F.I_pen(c)
    if lvl <= 0:
        return False
    if ray_max is not None and lvl > ray_max * (1 + 1e-8) + 1e-12:
        return False
    return True


# -- continuation ------------------------------------------------------------

def continuation_solve(op, spec, schedule: Optional[ContinuationSchedule] = None,
                       shift: float = 0.0, seed=None, b: float = 0.05, polish: bool = True):
    """Penalised mountain-pass continuation with dichotomy classification.

    Each stage is warm-started from the previous critical point. The finite
    stages do not reach unit mass (the penalty only confines (T_μu,u)₂ < 1),
    so the terminal decision uses the multiplier trend: a multiplier bounded
    away from 0 is polished to a unit-mass solution by :func:`direct_solve`;
    a vanishing multiplier with mass below 1 - 1e-3 is polished at ω = shift.
    """
    schedule = schedule or ContinuationSchedule.default()
    t0 = time.time()
    F0 = fn.Frame(op, spec, shift)
    stages, c = [], None
    cp = None
    for pen in schedule.stages():
        try:
            cp = mountain_pass_solve(op, spec, pen, shift, b=b, tol=schedule.tol,
                                     seed=seed if c is None else None, c_start=c)
        except NumericsError as exc:
            prev, cp = cp, None
            if c is not None:
                try:
                    cp = mountain_pass_solve(op, spec, pen, shift, b=b, tol=schedule.tol)
                except NumericsError:
                    cp = None
            if cp is None:
                last = _stage_report(op, spec, shift, stages, prev) if stages else None
                raise StageFailure(f"stage r={pen.r}, mu={pen.mu}: {exc}", last) from exc
        c = cp.c
        log.info("stage r=%g mu=%g: omega=%.6g level=%.6g S=%.6g (%s)", pen.r, pen.mu, cp.omega,
                 cp.level, cp.svalue, cp.method)
        stages.append(StageRecord(pen.r, pen.mu, cp.omega, cp.level, F0.mass(cp.c), cp.svalue,
                                  cp.grad_norm, cp.method))
    rep = _stage_report(op, spec, shift, stages, cp)
    if polish:
        rep = _classify(op, spec, shift, rep)
    rep.diagnostics["runtime_s"] = time.time() - t0
    return rep


def _stage_report(op, spec, shift, stages, cp):
    F = fn.Frame(op, spec, shift)
    u = _gauge(op, F.field(cp.c))
    last = stages[-1]
    omega = shift + last.omega
    return SolveReport(u=u, omega=omega, mass=op.disc.mass(u),
                       energy_level=fn.energy_level(op, u, spec, shift),
                       residual_norm=fn.residual_norm(op, u, omega, spec), branch=UNDECIDED,
                       shift=shift, omega_track=[s.omega for s in stages], stages=list(stages),
                       diagnostics=dict(stage_level=last.level, stage_mass=last.mass))


MASS_BAND = 1e-6
OMEGA_ZERO = 1e-6
SUB_MASS = 1 - 1e-3


def _classify(op, spec, shift, rep: SolveReport) -> SolveReport:
    mc2 = op.mc2
    w_last = rep.omega_track[-1]
    if abs(rep.mass - 1) <= MASS_BAND:
        branch_hint = NORMALIZED
    elif w_last < OMEGA_ZERO and rep.mass < SUB_MASS:
        branch_hint = SUBNORMALIZED
    elif w_last >= OMEGA_ZERO:
        branch_hint = NORMALIZED
    else:
        branch_hint = UNDECIDED
    rep.diagnostics["stage_branch_hint"] = branch_hint
    try:
        if branch_hint == NORMALIZED:
            seed = rep.u / math.sqrt(rep.mass)
            pol = direct_solve(op, spec, "mass", seed, omega0=rep.omega, target=1.0)
            if pol.branch == NORMALIZED:
                pol.omega_track, pol.stages, pol.shift = rep.omega_track, rep.stages, shift
                pol.diagnostics.update(stage_level=rep.diagnostics["stage_level"],
                                       stage_omega=rep.omega, stage_mass=rep.mass,
                                       stage_branch_hint=branch_hint,
                                       energy_frame=fn.energy_level(op, pol.u, spec, shift))
                return pol
        elif branch_hint == SUBNORMALIZED:
            pol = direct_solve(op, spec, "omega", rep.u, omega0=shift, shift=shift)
            if pol.mass < 1 and pol.residual_norm <= 1e-8:
                pol.branch = SUBNORMALIZED
                pol.omega_track, pol.stages = rep.omega_track, rep.stages
                pol.diagnostics.update(stage_level=rep.diagnostics["stage_level"],
                                       stage_branch_hint=branch_hint)
                return pol
    except NumericsError as exc:
        rep.diagnostics["polish_error"] = str(exc)
    rep.branch = UNDECIDED
    return rep


# -- direct Newton -----------------------------------------------------------

def direct_solve(op, spec, mode: str, initial, omega0: Optional[float] = None,
                 target: float = 1.0, shift: float = 0.0, tol: float = 1e-11,
                 maxit: int = 60) -> SolveReport:
    """Newton on the discrete equation, at fixed ω (``mode='omega'``) or at
    fixed mass with ω as unknown multiplier (``mode='mass'``).

    Works on the real part of the gauge-fixed tilde field; the discarded
    imaginary part is reported as ``gauge_defect``.
    """
    if mode not in ("omega", "mass"):
        raise InvalidParameters(f"mode must be 'omega' or 'mass', got {mode!r}")
    if omega0 is None:
        raise InvalidParameters("omega0 required")
    d = op.disc
    w = d.weights
    ut, gdef = _real_tilde(op, initial)
    if mode == "mass":
        ut *= math.sqrt(target / float(np.sum(w * ut * ut)))
    omega = float(omega0)
    node, cell, qw = d.quadrature(spec.region)
    Ar = op.Ar
    sgn = spec.sign
    N = op.N

    def resid(x, om):
        g = spec.a * kernels.psi_grad(x, node, cell, qw, spec.p) if spec.a else 0.0
        F = sgn * (Ar @ x) - om * w * x - g
        if mode == "mass":
            return F, float(np.sum(w * x * x) - target)
        return F, 0.0

    def merit(F, e):
        return math.sqrt(float(np.sum(F * F / w)) + e * e)

    F, e = resid(ut, omega)
    r = merit(F, e)
    hist = [r]
    for it in range(maxit):
        if r <= tol:
            break
        if spec.a:
            rows, cols, vals = kernels.psi_hess_coo(ut, node, cell, qw, spec.p)
            Hn = sp.csr_matrix((spec.a * vals, (rows, cols)), shape=(N, N))
        else:
            Hn = sp.csr_matrix((N, N))
        Jm = (sgn * Ar - omega * sp.diags(w) - Hn).tocsc()
        if mode == "mass":
            wu = (w * ut)[:, None]
            K = sp.bmat([[Jm, sp.csc_matrix(-wu)], [sp.csc_matrix(2 * wu.T), None]], format="csc")
            rhs = -np.concatenate([F, [e]])
        else:
            K, rhs = Jm, -F
        try:
            sol = spla.spsolve(K, rhs)
        except Exception as exc:  # pragma: no cover
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(sol)):
            raise SingularJacobian("singular Newton matrix")
        dx = sol[:N]
        dom = sol[N] if mode == "mass" else 0.0
        t = 1.0
        while True:
            x2, om2 = ut + t * dx, omega + t * dom
            F2, e2 = resid(x2, om2)
            r2 = merit(F2, e2)
            if r2 < (1 - 1e-4 * t) * r or r2 < tol:
                break
            t *= 0.5
            if t < 1e-10:
                break
        if t < 1e-10:
            break
        ut, omega, F, e, r = x2, om2, F2, e2, r2
        hist.append(r)
    if r > max(tol, 1e-9):
        raise NonConvergence(f"direct solve stalled at residual {r:.3e}")
    u = d.from_tilde(ut)
    if math.sqrt(d.mass(u)) < 1e-6:
        raise CollapseToZero("direct solve converged to the trivial solution")
    branch = UNDECIDED
    rep = _report_from_tilde(op, spec, ut, omega, shift, branch, residual_history=hist,
                             convergence_order=_order(hist), gauge_defect=gdef, mode=mode)
    if mode == "mass" and abs(rep.mass - target) <= 1e-8 and target == 1.0:
        if -op.mc2 < rep.omega < op.mc2 and rep.residual_norm <= 1e-8 and rep.energy_level > 0:
            rep.branch = NORMALIZED
    elif mode == "omega" and abs(omega - shift) <= 1e-6 and rep.mass < 1 and rep.residual_norm <= 1e-8:
        rep.branch = SUBNORMALIZED
    return rep


ROUNDOFF = 1e-13


def _order(hist):
    """Observed order from the last three residuals above the round-off floor."""
    h = [x for x in hist if x > ROUNDOFF]
    if len(h) < 3:
        return None
    a, b, c = h[-3], h[-2], h[-1]
    if not (a > b > c) or b >= 1 or a >= 1:
        return None
    return math.log(c / b) / math.log(b / a)


# -- non-existence chains ----------------------------------------------------

@dataclass
class ChainStep:
    name: str
    lhs: float
    rhs: float
    holds: bool


@dataclass
class ChainReport:
    variant: str
    steps: list
    ratio: float
    consistent: bool

    @property
    def failing_step(self):
        for s in self.steps:
            if not s.holds:
                return s.name
        return None


def _step(name, lhs, rhs, rtol):
    return ChainStep(name, float(lhs), float(rhs), bool(lhs <= rhs * (1 + rtol) + 1e-300))


def verify_nonexistence_chain(op, u, spec, variant: str, constant, s_inf=None, rtol: float = 1e-6):
    """Evaluate every inequality of a non-existence argument on a discrete
    ω = 0 solution ``u``.

    Variants
    --------
    ``'subcritical'`` (2 < p < 4), constant C_{p,K}; ``'supercritical'`` (p ≥ 4,
    needs energy ≤ mc²/2), constant C_{p,G} on the nonlinearity region;
    ``'h1-sub'`` (2 < p < 4), constant S_{2p-2,K}; ``'h1-energy'``
    (2 < p < 6, energy ≤ mc²/2), constants S_{2p-2,K} and ``s_inf``.

    Returns the terminal ratio, which must be ≥ 1 for a genuine solution.
    """
    C = float(getattr(constant, "value", constant))
    F = fn.Frame(op, spec, 0.0)
    c = F.coeffs(u)
    mass = F.mass(c)
    if mass < 1e-12:
        raise WrongRegime("trivial field")
    if mass >= 1:
        raise WrongRegime("chain needs mass < 1")
    p, a, mc2, cc = spec.p, spec.a, op.mc2, op.params.c
    pos = F.pos
    cp, cm = np.where(pos, c, 0), np.where(pos, 0, c)
    Y = F.ynorm2(c)
    Yp, Ym = F.ynorm2(cp), F.ynorm2(cm)
    Lp = F.lp(c)
    Lpp, Lpm = F.lp(cp), F.lp(cm)
    m2p, m2m = F.mass(cp), F.mass(cm)
    energy = F.energy(c)
    g = F.psi_grad(c)
    steps = []
    if variant == "subcritical":
        if not 2 < p < 4:
            raise WrongRegime("subcritical chain needs 2 < p < 4")
        k = C / mc2 ** ((4 - p) / 2)
        steps.append(_step("gns", Lp, C * Y ** ((p - 2) / 2) * mass, rtol))
        steps.append(_step("gns+", Lpp, C * Yp ** ((p - 2) / 2) * m2p, rtol))
        steps.append(_step("gns-", Lpm, C * Ym ** ((p - 2) / 2) * m2m, rtol))
        steps.append(_step("holder-mass", Lp, k * Y * mass ** ((p - 2) / 2), rtol))
        ident = float(np.real(np.vdot(g, cp - cm)))
        steps.append(ChainStep("pairing-identity", Y, ident, abs(Y - ident) <= 1e-6 * Y))
        holder = a * Lp ** ((p - 1) / p) * (Lpp ** (1 / p) + Lpm ** (1 / p))
        steps.append(_step("holder", ident, holder, rtol))
        gns_b = (a * k * (Y * mass ** ((p - 2) / 2)) ** ((p - 1) / p)
                 * ((Yp * m2p ** ((p - 2) / 2)) ** (1 / p) + (Ym * m2m ** ((p - 2) / 2)) ** (1 / p)))
        steps.append(_step("gns-bound", holder, gns_b, rtol))
        ratio = 2 * C * a * mc2 ** (-(4 - p) / 2)
        steps.append(_step("terminal", Y, ratio * Y, rtol))
    elif variant == "supercritical":
        if p < 4:
            raise WrongRegime("supercritical chain needs p >= 4")
        if not 0 < energy <= mc2 / 2:
            raise WrongRegime(f"energy {energy:.6g} outside (0, mc²/2]")
        steps.append(_step("energy-lp", Lp, mc2 * p / (a * (p - 2)), rtol))
        steps.append(_step("gns+", Lpp, C * Yp ** ((p - 2) / 2) * m2p, rtol))
        pair = float(np.real(np.vdot(g, cp)))
        steps.append(ChainStep("pairing-identity+", Yp, pair, abs(Yp - pair) <= 1e-6 * Yp))
        steps.append(_step("holder+", pair, a * Lp ** ((p - 1) / p) * Lpp ** (1 / p), rtol))
        bnd = (C * a) ** (1 / p) * mc2 ** ((p - 2) / p) * (p / (p - 2)) ** ((p - 1) / p)
        steps.append(_step("norm-plus", math.sqrt(Yp), bnd, rtol))
        steps.append(_step("norm-split", Y, 2 * Yp, rtol))
        steps.append(_step("norm-bound", math.sqrt(Y), math.sqrt(2) * bnd, rtol))
        steps.append(_step("gns", Lp, C * Y ** ((p - 2) / 2) * mass, rtol))
        steps.append(_step("gns-", Lpm, C * Ym ** ((p - 2) / 2) * m2m, rtol))
        steps.append(_step("norm-mass", Y, 2 * C * a * Y ** ((p - 2) / 2) * mass, rtol))
        lower = (2 ** (1 - p / 2) * (C * a) ** ((4 - 2 * p) / p) * mc2 ** ((-p * p + 6 * p - 8) / p)
                 * (p / (p - 2)) ** ((-p * p + 5 * p - 4) / p))
        steps.append(_step("mass-lower", lower, mass, rtol))
        ratio = a / fn.a_star0_formula(op.params.m, cc, p, C)
    elif variant == "h1-sub":
        if not 2 < p < 4:
            raise WrongRegime("h1-sub chain needs 2 < p < 4")
        Du2 = dc.dirac_norm_sq(op, u)
        L2p = F.lp(c, 2 * p - 2)
        H1 = dc.h1_norm_sq(op, u)
        steps.append(ChainStep("dirac-identity", Du2, a * a * L2p,
                               abs(Du2 - a * a * L2p) <= 5e-2 * Du2))
        steps.append(_step("h1-lower", 0.5 * min(cc ** 2, mc2 ** 2) * H1, Du2, rtol))
        steps.append(_step("gns-h1", L2p, C * H1 ** ((p - 2) / 2) * mass ** (p / 2), rtol))
        ratio = a * math.sqrt(2 * C) * max(1 / cc, 1 / mc2)
        steps.append(_step("terminal", 0.5 * min(cc ** 2, mc2 ** 2) * mass ** ((4 - p) / 2),
                           a * a * C * mass ** (p / 2), rtol))
    elif variant == "h1-energy":
        if s_inf is None:
            raise MissingConstant("sup-norm constant required")
        Sinf = float(getattr(s_inf, "value", s_inf))
        if not 2 < p < 6:
            raise WrongRegime("h1-energy chain needs 2 < p < 6")
        if not 0 < energy <= mc2 / 2:
            raise WrongRegime(f"energy {energy:.6g} outside (0, mc²/2]")
        Du2 = dc.dirac_norm_sq(op, u)
        L2p = F.lp(c, 2 * p - 2)
        H1 = dc.h1_norm_sq(op, u)
        ut = F.ut(c)
        sup = math.sqrt(float(np.max(np.abs(ut[F.node]) ** 2 + np.abs(ut[F.cell]) ** 2)))
        steps.append(_step("energy-lp", Lp, mc2 * p / (a * (p - 2)), rtol))
        steps.append(_step("sup-gns", sup, Sinf * H1 ** 0.25 * mass ** 0.25, rtol))
        steps.append(_step("interp", L2p, sup ** (p - 2) * Lp, rtol))
        steps.append(ChainStep("dirac-identity", Du2, a * a * L2p,
                               abs(Du2 - a * a * L2p) <= 5e-2 * Du2))
        steps.append(_step("h1-bound", math.sqrt(H1) ** (3 - p / 2),
                           max(op.params.m, 1 / mc2) * 2 * a * p / (p - 2) * Sinf ** (p - 2), rtol))
        steps.append(_step("gns-h1", L2p, C * H1 ** ((p - 2) / 2) * mass ** (p / 2), rtol))
        th = fn.Thresholds(p, op.params.m, cc, None, None, None, C, Sinf)
        ratio = th.appendix_lhs_46(a)
    else:
        raise InvalidParameters(f"unknown chain variant {variant!r}")
    consistent = all(s.holds for s in steps)
    return ChainReport(variant, steps, float(ratio), consistent)


# -- unique continuation ------------------------------------------------------

def numerical_unique_continuation(op, u, tol: float = 1e-8) -> bool:
    """True iff numerically-zero edges force the whole field to vanish and the
    field is indeed small everywhere; raises InvariantViolation when the
    propagation forces zero but the field is not small."""
    g, d = op.graph, op.disc
    u = np.asarray(u)
    sup = {e.id: float(max(np.abs(u[e.nodes]).max(), np.abs(u[e.cells]).max())) for e in d.edges}
    zero = {k for k, v in sup.items() if v < tol}
    closure, forces = gm.zero_propagation(g, zero)
    if not forces:
        return False
    if max(sup.values()) >= 10 * tol:
        raise InvariantViolation("zero propagation forces u = 0 but the field is not small")
    return True


# -- symmetry and pointwise residuals ------------------------------------------

def interior_residual(op, u, omega, spec, samples=(0.25, 0.5, 0.75)):
    """Pointwise residual inside every cell of the piecewise field
    (u¹ linear, u² constant per cell): ``D u - ω u - a|u|^{p-2}u`` for sign +1,
    ``D u + ω u + a|u|^{p-2}u`` for sign -1. Shape (points, 2)."""
    u1, du1, u2, du2 = _interior_fields(op, u, samples)
    return _pointwise_residual(op, u1, du1, u2, du2, omega, spec)


def _interior_fields(op, u, samples):
    d = op.disc
    u = np.asarray(u)
    U1, D1, U2, D2 = [], [], [], []
    for e in d.edges:
        left, right = u[e.nodes[:-1]], u[e.nodes[1:]]
        for s in samples:
            U1.append(left + s * (right - left))
            D1.append((right - left) / e.h)
            U2.append(u[e.cells])
            D2.append(np.zeros(e.n, complex))
    return (np.concatenate(U1), np.concatenate(D1), np.concatenate(U2), np.concatenate(D2))


def _pointwise_residual(op, u1, du1, u2, du2, omega, spec):
    mc2, c = op.mc2, op.params.c
    Du1 = -1j * c * du2 + mc2 * u1
    Du2 = -1j * c * du1 - mc2 * u2
    rho = np.abs(u1) ** 2 + np.abs(u2) ** 2
    nl = spec.a * rho ** ((spec.p - 2) / 2)
    s = spec.sign
    return np.stack([Du1 - s * (omega * u1 + nl * u1), Du2 - s * (omega * u2 + nl * u2)], 1)


def symmetry_defect(op, u, omega, spec):
    """max | |r₊(x)| - |r₋(x)| | over interior points, where r₊ is the
    residual of u for ``spec`` and r₋ that of J u = (u², -u¹) for the
    mirrored equation."""
    u1, du1, u2, du2 = _interior_fields(op, u, (0.25, 0.5, 0.75))
    mir = fn.NonlinearitySpec(spec.a, spec.p, -spec.sign, spec.region, spec.test_mode)
    rp = _pointwise_residual(op, u1, du1, u2, du2, omega, spec)
    rm = _pointwise_residual(op, u2, du2, -u1, -du1, omega, mir)
    return float(np.max(np.abs(np.linalg.norm(rp, axis=1) - np.linalg.norm(rm, axis=1))))


# -- pendant transplant ---------------------------------------------------------

def transplant_pendant(op, u, halfline: str, ell: float):
    """Move a field solved with region core ∪ [0, ell] of ``halfline`` onto
    the graph with that segment turned into a pendant bounded edge.

    ``ell`` must sit on a grid node of the half-line. Returns the new operator
    and the transplanted field (same DOFs, same values).
    """
    d = op.disc
    e = d.by_id[halfline]
    k = ell / e.h
    if abs(k - round(k)) > 1e-9 or round(k) < 2 or round(k) > e.n - 2:
        raise InvalidParameters("ell must be a grid node of the half-line, away from its ends")
    k = int(round(k))
    g2 = gm.attach_pendant(op.graph, halfline, ell)
    seg_id = [x.id for x in g2.bounded_edges if x.id not in {y.id for y in op.graph.bounded_edges}][0]
    Ltail = e.length - ell
    grid2 = dc.Grid(h=op.grid.h, L=op.grid.L,
                    overrides=tuple(kv for kv in op.grid.overrides if kv[0] != halfline)
                    + ((halfline, Ltail),))
    h2 = e.h
    if abs(ell / math.ceil(ell / op.grid.h - 1e-9) - h2) > 1e-12 or \
            abs(Ltail / math.ceil(Ltail / op.grid.h - 1e-9) - h2) > 1e-12:
        raise InvalidParameters("ell and the truncation must be multiples of the cell width")
    op2 = dc.assemble_dirac(g2, op.params, grid2)
    d2 = op2.disc
    u = np.asarray(u)
    v = np.zeros(op2.N, complex)
    for e1 in d.edges:
        if e1.id == halfline:
            es, et = d2.by_id[seg_id], d2.by_id[halfline]
            v[es.nodes] = u[e1.nodes[:k + 1]]
            v[es.cells] = u[e1.cells[:k]]
            v[et.nodes] = u[e1.nodes[k:]]
            v[et.cells] = u[e1.cells[k:]]
        else:
            e2 = d2.by_id[e1.id]
            v[e2.nodes] = u[e1.nodes]
            v[e2.cells] = u[e1.cells]
    return op2, v


# -- sweeps -------------------------------------------------------------------

@dataclass
class SweepCell:
    axis: str
    value: float
    report: Optional[SolveReport]
    error: Optional[str] = None


def sweep(graph, params, grid, base_spec, axis: str, values: Sequence[float],
          schedule: Optional[ContinuationSchedule] = None, shift: float = 0.0,
          method: str = "continuation", omega: float = 0.0):
    """One solve per value along ``axis`` in {a, p, ell, m, c, s}.

    ``method='continuation'`` runs :func:`continuation_solve`;
    ``method='omega'`` runs :func:`direct_solve` at fixed ω (total frequency
    ``omega``), warm-started along the axis.
    """
    if axis not in ("a", "p", "ell", "m", "c", "s"):
        raise InvalidParameters(f"unknown sweep axis {axis!r}")
    cells, prev = [], None
    op = None
    for val in values:
        spec, prm, s = base_spec, params, shift
        if axis == "a":
            spec = fn.NonlinearitySpec(val, spec.p, spec.sign, spec.region)
        elif axis == "p":
            spec = fn.NonlinearitySpec(spec.a, val, spec.sign, spec.region)
        elif axis == "ell":
            hl = spec.region.halfline if isinstance(spec.region, gm.CoreUnionSegment) \
                else graph.half_lines[0].id
            spec = fn.NonlinearitySpec(spec.a, spec.p, spec.sign, gm.CoreUnionSegment(hl, val))
        elif axis == "m":
            prm = dc.DiracParams(val, params.c)
        elif axis == "c":
            prm = dc.DiracParams(params.m, val)
        else:
            s = val
        if op is None or axis in ("m", "c"):
            op = dc.assemble_dirac(graph, prm, grid)
        try:
            if method == "continuation":
                rep = continuation_solve(op, spec, schedule, shift=s)
            else:
                init = prev if prev is not None else _omega_seed(op, spec, omega)
                rep = direct_solve(op, spec, "omega", init, omega0=omega, shift=omega
                                   if abs(omega) < op.mc2 else 0.0)
            prev = rep.u
            cells.append(SweepCell(axis, float(val), rep))
        except NumericsError as exc:
            cells.append(SweepCell(axis, float(val), None, f"{type(exc).__name__}: {exc}"))
    return cells


def _omega_seed(op, spec, omega):
    """Seed for a fixed-ω solve: unit-mass continuation output rescaled to
    the natural amplitude of the given coupling."""
    rep = continuation_solve(op, spec, ContinuationSchedule.default(stages=4), shift=0.0,
                             polish=False)
    return rep.u


def omega_continuation(op, spec, u_start, omega_start: float, omega_target: float,
                       steps: int = 20, shift: float = 0.0):
    """Track a fixed-ω branch from ``omega_start`` to ``omega_target`` with
    warm-started :func:`direct_solve` calls. Returns the list of reports."""
    path, u = [], u_start
    for om in np.linspace(omega_start, omega_target, steps + 1)[1:]:
        rep = direct_solve(op, spec, "omega", u, omega0=float(om), shift=shift)
        path.append(rep)
        u = rep.u
    return path


def rescale_coupling(op, spec, u, a_new: float) -> np.ndarray:
    """Map a solution for coupling a onto coupling ``a_new`` at the same ω
    via u ↦ (a/a_new)^{1/(p-2)} u (pure power nonlinearity)."""
    if spec.a <= 0 or a_new <= 0:
        raise InvalidParameters("couplings must be positive")
    return np.asarray(u) * (spec.a / a_new) ** (1.0 / (spec.p - 2.0))


def zero_frequency_solution(op, spec, u_start, omega_start: float, factor: float = 1.25,
                            max_steps: int = 200, shift: float = 0.0) -> SolveReport:
    """Follow the fixed-mass branch through increasing masses until ω
    crosses ``shift``, then solve at ω = shift exactly."""
    u, om = np.asarray(u_start), float(omega_start)
    mass = op.disc.mass(u)
    prev = None
    for _ in range(max_steps):
        mass *= factor
        rep = direct_solve(op, spec, "mass", u * math.sqrt(mass / op.disc.mass(u)), omega0=om,
                           target=mass)
        if rep.omega <= shift:
            lo = prev if prev is not None else rep
            return direct_solve(op, spec, "omega", lo.u, omega0=shift, shift=shift)
        prev, u, om = rep, rep.u, rep.omega
    raise NonConvergence("branch did not reach the target frequency")
