"""Hot loops for the power nonlinearity on the half-cell quadrature.

Every quadrature point pairs one u¹ node with one u² cell and carries a
weight (half the cell width), so that

    rho = |u[node]|**2 + |u[cell]|**2,   Psi = (a/p) * sum(w * rho**(p/2)).

Two interchangeable backends are provided: numba ``@njit`` loops and
vectorised numpy. ``QGDIRAC_BACKEND=numpy`` forces the numpy path; numba
is used by default when it imports.
"""
from __future__ import annotations

import math
import os

import numpy as np

RHO_FLOOR = 1e-28  # |u| clamped at 1e-14 where rho**(q-1) is singular

try:  # pragma: no cover - exercised implicitly
    from numba import njit
    HAVE_NUMBA = True
except Exception:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def backend() -> str:
    want = os.environ.get("QGDIRAC_BACKEND", "numba").lower()
    return "numba" if (want == "numba" and HAVE_NUMBA) else "numpy"


# -- numpy ---------------------------------------------------------------

def _rho_np(u, node, cell):
    a = u[node]
    b = u[cell]
    return a.real ** 2 + a.imag ** 2 + b.real ** 2 + b.imag ** 2


def psi_sum_np(u, node, cell, w, p):
    return float(np.dot(w, _rho_np(u, node, cell) ** (0.5 * p)))


def _scatter(vals_node, vals_cell, node, cell, n, dtype):
    out = np.zeros(n, dtype=dtype)
    if np.iscomplexobj(out):
        out.real = (np.bincount(node, vals_node.real, n) + np.bincount(cell, vals_cell.real, n))
        out.imag = (np.bincount(node, vals_node.imag, n) + np.bincount(cell, vals_cell.imag, n))
    else:
        out[:] = np.bincount(node, vals_node, n) + np.bincount(cell, vals_cell, n)
    return out


def psi_grad_np(u, node, cell, w, p):
    rho = _rho_np(u, node, cell)
    f = w * rho ** (0.5 * p - 1.0)
    return _scatter(f * u[node], f * u[cell], node, cell, u.shape[0], u.dtype)


def psi_hessvec_np(u, d, node, cell, w, p):
    q = 0.5 * p - 1.0
    un, uc, dn, dc = u[node], u[cell], d[node], d[cell]
    rho = _rho_np(u, node, cell)
    f = w * rho ** q
    proj = (np.conj(un) * dn + np.conj(uc) * dc).real
    g = (p - 2.0) * w * np.maximum(rho, RHO_FLOOR) ** (q - 1.0) * proj
    dtype = np.result_type(u.dtype, d.dtype)
    return _scatter(f * dn + g * un, f * dc + g * uc, node, cell, u.shape[0], dtype)


def psi_hess_coo_np(u, node, cell, w, p):
    """COO triplets of the Hessian for real ``u``."""
    q = 0.5 * p - 1.0
    un, uc = u[node], u[cell]
    rho = un * un + uc * uc
    f = w * rho ** q
    g = (p - 2.0) * w * np.maximum(rho, RHO_FLOOR) ** (q - 1.0)
    rows = np.concatenate([node, node, cell, cell])
    cols = np.concatenate([node, cell, node, cell])
    vals = np.concatenate([f + g * un * un, g * un * uc, g * uc * un, f + g * uc * uc])
    return rows, cols, vals


# -- numba ---------------------------------------------------------------

@njit(cache=True)
def _rpow(rho, q):
    """rho**q, with integer and half-integer q done by multiplication and sqrt
    (generic pow dominates the loops otherwise)."""
    n = math.floor(q)
    f = q - n
    if f == 0.0 or f == 0.5:
        k = int(n)
        r = 1.0
        b = rho if k >= 0 else 1.0 / rho
        for _ in range(abs(k)):
            r *= b
        if f == 0.5:
            r *= math.sqrt(rho)
        return r
    return rho ** q


@njit(cache=True)
def _psi_sum_nb(u, node, cell, w, p):
    s = 0.0
    h = 0.5 * p
    for k in range(node.shape[0]):
        a = u[node[k]]
        b = u[cell[k]]
        rho = a.real * a.real + a.imag * a.imag + b.real * b.real + b.imag * b.imag
        s += w[k] * _rpow(rho, h)
    return s


@njit(cache=True)
def _psi_grad_nb(u, node, cell, w, p, out):
    q = 0.5 * p - 1.0
    for k in range(node.shape[0]):
        a = u[node[k]]
        b = u[cell[k]]
        rho = a.real * a.real + a.imag * a.imag + b.real * b.real + b.imag * b.imag
        f = w[k] * _rpow(rho, q)
        out[node[k]] += f * a
        out[cell[k]] += f * b
    return out


@njit(cache=True)
def _psi_hessvec_nb(u, d, node, cell, w, p, out):
    q = 0.5 * p - 1.0
    for k in range(node.shape[0]):
        a = u[node[k]]
        b = u[cell[k]]
        da = d[node[k]]
        db = d[cell[k]]
        rho = a.real * a.real + a.imag * a.imag + b.real * b.real + b.imag * b.imag
        f = w[k] * _rpow(rho, q)
        proj = (a.real * da.real + a.imag * da.imag) + (b.real * db.real + b.imag * db.imag)
        g = (p - 2.0) * w[k] * _rpow(max(rho, RHO_FLOOR), q - 1.0) * proj
        out[node[k]] += f * da + g * a
        out[cell[k]] += f * db + g * b
    return out


@njit(cache=True)
def _psi_hess_coo_nb(u, node, cell, w, p, rows, cols, vals):
    q = 0.5 * p - 1.0
    n = node.shape[0]
    for k in range(n):
        a = u[node[k]]
        b = u[cell[k]]
        rho = a * a + b * b
        f = w[k] * _rpow(rho, q)
        g = (p - 2.0) * w[k] * _rpow(max(rho, RHO_FLOOR), q - 1.0)
        i, j = node[k], cell[k]
        rows[k], cols[k], vals[k] = i, i, f + g * a * a
        rows[n + k], cols[n + k], vals[n + k] = i, j, g * a * b
        rows[2 * n + k], cols[2 * n + k], vals[2 * n + k] = j, i, g * a * b
        rows[3 * n + k], cols[3 * n + k], vals[3 * n + k] = j, j, f + g * b * b


# -- dispatch ------------------------------------------------------------

def psi_sum(u, node, cell, w, p):
    if backend() == "numba":
        return float(_psi_sum_nb(u, node, cell, w, float(p)))
    return psi_sum_np(u, node, cell, w, p)


def psi_grad(u, node, cell, w, p):
    if backend() == "numba":
        return _psi_grad_nb(u, node, cell, w, float(p), np.zeros_like(u))
    return psi_grad_np(u, node, cell, w, p)


def psi_hessvec(u, d, node, cell, w, p):
    if backend() == "numba":
        dtype = np.result_type(u.dtype, d.dtype)
        return _psi_hessvec_nb(u.astype(dtype, copy=False), d.astype(dtype, copy=False),
                               node, cell, w, float(p), np.zeros(u.shape[0], dtype))
    return psi_hessvec_np(u, d, node, cell, w, p)


def psi_hess_coo(u, node, cell, w, p):
    u = np.ascontiguousarray(u, dtype=float)
    if backend() == "numba":
        n = node.shape[0]
        rows = np.empty(4 * n, np.int64)
        cols = np.empty(4 * n, np.int64)
        vals = np.empty(4 * n)
        _psi_hess_coo_nb(u, node, cell, w, float(p), rows, cols, vals)
        return rows, cols, vals
    return psi_hess_coo_np(u, node, cell, w, p)
