"""Inf-sup constants, Schur bounds, preconditioned condition numbers and
best-approximation errors."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .errors import DimCapExceeded
from .femspace import geometry
from .linalg import DENSE_CAP, dense_generalized_eig, lanczos_extreme
from .precond import apply_Qv_inverse
from .quadrature import converge, triangle_rule


@dataclass
class SpectralValue:
    value: float
    method: str
    dofs_U: int = 0

    def __float__(self):
        return float(self.value)


def _chol(A):
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    return sla.cholesky(0.5 * (A + A.conj().T), lower=True)


def _lu_solver(A):
    """Sparse LU solve that accepts complex right-hand sides for real A."""
    lu = spl.splu(sp.csc_matrix(A))
    if np.iscomplexobj(lu.L.data):
        return lu.solve
    return lambda b: (lu.solve(b.real) + 1j * lu.solve(b.imag)) if np.iscomplexobj(b) else lu.solve(b)


def compute_inf_sup(system, cap=DENSE_CAP, method="auto"):
    """gamma = sqrt(lambda_min) of S z = lambda M_U z, S = B^H M_V^{-1} B."""
    nV, nU = system.n_test, system.n_trial
    if method == "auto":
        method = "dense" if nV + nU <= cap else ("schur" if nU <= cap else "lanczos")
    if method == "dense":
        LV = _chol(system.M_V)
        LU = _chol(system.M_U)
        X = sla.solve_triangular(LV, system.B.toarray(), lower=True)
        Y = sla.solve_triangular(LU.conj(), X.T, lower=True).T  # X L_U^{-H}
        s = sla.svdvals(Y)
        return SpectralValue(float(s.min()), "dense", nU)
    solve_V = _lu_solver(system.M_V)
    if method == "schur":
        S = system.B.conj().T @ solve_V(system.B.toarray())
        ev = dense_generalized_eig(S, system.M_U, cap=max(cap, nU))
        return SpectralValue(math.sqrt(max(ev[0], 0.0)), "schur", nU)
    BH = system.B.conj().T.tocsr()
    res = lanczos_extreme(lambda z: BH @ solve_V(system.B @ z), _lu_solver(system.M_U), nU,
                          k_max=min(nU, 2000), tol=1e-12)
    if not res.converged:
        raise DimCapExceeded("inf-sup Lanczos did not converge above the dense cap")
    return SpectralValue(math.sqrt(max(res.lmin, 0.0)), "lanczos", nU)


def schur_matrix(system, cap=DENSE_CAP):
    if system.n_test > cap:
        raise DimCapExceeded(f"dense Schur complement needs {system.n_test} > {cap}")
    MV = system.M_V.toarray()
    B = system.B.toarray()
    c = sla.cho_factor(MV, lower=True)
    S = B.conj().T @ sla.cho_solve(c, B)
    return 0.5 * (S + S.conj().T)


def verify_schur_bounds(system, cap=DENSE_CAP):
    """(lambda_min, lambda_max) of M_U^{-1} S by a generalized eigen-solve."""
    ev = dense_generalized_eig(schur_matrix(system, cap), system.M_U, cap=cap)
    return float(ev[0]), float(ev[-1])


def dense_operator(apply, n):
    """Columns of a linear map applied to the identity."""
    out = np.empty((n, n), dtype=complex)
    for j in range(n):
        e = np.zeros(n, dtype=complex)
        e[j] = 1.0
        out[:, j] = apply(e)
    return out


def compute_precond_condition(system_or_M, tree, method="lanczos", seed=0):
    """1 / lambda_min(Q_V^{-1} M_V), with lambda_max reported alongside."""
    M = getattr(system_or_M, "M_V", system_or_M)
    n = M.shape[0]
    if method == "dense":
        Qinv = dense_operator(lambda f: apply_Qv_inverse(tree, f), n)
        Qinv = 0.5 * (Qinv + Qinv.conj().T)
        ev = dense_generalized_eig(M.toarray(), np.linalg.inv(Qinv))
        lmin, lmax = ev[0], ev[-1]
    else:
        res = lanczos_extreme(lambda x: M @ x, lambda x: apply_Qv_inverse(tree, x), n,
                              tol=1e-10, seed=seed)
        lmin, lmax = res.lmin, res.lmax
    return SpectralValue(float(lmax / lmin), method), float(lmin), float(lmax)


def preconditioned_saddle_eigenvalues(system, precond):
    """Eigenvalues of P^{-1} K for an HPD block preconditioner (dense)."""
    n = system.n
    K = system.full_matrix().toarray()
    Pinv = dense_operator(precond, n)
    Pinv = 0.5 * (Pinv + Pinv.conj().T)
    P = np.linalg.inv(Pinv)
    return sla.eigh(0.5 * (K + K.conj().T), 0.5 * (P + P.conj().T), eigvals_only=True)


def best_approximation_error(trial, data, rtol=1e-12):
    """|| u - Pi u ||_U with Pi the L2-orthogonal projection onto U_delta."""
    mesh = trial.mesh
    g = geometry(mesh)
    L = trial.lagrange
    deg0 = 2 * trial.degree + 8

    def load(deg):
        x, w = triangle_rule(deg)
        X = g.map(x)
        phi, u = data.exact(X)
        ex = np.concatenate([phi[..., None], u], axis=-1)
        vals = L.ref.values(x)
        wd = w[None, :] * g.det[:, None]
        out = np.zeros((3, L.n_dofs), dtype=complex)
        for c in range(3):
            np.add.at(out[c], L.cell_dofs, np.einsum("tq,tq,ql->tl", wd, ex[..., c], vals))
        norm2 = np.sum(wd * np.sum(np.abs(ex) ** 2, axis=-1))
        return np.concatenate([(out * trial.scale).ravel(), [norm2]])

    b = converge(load, deg0, rtol)
    rhs, norm2 = b[:-1], b[-1].real
    z = _lu_solver(trial.mass_matrix)(rhs)
    err2 = norm2 - np.real(np.vdot(z, rhs))
    return math.sqrt(max(err2, 0.0))


def write_study(path, rows):
    """CSV with columns kappa, p, p_tilde, dofs_U, value, method (+ extras)."""
    base = ["kappa", "p", "p_tilde", "dofs_U", "value", "method"]
    extra = sorted({k for r in rows for k in r} - set(base))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=base + extra)
        w.writeheader()
        for r in rows:
            w.writerow(r)
