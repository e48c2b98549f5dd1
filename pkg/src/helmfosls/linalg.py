"""Dense Hermitian eigen-solves, preconditioned Lanczos extreme eigenvalue
estimation and Chebyshev approximate inverses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import BadInterval, Breakdown, DimCapExceeded, NotHPD

DENSE_CAP = 3000


def _dense(A):
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A)


def dense_generalized_eig(A, M=None, cap=DENSE_CAP, vectors=False):
    """Eigenvalues of A x = lambda M x, ascending, for Hermitian A and HPD M."""
    A = _dense(A)
    n = A.shape[0]
    if n > cap:
        raise DimCapExceeded(f"dense eigen-solve of size {n} exceeds cap {cap}")
    A = 0.5 * (A + A.conj().T)
    if M is None:
        return sla.eigh(A, eigvals_only=not vectors)
    M = _dense(M)
    M = 0.5 * (M + M.conj().T)
    try:
        sla.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotHPD("mass matrix of the pencil is not positive definite") from exc
    return sla.eigh(A, M, eigvals_only=not vectors)


class DenseHermitianFactor:
    """Cholesky factorization of a dense HPD matrix."""

    def __init__(self, A):
        A = _dense(A)
        try:
            self.c = sla.cho_factor(0.5 * (A + A.conj().T), lower=True)
        except np.linalg.LinAlgError as exc:
            raise NotHPD("matrix is not positive definite") from exc

    def solve(self, b):
        return sla.cho_solve(self.c, b)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.abs(np.diag(self.c[0])))))

    @property
    def L(self):
        return np.tril(self.c[0])


@dataclass
class LanczosResult:
    lmin: float
    lmax: float
    iterations: int
    converged: bool
    restarts: int = 0

    def __iter__(self):
        return iter((self.lmin, self.lmax))


def lanczos_extreme(applyA, applyMinv, n, k_max=300, tol=1e-8, seed=0, rng=None):
    """Extreme eigenvalues of M^{-1} A for Hermitian A and HPD M.

    The recurrence runs on residual-type vectors with the M^{-1} inner
    product, so only the action of M^{-1} is needed.  Iteration stops once
    both extreme Ritz values change by less than ``tol`` (relative).
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    lo, hi = np.inf, -np.inf
    total = 0
    converged = False
    for restart in range(4):
        r = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        res = _lanczos_run(applyA, applyMinv, r, min(k_max, n), tol)
        total += res.iterations
        lo, hi = min(lo, res.lmin), max(hi, res.lmax)
        if res.converged or res.iterations >= n:
            converged = True
            break
        if res.iterations >= min(k_max, n):
            break
    return LanczosResult(float(lo), float(hi), total, converged, restart)


def _lanczos_run(applyA, applyMinv, r, k_max, tol):
    z = applyMinv(r)
    b2 = _real_inner(r, z)
    if not b2 > 0:
        raise Breakdown("preconditioner is not positive definite")
    beta = np.sqrt(b2)
    rho_prev = np.zeros_like(r)
    coupling = 0.0
    alphas, betas = [], []
    old = None
    for k in range(1, k_max + 1):
        rho, qv = r / beta, z / beta
        w = applyA(qv) - coupling * rho_prev
        alpha = _real_inner(w, qv)
        w = w - alpha * rho
        alphas.append(alpha)
        z = applyMinv(w)
        b2 = _real_inner(w, z)
        if k > 1:
            ev = sla.eigh_tridiagonal(np.array(alphas), np.array(betas), eigvals_only=True)
        else:
            ev = np.array(alphas)
        scale = max(abs(ev[0]), abs(ev[-1]), 1e-300)
        if b2 < -1e-10 * scale ** 2:
            raise Breakdown("preconditioner is not positive definite")
        cur = (ev[0], ev[-1])
        if old is not None and all(abs(c - o) <= tol * scale for c, o in zip(cur, old)):
            return LanczosResult(ev[0], ev[-1], k, True)
        old = cur
        bnext = np.sqrt(max(b2, 0.0))
        if bnext <= 1e-12 * scale:
            # invariant subspace reached; extremes of this block are exact
            return LanczosResult(ev[0], ev[-1], k, k >= len(r))
        rho_prev, coupling = rho, bnext
        r, beta = w, bnext
        betas.append(bnext)
    return LanczosResult(ev[0], ev[-1], k_max, False)


def _real_inner(a, b):
    return float(np.real(np.vdot(b, a)))


# ---------------------------------------------------------------------------
# Chebyshev
# ---------------------------------------------------------------------------

def chebyshev_epsilon(a, b, k):
    """Worst-case deviation max |1 - lambda p_k(lambda)| on [a, b]."""
    s = (b + a) / (b - a)
    return 1.0 / np.cosh((k + 1) * np.arccosh(s))


def chebyshev_degree(a, b, eps):
    k = 0
    while chebyshev_epsilon(a, b, k) > eps:
        k += 1
    return k


def chebyshev_apply(applyA, a, b, k, rhs):
    """Degree-``k`` Chebyshev polynomial approximation of A^{-1} rhs for
    spec(A) in [a, b] (k+1 steps of Chebyshev semi-iteration from zero)."""
    if not (0 < a < b):
        raise BadInterval(f"invalid Chebyshev interval [{a}, {b}]")
    theta = 0.5 * (b + a)
    delta = 0.5 * (b - a)
    sigma = theta / delta
    rho = 1.0 / sigma
    d = rhs / theta
    x = d.copy()
    for _ in range(k):
        r = rhs - applyA(x)
        rho_new = 1.0 / (2.0 * sigma - rho)
        d = rho_new * rho * d + (2.0 * rho_new / delta) * r
        x = x + d
        rho = rho_new
    return x
