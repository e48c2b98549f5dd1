"""Preconditioned MINRES for the Hermitian saddle system with harmonic Ritz
values and algebraic-error-aware stopping."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import LucklessBreakdown, MaxIterations, NoNegativeRitzYet
from .precond import apply_Qs_inverse, apply_Qv_inverse

RESIDUAL_NORM = "preconditioned"


@dataclass(frozen=True)
class StoppingPolicy:
    """``residual_drop``: stop once the preconditioned residual fell by
    ``factor``.  ``algebraic_vs_total``: stop once the algebraic error
    estimate is at most ``fraction`` times the estimator ||B' v_k||."""

    kind: str = "algebraic_vs_total"
    factor: float = 1e8
    fraction: float = 0.5
    max_iter: Optional[int] = None
    estimator_stride: int = 1

    def __post_init__(self):
        if self.kind not in ("residual_drop", "algebraic_vs_total", "algebraic_vs_total_strict"):
            raise ValueError(f"unknown stopping policy {self.kind!r}")
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("fraction must lie in (0, 1)")

    @classmethod
    def residual_drop(cls, factor=1e8, **kw):
        return cls("residual_drop", factor=factor, **kw)

    @classmethod
    def algebraic_vs_total(cls, fraction=0.5, **kw):
        return cls("algebraic_vs_total", fraction=fraction, **kw)

    @classmethod
    def strict(cls, **kw):
        return cls("algebraic_vs_total_strict", fraction=1.0 / 20.0, **kw)


@dataclass
class IterationRecord:
    k: int
    residual: float
    ritz_negative: Optional[float]
    ritz_positive: Optional[float]
    gamma: Optional[float]
    estimator: Optional[float]
    algebraic: Optional[float]


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    stop_reason: str = ""
    policy: str = ""
    residual_norm: str = RESIDUAL_NORM
    initial_residual: float = 0.0
    gamma: Optional[float] = None
    restarts: int = 0
    records: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def residuals(self):
        return [self.initial_residual] + [r.residual for r in self.records]

    @property
    def estimators(self):
        return [r.estimator for r in self.records]

    def write(self, path):
        with open(path, "w") as fh:
            head = {k: v for k, v in asdict(self).items() if k != "records"}
            fh.write("# " + json.dumps(head, default=float) + "\n")
            fh.write("k,residual,ritz_negative,gamma,estimator,algebraic\n")
            for r in self.records:
                fh.write(f"{r.k},{r.residual!r},{r.ritz_negative!r},{r.gamma!r},"
                         f"{r.estimator!r},{r.algebraic!r}\n")


class MinresState:
    """Lanczos coefficients of the preconditioned operator."""

    def __init__(self):
        self.alphas = []
        self.betas = []  # betas[j] couples Lanczos vectors j and j+1

    @property
    def steps(self):
        return len(self.alphas)


def harmonic_ritz(state):
    """(largest negative, smallest positive) harmonic Ritz values."""
    k = state.steps
    if k < 2:
        raise NoNegativeRitzYet("harmonic Ritz values need at least two Lanczos steps")
    a = np.array(state.alphas)
    b = np.array(state.betas[:k])
    T = np.diag(a) + np.diag(b[: k - 1], 1) + np.diag(b[: k - 1], -1)
    Tbar = np.vstack([T, np.zeros((1, k))])
    Tbar[k, k - 1] = b[k - 1] if len(b) >= k else 0.0
    G = Tbar.T @ Tbar
    # T y = mu G y with mu = 1 / theta; G is SPD unless the space is exhausted
    try:
        mu = sla.eigh(T, G, eigvals_only=True)
        theta = 1.0 / mu[mu != 0]
    except np.linalg.LinAlgError:
        theta = np.linalg.eigvalsh(T)
    neg = theta[theta < 0]
    pos = theta[theta > 0]
    if len(neg) == 0:
        raise NoNegativeRitzYet("no negative harmonic Ritz value yet")
    return float(neg.max()), (float(pos.min()) if len(pos) else None)


def gamma_from_ritz(lam):
    """gamma_bar = lam^2 / (1 + lam), clamped to (0, 1]."""
    if lam <= -1.0:
        return 1.0
    g = lam * lam / (1.0 + lam)
    return float(min(max(g, np.finfo(float).tiny), 1.0))


def c_constant(gamma):
    """c with c^2 = gamma (1 + 1/(2 gamma) - sqrt(1 + 1/(4 gamma^2)))."""
    c2 = gamma + 0.5 - math.sqrt(gamma * gamma + 0.25)
    return math.sqrt(c2)


def algebraic_error_estimate(residual, gamma):
    return residual / c_constant(gamma)


def update_carried_gamma(previous, new):
    if new is None:
        return previous
    if previous is None:
        return new
    return min(previous, new)


class BlockPreconditioner:
    """diag(Q_V, Q_S)^{-1} from a PrecondTree (or any callable) and a Schur
    preconditioner (or any callable)."""

    def __init__(self, qv, qs, n_test):
        self.qv = qv
        self.qs = qs
        self.n_test = n_test

    def __call__(self, r):
        v, u = r[: self.n_test], r[self.n_test:]
        fv = self.qv(v) if callable(self.qv) else apply_Qv_inverse(self.qv, v)
        fu = self.qs(u) if callable(self.qs) else apply_Qs_inverse(self.qs, u)
        return np.concatenate([fv, fu])


def minres_solve(system, precond, x0=None, policy=None, carried_gamma=None, callback=None):
    """Solve the saddle system; returns (v, u, SolveReport).

    ``precond`` is a BlockPreconditioner, a (tree, schur) pair or a callable
    applying the inverse of an HPD block preconditioner.
    """
    policy = StoppingPolicy() if policy is None else policy
    if isinstance(precond, tuple):
        precond = BlockPreconditioner(precond[0], precond[1], system.n_test)
    n = system.n
    b = system.rhs()
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    report = SolveReport(policy=f"{policy.kind}(factor={policy.factor:g}, fraction={policy.fraction:g})")
    report.gamma = carried_gamma
    max_iter = policy.max_iter if policy.max_iter is not None else 10 * n
    restarts = 0
    phi0 = None
    while True:
        x, status, phi0 = _run(system, precond, b, x, policy, report, max_iter, carried_gamma,
                               callback, phi0)
        if status != "breakdown":
            break
        restarts += 1
        report.restarts = restarts
        if restarts > 1:
            raise LucklessBreakdown("Lanczos breakdown with nonzero residual after restart", report)
    v, u = system.split(x)
    if status == "maxiter":
        report.stop_reason = "max_iterations"
        raise MaxIterations(f"MINRES did not meet {policy.kind} within {max_iter} iterations", report)
    return v, u, report


def _run(system, precond, b, x, policy, report, max_iter, carried_gamma, callback, phi0):
    nt = system.n_test
    r = b - system.matvec(x)
    z = precond(r)
    beta = math.sqrt(max(np.real(np.vdot(r, z)), 0.0))
    if phi0 is None:
        phi0 = beta
        report.initial_residual = beta
    if beta == 0.0:
        report.converged = True
        report.stop_reason = "zero_residual"
        return x, "done", phi0
    state = MinresState()
    v_prev = np.zeros_like(r)
    w_prev = np.zeros_like(r)
    w_cur = np.zeros_like(r)
    c_prev, c_cur, s_prev, s_cur = 1.0, 1.0, 0.0, 0.0
    eta = beta
    gamma_carried = carried_gamma
    k0 = report.iterations
    for j in range(1, max_iter - k0 + 1):
        zj = z / beta
        vj = r / beta
        Kz = system.matvec(zj)
        delta = float(np.real(np.vdot(zj, Kz)))
        r = Kz - delta * vj - (beta * v_prev if j > 1 else 0.0)
        z = precond(r)
        beta_next = math.sqrt(max(np.real(np.vdot(r, z)), 0.0))
        state.alphas.append(delta)
        state.betas.append(beta_next)
        a0 = c_cur * delta - c_prev * s_cur * beta
        a1 = math.hypot(a0, beta_next)
        a2 = s_cur * delta + c_prev * c_cur * beta
        a3 = s_prev * beta
        c_new, s_new = a0 / a1, beta_next / a1
        w_new = (zj - a3 * w_prev - a2 * w_cur) / a1
        x = x + (c_new * eta) * w_new
        eta = -s_new * eta
        phi = abs(eta)
        w_prev, w_cur = w_cur, w_new
        c_prev, c_cur, s_prev, s_cur = c_cur, c_new, s_cur, s_new
        v_prev = vj
        beta = beta_next
        k = k0 + j
        report.iterations = k
        # diagnostics
        lam_neg = lam_pos = None
        try:
            lam_neg, lam_pos = harmonic_ritz(state)
        except NoNegativeRitzYet:
            pass
        g_new = gamma_from_ritz(lam_neg) if lam_neg is not None else None
        gamma = update_carried_gamma(carried_gamma, g_new)
        est = None
        if policy.kind != "residual_drop" or (j % policy.estimator_stride == 0):
            vt = x[:nt]
            est = math.sqrt(max(np.real(np.vdot(vt, system.M_V @ vt)), 0.0))
        alg = algebraic_error_estimate(phi, gamma) if gamma is not None else None
        report.records.append(IterationRecord(k, phi, lam_neg, lam_pos, gamma, est, alg))
        report.gamma = gamma if gamma is not None else gamma_carried
        if callback is not None:
            callback(k, x)
        if policy.kind == "residual_drop":
            stop = phi <= phi0 / policy.factor
        else:
            stop = alg is not None and est is not None and alg <= policy.fraction * est
        if stop or phi == 0.0:
            report.converged = True
            report.stop_reason = policy.kind if stop else "zero_residual"
            return x, "done", phi0
        if beta_next <= 1e-14 * max(phi0, 1e-300):
            if phi <= 1e-12 * phi0:
                report.converged = True
                report.stop_reason = "exact"
                return x, "done", phi0
            return x, "breakdown", phi0
    return x, "maxiter", phi0
