import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from helmfosls.assembly import ProblemData, assemble_system
from helmfosls.driver import direct_solve, exact_errors
from helmfosls.errors import MaxIterations, NoNegativeRitzYet
from helmfosls.femspace import build_test_space, build_trial_space
from helmfosls.minres import (BlockPreconditioner, MinresState, StoppingPolicy,
                              algebraic_error_estimate, c_constant, gamma_from_ritz, harmonic_ritz,
                              minres_solve, update_carried_gamma)
from helmfosls.precond import build_precond, build_schur_preconditioner
from helmfosls.problems import make_problem

from conftest import hierarchy, random_complex, system


class DiagonalSystem:
    """Minimal stand-in for a SaddleSystem with a diagonal matrix."""

    def __init__(self, d, b, n_test):
        self.d = np.asarray(d, dtype=float)
        self.b = np.asarray(b, dtype=complex)
        self.n = len(d)
        self.n_test = n_test
        self.M_V = sp.identity(n_test, format="csr")

    def rhs(self):
        return self.b

    def matvec(self, x):
        return self.d * x

    def split(self, x):
        return x[: self.n_test], x[self.n_test:]


def exact_pair(S):
    """Q_V = M_V exactly, Q_S = identity."""
    F = sla.cho_factor(S.M_V.toarray())
    return BlockPreconditioner(lambda v: sla.cho_solve(F, v), lambda u: u.copy(), S.n_test)


def hssc_pair(problem, kappa, levels, p_tilde, S):
    tree = build_precond(hierarchy(problem, levels), kappa, p_tilde)
    return BlockPreconditioner(tree, build_schur_preconditioner(S.M_U, "chebyshev", 0.1), S.n_test)


# -- constants --------------------------------------------------------------

def test_c_constant_at_one():
    assert c_constant(1.0) ** 2 == pytest.approx(0.3820, abs=5e-5)
    assert c_constant(1.0) ** 2 == pytest.approx(1.5 - math.sqrt(1.25), rel=1e-14)


def test_c_constant_formula():
    for g in np.linspace(0.05, 1.0, 20):
        ref = g * (1 + 1 / (2 * g) - math.sqrt(1 + 1 / (4 * g * g)))
        assert c_constant(g) ** 2 == pytest.approx(ref, rel=1e-10)


def test_estimate_monotone_and_zero():
    assert algebraic_error_estimate(0.0, 0.3) == 0.0
    r = np.linspace(0, 1, 11)
    est = [algebraic_error_estimate(x, 0.4) for x in r]
    assert np.all(np.diff(est) > 0)


def test_gamma_from_ritz_range():
    for lam in [-0.9, -0.5, -0.1, -1e-6, -1.0, -3.0]:
        assert 0 < gamma_from_ritz(lam) <= 1
    assert gamma_from_ritz(-0.5) == pytest.approx(0.5)


def test_update_carried_gamma():
    assert update_carried_gamma(0.2, 0.3) == 0.2
    assert update_carried_gamma(0.3, 0.2) == 0.2
    assert update_carried_gamma(None, 0.3) == 0.3
    assert update_carried_gamma(0.2, None) == 0.2


def test_policy_validation():
    assert StoppingPolicy.strict().fraction == pytest.approx(1 / 20)
    assert StoppingPolicy.algebraic_vs_total().fraction == 0.5
    assert StoppingPolicy.residual_drop().factor == 1e8
    with pytest.raises(ValueError):
        StoppingPolicy("whatever")
    with pytest.raises(ValueError):
        StoppingPolicy.algebraic_vs_total(1.5)


# -- harmonic Ritz ----------------------------------------------------------

def lanczos_state(d, b, steps):
    st = MinresState()
    q_prev, beta = np.zeros_like(b), 0.0
    q = b / np.linalg.norm(b)
    for _ in range(steps):
        w = d * q - beta * q_prev
        a = np.vdot(q, w).real
        w = w - a * q
        beta = np.linalg.norm(w)
        st.alphas.append(a)
        st.betas.append(beta)
        q_prev, q = q, (w / beta if beta > 0 else w)
    return st


def test_harmonic_ritz_exhausted_space():
    d = np.array([-2.0, -1.0, 1.0, 3.0])
    neg, pos = harmonic_ritz(lanczos_state(d, np.ones(4), 4))
    assert neg == pytest.approx(-1.0, abs=1e-10)
    assert pos == pytest.approx(1.0, abs=1e-10)


def test_harmonic_ritz_one_step():
    with pytest.raises(NoNegativeRitzYet):
        harmonic_ritz(lanczos_state(np.array([-2.0, -1, 1, 3]), np.ones(4), 1))


def test_minres_on_diagonal_records_ritz():
    d = np.array([-2.0, -1.0, 1.0, 3.0])
    S = DiagonalSystem(d, np.ones(4), 2)
    v, u, rep = minres_solve(S, lambda r: r.copy(), policy=StoppingPolicy.residual_drop(1e12))
    assert np.allclose(np.concatenate([v, u]), 1 / d)
    assert rep.iterations <= 4
    assert rep.records[-1].ritz_negative == pytest.approx(-1.0, abs=1e-10)


def test_final_ritz_near_dense_oracle():
    S = system("unit_square", 10.0, 2, 1, 3)
    P = hssc_pair("unit_square", 10.0, 2, 3, S)
    _, _, rep = minres_solve(S, P, policy=StoppingPolicy.residual_drop(1e12))
    Pd = np.stack([P(e) for e in np.eye(S.n, dtype=complex)], axis=1)
    Q = np.linalg.inv(0.5 * (Pd + Pd.conj().T))
    ev = sla.eigh(S.full_matrix().toarray(), Q, eigvals_only=True)
    lam = ev[ev < 0].max()
    assert rep.records[-1].ritz_negative == pytest.approx(lam, rel=0.05)


# -- solver behaviour -------------------------------------------------------

def test_zero_rhs():
    m = hierarchy("unit_square", 1).finest
    S = assemble_system(build_trial_space(m, 1), build_test_space(m, 2), ProblemData(4.0))
    v, u, rep = minres_solve(S, exact_pair(S))
    assert rep.iterations == 0 and not v.any() and not u.any()


@pytest.mark.parametrize("case", [("unit_square", 10.0, 1, 1, 2), ("unit_square", 20.0, 0, 1, 4),
                                  ("trapping", 3.0, 0, 1, 1)])
def test_matches_direct_solve(case):
    S = system(*case)
    v, u, rep = minres_solve(S, exact_pair(S), policy=StoppingPolicy.residual_drop(1e12))
    x = np.concatenate([v, u])
    ref = direct_solve(S)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_residuals_monotone(rng):
    S = system("unit_square", 20.0, 2, 1, 3)
    P = hssc_pair("unit_square", 20.0, 2, 3, S)
    x0 = random_complex(rng, S.n)
    _, _, rep = minres_solve(S, P, x0=x0, policy=StoppingPolicy.residual_drop(1e10))
    r = np.array(rep.residuals)
    assert np.all(np.diff(r) <= 1e-12 * r[0])
    g = [rec.gamma for rec in rep.records if rec.gamma is not None]
    assert g and all(0 < x <= 1 for x in g)


def test_max_iterations():
    S = system("unit_square", 10.0, 2, 1, 3)
    with pytest.raises(MaxIterations) as exc:
        minres_solve(S, exact_pair(S), policy=StoppingPolicy.residual_drop(1e12, max_iter=2))
    assert exc.value.report.iterations == 2


def test_report_written(tmp_path):
    S = system("unit_square", 10.0, 1, 1, 2)
    _, _, rep = minres_solve(S, exact_pair(S))
    rep.write(tmp_path / "r.txt")
    text = (tmp_path / "r.txt").read_text()
    assert str(rep.iterations) in text and len(text.splitlines()) >= rep.iterations


# -- preconditioned spectrum ------------------------------------------------

def test_exact_schur_gives_three_points():
    S = system("unit_square", 6.0, 1, 1, 3)
    MV = S.M_V.toarray()
    B = S.B.toarray()
    Sk = B.conj().T @ np.linalg.solve(MV, B)
    Q = sla.block_diag(MV, Sk)
    ev = sla.eigh(S.full_matrix().toarray(), Q, eigvals_only=True)
    targets = np.array([1.0, (1 + math.sqrt(5)) / 2, (1 - math.sqrt(5)) / 2])
    assert np.abs(ev[:, None] - targets[None]).min(axis=1).max() < 1e-8


def test_mass_schur_three_clusters_when_resolved():
    S = system("unit_square", 1.0, 2, 1, 4)
    Q = sla.block_diag(S.M_V.toarray(), S.M_U.toarray())
    ev = sla.eigh(S.full_matrix().toarray(), Q, eigvals_only=True)
    targets = np.array([1.0, (1 + math.sqrt(5)) / 2, (1 - math.sqrt(5)) / 2])
    assert np.abs(ev[:, None] - targets[None]).min(axis=1).max() < 0.05


# -- stopping criteria ------------------------------------------------------

def error_history(S, P, policy, data):
    errs = []

    def cb(k, x):
        v, u = S.split(x)
        errs.append(exact_errors(S.trial, S.test, u, v, data)["err_u"])

    _, _, rep = minres_solve(S, P, policy=policy, callback=cb)
    return rep, errs


def test_criterion_two_not_before_weak_stagnation():
    data = make_problem("unit_square", 10.0)
    m = hierarchy("unit_square", 4).finest
    S = assemble_system(build_trial_space(m, 1), build_test_space(m, 3), data)
    P = hssc_pair("unit_square", 10.0, 4, 3, S)
    _, errs = error_history(S, P, StoppingPolicy.residual_drop(1e12), data)
    rep2, _ = error_history(S, P, StoppingPolicy.algebraic_vs_total(), data)
    e = np.array(errs)
    # first iteration whose error decrease is at most 1%
    k_weak = 1 + next(i for i in range(1, len(e)) if e[i] >= 0.99 * e[i - 1])
    assert rep2.iterations >= k_weak - 1


def test_estimator_stagnates_before_iterate_converges():
    # ||B' v_k|| stays within 1% of its limit before u_k stays within 1% of u_delta
    data = make_problem("unit_square", 10.0)
    m = hierarchy("unit_square", 4).finest
    S = assemble_system(build_trial_space(m, 1), build_test_space(m, 3), data)
    P = hssc_pair("unit_square", 10.0, 4, 3, S)
    ud = direct_solve(S)[S.n_test:]
    norm = lambda z: math.sqrt(np.vdot(z, S.M_U @ z).real)
    alg = []
    _, _, rep = minres_solve(S, P, policy=StoppingPolicy.residual_drop(1e12),
                             callback=lambda k, x: alg.append(norm(ud - x[S.n_test:]) / norm(ud)))

    def settle(seq, target, tol):
        seq = np.asarray(seq)
        return next(k for k in range(len(seq)) if np.all(np.abs(seq[k:] - target) <= tol))

    est = rep.estimators
    assert settle(est, est[-1], 0.01 * est[-1]) < settle(alg, 0.0, 0.01)


def test_estimate_upper_bounds_error_mostly():
    rng = np.random.default_rng(7)
    hits = trials = 0
    for _ in range(12):
        kappa = float(rng.uniform(3, 12))
        angle = float(rng.uniform(0, 2 * np.pi))
        levels = int(rng.integers(2, 4))
        m = hierarchy("unit_square", levels).finest
        data = make_problem("unit_square", kappa, angle=angle)
        S = assemble_system(build_trial_space(m, 1), build_test_space(m, 3), data)
        P = hssc_pair("unit_square", kappa, levels, 3, S)
        _, u, rep = minres_solve(S, P, policy=StoppingPolicy.algebraic_vs_total())
        du = direct_solve(S)[S.n_test:] - u
        true = math.sqrt(np.vdot(du, S.M_U @ du).real)
        trials += 1
        hits += rep.records[-1].algebraic >= true
    assert hits >= 0.9 * trials
