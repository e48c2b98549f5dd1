import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helmfosls.assembly import ProblemData
from helmfosls.diagnostics import best_approximation_error, compute_inf_sup
from helmfosls.driver import (PrecondConfig, dorfler_mark, error_estimator, exact_errors,
                              prolongate, run_adaptive, solve_on_mesh)
from helmfosls.errors import NonNestedMeshes
from helmfosls.femspace import build_test_space, build_trial_space, geometry
from helmfosls.mesh import build_initial_mesh, refine_uniform
from helmfosls.minres import StoppingPolicy
from helmfosls.problems import make_problem

from conftest import hierarchy, local_hierarchy, random_complex

TIGHT = StoppingPolicy.residual_drop(1e12)


def solved(problem, kappa, levels, p, p_tilde, solver="direct", policy=TIGHT):
    # scattering domains carry the plane wave as a custom problem with known solution
    kind = "custom" if problem != "unit_square" else problem
    data = make_problem(kind, kappa)
    return data, solve_on_mesh(hierarchy(problem, levels), data, p, p_tilde, policy=policy,
                               solver=solver)


# -- solves -----------------------------------------------------------------

@pytest.mark.parametrize("solver", ["direct", "minres"])
def test_zero_data(solver):
    sol = solve_on_mesh(hierarchy("unit_square", 2), ProblemData(7.0), 1, 3, solver=solver)
    assert not sol.u.any() and not sol.v.any()


@pytest.mark.parametrize("case", [("unit_square", 10.0, 3, 1, 3), ("non_trapping", 5.0, 1, 1, 3),
                                  ("unit_square", 6.0, 2, 2, 4)])
def test_pythagoras(case):
    data, sol = solved(*case)
    e = exact_errors(sol, data=data)
    gap = e["err_u_sq"] - e["err_boosted_sq"] - e["eta_sq"]
    assert abs(gap) <= 1e-8 * e["err_u_sq"]
    assert e["err_boosted"] <= e["err_u"]


def test_pythagoras_minres():
    data, sol = solved("unit_square", 10.0, 3, 1, 3, solver="minres")
    e = exact_errors(sol, data=data)
    assert abs(e["err_u_sq"] - e["err_boosted_sq"] - e["eta_sq"]) <= 1e-8 * e["err_u_sq"]


def test_galerkin_orthogonality_exact():
    _, sol = solved("unit_square", 10.0, 2, 1, 3)
    S = sol.system
    r = S.B.conj().T @ sol.v
    assert np.linalg.norm(r) <= 1e-10 * abs(S.B).max() * np.linalg.norm(sol.v)


def test_galerkin_orthogonality_tracks_tolerance():
    res = []
    for factor in (1e4, 1e6):
        _, sol = solved("unit_square", 10.0, 3, 1, 3, solver="minres",
                        policy=StoppingPolicy.residual_drop(factor))
        res.append(np.linalg.norm(sol.system.B.conj().T @ sol.v))
    assert res[1] < res[0] / 10


def test_pollution_bound():
    data, sol = solved("unit_square", 10.0, 4, 1, 3)
    err = exact_errors(sol, data=data)["err_u"]
    gamma = compute_inf_sup(sol.system).value
    best = best_approximation_error(sol.trial, data)
    assert best <= err <= best / gamma * (1 + 1e-8)


# -- estimator --------------------------------------------------------------

def test_estimator_zero():
    V = build_test_space(hierarchy("unit_square", 1).finest, 2)
    eta, etaK = error_estimator(V, np.zeros(V.n_dofs, dtype=complex), 5.0)
    assert eta == 0.0 and not etaK.any()


def test_estimator_matches_gram(rng):
    _, sol = solved("non_trapping", 5.0, 1, 1, 3)
    v = random_complex(rng, sol.test.n_dofs)
    eta, etaK = error_estimator(sol.test, v, 5.0)
    assert eta ** 2 == pytest.approx(np.vdot(v, sol.system.M_V @ v).real, rel=1e-12)
    assert eta ** 2 == pytest.approx(np.sum(etaK ** 2), rel=1e-14)


def test_estimator_efficiency_resolved():
    for levels in (5, 6):
        data, sol = solved("unit_square", 10.0, levels, 1, 3)
        e = exact_errors(sol, data=data)
        assert 0.5 <= e["eta"] / e["err_u"] <= 1.0


def test_estimator_lower_bound_with_algebraic_slack():
    data, sol = solved("unit_square", 10.0, 4, 1, 3, solver="minres",
                       policy=StoppingPolicy.algebraic_vs_total())
    e = exact_errors(sol, data=data)
    alg = sol.report.records[-1].algebraic
    assert e["eta"] <= e["err_u"] + 2 * alg


# -- marking ----------------------------------------------------------------

def test_dorfler_theta_one():
    assert dorfler_mark([0.0, 1.0, 2.0, 0.0], 1.0) == {1, 2}


def test_dorfler_three_values():
    eta = np.array([3.0, 2.0, 1.0]) / math.sqrt(14)
    assert dorfler_mark(eta, math.sqrt(0.6)) == {0}


@pytest.mark.parametrize("n", [1, 7, 25, 100])
def test_dorfler_equal_values(n):
    assert len(dorfler_mark(np.ones(n), 0.6)) == math.ceil(0.36 * n)


def test_dorfler_ties_by_id():
    assert dorfler_mark([1.0, 2.0, 2.0, 2.0], 0.6) == {1, 2}


def test_dorfler_invalid():
    with pytest.raises(ValueError):
        dorfler_mark([1.0], 0.0)
    assert dorfler_mark([0.0, 0.0], 0.5) == set()


@settings(max_examples=40, deadline=None)
@given(eta=st.lists(st.floats(0, 10), min_size=1, max_size=40), theta=st.floats(0.05, 1.0))
def test_dorfler_minimal(eta, theta):
    eta = np.array(eta)
    M = dorfler_mark(eta, theta)
    total = np.sum(eta ** 2)
    if total == 0:
        assert not M
        return
    got = np.sum(eta[list(M)] ** 2)
    assert got >= theta ** 2 * total * (1 - 1e-12)
    if theta < 1:
        # no smaller set reaches the bulk
        best = np.sort(eta ** 2)[::-1][: len(M) - 1].sum()
        assert best < theta ** 2 * total * (1 - 1e-14) or len(M) == 1


# -- prolongation -----------------------------------------------------------

def spaces(mesh, p=1, p_tilde=3):
    return build_trial_space(mesh, p), build_test_space(mesh, p_tilde)


def test_prolongate_constant():
    h = hierarchy("unit_square", 2)
    (tc, sc), (tf, sf) = spaces(h[1]), spaces(h[2])
    u = np.zeros(tc.n_dofs)
    # constant phi = 1 in the rescaled basis
    nc = tc.n_dofs // 3
    u[:nc] = 1.0 / tc.scale
    x0 = prolongate(u, np.zeros(sc.n_dofs), (tc, sc), (tf, sf))
    uf = x0[sf.n_dofs:]
    vals = tf.evaluate(uf, np.array([[0.2, 0.3], [0.6, 0.1]]))
    assert np.allclose(vals[..., 0], 1.0, atol=1e-12)
    assert np.allclose(vals[..., 1:], 0.0, atol=1e-12)


def test_prolongate_pointwise(rng):
    h = local_hierarchy("non_trapping", steps=2, corner=(0.0, 0.0))
    coarse_mesh, fine_mesh = h[-2], h[-1]
    (tc, sc), (tf, sf) = spaces(coarse_mesh), spaces(fine_mesh)
    u, v = rng.standard_normal(tc.n_dofs), random_complex(rng, sc.n_dofs)
    x0 = prolongate(u, v, (tc, sc), (tf, sf))
    vf, uf = x0[: sf.n_dofs], x0[sf.n_dofs:]
    gf, gc = geometry(fine_mesh), geometry(coarse_mesh)
    for _ in range(50):
        c = int(rng.integers(fine_mesh.n_triangles))
        a, b = rng.uniform(0, 1, 2)
        ref = np.array([[a * (1 - b), b]])
        X = gf.map(ref, [c])[0]
        parent = [int(fine_mesh.parent[c])]
        ref_c = gc.pullback(X, parent).reshape(1, 2)
        assert np.allclose(tf.evaluate(uf, ref, [c]), tc.evaluate(u, ref_c, parent), atol=1e-12)
        ef, wf = sf.evaluate(vf, ref, [c])
        ec, wc = sc.evaluate(v, ref_c, parent)
        assert np.allclose(ef, ec, atol=1e-12) and np.allclose(wf, wc, atol=1e-12)


def test_prolongate_non_nested():
    a = hierarchy("unit_square", 1)
    other = build_initial_mesh("non_trapping")
    with pytest.raises(NonNestedMeshes):
        prolongate(np.zeros(spaces(a[1])[0].n_dofs), np.zeros(spaces(a[1])[1].n_dofs),
                   spaces(a[1]), spaces(other))
    fine = refine_uniform(refine_uniform(build_initial_mesh("non_trapping")))
    with pytest.raises(NonNestedMeshes):
        prolongate(np.zeros(spaces(a[1])[0].n_dofs), np.zeros(spaces(a[1])[1].n_dofs),
                   spaces(a[1]), spaces(fine))


def test_prolongation_saves_iterations():
    data = make_problem("unit_square", 10.0)
    h = hierarchy("unit_square", 5)
    coarse = solve_on_mesh(h.sub(0, 5), data, 1, 3, policy=StoppingPolicy.algebraic_vs_total())
    x0 = prolongate(coarse.u, coarse.v, (coarse.trial, coarse.test), spaces(h[5]))
    warm = solve_on_mesh(h, data, 1, 3, policy=StoppingPolicy.algebraic_vs_total(), x0=x0)
    cold = solve_on_mesh(h, data, 1, 3, policy=StoppingPolicy.algebraic_vs_total())
    assert h[5].h_max() < 3 / 10
    assert warm.report.iterations < cold.report.iterations


# -- adaptive loop ----------------------------------------------------------

def square_counts(k, p_tilde):
    """DoF counts on the k-times uniformly bisected all-Robin unit square."""
    nt = 4 * 2 ** k
    nb = 4 * 2 ** math.ceil(k / 2)
    ne = (3 * nt + nb) // 2
    nv = 1 + ne - nt
    dofs_U = 3 * nv
    lag = nv + (p_tilde - 1) * ne + (p_tilde - 1) * (p_tilde - 2) // 2 * nt
    rt = (p_tilde + 1) * ne + p_tilde * (p_tilde + 1) * nt
    return dofs_U, lag + rt - (p_tilde + 1) * nb


@pytest.mark.parametrize("p_tilde", [2, 3])
def test_uniform_dof_counts(p_tilde):
    run = run_adaptive(build_initial_mesh("unit_square"), make_problem("unit_square", 4.0), 1,
                       p_tilde, mode="uniform", max_steps=3, dof_cap=10 ** 9, solver="direct",
                       compute_errors=False)
    assert len(run.records) == 4
    for k, rec in enumerate(run.records):
        assert (rec.dofs_U, rec.dofs_V) == square_counts(k, p_tilde)
    assert np.all(np.diff([r.dofs for r in run.records]) > 0)


def test_dof_cap_zero():
    run = run_adaptive(build_initial_mesh("unit_square"), make_problem("unit_square", 4.0), 1, 3,
                       dof_cap=0)
    assert len(run.records) == 1 and run.records[0].step == 0


def test_adaptive_records_and_boosted():
    run = run_adaptive(build_initial_mesh("unit_square"), make_problem("unit_square", 8.0), 1, 3,
                       theta=0.6, dof_cap=3000, precond=PrecondConfig())
    assert np.all(np.diff([r.dofs for r in run.records]) > 0)
    for r in run.records:
        assert r.err_boosted <= r.err_u * (1 + 1e-6)
        assert r.gamma is None or 0 < r.gamma <= 1
    # carried gamma never increases
    g = [r.gamma for r in run.records if r.gamma is not None]
    assert np.all(np.diff(g) <= 0)


def test_adaptive_estimator_decreases_when_resolved():
    run = run_adaptive(build_initial_mesh("non_trapping"), make_problem("non_trapping", 20.0), 1, 3,
                       dof_cap=25_000, compute_errors=False)
    # pre-asymptotic meshes raise the estimator; past its peak it falls strictly
    eta = np.array([r.estimator for r in run.records])
    tail = eta[int(np.argmax(eta)):]
    assert len(tail) >= 4
    assert np.all(np.diff(tail) < 0)


def test_bad_mode():
    with pytest.raises(ValueError):
        run_adaptive(build_initial_mesh("unit_square"), make_problem("unit_square", 4.0), 1, 3,
                     mode="random")
