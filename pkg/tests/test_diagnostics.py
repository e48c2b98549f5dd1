import csv
import math
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from helmfosls.diagnostics import (SpectralValue, compute_inf_sup, compute_precond_condition,
                                   preconditioned_saddle_eigenvalues, verify_schur_bounds,
                                   write_study)
from helmfosls.errors import DimCapExceeded
from helmfosls.mesh import MeshHierarchy, build_initial_mesh
from helmfosls.precond import build_precond

from conftest import hierarchy, system

MESHES = [("unit_square", 10.0, 2), ("non_trapping", 5.0, 0), ("trapping", 3.0, 0)]


# -- inf-sup ----------------------------------------------------------------

@pytest.mark.parametrize("problem,kappa,levels", MESHES)
def test_inf_sup_monotone_in_test_degree(problem, kappa, levels):
    g = [compute_inf_sup(system(problem, kappa, levels, 1, pt)).value for pt in (1, 2, 3, 4)]
    assert all(0 < x <= 1 + 1e-10 for x in g)
    assert all(b >= a - 1e-10 for a, b in zip(g, g[1:]))


def test_single_trial_dof_pencil():
    S = system("unit_square", 10.0, 1, 1, 3)
    j = 4
    b = S.B[:, [j]].toarray()
    sub = SimpleNamespace(M_V=S.M_V, B=sp.csr_matrix(b), M_U=S.M_U[[j]][:, [j]],
                          n_test=S.n_test, n_trial=1)
    direct = math.sqrt((b.conj().T @ np.linalg.solve(S.M_V.toarray(), b)).real.item()
                       / S.M_U[j, j])
    for method in ("dense", "schur"):
        assert compute_inf_sup(sub, method=method).value == pytest.approx(direct, rel=1e-12)


def test_inf_sup_resolved_plane_wave():
    g = compute_inf_sup(system("unit_square", 10.0, 5, 1, 3))
    assert 0.8 < g.value <= 1.0


@pytest.mark.parametrize("case", [("unit_square", 10.0, 2, 1, 3), ("trapping", 3.0, 0, 1, 2)])
def test_inf_sup_methods_agree(case):
    S = system(*case)
    d = compute_inf_sup(S, method="dense")
    s = compute_inf_sup(S, method="schur")
    l = compute_inf_sup(S, method="lanczos")
    assert (d.method, s.method, l.method) == ("dense", "schur", "lanczos")
    assert s.value == pytest.approx(d.value, rel=1e-8)
    assert l.value == pytest.approx(d.value, rel=0.02)


def test_inf_sup_auto_method():
    S = system("unit_square", 10.0, 2, 1, 3)
    assert compute_inf_sup(S).method == "dense"
    assert compute_inf_sup(S, cap=S.n_trial + 1).method == "schur"
    assert compute_inf_sup(S, cap=10).method == "lanczos"


def test_inf_sup_rescaling_invariance(rng):
    S = system("non_trapping", 5.0, 0, 1, 3)
    D = sp.diags(rng.uniform(0.2, 5.0, S.n_trial))
    scaled = SimpleNamespace(M_V=S.M_V, B=(S.B @ D).tocsr(), M_U=(D @ S.M_U @ D).tocsr(),
                             n_test=S.n_test, n_trial=S.n_trial)
    assert compute_inf_sup(scaled).value == pytest.approx(compute_inf_sup(S).value, abs=1e-10)


# -- Schur bounds -----------------------------------------------------------

@pytest.mark.parametrize("case", [("unit_square", 10.0, 0, 1, 3), ("unit_square", 20.0, 2, 1, 3),
                                  ("non_trapping", 5.0, 0, 1, 2), ("trapping", 3.0, 0, 1, 3)])
def test_schur_bounds(case):
    S = system(*case)
    lmin, lmax = verify_schur_bounds(S)
    assert lmax <= 1 + 1e-10
    g = compute_inf_sup(S, method="dense").value
    assert lmin == pytest.approx(g * g, abs=1e-8)


def test_schur_bounds_cap():
    with pytest.raises(DimCapExceeded):
        verify_schur_bounds(system("unit_square", 10.0, 1, 1, 2), cap=10)


# -- preconditioned condition numbers ---------------------------------------

def test_exact_preconditioner_condition_one():
    h = MeshHierarchy.from_initial(build_initial_mesh("unit_square"))
    tree = build_precond(h, 10.0, 3)
    S = system("unit_square", 10.0, 0, 1, 3)
    for method in ("dense", "lanczos"):
        cond, lmin, lmax = compute_precond_condition(S, tree, method)
        assert cond.value == pytest.approx(1.0, abs=1e-8)


def test_condition_dense_vs_lanczos():
    S = system("unit_square", 10.0, 3, 1, 3)
    tree = build_precond(hierarchy("unit_square", 3), 10.0, 3)
    d, dmin, dmax = compute_precond_condition(S, tree, "dense")
    l, lmin, lmax = compute_precond_condition(S, tree, "lanczos")
    assert dmax == pytest.approx(1.0, abs=1e-6) and lmax == pytest.approx(1.0, abs=1e-6)
    assert l.value == pytest.approx(d.value, rel=0.02)


def test_two_grid_condition_not_worse():
    S = system("unit_square", 10.0, 3, 1, 3)
    h = hierarchy("unit_square", 3)
    mg = compute_precond_condition(S, build_precond(h, 10.0, 3), "dense")[0].value
    tg = compute_precond_condition(S, build_precond(h, 10.0, 3, mode="two_grid"), "dense")[0].value
    assert tg <= mg * 1.02


def test_more_smoothing_on_critical_level():
    # kappa h / p_tilde is about 1 on level 3 of the square for kappa = 10, p_tilde = 3
    h = hierarchy("unit_square", 4)
    assert 10.0 * h[3].h_max() / 3 == pytest.approx(1.0, abs=0.2)
    S = system("unit_square", 10.0, 4, 1, 3)
    conds = [compute_precond_condition(S, build_precond(h, 10.0, 3, m_schedule=[1, 1, 1, m, 1]))[0].value
             for m in (1, 2, 4)]
    assert conds[1] <= conds[0] * (1 + 1e-6) and conds[2] <= conds[1] * (1 + 1e-6)


def test_saddle_eigenvalues_exact_blocks():
    S = system("unit_square", 4.0, 0, 1, 3)
    MV = S.M_V.toarray()
    B = S.B.toarray()
    Sk = B.conj().T @ np.linalg.solve(MV, B)
    Pinv = sla.block_diag(np.linalg.inv(MV), np.linalg.inv(Sk))
    ev = preconditioned_saddle_eigenvalues(S, lambda r: Pinv @ r)
    targets = np.array([1.0, (1 + math.sqrt(5)) / 2, (1 - math.sqrt(5)) / 2])
    assert np.abs(ev[:, None] - targets[None]).min(axis=1).max() < 1e-8


# -- output -----------------------------------------------------------------

def test_write_study(tmp_path):
    rows = [{"kappa": 10.0, "p": 1, "p_tilde": 3, "dofs_U": 123, "value": 0.9, "method": "dense",
             "level": 2}]
    write_study(tmp_path / "s.csv", rows)
    with open(tmp_path / "s.csv") as fh:
        got = list(csv.DictReader(fh))
    assert list(got[0])[:6] == ["kappa", "p", "p_tilde", "dofs_U", "value", "method"]
    assert got[0]["level"] == "2"


def test_spectral_value_float():
    assert float(SpectralValue(0.5, "dense")) == 0.5
