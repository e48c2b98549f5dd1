"""Per-mesh solves, error estimation, marking, refinement and prolongation."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spl

from .assembly import assemble_system
from .errors import NonNestedMeshes
from .femspace import (build_test_space, build_trial_space, evaluate_B_adjoint, geometry,
                       inclusion_map, trial_prolongation)
from .mesh import MeshHierarchy, Triangulation
from .minres import SolveReport, StoppingPolicy, minres_solve
from .precond import build_precond, build_schur_preconditioner
from .quadrature import converge, triangle_rule


@dataclass
class PrecondConfig:
    mode: str = "multigrid"  # multigrid | two_grid
    m_schedule: Optional[list] = None
    condense: Optional[bool] = None
    schur: str = "chebyshev"  # chebyshev | identity
    eps_target: float = 0.1
    restrict: bool = True
    seed: int = 0


@dataclass
class MeshSolve:
    hierarchy: MeshHierarchy
    system: object
    u: np.ndarray
    v: np.ndarray
    report: SolveReport
    tree: object = None
    schur: object = None
    timings: dict = field(default_factory=dict)

    @property
    def trial(self):
        return self.system.trial

    @property
    def test(self):
        return self.system.test

    @property
    def x(self):
        return np.concatenate([self.v, self.u])


class BoostedSolution:
    """u_delta + B'_kappa v_delta, held as the two coefficient vectors and
    evaluated elementwise (a discontinuous piecewise polynomial)."""

    def __init__(self, trial, test, u, v, kappa):
        self.trial, self.test, self.u, self.v, self.kappa = trial, test, u, v, kappa

    def correction(self, ref_pts, cells=slice(None)):
        s, w = evaluate_B_adjoint(self.test, self.v, self.kappa, ref_pts, cells)
        return np.concatenate([s[..., None], w], axis=-1)

    def evaluate(self, ref_pts, cells=slice(None)):
        return self.trial.evaluate(self.u, ref_pts, cells) + self.correction(ref_pts, cells)


def _as_hierarchy(mesh):
    if isinstance(mesh, MeshHierarchy):
        return mesh
    if isinstance(mesh, Triangulation):
        return MeshHierarchy.from_initial(mesh)
    raise TypeError("expected a Triangulation or MeshHierarchy")


def solve_on_mesh(mesh, data, p, p_tilde, precond=None, policy=None, x0=None,
                  carried_gamma=None, solver="minres", system=None):
    """Assemble and solve on the finest level of ``mesh`` (a hierarchy or a
    single triangulation, in which case the preconditioner is exact)."""
    h = _as_hierarchy(mesh)
    m = h.finest
    t0 = time.perf_counter()
    if system is None:
        system = assemble_system(build_trial_space(m, p), build_test_space(m, p_tilde), data)
    t1 = time.perf_counter()
    if solver == "direct":
        x = direct_solve(system)
        v, u = system.split(x)
        rep = SolveReport(converged=True, stop_reason="direct")
        return MeshSolve(h, system, u, v, rep, timings={"assemble": t1 - t0})
    cfg = precond or PrecondConfig()
    tree = build_precond(h, data.kappa, p_tilde, cfg.m_schedule, cfg.mode, cfg.condense,
                         cfg.restrict, finest_M=system.M_V)
    qs = build_schur_preconditioner(system.M_U, cfg.schur, cfg.eps_target, seed=cfg.seed)
    t2 = time.perf_counter()
    v, u, rep = minres_solve(system, (tree, qs), x0=x0, policy=policy, carried_gamma=carried_gamma)
    t3 = time.perf_counter()
    rep.extra["schur_degree"] = qs.degree
    rep.extra["patch_visits_per_cycle"] = tree.visits_per_cycle()
    return MeshSolve(h, system, u, v, rep, tree, qs,
                     {"assemble": t1 - t0, "precond": t2 - t1, "solve": t3 - t2})


def direct_solve(system):
    """Sparse LU of the full saddle matrix."""
    return spl.splu(system.full_matrix().tocsc()).solve(system.rhs())


# ---------------------------------------------------------------------------
# estimator and errors
# ---------------------------------------------------------------------------

def error_estimator(test, v, kappa):
    """Global eta = ||B' v||_U and per-element eta_K."""
    x, w = triangle_rule(2 * test.degree + 2)
    g = geometry(test.mesh)
    s, vec = evaluate_B_adjoint(test, v, kappa, x)
    dens = np.abs(s) ** 2 + np.sum(np.abs(vec) ** 2, axis=-1)
    etaK = np.sqrt(np.maximum(dens @ w * g.det, 0.0))
    return float(np.sqrt(np.sum(etaK ** 2))), etaK


def exact_errors(solve_or_trial, test=None, u=None, v=None, data=None, rtol=1e-12):
    """||u - u_delta||_U, ||u - boosted||_U and ||B' v||_U by element
    quadrature of degree 2 p_tilde + 6, doubled until settled."""
    if isinstance(solve_or_trial, MeshSolve):
        s = solve_or_trial
        trial, test, u, v = s.trial, s.test, s.u, s.v
    else:
        trial = solve_or_trial
    kappa = data.kappa
    mesh = trial.mesh
    g = geometry(mesh)
    boosted = BoostedSolution(trial, test, u, v, kappa)

    def at(deg):
        x, w = triangle_rule(deg)
        X = g.map(x)
        phi, uu = data.exact(X)
        ex = np.concatenate([phi[..., None], uu], axis=-1)
        uh = trial.evaluate(u, x)
        bv = boosted.correction(x)
        wd = w[None, :] * g.det[:, None]
        e1 = np.sum(wd * np.sum(np.abs(ex - uh) ** 2, axis=-1))
        e2 = np.sum(wd * np.sum(np.abs(ex - uh - bv) ** 2, axis=-1))
        e3 = np.sum(wd * np.sum(np.abs(bv) ** 2, axis=-1))
        return np.array([e1, e2, e3])

    sq = converge(at, 2 * test.degree + 6, rtol)
    return {"err_u": math.sqrt(sq[0]), "err_boosted": math.sqrt(sq[1]), "eta": math.sqrt(sq[2]),
            "err_u_sq": sq[0], "err_boosted_sq": sq[1], "eta_sq": sq[2]}


def dorfler_mark(etaK, theta=0.6):
    """Minimal set M (greedy, ties by triangle id) with
    sum_{K in M} eta_K^2 >= theta^2 sum_K eta_K^2."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    e2 = np.asarray(etaK, float) ** 2
    total = e2.sum()
    if total == 0.0:
        return set()
    order = np.lexsort((np.arange(len(e2)), -e2))
    csum = np.cumsum(e2[order])
    target = theta ** 2 * total
    # guard the comparison against summation roundoff
    n = int(np.searchsorted(csum, target * (1.0 - 1e-14), side="left")) + 1
    n = min(n, len(e2))
    marked = order[:n]
    if theta == 1.0:
        marked = order[e2[order] > 0]
    return set(int(t) for t in marked)


def prolongate(u_prev, v_prev, coarse, fine):
    """Fine-mesh initial iterate [v; u] reproducing the coarse solution.

    ``coarse`` and ``fine`` are (trial, test) pairs on nested meshes.
    """
    (tc, sc), (tf, sf) = coarse, fine
    if tf.mesh.parent is None or len(tf.mesh.parent) != tf.mesh.n_triangles:
        raise NonNestedMeshes("fine mesh does not record its parent mesh")
    if tf.mesh.parent.max() >= tc.mesh.n_triangles:
        raise NonNestedMeshes("fine mesh does not refine the coarse mesh")
    P = trial_prolongation(tc, tf)
    I = inclusion_map(sc, sf)
    return np.concatenate([I @ v_prev, P @ u_prev])


# ---------------------------------------------------------------------------
# adaptive loop
# ---------------------------------------------------------------------------

@dataclass
class MeshRecord:
    step: int
    n_triangles: int
    dofs_U: int
    dofs_V: int
    h_max: float
    iterations: int
    estimator: float
    gamma: Optional[float]
    algebraic: Optional[float]
    err_u: Optional[float] = None
    err_boosted: Optional[float] = None
    patch_visits: Optional[int] = None
    stop_reason: str = ""

    @property
    def dofs(self):
        return self.dofs_U + self.dofs_V


@dataclass
class AdaptiveRun:
    p: int
    p_tilde: int
    mode: str
    theta: float
    records: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    hierarchy: Optional[MeshHierarchy] = None
    final: Optional[MeshSolve] = None


def run_adaptive(initial, data, p, p_tilde, mode="adaptive", theta=0.6, dof_cap=10_000,
                 max_steps=50, precond=None, policy=None, use_prolongation=True,
                 carry_gamma=True, solver="minres", compute_errors=None, on_step=None):
    """solve -> estimate -> mark -> refine -> prolongate until the DoF cap."""
    if mode not in ("uniform", "adaptive"):
        raise ValueError(f"unknown refinement mode {mode!r}")
    h = _as_hierarchy(initial)
    compute_errors = data.has_exact if compute_errors is None else compute_errors
    run = AdaptiveRun(p, p_tilde, mode, theta)
    x0, gamma = None, None
    for step in range(max_steps + 1):
        sol = solve_on_mesh(h, data, p, p_tilde, precond, policy, x0,
                            gamma if carry_gamma else None, solver)
        eta, etaK = error_estimator(sol.test, sol.v, data.kappa)
        rep = sol.report
        gamma = rep.gamma if carry_gamma else None
        last = rep.records[-1] if rep.records else None
        rec = MeshRecord(step, h.finest.n_triangles, sol.trial.n_dofs, sol.test.n_dofs,
                         h.finest.h_max(), rep.iterations, eta, rep.gamma,
                         last.algebraic if last else None,
                         patch_visits=rep.extra.get("patch_visits_per_cycle"),
                         stop_reason=rep.stop_reason)
        if compute_errors:
            e = exact_errors(sol, data=data)
            rec.err_u, rec.err_boosted = e["err_u"], e["err_boosted"]
        run.records.append(rec)
        run.reports.append(rep)
        if on_step is not None:
            on_step(rec, sol)
        if rec.dofs >= dof_cap or step == max_steps:
            break
        marked = None if mode == "uniform" else dorfler_mark(etaK, theta)
        h = h.refined(marked)
        if use_prolongation and solver == "minres":
            fine = (build_trial_space(h.finest, p), build_test_space(h.finest, p_tilde))
            x0 = prolongate(sol.u, sol.v, (sol.trial, sol.test), fine)
    run.hierarchy = h
    run.final = sol
    return run
