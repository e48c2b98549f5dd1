"""Block preconditioner: Hermitian successive subspace correction (HSSC)
multigrid for the test Gram matrix and a Chebyshev/identity preconditioner
for the Schur complement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from ._kernels import patch_sweep
from .assembly import assemble_test_gram, hpd_inverse
from .errors import NonNestedSpaces
from .femspace import build_test_space, inclusion_map
from .linalg import (DenseHermitianFactor, chebyshev_apply, chebyshev_degree,
                     chebyshev_epsilon, lanczos_extreme)

DENSE_COARSE = 4000


# ---------------------------------------------------------------------------
# patch data
# ---------------------------------------------------------------------------

def patch_dof_sets(space, vertices):
    """For each vertex, the constrained DoFs supported inside its patch."""
    mesh = space.mesh
    nt = mesh.n_triangles
    V2E = sp.csr_matrix((np.ones(3 * nt), (mesh.triangles.ravel(), np.repeat(np.arange(nt), 3))),
                        shape=(mesh.n_vertices, nt))
    C = (V2E[vertices] @ space.elem_to_dof).tocsr()
    C.sort_indices()
    sup = space.support_size
    out = []
    for k in range(len(vertices)):
        cols = C.indices[C.indptr[k]:C.indptr[k + 1]]
        vals = C.data[C.indptr[k]:C.indptr[k + 1]]
        out.append(cols[vals == sup[cols]].astype(np.int64))
    return out


class PatchSmoother:
    """Successive exact solves on overlapping index sets of a Hermitian matrix."""

    def __init__(self, A, index_sets):
        self.A = sp.csr_matrix(A, dtype=complex)
        self.A.sort_indices()
        sets = [np.asarray(s, dtype=np.int64) for s in index_sets if len(s)]
        self.sets = sets
        sizes = np.array([len(s) for s in sets], dtype=np.int64)
        self.pptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.pidx = np.concatenate(sets) if sets else np.zeros(0, dtype=np.int64)
        self.iptr = np.concatenate([[0], np.cumsum(sizes ** 2)]).astype(np.int64)
        inv = np.empty(int(self.iptr[-1]), dtype=complex)
        for k, s in enumerate(sets):
            block = self.A[s][:, s].toarray()
            inv[self.iptr[k]:self.iptr[k + 1]] = hpd_inverse(block).ravel()
        self.inv = inv
        self.visits = int(sizes.sum())

    def sweep(self, f, x, reverse=False):
        A = self.A
        return patch_sweep(A.indptr, A.indices, A.data, np.ascontiguousarray(f, dtype=complex),
                           np.ascontiguousarray(x, dtype=complex), self.pptr, self.pidx,
                           self.iptr, self.inv, reverse)


@dataclass
class Level:
    space: object
    M: sp.csr_matrix
    patches: list
    smoother: PatchSmoother | None = None
    condensed: dict | None = None
    exact: object = None
    visits: int = 0


class _ExactSolve:
    def __init__(self, M):
        if M.shape[0] <= DENSE_COARSE:
            self.f = DenseHermitianFactor(M.toarray())
            self.solve = self.f.solve
        else:
            self.lu = spl.splu(sp.csc_matrix(M))
            self.solve = self.lu.solve


def _condense(M, space, patch_sets):
    """Element-interior block and the Schur complement on the remaining DoFs."""
    interior = space.interior_mask
    K = np.flatnonzero(interior)
    S = np.flatnonzero(~interior)
    M = sp.csr_matrix(M)
    MKK = M[K][:, K].tocsr()
    # M_KK is block diagonal by element; invert blockwise
    owner = np.asarray(space.elem_to_dof[:, K].argmax(axis=0)).ravel()
    order = np.argsort(owner, kind="stable")
    _, starts = np.unique(owner[order], return_index=True)
    bounds = np.append(starts, len(order))
    rows, cols, vals = [], [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        idx = order[a:b]
        inv = hpd_inverse(MKK[idx][:, idx].toarray())
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        vals.append(inv.ravel())
    nK = len(K)
    if nK:
        KKinv = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(nK, nK))
    else:
        KKinv = sp.csr_matrix((0, 0), dtype=complex)
    MSK = M[S][:, K].tocsr()
    MKS = M[K][:, S].tocsr()
    schur = (M[S][:, S] - MSK @ KKinv @ MKS).tocsr()
    schur = ((schur + schur.conj().T) * 0.5).tocsr()
    pos = -np.ones(M.shape[0], dtype=np.int64)
    pos[S] = np.arange(len(S))
    s_sets = [pos[s[~interior[s]]] for s in patch_sets]
    # element-interior DoFs covered by the patches
    covered = np.zeros(M.shape[0], dtype=bool)
    for s in patch_sets:
        covered[s[interior[s]]] = True
    kpos = -np.ones(M.shape[0], dtype=np.int64)
    kpos[K] = np.arange(nK)
    cov = kpos[np.flatnonzero(covered)]
    mask = np.zeros(nK)
    mask[cov] = 1.0
    D = sp.diags(mask)
    return {
        "K": K, "S": S, "KKinv_cov": (D @ KKinv @ D).tocsr(), "KKinv": KKinv,
        "MKS": MKS, "smoother": PatchSmoother(schur, s_sets), "schur": schur,
    }


# ---------------------------------------------------------------------------
# the tree
# ---------------------------------------------------------------------------

@dataclass
class PrecondTree:
    hierarchy: object
    levels: list
    inclusions: list
    m_schedule: list
    mode: str
    condense: bool
    kappa: float
    stats: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.levels[-1].M.shape[0]

    def visits_per_cycle(self):
        """Patch-solve DoF visits of one application (pre- and post-smoothing)."""
        return int(sum(2 * m * lv.visits for m, lv in zip(self.m_schedule, self.levels)
                       if lv.exact is None))


def build_precond(hierarchy, kappa, p_tilde, m_schedule=None, mode="multigrid", condense=None,
                  restrict=True, finest_M=None, spaces=None, check=True):
    """Build the HSSC V-cycle (or two-grid) data on ``hierarchy``.

    Level 0 of the used hierarchy is solved exactly; in ``two_grid`` mode only
    the two finest levels are used.
    """
    if condense is None:
        condense = p_tilde >= 4
    L = len(hierarchy) - 1
    first = max(L - 1, 0) if mode == "two_grid" else 0
    if mode not in ("multigrid", "two_grid"):
        raise ValueError(f"unknown preconditioner mode {mode!r}")
    idx = list(range(first, L + 1))
    if spaces is None:
        spaces = [build_test_space(hierarchy[k], p_tilde) for k in idx]
    else:
        spaces = list(spaces)[-len(idx):]
    if m_schedule is None:
        m_schedule = [1] * len(idx)
    m_schedule = list(m_schedule)
    if len(m_schedule) < len(idx):
        # a short schedule refers to the finest levels
        m_schedule = [1] * (len(idx) - len(m_schedule)) + m_schedule
    m_schedule = m_schedule[-len(idx):]
    levels, incl = [], []
    for j, k in enumerate(idx):
        sp_k = spaces[j]
        M = finest_M if (k == L and finest_M is not None) else assemble_test_gram(sp_k, kappa)
        if j == 0:
            levels.append(Level(sp_k, M, [], exact=_ExactSolve(M)))
            continue
        incl.append(inclusion_map(spaces[j - 1], sp_k, check=check))
        verts = hierarchy.new_patch_vertices(k) if restrict else np.arange(hierarchy[k].n_vertices)
        sets = patch_dof_sets(sp_k, verts)
        lv = Level(sp_k, M, sets)
        if condense:
            lv.condensed = _condense(M, sp_k, sets)
            lv.visits = lv.condensed["smoother"].visits
        else:
            lv.smoother = PatchSmoother(M, sets)
            lv.visits = lv.smoother.visits
        levels.append(lv)
    return PrecondTree(hierarchy, levels, incl, m_schedule, mode, bool(condense), float(kappa))


def smoother_apply(level, f, x=None, reverse=False):
    """One sweep over the level's patches (exactly reversed when ``reverse``)."""
    f = np.asarray(f, dtype=complex)
    x = np.zeros_like(f) if x is None else np.array(x, dtype=complex)
    if level.condensed is None:
        return level.smoother.sweep(f, x, reverse)
    c = level.condensed
    K, S = c["K"], c["S"]
    M = level.M
    r = f - M @ x
    # element-interior correction on covered elements
    dK = c["KKinv_cov"] @ r[K]
    x[K] += dK
    r -= M[:, K] @ dK
    # corrections in the orthogonal complement, in Schur coordinates
    s = c["smoother"].sweep(r[S], np.zeros(len(S), dtype=complex), reverse)
    x[S] += s
    x[K] -= c["KKinv"] @ (c["MKS"] @ s)
    return x


def apply_Qv_inverse(tree, f):
    return _vcycle(tree, len(tree.levels) - 1, np.asarray(f, dtype=complex))


def _vcycle(tree, j, f):
    lv = tree.levels[j]
    if lv.exact is not None:
        return lv.exact.solve(f)
    m = tree.m_schedule[j]
    x = np.zeros_like(f)
    for _ in range(m):
        x = smoother_apply(lv, f, x, reverse=False)
    I = tree.inclusions[j - 1]
    r = f - lv.M @ x
    x = x + I @ _vcycle(tree, j - 1, I.conj().T @ r)
    for _ in range(m):
        x = smoother_apply(lv, f, x, reverse=True)
    return x


# ---------------------------------------------------------------------------
# Schur complement preconditioner
# ---------------------------------------------------------------------------

@dataclass
class SchurPreconditioner:
    """Identity or a fixed Chebyshev polynomial in M_U."""

    mode: str = "identity"
    M_U: object = None
    interval: tuple = None
    degree: int = 0

    @property
    def epsilon(self):
        if self.mode == "identity":
            return None
        return float(chebyshev_epsilon(*self.interval, self.degree))


def build_schur_preconditioner(M_U, mode="chebyshev", eps_target=0.1, degree=None, seed=0):
    if mode == "identity":
        return SchurPreconditioner("identity")
    if mode != "chebyshev":
        raise ValueError(f"unknown Schur preconditioner {mode!r}")
    n = M_U.shape[0]
    res = lanczos_extreme(lambda x: M_U @ x, lambda x: x, n, tol=1e-10, seed=seed)
    a, b = 0.95 * res.lmin, 1.05 * res.lmax
    k = chebyshev_degree(a, b, eps_target) if degree is None else int(degree)
    return SchurPreconditioner("chebyshev", M_U, (a, b), k)


def apply_Qs_inverse(sp_, r):
    if sp_.mode == "identity":
        return np.array(r, copy=True)
    a, b = sp_.interval
    return chebyshev_apply(lambda x: sp_.M_U @ x, a, b, sp_.degree, np.asarray(r))
