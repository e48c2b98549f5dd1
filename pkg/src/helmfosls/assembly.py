"""Assembly of the test Gram matrix M_V, the coupling B, the load q and the
trial mass matrix M_U."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import MeshMismatch, SingularPatch
from .femspace import REF_VERTICES, geometry
from .quadrature import converge, edge_rule, triangle_rule

CHUNK = 2048


@dataclass
class ProblemData:
    """Data of the first-order Helmholtz system.

    ``f1(x)`` and ``f2(x)`` act on point arrays of shape (..., 2); boundary
    data ``g_D(x, n)`` and ``g(x, n)`` also receive the outward unit normal.
    ``exact(x)`` returns ``(phi, u)`` with ``u`` of shape (..., 2).
    """

    kappa: float
    f1: Optional[Callable] = None
    f2: Optional[Callable] = None
    g_D: Optional[Callable] = None
    g: Optional[Callable] = None
    exact: Optional[Callable] = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    @property
    def has_exact(self):
        return self.exact is not None

    @property
    def is_zero(self):
        return all(f is None for f in (self.f1, self.f2, self.g_D, self.g))


@dataclass
class SaddleSystem:
    """[[M_V, B], [B^H, 0]] [v; u] = [q; 0] on constrained test / rescaled trial DoFs."""

    M_V: sp.csr_matrix
    B: sp.csr_matrix
    q: np.ndarray
    kappa: float
    trial: object
    test: object

    @property
    def M_U(self):
        return self.trial.mass_matrix

    @property
    def n_test(self):
        return self.M_V.shape[0]

    @property
    def n_trial(self):
        return self.B.shape[1]

    @property
    def n(self):
        return self.n_test + self.n_trial

    def rhs(self):
        return np.concatenate([self.q, np.zeros(self.n_trial, dtype=complex)])

    def matvec(self, x):
        v, u = x[: self.n_test], x[self.n_test:]
        return np.concatenate([self.M_V @ v + self.B @ u, self.B.conj().T @ v])

    def full_matrix(self):
        return sp.bmat([[self.M_V, self.B], [self.B.conj().T, None]], format="csr")

    def split(self, x):
        return x[: self.n_test], x[self.n_test:]


# ---------------------------------------------------------------------------
# element kernels
# ---------------------------------------------------------------------------

def adjoint_values(test, kappa, ref_pts, cells):
    """B'_kappa of every unconstrained local test basis function at the mapped
    points: array (nc, nq, nloc, 3), real."""
    L, R = test.lagrange, test.rt
    g = geometry(test.mesh)
    phi = L.ref.values(ref_pts)
    gphi = np.einsum("tij,qlj->tqli", g.JinvT[cells], L.ref.grads(ref_pts))
    psi = R.basis_values(ref_pts, cells)
    dpsi = R.basis_divs(ref_pts, cells)
    nc = gphi.shape[0]
    nq = len(ref_pts)
    a = np.empty((nc, nq, L.ref.n, 3))
    a[..., 0] = -phi[None]
    a[..., 1:] = gphi / kappa
    b = np.empty((nc, nq, R.ref.n, 3))
    b[..., 0] = -dpsi / kappa
    b[..., 1:] = -psi
    return np.concatenate([a, b], axis=2)


def _chunks(n):
    for s in range(0, n, CHUNK):
        yield np.arange(s, min(n, s + CHUNK))


def assemble_unconstrained(trial, test, kappa):
    """Real matrices M_hat (n_unc x n_unc) and B_hat (n_unc x n_trial, unscaled
    trial basis)."""
    if trial.mesh is not test.mesh:
        raise MeshMismatch("trial and test spaces live on different meshes")
    mesh = test.mesh
    x, w = triangle_rule(2 * test.degree + 2)
    g = geometry(mesh)
    phiU = trial.lagrange.ref.values(x)
    nL = trial.lagrange.n_dofs
    cdt = test.cell_dofs_unc
    cdu = np.hstack([c * nL + trial.lagrange.cell_dofs for c in range(3)])
    mrows, mcols, mvals, brows, bcols, bvals = [], [], [], [], [], []
    for cells in _chunks(mesh.n_triangles):
        G = adjoint_values(test, kappa, x, cells)
        Ml = np.einsum("q,tqic,tqjc->tij", w, G, G) * g.det[cells, None, None]
        Bl = np.einsum("q,tqic,qj->ticj", w, G, phiU) * g.det[cells, None, None, None]
        Bl = Bl.reshape(len(cells), G.shape[2], -1)
        r, c = cdt[cells], cdu[cells]
        mrows.append(np.broadcast_to(r[:, :, None], Ml.shape).ravel())
        mcols.append(np.broadcast_to(r[:, None, :], Ml.shape).ravel())
        mvals.append(Ml.ravel())
        brows.append(np.broadcast_to(r[:, :, None], Bl.shape).ravel())
        bcols.append(np.broadcast_to(c[:, None, :], Bl.shape).ravel())
        bvals.append(Bl.ravel())
    n = test.n_unc
    M = sp.csr_matrix((np.concatenate(mvals), (np.concatenate(mrows), np.concatenate(mcols))),
                      shape=(n, n))
    B = sp.csr_matrix((np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))),
                      shape=(n, trial.n_dofs))
    M.sort_indices()
    B.sort_indices()
    return M, B


def assemble_test_gram(test, kappa):
    """Constrained Gram matrix <B' ., B' .>_U of a test space."""
    x, w = triangle_rule(2 * test.degree + 2)
    g = geometry(test.mesh)
    cdt = test.cell_dofs_unc
    rows, cols, vals = [], [], []
    for cells in _chunks(test.mesh.n_triangles):
        G = adjoint_values(test, kappa, x, cells)
        Ml = np.einsum("q,tqic,tqjc->tij", w, G, G) * g.det[cells, None, None]
        r = cdt[cells]
        rows.append(np.broadcast_to(r[:, :, None], Ml.shape).ravel())
        cols.append(np.broadcast_to(r[:, None, :], Ml.shape).ravel())
        vals.append(Ml.ravel())
    n = test.n_unc
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    Xi = test.Xi
    return hermitian_part(Xi.conj().T @ M @ Xi)


def _boundary_groups(mesh, tag_set):
    """Boundary edges with given tags grouped by their local index in the
    adjacent triangle: yields (local_index, triangles, edges)."""
    edges = np.flatnonzero(np.isin(mesh.boundary_edge_tags, list(tag_set)))
    if len(edges) == 0:
        return
    tri = mesh.edge_triangles[edges, 0]
    loc = np.argmax(mesh.tri_edges[tri] == edges[:, None], axis=1)
    for i in range(3):
        sel = loc == i
        if sel.any():
            yield i, tri[sel], edges[sel]


def _edge_ref_points(i, s):
    a = REF_VERTICES[(i + 1) % 3]
    b = REF_VERTICES[(i + 2) % 3]
    return a + s[:, None] * (b - a)


def _load_at_degree(test, data, degree):
    mesh = test.mesh
    L, R = test.lagrange, test.rt
    nL = L.n_dofs
    q = np.zeros(test.n_unc, dtype=complex)
    g = geometry(mesh)
    if data.f1 is not None or data.f2 is not None:
        x, w = triangle_rule(degree)
        phi = L.ref.values(x)
        for cells in _chunks(mesh.n_triangles):
            X = g.map(x, cells)
            wd = w[None, :] * g.det[cells, None]
            if data.f1 is not None:
                loc = np.einsum("tq,tq,ql->tl", wd, data.f1(X), phi)
                np.add.at(q, L.cell_dofs[cells], loc)
            if data.f2 is not None:
                psi = R.basis_values(x, cells)
                loc = np.einsum("tq,tqc,tqlc->tl", wd, data.f2(X), psi)
                np.add.at(q, nL + R.cell_dofs[cells], loc)
    s, ws = edge_rule(degree)
    V = mesh.vertices
    for tags, fn in ((("N", "R"), data.g), (("D",), data.g_D)):
        if fn is None:
            continue
        for i, cells, edges in _boundary_groups(mesh, tags):
            ref = _edge_ref_points(i, s)
            a = V[mesh.triangles[cells, (i + 1) % 3]]
            b = V[mesh.triangles[cells, (i + 2) % 3]]
            d = b - a
            length = np.linalg.norm(d, axis=1)
            n = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
            X = a[:, None, :] + s[None, :, None] * d[:, None, :]
            vals = fn(X, np.broadcast_to(n[:, None, :], X.shape))
            wl = ws[None, :] * length[:, None]
            if tags == ("N", "R"):
                loc = np.einsum("tq,tq,ql->tl", wl, vals, L.ref.values(ref))
                np.add.at(q, L.cell_dofs[cells], loc)
            else:
                psi = R.basis_values(ref, cells)
                pn = np.einsum("tqlc,tc->tql", psi, n)
                loc = -np.einsum("tq,tq,tql->tl", wl, vals, pn)
                np.add.at(q, nL + R.cell_dofs[cells], loc)
    return q


def assemble_load(test, data, rtol=1e-12):
    """Unconstrained load vector q_hat with point-count doubling until settled."""
    if data.is_zero:
        return np.zeros(test.n_unc, dtype=complex)
    return converge(lambda deg: _load_at_degree(test, data, deg), 2 * test.degree + 2, rtol)


def hermitian_part(A):
    A = sp.csr_matrix(A)
    H = (A + A.conj().T) * 0.5
    H = sp.csr_matrix(H)
    H.sort_indices()
    return H


def assemble_system(trial, test, data, rtol=1e-12):
    """Constrained saddle system; constraints applied by congruence with Xi."""
    Mh, Bh = assemble_unconstrained(trial, test, data.kappa)
    Xi = test.Xi
    XiH = Xi.conj().T.tocsr()
    M_V = hermitian_part(XiH @ Mh @ Xi)
    S = sp.diags(np.tile(trial.scale, 3))
    B = (XiH @ Bh @ S).tocsr()
    B.sort_indices()
    q = XiH @ assemble_load(test, data, rtol)
    return SaddleSystem(M_V, B, np.asarray(q), float(data.kappa), trial, test)


def apply_Mu(system, z):
    return system.M_U @ z


# ---------------------------------------------------------------------------
# local Gram matrices
# ---------------------------------------------------------------------------

@dataclass
class PatchGram:
    dofs: np.ndarray
    matrix: np.ndarray
    inverse: np.ndarray


def hpd_inverse(A):
    """Hermitian explicit inverse of a dense HPD matrix via Cholesky."""
    try:
        c = sla.cholesky(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularPatch("patch Gram matrix is not positive definite") from exc
    ci = sla.solve_triangular(c, np.eye(len(A)), lower=True)
    inv = ci.conj().T @ ci
    return 0.5 * (inv + inv.conj().T)


def local_patch_gram(M_V, test, patch):
    """Principal submatrix of M_V on the DoFs supported in ``patch`` and its
    Hermitian inverse."""
    idx = test.patch_dofs(patch.triangles)
    A = M_V[idx][:, idx].toarray()
    if len(idx) == 0:
        return PatchGram(idx, A, A)
    return PatchGram(idx, A, hpd_inverse(A))


def dump_coo(A, path):
    """Write ``A`` as lines ``row col re im``."""
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for r, c, v in zip(A.row, A.col, A.data):
            fh.write(f"{r} {c} {v.real!r} {v.imag!r}\n")
