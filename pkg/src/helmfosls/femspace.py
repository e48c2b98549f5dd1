"""Lagrange and Raviart-Thomas spaces, the rescaled trial basis and the
constrained test space with Dirichlet, Neumann and Robin elimination."""
from __future__ import annotations

import functools

import numpy as np
import scipy.sparse as sp

from .errors import DegreeMismatch, NonNestedSpaces
from .quadrature import edge_rule, triangle_rule

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_AREA = 0.5


# ---------------------------------------------------------------------------
# polynomials on the reference triangle
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def monomials(n):
    """Exponent pairs (a, b) with a + b <= n, graded order."""
    return tuple((d - b, b) for d in range(n + 1) for b in range(d + 1))


# monomials are taken in centred, scaled coordinates for conditioning
_SHIFT, _SCALE = 1.0 / 3.0, 1.5


def eval_monomials(pts, n):
    z = (np.asarray(pts, float) - _SHIFT) * _SCALE
    return np.stack([z[..., 0] ** a * z[..., 1] ** b for a, b in monomials(n)], axis=-1)


@functools.lru_cache(maxsize=None)
def _diff(n):
    """Matrices mapping monomial coefficients to those of d/dx and d/dy
    (with respect to the unscaled reference coordinates)."""
    mono = monomials(n)
    pos = {m: i for i, m in enumerate(mono)}
    dx = np.zeros((len(mono), len(mono)))
    dy = np.zeros((len(mono), len(mono)))
    for j, (a, b) in enumerate(mono):
        if a:
            dx[pos[(a - 1, b)], j] = a * _SCALE
        if b:
            dy[pos[(a, b - 1)], j] = b * _SCALE
    return dx, dy


def edge_points(i, n):
    """Equispaced points on local edge ``i`` (from local vertex i+1 to i+2),
    endpoints included, ``n`` subintervals."""
    a = REF_VERTICES[(i + 1) % 3]
    b = REF_VERTICES[(i + 2) % 3]
    s = np.linspace(0.0, 1.0, n + 1) if n > 0 else np.array([0.5])
    return a + s[:, None] * (b - a)


def edge_normal(i):
    """Edge vector of local edge ``i`` rotated clockwise: length times outward normal."""
    d = REF_VERTICES[(i + 2) % 3] - REF_VERTICES[(i + 1) % 3]
    return np.array([d[1], -d[0]])


class ReferenceLagrange:
    """Nodal P_p basis on the reference triangle.

    Local order: 3 vertices, p-1 nodes per local edge (running from local
    vertex i+1 to i+2), then interior lattice nodes.
    """

    def __init__(self, p):
        if p < 1:
            raise ValueError("Lagrange degree must be >= 1")
        self.degree = p
        nodes = list(REF_VERTICES)
        for i in range(3):
            nodes += list(edge_points(i, p)[1:-1])
        for b in range(1, p):
            for a in range(1, p - b):
                nodes.append(np.array([a / p, b / p]))
        self.nodes = np.array(nodes)
        self.n = len(nodes)
        V = eval_monomials(self.nodes, p)
        self.coeffs = np.linalg.inv(V)  # column j: monomial coefficients of basis j
        dx, dy = _diff(p)
        self.gcoeffs = np.stack([dx @ self.coeffs, dy @ self.coeffs], axis=-1)
        self.n_interior = (p - 1) * (p - 2) // 2

    def values(self, pts):
        return eval_monomials(pts, self.degree) @ self.coeffs

    def grads(self, pts):
        m = eval_monomials(pts, self.degree)
        return np.einsum("...m,mjc->...jc", m, self.gcoeffs)


class ReferenceRT:
    """Nodal RT_k basis (P_k^2 + x P~_k) on the reference triangle.

    Edge functionals: normal component v(x_j) . nu_i at k+1 equispaced points
    of local edge i, nu_i the rotated edge vector.  Interior functionals:
    moments against an L2-orthonormal basis of P_{k-1}, first x- then
    y-component.
    """

    def __init__(self, k):
        if k < 0:
            raise ValueError("RT degree must be >= 0")
        self.degree = k
        n = k + 1
        mono = monomials(n)
        pos = {m: i for i, m in enumerate(mono)}
        span = []
        for a, b in monomials(k):
            c = np.zeros((len(mono), 2))
            c[pos[(a, b)], 0] = 1.0
            span.append(c)
            c = np.zeros((len(mono), 2))
            c[pos[(a, b)], 1] = 1.0
            span.append(c)
        for j in range(k + 1):
            a, b = k - j, j
            c = np.zeros((len(mono), 2))
            c[pos[(a + 1, b)], 0] = 1.0
            c[pos[(a, b + 1)], 1] = 1.0
            span.append(c)
        span = np.stack(span, axis=-1)  # (nmono, 2, nspan)
        self.n = span.shape[-1]
        if k > 0:
            x, w = triangle_rule(2 * k)
            q = eval_monomials(x, k - 1)
            G = np.einsum("p,pi,pj->ij", w, q, q)
            self._orth = np.linalg.inv(np.linalg.cholesky(G)).T
        assert self.n == (k + 1) * (k + 3)
        D = self._dof_matrix(span)
        self.coeffs = np.einsum("mcs,sj->mcj", span, np.linalg.inv(D))
        dx, dy = _diff(n)
        self.dcoeffs = dx @ self.coeffs[:, 0, :] + dy @ self.coeffs[:, 1, :]
        self.n_edge = k + 1
        self.n_interior = k * (k + 1)

    def _dof_matrix(self, span):
        k = self.degree
        rows = []
        for i in range(3):
            pts = edge_points(i, k)
            vals = np.einsum("pm,mcs->pcs", eval_monomials(pts, k + 1), span)
            rows.append(np.einsum("pcs,c->ps", vals, edge_normal(i)))
        if k > 0:
            x, w = triangle_rule(2 * k + 1)
            vals = np.einsum("pm,mcs->pcs", eval_monomials(x, k + 1), span)
            rows.append(self.interior_functionals(x, w, vals.transpose(2, 0, 1)).T)
        return np.vstack(rows)

    def interior_functionals(self, pts, w, vals):
        """Apply the interior moments to reference-frame values (..., npts, 2)."""
        q = eval_monomials(pts, self.degree - 1) @ self._orth
        return np.concatenate(
            [np.einsum("p,pq,...p->...q", w, q, vals[..., c]) for c in range(2)], axis=-1)

    def values(self, pts):
        return np.einsum("...m,mcj->...jc", eval_monomials(pts, self.degree + 1), self.coeffs)

    def divs(self, pts):
        return eval_monomials(pts, self.degree + 1) @ self.dcoeffs


@functools.lru_cache(maxsize=None)
def reference_lagrange(p):
    return ReferenceLagrange(p)


@functools.lru_cache(maxsize=None)
def reference_rt(k):
    return ReferenceRT(k)


# ---------------------------------------------------------------------------
# element geometry
# ---------------------------------------------------------------------------

class Geometry:
    """Affine maps x = P0 + J xhat for every triangle of a mesh."""

    def __init__(self, mesh):
        p = mesh.vertices[mesh.triangles]
        self.p0 = p[:, 0]
        self.J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        self.det = self.J[:, 0, 0] * self.J[:, 1, 1] - self.J[:, 0, 1] * self.J[:, 1, 0]
        self.JinvT = np.linalg.inv(self.J).transpose(0, 2, 1)

    def map(self, ref_pts, cells=slice(None)):
        return self.p0[cells, None, :] + np.einsum("tij,...j->t...i", self.J[cells], ref_pts)

    def pullback(self, x, cells):
        """Reference coordinates of physical points ``x`` (ncells, npts, 2)."""
        Jinv = np.linalg.inv(self.J[cells])
        return np.einsum("tij,tpj->tpi", Jinv, x - self.p0[cells, None, :])


@functools.lru_cache(maxsize=64)
def geometry(mesh):
    return Geometry(mesh)


# ---------------------------------------------------------------------------
# global spaces
# ---------------------------------------------------------------------------

class LagrangeSpace:
    """Continuous P_p on a triangulation.

    Global numbering: vertices, then p-1 nodes per edge ordered from the
    lower to the higher vertex id, then interior nodes per triangle.
    """

    def __init__(self, mesh, p):
        self.mesh = mesh
        self.degree = p
        self.ref = reference_lagrange(p)
        nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
        ni = self.ref.n_interior
        self.n_dofs = nv + (p - 1) * ne + ni * nt
        tri = mesh.triangles
        cols = [tri]
        for i in range(3):
            e = mesh.tri_edges[:, i]
            forward = tri[:, (i + 1) % 3] < tri[:, (i + 2) % 3]
            j = np.arange(p - 1)
            idx = np.where(forward[:, None], j[None, :], (p - 2 - j)[None, :])
            cols.append(nv + e[:, None] * (p - 1) + idx)
        cols.append(nv + (p - 1) * ne + np.arange(nt)[:, None] * ni + np.arange(ni)[None, :])
        self.cell_dofs = np.hstack(cols).astype(np.int64)

    @functools.cached_property
    def dof_coords(self):
        x = geometry(self.mesh).map(self.ref.nodes)
        out = np.empty((self.n_dofs, 2))
        out[self.cell_dofs.ravel()] = x.reshape(-1, 2)
        return out

    def edge_dofs(self, e):
        """Lagrange DoFs on edge ``e`` ordered from lower to higher vertex."""
        a, b = self.mesh.edges[e]
        p = self.degree
        nv = self.mesh.n_vertices
        return np.concatenate([[a], nv + e * (p - 1) + np.arange(p - 1), [b]])

    def closed_edge_dofs(self, edges):
        if len(edges) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([self.edge_dofs(e) for e in edges]))

    def mass_matrix(self):
        g = geometry(self.mesh)
        x, w = triangle_rule(2 * self.degree)
        phi = self.ref.values(x)
        loc = np.einsum("q,qi,qj->ij", w, phi, phi)
        data = g.det[:, None, None] * loc[None]
        return _scatter(self.cell_dofs, self.cell_dofs, data, (self.n_dofs, self.n_dofs))

    def evaluate(self, coeffs, ref_pts, cells=slice(None)):
        return np.asarray(coeffs)[self.cell_dofs[cells]] @ self.ref.values(ref_pts).T

    def evaluate_grad(self, coeffs, ref_pts, cells=slice(None)):
        g = geometry(self.mesh)
        gr = np.einsum("tij,qlj->tqli", g.JinvT[cells], self.ref.grads(ref_pts))
        return np.einsum("tl,tqli->tqi", np.asarray(coeffs)[self.cell_dofs[cells]], gr)


class RaviartThomasSpace:
    """RT_k with point normal-trace edge DoFs (global orientation from the
    lower to the higher vertex id) and element-interior moments."""

    def __init__(self, mesh, k):
        self.mesh = mesh
        self.degree = k
        self.ref = reference_rt(k)
        ne, nt = mesh.n_edges, mesh.n_triangles
        nE, nI = self.ref.n_edge, self.ref.n_interior
        self.n_dofs = ne * nE + nt * nI
        tri = mesh.triangles
        cols, signs = [], []
        for i in range(3):
            e = mesh.tri_edges[:, i]
            forward = tri[:, (i + 1) % 3] < tri[:, (i + 2) % 3]
            j = np.arange(nE)
            idx = np.where(forward[:, None], j[None, :], (nE - 1 - j)[None, :])
            cols.append(e[:, None] * nE + idx)
            signs.append(np.repeat(np.where(forward, 1.0, -1.0)[:, None], nE, axis=1))
        cols.append(ne * nE + np.arange(nt)[:, None] * nI + np.arange(nI)[None, :])
        signs.append(np.ones((nt, nI)))
        self.cell_dofs = np.hstack(cols).astype(np.int64)
        self.cell_signs = np.hstack(signs)

    def edge_dofs(self, e):
        return e * self.ref.n_edge + np.arange(self.ref.n_edge)

    def edge_points(self, e):
        a, b = self.mesh.vertices[self.mesh.edges[e]]
        s = np.linspace(0.0, 1.0, self.ref.n_edge) if self.degree > 0 else np.array([0.5])
        return a + s[:, None] * (b - a)

    def edge_normal(self, e):
        a, b = self.mesh.vertices[self.mesh.edges[e]]
        d = b - a
        return np.array([d[1], -d[0]])

    def basis_values(self, ref_pts, cells=slice(None)):
        g = geometry(self.mesh)
        v = np.einsum("tij,qlj->tqli", g.J[cells], self.ref.values(ref_pts))
        return v * (self.cell_signs[cells] / g.det[cells, None])[:, None, :, None]

    def basis_divs(self, ref_pts, cells=slice(None)):
        g = geometry(self.mesh)
        return self.ref.divs(ref_pts)[None] * (self.cell_signs[cells] / g.det[cells, None])[:, None, :]

    def evaluate(self, coeffs, ref_pts, cells=slice(None)):
        return np.einsum("tl,tqli->tqi", np.asarray(coeffs)[self.cell_dofs[cells]],
                         self.basis_values(ref_pts, cells))

    def evaluate_div(self, coeffs, ref_pts, cells=slice(None)):
        return np.einsum("tl,tql->tq", np.asarray(coeffs)[self.cell_dofs[cells]],
                         self.basis_divs(ref_pts, cells))


# ---------------------------------------------------------------------------
# trial and test spaces
# ---------------------------------------------------------------------------

class RescaledTrialBasis:
    """Three copies of continuous P_p, each basis function scaled by
    s_i = h_i^{-1} with h_i^2 = sum over the support of |K| / |Khat|."""

    n_components = 3

    def __init__(self, mesh, p):
        self.mesh = mesh
        self.degree = p
        self.lagrange = LagrangeSpace(mesh, p)
        n = self.lagrange.n_dofs
        hd = np.zeros(n)
        np.add.at(hd, self.lagrange.cell_dofs, (mesh.areas / REF_AREA)[:, None])
        self.scale = hd ** -0.5
        self.n_scalar = n
        self.n_dofs = 3 * n

    @functools.cached_property
    def mass_matrix(self):
        S = sp.diags(self.scale)
        m = (S @ self.lagrange.mass_matrix() @ S).tocsr()
        return sp.block_diag([m, m, m], format="csr")

    def evaluate(self, coeffs, ref_pts, cells=slice(None)):
        """Values (ntri, nq, 3) of the represented (phi, u1, u2)."""
        c = np.asarray(coeffs).reshape(3, -1) * self.scale
        return np.stack([self.lagrange.evaluate(ci, ref_pts, cells) for ci in c], axis=-1)

    def split(self, coeffs):
        return np.asarray(coeffs).reshape(3, -1)


class ConstrainedTestSpace:
    """(S_p^0 x RT_p) with eta = 0 on Gamma_D, v.n = 0 on Gamma_N and
    v.n + i eta = 0 on Gamma_R built in.

    ``Xi`` maps constrained coefficients to unconstrained ones (eta block
    first, then the RT block); constrained coefficients are recovered from
    unconstrained ones by ``x[free]``.
    """

    def __init__(self, mesh, p):
        self.mesh = mesh
        self.degree = p
        self.lagrange = LagrangeSpace(mesh, p)
        self.rt = RaviartThomasSpace(mesh, p)
        nL, nR = self.lagrange.n_dofs, self.rt.n_dofs
        self.n_eta = nL
        self.n_unc = nL + nR
        D = mesh.tagged_edges("D")
        N = mesh.tagged_edges("N")
        R = mesh.tagged_edges("R")
        removed = np.zeros(self.n_unc, dtype=bool)
        removed[self.lagrange.closed_edge_dofs(D)] = True
        robin_rows, robin_src, robin_val = [], [], []
        et = mesh.edge_triangles
        for e in N:
            removed[nL + self.rt.edge_dofs(e)] = True
        for e in R:
            rows = nL + self.rt.edge_dofs(e)
            removed[rows] = True
            src = self.lagrange.edge_dofs(e)
            if len(src) != len(rows):
                raise DegreeMismatch("Lagrange and RT traces differ in degree")
            a, b = mesh.edges[e]
            t = et[e, 0]
            centroid = mesh.vertices[mesh.triangles[t]].mean(axis=0)
            nu = self.rt.edge_normal(e)
            sigma = 1.0 if np.dot(nu, mesh.vertices[a] - centroid) > 0 else -1.0
            length = np.linalg.norm(nu)
            robin_rows.append(rows)
            robin_src.append(src)
            robin_val.append(np.full(len(rows), -1j * sigma * length))
        self.free = np.flatnonzero(~removed)
        self.n_dofs = len(self.free)
        col_of = -np.ones(self.n_unc, dtype=np.int64)
        col_of[self.free] = np.arange(self.n_dofs)
        rows = [self.free]
        cols = [np.arange(self.n_dofs)]
        vals = [np.ones(self.n_dofs, dtype=complex)]
        if robin_rows:
            rr = np.concatenate(robin_rows)
            cc = col_of[np.concatenate(robin_src)]
            vv = np.concatenate(robin_val)
            keep = cc >= 0  # Robin points on a closed Dirichlet edge stay zero
            rows.append(rr[keep])
            cols.append(cc[keep])
            vals.append(vv[keep])
        self.Xi = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_unc, self.n_dofs))
        self.n_boundary_removed = int(removed.sum())

    def expand(self, x):
        return self.Xi @ x

    def extract(self, x_unc):
        return np.asarray(x_unc)[self.free]

    def split(self, x):
        xu = self.expand(x)
        return xu[: self.n_eta], xu[self.n_eta:]

    def evaluate(self, x, ref_pts, cells=slice(None)):
        """eta (nt, nq) and v (nt, nq, 2) of a constrained coefficient vector."""
        eta, v = self.split(x)
        return self.lagrange.evaluate(eta, ref_pts, cells), self.rt.evaluate(v, ref_pts, cells)

    @functools.cached_property
    def cell_dofs_unc(self):
        return np.hstack([self.lagrange.cell_dofs, self.n_eta + self.rt.cell_dofs])

    @functools.cached_property
    def cell_signs_unc(self):
        return np.hstack([np.ones(self.lagrange.cell_dofs.shape), self.rt.cell_signs])

    @functools.cached_property
    def elem_to_dof(self):
        """Boolean (ntri x ndofs) incidence of triangles and constrained supports."""
        nt = self.mesh.n_triangles
        cd = self.cell_dofs_unc
        E = sp.csr_matrix((np.ones(cd.size), (np.repeat(np.arange(nt), cd.shape[1]), cd.ravel())),
                          shape=(nt, self.n_unc))
        P = abs(self.Xi)
        P.data[:] = 1.0
        out = (E @ P).tocsr()
        out.data[:] = 1.0
        return out

    @functools.cached_property
    def support_size(self):
        return np.asarray(self.elem_to_dof.sum(axis=0)).ravel().astype(np.int64)

    def patch_dofs(self, triangles):
        """Constrained DoFs whose support lies inside the given triangle set."""
        cnt = np.asarray(self.elem_to_dof[np.asarray(triangles)].sum(axis=0)).ravel()
        return np.flatnonzero((cnt == self.support_size) & (cnt > 0))

    @functools.cached_property
    def interior_mask(self):
        """DoFs supported on a single triangle (the static-condensation block)."""
        return self.support_size == 1


def evaluate_B_adjoint(space, x, kappa, ref_pts, cells=slice(None)):
    """B'_kappa(eta, v) = (-eta - div v / kappa, grad eta / kappa - v) at the
    mapped reference points; returns a scalar (nt, nq) and a vector (nt, nq, 2)."""
    eta_c, v_c = space.split(x)
    eta = space.lagrange.evaluate(eta_c, ref_pts, cells)
    geta = space.lagrange.evaluate_grad(eta_c, ref_pts, cells)
    v = space.rt.evaluate(v_c, ref_pts, cells)
    dv = space.rt.evaluate_div(v_c, ref_pts, cells)
    return -eta - dv / kappa, geta / kappa - v


def build_trial_space(mesh, p):
    return RescaledTrialBasis(mesh, p)


def build_test_space(mesh, p):
    return ConstrainedTestSpace(mesh, p)


# ---------------------------------------------------------------------------
# inclusion maps between nested levels
# ---------------------------------------------------------------------------

def _ancestor(fine, coarse):
    """Index in ``coarse`` of the triangle containing each fine triangle."""
    if fine.parent is None:
        raise NonNestedSpaces("fine mesh has no parent map")
    return fine.parent


def _clean(v):
    v = np.where(np.abs(v) < 1e-13, 0.0, v)
    return v


def lagrange_prolongation(coarse, fine):
    """Sparse (n_fine x n_coarse) interpolation of coarse Lagrange functions."""
    par = _ancestor(fine.mesh, coarse.mesh)
    gf, gc = geometry(fine.mesh), geometry(coarse.mesh)
    x = gf.map(fine.ref.nodes)
    xr = gc.pullback(x, par)
    vals = _clean(coarse.ref.values(xr))  # (nt, nloc_f, nloc_c)
    rows = np.broadcast_to(fine.cell_dofs[:, :, None], vals.shape)
    cols = np.broadcast_to(coarse.cell_dofs[par][:, None, :], vals.shape)
    return _dedup_rows(rows, cols, vals, (fine.n_dofs, coarse.n_dofs))


def rt_prolongation(coarse, fine):
    """Sparse interpolation of coarse RT functions by the fine DoF functionals."""
    k = fine.degree
    par = _ancestor(fine.mesh, coarse.mesh)
    gf, gc = geometry(fine.mesh), geometry(coarse.mesh)
    nt = fine.mesh.n_triangles
    blocks = []
    # edge functionals in the element-local orientation, signed to global
    for i in range(3):
        pts = edge_points(i, k)
        xr = gc.pullback(gf.map(pts), par)
        cv = _coarse_rt_values(coarse, xr, par)  # (nt, npts, nloc_c, 2)
        nu = np.einsum("tij,j->ti", _rot(gf.J), edge_normal(i))  # physical rotated edge
        val = np.einsum("tpci,ti->tpc", cv, nu)
        loc = i * fine.ref.n_edge + np.arange(fine.ref.n_edge)
        val = val * fine.cell_signs[:, loc][:, :, None]
        blocks.append((fine.cell_dofs[:, loc], val))
    if k > 0:
        x, w = triangle_rule(2 * k + 2)
        xr = gc.pullback(gf.map(x), par)
        cv = _coarse_rt_values(coarse, xr, par)  # physical values
        # inverse Piola: vhat = det J^{-1} v
        Jinv = np.linalg.inv(gf.J)
        vh = np.einsum("t,tij,tqcj->tcqi", gf.det, Jinv, cv)
        mom = fine.ref.interior_functionals(x, w, vh)  # (nt, nloc_c, nI)
        loc = 3 * fine.ref.n_edge + np.arange(fine.ref.n_interior)
        blocks.append((fine.cell_dofs[:, loc], mom.transpose(0, 2, 1)))
    rows = np.concatenate([np.broadcast_to(r[:, :, None], v.shape) for r, v in blocks], axis=1)
    vals = _clean(np.concatenate([v for _r, v in blocks], axis=1))
    cols = np.broadcast_to(coarse.cell_dofs[par][:, None, :], vals.shape)
    assert rows.shape[0] == nt
    return _dedup_rows(rows, cols, vals, (fine.n_dofs, coarse.n_dofs))


def _rot(J):
    # maps reference edge vectors rotated clockwise to physical ones: R J R^T
    R = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return np.einsum("ij,tjk,lk->til", R, J, R)


def _coarse_rt_values(coarse, xr, par):
    gc = geometry(coarse.mesh)
    v = np.einsum("tij,tqlj->tqli", gc.J[par], coarse.ref.values(xr))
    return v * (coarse.cell_signs[par] / gc.det[par, None])[:, None, :, None]


def _dedup_rows(rows, cols, vals, shape):
    r = np.ascontiguousarray(rows).reshape(rows.shape[0] * rows.shape[1], -1)
    c = np.ascontiguousarray(cols).reshape(r.shape)
    v = np.ascontiguousarray(vals).reshape(r.shape)
    _, first = np.unique(r[:, 0], return_index=True)
    r, c, v = r[first], c[first], v[first]
    keep = v != 0
    return sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=shape)


def inclusion_map(coarse, fine, check=True, rng=None):
    """Inclusion of a coarse constrained test space into a fine one."""
    P = sp.block_diag([lagrange_prolongation(coarse.lagrange, fine.lagrange),
                       rt_prolongation(coarse.rt, fine.rt)], format="csr")
    full = (P @ coarse.Xi).tocsr()
    incl = full[fine.free].tocsr()
    if check:
        rng = np.random.default_rng(0) if rng is None else rng
        x = rng.standard_normal(coarse.n_dofs) + 1j * rng.standard_normal(coarse.n_dofs)
        a = full @ x
        b = fine.Xi @ (incl @ x)
        if np.linalg.norm(a - b) > 1e-12 * max(np.linalg.norm(a), 1.0):
            raise NonNestedSpaces("coarse test functions are not reproduced on the fine level")
    return incl


def trial_prolongation(coarse, fine):
    P = lagrange_prolongation(coarse.lagrange, fine.lagrange)
    P = sp.diags(1.0 / fine.scale) @ P @ sp.diags(coarse.scale)
    return sp.block_diag([P, P, P], format="csr")


def _scatter(rdofs, cdofs, data, shape):
    nt, nr = rdofs.shape
    nc = cdofs.shape[1]
    rows = np.broadcast_to(rdofs[:, :, None], (nt, nr, nc)).ravel()
    cols = np.broadcast_to(cdofs[:, None, :], (nt, nr, nc)).ravel()
    return sp.csr_matrix((np.asarray(data).ravel(), (rows, cols)), shape=shape)
