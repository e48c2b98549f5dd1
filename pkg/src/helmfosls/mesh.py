"""Conforming triangulations, newest-vertex bisection and nested level hierarchies.

Triangles are stored counter-clockwise with the newest vertex in position 0,
so the refinement edge of a triangle is always its local edge 0 (the edge
opposite local vertex 0).  Local edge ``i`` joins local vertices ``i+1`` and
``i+2`` (mod 3).
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ClosureDiverged,
    InvalidGeometry,
    LevelNotInHierarchy,
    NonMatchingMesh,
)

TAGS = ("D", "N", "R")
PROBLEMS = ("unit_square", "non_trapping", "trapping")


def edge_key(a, b):
    a, b = int(a), int(b)
    return (a, b) if a < b else (b, a)


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


class Triangulation:
    """An immutable conforming triangulation with boundary tags.

    Parameters
    ----------
    vertices : (nv, 2) array_like
    triangles : (nt, 3) array_like
        Vertex indices, counter-clockwise, newest vertex first.
    boundary : dict
        Maps a sorted vertex pair ``(a, b)`` to a tag in ``{"D", "N", "R"}``.
    generation : (nt,) array_like, optional
        Number of bisections that produced each triangle from the initial mesh.
    parent : (nt,) array_like, optional
        Index of the containing triangle in the mesh this one was refined from.
    """

    def __init__(self, vertices, triangles, boundary, generation=None, parent=None,
                 check=True):
        self.vertices = _readonly(np.asarray(vertices, dtype=float).reshape(-1, 2))
        self.triangles = _readonly(np.asarray(triangles, dtype=np.int64).reshape(-1, 3))
        self.boundary = {edge_key(*k): str(v) for k, v in sorted(boundary.items())}
        nt = len(self.triangles)
        if generation is None:
            generation = np.zeros(nt, dtype=np.int64)
        self.generation = _readonly(np.asarray(generation, dtype=np.int64))
        self.parent = None if parent is None else _readonly(np.asarray(parent, dtype=np.int64))
        if check:
            self._validate()

    # ------------------------------------------------------------------ sizes
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    # --------------------------------------------------------------- topology
    @functools.cached_property
    def _edge_data(self):
        t = self.triangles
        loc = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)  # (nt, 3, 2)
        pairs = np.sort(loc.reshape(-1, 2), axis=1)
        edges, inv = np.unique(pairs, axis=0, return_inverse=True)
        return edges, inv.reshape(-1, 3)

    @property
    def edges(self):
        """(ne, 2) sorted vertex pairs in lexicographic order."""
        return self._edge_data[0]

    @property
    def tri_edges(self):
        """(nt, 3) edge index of local edge i (opposite local vertex i)."""
        return self._edge_data[1]

    @functools.cached_property
    def edge_triangles(self):
        """(ne, 2) adjacent triangles, second entry -1 on the boundary."""
        ne = self.n_edges
        out = np.full((ne, 2), -1, dtype=np.int64)
        cnt = np.zeros(ne, dtype=np.int64)
        for t, row in enumerate(self.tri_edges):
            for e in row:
                if cnt[e] >= 2:
                    raise InvalidGeometry(f"edge {tuple(self.edges[e])} shared by more than two triangles")
                out[e, cnt[e]] = t
                cnt[e] += 1
        return out

    @functools.cached_property
    def edge_index(self):
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}

    @functools.cached_property
    def boundary_edge_tags(self):
        """Per-edge tag, empty string for interior edges."""
        tags = np.full(self.n_edges, "", dtype="<U1")
        for k, v in self.boundary.items():
            tags[self.edge_index[k]] = v
        return tags

    @functools.cached_property
    def areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @functools.cached_property
    def vertex_triangles(self):
        """List of triangle index arrays, one per vertex, ascending."""
        nv = self.n_vertices
        flat = self.triangles.ravel()
        tri = np.repeat(np.arange(self.n_triangles), 3)
        order = np.lexsort((tri, flat))
        counts = np.bincount(flat, minlength=nv)
        return np.split(tri[order], np.cumsum(counts)[:-1])

    @functools.cached_property
    def diameters(self):
        p = self.vertices[self.triangles]
        lens = np.linalg.norm(p[:, [1, 2, 0]] - p[:, [2, 0, 1]], axis=2)
        return lens.max(axis=1)

    def h_max(self):
        return float(self.diameters.max())

    # ------------------------------------------------------------- validation
    def _validate(self):
        nv = self.n_vertices
        t = self.triangles
        if len(t) == 0:
            raise InvalidGeometry("mesh has no triangles")
        if t.min() < 0 or t.max() >= nv:
            raise InvalidGeometry("triangle references a missing vertex")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise InvalidGeometry("triangle with repeated vertex")
        scale = max(np.ptp(self.vertices, axis=0).max(), 1.0) ** 2
        if np.any(self.areas <= 1e-14 * scale):
            raise InvalidGeometry("triangle with non-positive signed area")
        keys = np.sort(t, axis=1)
        if len(np.unique(keys, axis=0)) != len(keys):
            raise InvalidGeometry("duplicated triangle")
        counts = np.bincount(self.tri_edges.ravel(), minlength=self.n_edges)
        if counts.max() > 2:
            raise InvalidGeometry("edge shared by more than two triangles")
        bnd = {(int(a), int(b)) for a, b in self.edges[counts == 1]}
        tagged = set(self.boundary)
        if bnd != tagged:
            missing = sorted(bnd - tagged)[:3]
            extra = sorted(tagged - bnd)[:3]
            raise InvalidGeometry(
                f"boundary tags inconsistent (untagged boundary edges {missing}, "
                f"tagged non-boundary edges {extra})")
        bad = [v for v in self.boundary.values() if v not in TAGS]
        if bad:
            raise InvalidGeometry(f"unknown boundary tag {bad[0]!r}")

    def is_matching(self):
        return check_matching(self)

    # -------------------------------------------------------------- geometry
    def tagged_edges(self, tag):
        """Edge indices carrying ``tag``."""
        return np.flatnonzero(self.boundary_edge_tags == tag)

    def __repr__(self):
        return (f"Triangulation(nv={self.n_vertices}, nt={self.n_triangles}, "
                f"ne={self.n_edges})")


@dataclass(frozen=True)
class VertexPatch:
    vertex: int
    triangles: np.ndarray


# ---------------------------------------------------------------------------
# matching condition
# ---------------------------------------------------------------------------

def check_matching(mesh):
    """True when every interior refinement edge is the refinement edge of both
    adjacent triangles."""
    ref = mesh.tri_edges[:, 0]
    et = mesh.edge_triangles
    for t, e in enumerate(ref):
        a, b = et[e]
        other = b if a == t else a
        if other >= 0 and mesh.tri_edges[other, 0] != e:
            return False
    return True


def _rotate(tri, k):
    return [tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]]


def assign_newest_vertices(vertices, triangles, boundary):
    """Choose newest vertices so that the mesh satisfies the matching condition.

    Each triangle picks one refinement edge; an interior edge picked by one
    triangle must be picked by its neighbour as well.  This is a perfect
    matching problem on the dual graph in which boundary edges act as
    private partners, solved deterministically with a maximum-weight matching.
    """
    import networkx as nx

    vertices = np.asarray(vertices, float)
    tris = np.asarray(triangles, dtype=np.int64).copy()
    # orient counter-clockwise
    p = vertices[tris]
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
           (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    tris[area < 0] = tris[area < 0][:, [0, 2, 1]]
    probe = Triangulation(vertices, tris, boundary, check=True)
    g = nx.Graph()
    for t in range(probe.n_triangles):
        g.add_node(("t", t))
    for e, (a, b) in enumerate(probe.edge_triangles):
        if b >= 0:
            g.add_edge(("t", int(a)), ("t", int(b)), weight=2, edge=e)
        else:
            g.add_edge(("t", int(a)), ("b", e), weight=1, edge=e)
    match = nx.max_weight_matching(g, maxcardinality=False)
    chosen = {}
    for u, v in match:
        e = g.edges[u, v]["edge"]
        for node in (u, v):
            if node[0] == "t":
                chosen[node[1]] = e
    if len(chosen) != probe.n_triangles:
        raise NonMatchingMesh("no newest-vertex assignment satisfies the matching condition")
    out = []
    for t in range(probe.n_triangles):
        k = int(np.flatnonzero(probe.tri_edges[t] == chosen[t])[0])
        out.append(_rotate(list(tris[t]), k))
    mesh = Triangulation(vertices, out, boundary)
    assert check_matching(mesh)
    return mesh


# ---------------------------------------------------------------------------
# newest-vertex bisection
# ---------------------------------------------------------------------------

def _closure(mesh, marked):
    """Mark refinement edges until every triangle with a marked edge has its
    refinement edge marked."""
    te = mesh.tri_edges
    flag = np.zeros(mesh.n_edges, dtype=bool)
    flag[te[np.asarray(sorted(marked), dtype=np.int64), 0]] = True
    for _ in range(mesh.n_triangles + 1):
        need = flag[te].any(axis=1) & ~flag[te[:, 0]]
        if not need.any():
            return flag
        flag[te[need, 0]] = True
    raise ClosureDiverged("edge-marking closure did not terminate")


def refine_adaptive(mesh, marked):
    """Bisect every marked triangle and close the result conformingly."""
    marked = set(int(t) for t in marked)
    if not marked:
        return Triangulation(mesh.vertices, mesh.triangles, mesh.boundary, mesh.generation,
                             np.arange(mesh.n_triangles), check=False)
    if min(marked) < 0 or max(marked) >= mesh.n_triangles:
        raise IndexError("marked triangle outside mesh")
    flag = _closure(mesh, marked)
    split = np.flatnonzero(flag)
    mid = np.full(mesh.n_edges, -1, dtype=np.int64)
    mid[split] = mesh.n_vertices + np.arange(len(split))
    ev = mesh.edges[split]
    verts = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[ev[:, 0]] + mesh.vertices[ev[:, 1]])])
    eidx = mesh.edge_index

    def lookup(a, b):
        e = eidx.get(edge_key(a, b))
        return -1 if e is None else mid[e]

    tris, gens, parents = [], [], []

    def bisect(tri, gen, par, depth):
        a, b, c = tri
        m = lookup(b, c)
        if m < 0:
            tris.append(tri)
            gens.append(gen)
            parents.append(par)
            return
        if depth > 3:
            raise ClosureDiverged("triangle bisected more than three times in one sweep")
        bisect((m, a, b), gen + 1, par, depth + 1)
        bisect((m, c, a), gen + 1, par, depth + 1)

    for t, tri in enumerate(mesh.triangles):
        bisect(tuple(int(v) for v in tri), int(mesh.generation[t]), t, 0)

    boundary = {}
    for (a, b), tag in mesh.boundary.items():
        m = mid[eidx[(a, b)]]
        if m < 0:
            boundary[(a, b)] = tag
        else:
            boundary[edge_key(a, m)] = tag
            boundary[edge_key(m, b)] = tag
    return Triangulation(verts, tris, boundary, gens, parents, check=False)


def refine_uniform(mesh):
    """Bisect all triangles (with closure, which is void on matching meshes
    after the first sweep)."""
    return refine_adaptive(mesh, range(mesh.n_triangles))


def locate_in_parent(fine, coarse, points, fine_tri):
    """Barycentric coordinates of ``points`` (lying in ``fine_tri``) w.r.t. the
    parent triangle in ``coarse``."""
    par = fine.parent[fine_tri]
    return barycentric(coarse, par, points), par


def barycentric(mesh, tri, points):
    p = mesh.vertices[mesh.triangles[tri]]
    p0 = p[..., 0, :]
    J = np.stack([p[..., 1, :] - p0, p[..., 2, :] - p0], axis=-1)
    ref = np.linalg.solve(J, (points - p0)[..., None])[..., 0]
    return np.concatenate([1.0 - ref.sum(-1, keepdims=True), ref], axis=-1)


# ---------------------------------------------------------------------------
# hierarchies and patches
# ---------------------------------------------------------------------------

class MeshHierarchy:
    """Nested sequence of triangulations, coarsest first."""

    def __init__(self, levels):
        self.levels = tuple(levels)
        for k in range(1, len(self.levels)):
            if self.levels[k].parent is None or len(self.levels[k].parent) != self.levels[k].n_triangles:
                raise ValueError("level without parent map")

    @classmethod
    def from_initial(cls, mesh):
        return cls([mesh])

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]

    @property
    def finest(self):
        return self.levels[-1]

    def refined(self, marked=None):
        fine = self.finest
        new = refine_uniform(fine) if marked is None else refine_adaptive(fine, marked)
        return MeshHierarchy(self.levels + (new,))

    def uniform(self, n):
        h = self
        for _ in range(n):
            h = h.refined()
        return h

    def sub(self, start, stop=None):
        """Hierarchy made of levels ``start..stop-1``; the first retained level
        becomes the coarsest."""
        return MeshHierarchy(self.levels[start:stop])

    def level_of(self, mesh):
        for k, m in enumerate(self.levels):
            if m is mesh:
                return k
        raise LevelNotInHierarchy("mesh is not a level of this hierarchy")

    @functools.lru_cache(maxsize=None)
    def new_triangles(self, level):
        """Boolean mask of triangles of ``level`` created by its refinement step."""
        fine = self.levels[level]
        if level == 0:
            return np.ones(fine.n_triangles, dtype=bool)
        coarse = self.levels[level - 1]
        return fine.generation != coarse.generation[fine.parent]

    @functools.lru_cache(maxsize=None)
    def new_patch_vertices(self, level):
        """Vertices incident to a triangle created at ``level``, ascending."""
        fine = self.levels[level]
        return np.unique(fine.triangles[self.new_triangles(level)])


def vertex_patches(level, restrict_to_new=False, hierarchy=None):
    """Vertex patches of ``level`` in ascending vertex order."""
    if restrict_to_new:
        if hierarchy is None:
            raise LevelNotInHierarchy("restrict_to_new requires a hierarchy")
        verts = hierarchy.new_patch_vertices(hierarchy.level_of(level))
    else:
        if hierarchy is not None:
            hierarchy.level_of(level)
        verts = np.arange(level.n_vertices)
    vt = level.vertex_triangles
    return [VertexPatch(int(v), vt[v]) for v in verts if len(vt[v])]


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def write_mesh(mesh, path):
    lines = ["dim 2", f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{a} {b} {c} 0" for a, b, c in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary)}")
    lines += [f"{a} {b} {t}" for (a, b), t in mesh.boundary.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path):
    """Parse the line-oriented mesh format; see ``write_mesh``."""
    toks = [ln.split() for ln in Path(path).read_text().splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        it = iter(toks)
        head = next(it)
        if head != ["dim", "2"]:
            raise InvalidGeometry("mesh file must start with 'dim 2'")
        kw, n = next(it)
        assert kw == "vertices"
        verts = [[float(x) for x in next(it)[:2]] for _ in range(int(n))]
        kw, n = next(it)
        assert kw == "triangles"
        tris = []
        for _ in range(int(n)):
            a, b, c, k = (int(x) for x in next(it)[:4])
            if k not in (0, 1, 2):
                raise InvalidGeometry(f"newest index {k} out of range")
            tris.append(_rotate([a, b, c], k))
        kw, n = next(it)
        assert kw == "boundary"
        bnd = {}
        for _ in range(int(n)):
            a, b, tag = next(it)[:3]
            key = edge_key(int(a), int(b))
            if key in bnd:
                raise InvalidGeometry(f"edge {key} tagged twice")
            bnd[key] = tag
    except (StopIteration, ValueError, AssertionError) as exc:
        raise InvalidGeometry(f"malformed mesh file: {exc}") from exc
    verts = np.asarray(verts)
    tris = np.asarray(tris, dtype=np.int64)
    p = verts[tris]
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
           (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    # clockwise input keeps its newest vertex in front
    tris[area < 0] = tris[area < 0][:, [0, 2, 1]]
    mesh = Triangulation(verts, tris, bnd)
    if not check_matching(mesh):
        raise NonMatchingMesh(f"{path}: newest-vertex assignment violates the matching condition")
    return mesh


# ---------------------------------------------------------------------------
# the three domains
# ---------------------------------------------------------------------------

def _tag_loop(boundary, loop_ids, tag):
    for i in range(len(loop_ids)):
        boundary[edge_key(loop_ids[i], loop_ids[(i + 1) % len(loop_ids)])] = tag


def _unit_square():
    v = [(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)]
    t = [(4, 0, 1), (4, 1, 2), (4, 2, 3), (4, 3, 0)]
    b = {}
    _tag_loop(b, [0, 1, 2, 3], "R")
    return Triangulation(v, t, b)


def _non_trapping():
    # square (-1,1)^2 minus the dart {2|x1| - 1/2 < x2 < |x1|}
    v = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0),
         (0, -0.5), (0.5, 0.5), (0, 0), (-0.5, 0.5), (0, 0.6)]
    t = [(0, 1, 8), (1, 2, 8), (2, 3, 8), (8, 3, 9), (3, 4, 9), (4, 5, 9),
         (5, 12, 9), (9, 12, 10), (10, 12, 11), (11, 12, 5),
         (5, 6, 11), (6, 7, 11), (7, 8, 11), (7, 0, 8)]
    b = {}
    _tag_loop(b, list(range(8)), "R")
    _tag_loop(b, [8, 9, 10, 11], "D")
    return assign_newest_vertices(v, t, b)


def _trapping():
    from matplotlib.path import Path as PolyPath
    from scipy.spatial import Delaunay

    up = [(-0.25, 0.0), (-0.125, 0.25), (0.0, 0.25), (-0.1, 0.3), (0.0, 0.5),
          (-0.5, 0.5), (-1.0, 0.75)]
    lo = [(x, -y) for x, y in up]
    outer = [(-1.0, -1.0), (0.0, -1.0), (1.0, -1.0), (1.0, 0.0), (1.0, 1.0),
             (0.0, 1.0), (-1.0, 1.0)]
    main = outer + [up[i] for i in range(6, -1, -1)] + [lo[i] for i in range(1, 7)]
    pocket = [(-1.0, -0.25), (-0.5, -0.25), (-0.5, 0.25), (-1.0, 0.25)]
    # outer-wall segments carry Robin data; obstacle segments are Dirichlet
    segs = []
    for loop in (main, pocket):
        for i in range(len(loop)):
            a, b = loop[i], loop[(i + 1) % len(loop)]
            tag = "R" if (abs(a[0]) == 1 and a[0] == b[0]) or (abs(a[1]) == 1 and a[1] == b[1]) else "D"
            segs.append((a, b, tag))
    extra = [(0.5, 0.0), (-0.6, 0.8), (-0.6, -0.8), (0.5, 0.6), (0.5, -0.6), (-0.75, 0.0)]
    for _ in range(40):
        pts = sorted({p for a, b, _t in segs for p in (a, b)} | set(extra))
        idx = {p: i for i, p in enumerate(pts)}
        P = np.array(pts)
        tri = Delaunay(P).simplices
        have = {edge_key(t[i], t[(i + 1) % 3]) for t in tri for i in range(3)}
        missing = [s for s in segs if edge_key(idx[s[0]], idx[s[1]]) not in have]
        if not missing:
            break
        out = []
        for s in segs:
            if s in missing:
                m = ((s[0][0] + s[1][0]) / 2, (s[0][1] + s[1][1]) / 2)
                out += [(s[0], m, s[2]), (m, s[1], s[2])]
            else:
                out.append(s)
        segs = out
    else:  # pragma: no cover
        raise InvalidGeometry("segment recovery failed for the trapping domain")
    cen = P[tri].mean(axis=1)
    keep = PolyPath(np.array(main)).contains_points(cen) | PolyPath(np.array(pocket)).contains_points(cen)
    tri = tri[keep]
    used = np.unique(tri)
    remap = -np.ones(len(P), dtype=np.int64)
    remap[used] = np.arange(len(used))
    b = {edge_key(remap[idx[a]], remap[idx[c]]): tag for a, c, tag in segs}
    return assign_newest_vertices(P[used], remap[tri], b)


def build_initial_mesh(problem):
    """Initial matching triangulation for a named domain or a mesh file."""
    if problem == "unit_square":
        return _unit_square()
    if problem == "non_trapping":
        return _non_trapping()
    if problem == "trapping":
        return _trapping()
    path = Path(problem)
    if path.exists():
        return read_mesh(path)
    from .errors import UnknownProblem
    raise UnknownProblem(f"unknown problem or missing mesh file: {problem!r}")
