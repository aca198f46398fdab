"""Piecewise-affine reconstruction of the space-time surface.

Per time slab the level set is sampled at the nodes of the once-refined
space-time mesh (Kuhn mesh of size h/2, two half steps in time).  Each
refined prism ``tet x [tau_k, tau_k+1]`` is cut into 4 pentatopes along
Kuhn paths, the sampled values are interpolated affinely on each pentatope,
and its zero level (a flat 3-polytope in R^4) is split into tetrahedra by a
lookup table.  Cross sections at slab ends are built the same way one
dimension lower (marching tetrahedra).

Both tables triangulate the product-of-simplices cases with staircase
(monotone lattice path) triangulations over the local vertex order.  Local
order agrees with the global (time level, node id) order, so neighbouring
simplices split their shared facets identically.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .exceptions import GeometryError
from .mesh import TetMesh, TimeGrid

# degree-2 rules in barycentric coordinates
_A, _B = 0.5854101966249685, 0.1381966011250105
TET_RULE = (np.full((4, 4), _B) + np.eye(4) * (_A - _B), np.full(4, 0.25))
TRI_RULE = (np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]), np.full(3, 1.0 / 3.0))

SLIVER_TOL = 1e-14
CHUNK_CUBES = 4000


def _staircase(n_a: int, n_b: int):
    """Monotone lattice paths from (0, 0) to (n_a-1, n_b-1)."""
    steps = n_a - 1 + n_b - 1
    paths = []
    for ups in itertools.combinations(range(steps), n_a - 1):
        i = j = 0
        path = [(0, 0)]
        for s in range(steps):
            if s in ups:
                i += 1
            else:
                j += 1
            path.append((i, j))
        paths.append(path)
    # lexicographic on the reversed step sequence keeps tables stable
    return sorted(paths)


def _edge(a: int, b: int):
    return (a, b) if a < b else (b, a)


def _cut_table(n_vertices: int):
    """For each negative-vertex bitmask, list of simplices given as edge lists."""
    table = []
    for mask in range(1 << n_vertices):
        neg = [i for i in range(n_vertices) if mask >> i & 1]
        pos = [i for i in range(n_vertices) if not mask >> i & 1]
        if not neg or not pos:
            table.append([])
            continue
        small, large = (neg, pos) if len(neg) <= len(pos) else (pos, neg)
        if len(small) == 1:
            table.append([[_edge(small[0], o) for o in large]])
            continue
        simplices = []
        for path in _staircase(len(small), len(large)):
            simplices.append([_edge(small[i], large[j]) for i, j in path])
        table.append(simplices)
    return table


PENTATOPE_TABLE = _cut_table(5)
TET_TABLE = _cut_table(4)


def _crossing(xa, xb, fa, fb):
    s = fa / (fa - fb)
    x = xa + s[..., None] * (xb - xa)
    x = np.where((fb == 0)[..., None], xb, x)
    return np.where((fa == 0)[..., None], xa, x)


def simplex_measure(v):
    """k-dimensional measure of simplices ``v`` of shape (..., k+1, D).

    For ``D = k + 1`` the measure is the norm of the vector of maximal minors
    (generalized cross product), which is exactly zero when two vertices
    coincide; the Gram determinant would leave square-rooted round-off.
    """
    g = v[..., 1:, :] - v[..., :1, :]
    k, d = g.shape[-2], g.shape[-1]
    if d == k + 1:
        minors = [np.linalg.det(np.delete(g, j, axis=-1)) for j in range(d)]
        return np.sqrt(sum(m * m for m in minors)) / factorial(k)
    gram = g @ np.swapaxes(g, -1, -2)
    return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None)) / factorial(k)


def _diameter(v):
    d = v[..., :, None, :] - v[..., None, :, :]
    return np.sqrt((d * d).sum(-1).max(axis=(-1, -2)))


def march(x, vals, table):
    """Zero-level simplices of affine fields on a batch of simplices.

    Parameters
    ----------
    x : ndarray of shape (P, k+1, D)
        Vertex coordinates, in global vertex order.
    vals : ndarray of shape (P, k+1)
        Nodal values; zero counts as positive.
    table : list
        ``PENTATOPE_TABLE`` or ``TET_TABLE``.

    Returns
    -------
    verts : ndarray of shape (E, k, D)
    source : ndarray of shape (E,)
        Index of the producing simplex; output is ordered by source, then
        by table slot.
    """
    nv = vals.shape[1]
    mask = ((vals < 0) << np.arange(nv)).sum(axis=1)
    out, src, slot = [], [], []
    for m in np.unique(mask):
        simplices = table[m]
        if not simplices:
            continue
        idx = np.flatnonzero(mask == m)
        xi, fi = x[idx], vals[idx]
        for s, edges in enumerate(simplices):
            lo = np.array([e[0] for e in edges])
            hi = np.array([e[1] for e in edges])
            out.append(_crossing(xi[:, lo], xi[:, hi], fi[:, lo], fi[:, hi]))
            src.append(idx)
            slot.append(np.full(len(idx), s))
    if not out:
        return np.zeros((0, nv - 1, x.shape[-1])), np.zeros(0, dtype=np.int64)
    verts = np.concatenate(out)
    src = np.concatenate(src)
    slot = np.concatenate(slot)
    order = np.lexsort((slot, src))
    return verts[order], src[order]


def affine_gradient(x, vals):
    """Gradient of the affine interpolant on full-dimensional simplices."""
    e = x[:, 1:] - x[:, :1]
    dv = vals[:, 1:] - vals[:, :1]
    return np.linalg.solve(e, dv[..., None])[..., 0]


# ---------------------------------------------------------------------------
# element containers


@dataclass
class SurfaceElement:
    vertices: np.ndarray
    parent: int
    m3: float
    nu: np.ndarray
    n: np.ndarray
    beta_geom: float
    quad: list = field(default_factory=list)


@dataclass
class CrossSectionElement:
    vertices: np.ndarray
    parent: int
    area: float
    normal: np.ndarray
    time: float
    quad: list = field(default_factory=list)


@dataclass
class SurfacePatch:
    """Reconstructed space-time surface of one slab, as arrays over elements.

    Elements are sorted by coarse parent tet (stable), so contributions of
    one coarse prism are contiguous.
    """

    verts: np.ndarray   # (E, 4, 4) points (x, y, z, t)
    m3: np.ndarray      # (E,)
    nu: np.ndarray      # (E, 4) unit space-time normal
    n: np.ndarray       # (E, 3) unit spatial normal
    beta: np.ndarray    # (E,) |grad_x phi_h| / |grad_xt phi_h|
    parent: np.ndarray  # (E,) coarse tet index
    slab: int = 0
    t_lo: float = 0.0
    t_hi: float = 0.0

    def __len__(self):
        return len(self.m3)

    @property
    def quad_points(self) -> np.ndarray:
        return TET_RULE[0] @ self.verts

    @property
    def quad_weights(self) -> np.ndarray:
        return self.m3[:, None] * TET_RULE[1][None, :]

    def quad(self, sl=slice(None)):
        """Quadrature points (E, 4, 4) and weights (E, 4) of a slice of elements."""
        return TET_RULE[0] @ self.verts[sl], self.m3[sl, None] * TET_RULE[1][None, :]

    def element(self, i: int) -> SurfaceElement:
        pts = TET_RULE[0] @ self.verts[i]
        wts = self.m3[i] * TET_RULE[1]
        return SurfaceElement(
            vertices=self.verts[i], parent=int(self.parent[i]), m3=float(self.m3[i]),
            nu=self.nu[i], n=self.n[i], beta_geom=float(self.beta[i]),
            quad=list(zip(pts, wts)),
        )

    def __iter__(self):
        return (self.element(i) for i in range(len(self)))


@dataclass
class CrossSection:
    """Discrete surface ``Gamma_h(t)`` as arrays over triangles."""

    tris: np.ndarray    # (F, 3, 3)
    area: np.ndarray    # (F,)
    normal: np.ndarray  # (F, 3) unit, along grad phi_h
    parent: np.ndarray  # (F,) coarse tet index
    time: float = 0.0

    def __len__(self):
        return len(self.area)

    @property
    def quad_points(self) -> np.ndarray:
        return TRI_RULE[0] @ self.tris

    @property
    def quad_weights(self) -> np.ndarray:
        return self.area[:, None] * TRI_RULE[1][None, :]

    def element(self, i: int) -> CrossSectionElement:
        pts = TRI_RULE[0] @ self.tris[i]
        wts = self.area[i] * TRI_RULE[1]
        return CrossSectionElement(
            vertices=self.tris[i], parent=int(self.parent[i]), area=float(self.area[i]),
            normal=self.normal[i], time=self.time, quad=list(zip(pts, wts)),
        )

    def __iter__(self):
        return (self.element(i) for i in range(len(self)))


def quadrature(elem):
    """Degree-2 quadrature points and weights of one element.

    4 interior points for a 3-simplex, 3 edge midpoints for a triangle.
    """
    v = np.asarray(elem.vertices if hasattr(elem, "vertices") else elem, dtype=float)
    if v.shape[0] == 4:
        bary, w = TET_RULE
    elif v.shape[0] == 3:
        bary, w = TRI_RULE
    else:
        raise ValueError(f"no rule for a simplex with {v.shape[0]} vertices")
    return bary @ v, simplex_measure(v) * w


# ---------------------------------------------------------------------------
# prisms and pentatopes


@dataclass
class Prism4D:
    parent: int
    slab: int
    nodes: np.ndarray        # 4 sorted spatial node ids
    spatial: np.ndarray      # (4, 3)
    t0: float
    t1: float

    @property
    def vertices(self) -> np.ndarray:
        lo = np.column_stack([self.spatial, np.full(4, self.t0)])
        hi = np.column_stack([self.spatial, np.full(4, self.t1)])
        return np.vstack([lo, hi])


@dataclass
class Pentatope:
    vertices: np.ndarray  # (5, 4)
    prism: Prism4D | None = None

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.vertices[1:] - self.vertices[0])) / 24.0)


def pentatope_paths():
    """(spatial vertex, time level) of each Kuhn path through the prism."""
    paths = []
    for k in range(4):
        nodes = list(range(k + 1)) + list(range(k, 4))
        levels = [0] * (k + 1) + [1] * (4 - k)
        paths.append((nodes, levels))
    return paths


_PATHS = pentatope_paths()
PATH_NODES = np.array([p[0] for p in _PATHS])    # (4, 5)
PATH_LEVELS = np.array([p[1] for p in _PATHS])   # (4, 5)


def subdivide_prism(prism: Prism4D) -> list[Pentatope]:
    if np.any(np.diff(prism.nodes) <= 0):
        raise ValueError("prism spatial vertices must be in ascending id order")
    out = []
    t = np.array([prism.t0, prism.t1])
    for nodes, levels in _PATHS:
        v = np.column_stack([prism.spatial[nodes], t[levels]])
        out.append(Pentatope(vertices=v, prism=prism))
    return out


def _elements_from_pentatopes(x4, vals):
    """March pentatopes and attach measures, normals and the beta factor."""
    verts, src = march(x4, vals, PENTATOPE_TABLE)
    if len(src) == 0:
        return verts, src, np.zeros(0), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0)
    m3 = simplex_measure(verts)
    keep = m3 > SLIVER_TOL * _diameter(verts) ** 3
    verts, src, m3 = verts[keep], src[keep], m3[keep]
    uniq, inv = np.unique(src, return_inverse=True)
    g = affine_gradient(x4[uniq], vals[uniq])[inv]
    gnorm = np.linalg.norm(g, axis=1)
    gx = np.linalg.norm(g[:, :3], axis=1)
    nu = g / gnorm[:, None]
    n = g[:, :3] / gx[:, None]
    beta = gx / gnorm
    return verts, src, m3, nu, n, beta


def march_pentatope(P: Pentatope, phi_vals, parent: int = -1) -> list[SurfaceElement]:
    x4 = np.asarray(P.vertices, dtype=float)[None]
    vals = np.asarray(phi_vals, dtype=float)[None]
    verts, _, m3, nu, n, beta = _elements_from_pentatopes(x4, vals)
    if parent < 0 and P.prism is not None:
        parent = P.prism.parent
    patch = SurfacePatch(verts, m3, nu, n, beta, np.full(len(m3), parent, dtype=np.int64))
    return list(patch)


# ---------------------------------------------------------------------------
# slab reconstruction


def refine(mesh: TetMesh) -> TetMesh:
    """Kuhn mesh of half the size; nested in ``mesh``."""
    return TetMesh(mesh.lo, mesh.h / 2.0, [2 * m for m in mesh.cells_per_axis])


def _cut_cubes(fine: TetMesh, level_vals):
    """Ids of cubes whose corner values (over all given levels) change sign."""
    mx, my, mz = fine.cells_per_axis
    g = [v.reshape(mz + 1, my + 1, mx + 1) for v in level_vals]
    mn = mxv = None
    for v in g:
        for dk, dj, di in itertools.product((0, 1), repeat=3):
            c = v[dk:dk + mz, dj:dj + my, di:di + mx]
            mn = c if mn is None else np.minimum(mn, c)
            mxv = c if mxv is None else np.maximum(mxv, c)
    cut = (mn < 0) & (mxv >= 0)
    ids = np.flatnonzero(cut.ravel())
    if len(ids):
        ijk = fine.cube_ijk(ids)
        m = np.asarray(fine.cells_per_axis)
        if np.any(ijk == 0) or np.any(ijk == m - 1):
            raise GeometryError("the discrete surface touches the box boundary; enlarge the box")
    return ids


def _coarse_parent(coarse: TetMesh, fine: TetMesh, fine_tets):
    centroid = fine.node_coords(fine.tet_vertices(fine_tets)).mean(axis=-2)
    return coarse.containing_tet(centroid)


def nodal_levels(fine: TetMesh, phi, times):
    x = fine.vertices
    return [np.asarray(phi(x, np.full(len(x), t)), dtype=float) for t in times]


def reconstruct_slab(mesh: TetMesh, grid: TimeGrid, n: int, p, fine: TetMesh | None = None) -> SurfacePatch:
    """Reconstruct the discrete space-time surface of slab ``n``.

    The level set of ``p`` is sampled on the once-refined space-time mesh
    (spatial size ``h/2``, time step ``dt/2``).
    """
    t0, t1 = grid.slab(n)
    fine = refine(mesh) if fine is None else fine
    taus = np.array([t0, 0.5 * (t0 + t1), t1])
    levels = nodal_levels(fine, p.phi, taus)
    parts = []
    for half in range(2):
        lv = (levels[half], levels[half + 1])
        cubes = _cut_cubes(fine, lv)
        for start in range(0, len(cubes), CHUNK_CUBES):
            parts.append(_slab_chunk(mesh, fine, cubes[start:start + CHUNK_CUBES], lv, taus[half:half + 2]))
    if parts:
        cat = [np.concatenate([pt[i] for pt in parts]) for i in range(6)]
    else:
        cat = [np.zeros((0, 4, 4)), np.zeros(0), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
               np.zeros(0, dtype=np.int64)]
    verts, m3, nu, nrm, beta, parent = cat
    order = np.argsort(parent, kind="stable")
    return SurfacePatch(verts[order], m3[order], nu[order], nrm[order], beta[order], parent[order],
                        slab=n, t_lo=t0, t_hi=t1)


def _slab_chunk(mesh, fine, cubes, lv, taus):
    tets = fine.cube_tets(cubes).reshape(-1, 4)
    tet_ids = (6 * cubes[:, None] + np.arange(6)).ravel()
    pv = np.stack([lv[0][tets], lv[1][tets]], axis=-1)  # (K, 4, 2)
    cut = (pv.min(axis=(1, 2)) < 0) & (pv.max(axis=(1, 2)) >= 0)
    tets, tet_ids, pv = tets[cut], tet_ids[cut], pv[cut]
    xs = fine.node_coords(tets)  # (K, 4, 3)
    # pentatopes (K, 4, 5): Kuhn paths through each prism
    px = xs[:, PATH_NODES]                          # (K, 4, 5, 3)
    pt = np.broadcast_to(taus[PATH_LEVELS], px.shape[:-1])
    x4 = np.concatenate([px, pt[..., None]], axis=-1).reshape(-1, 5, 4)
    vals = pv[:, PATH_NODES, PATH_LEVELS].reshape(-1, 5)
    sc = (vals.min(axis=1) < 0) & (vals.max(axis=1) >= 0)
    pent = np.flatnonzero(sc)
    verts, src, m3, nu, nrm, beta = _elements_from_pentatopes(x4[pent], vals[pent])
    prism = pent[src] // 4
    parent = _coarse_parent(mesh, fine, tet_ids[prism])
    return verts, m3, nu, nrm, beta, parent


def reconstruct_cross_section(mesh: TetMesh, p, t: float, side: str = "upper",
                              fine: TetMesh | None = None) -> CrossSection:
    """Discrete surface at time ``t`` (marching tetrahedra on the refined mesh).

    Both slabs meeting at ``t`` sample the level set at the same refined
    nodes, so ``side`` only documents which slab the caller has in mind.
    """
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    fine = refine(mesh) if fine is None else fine
    (vals,) = nodal_levels(fine, p.phi, [t])
    cubes = _cut_cubes(fine, (vals,))
    parts = []
    for start in range(0, len(cubes), CHUNK_CUBES):
        c = cubes[start:start + CHUNK_CUBES]
        tets = fine.cube_tets(c).reshape(-1, 4)
        tet_ids = (6 * c[:, None] + np.arange(6)).ravel()
        tv = vals[tets]
        cut = (tv.min(axis=1) < 0) & (tv.max(axis=1) >= 0)
        tets, tet_ids, tv = tets[cut], tet_ids[cut], tv[cut]
        xs = fine.node_coords(tets)
        tris, src = march(xs, tv, TET_TABLE)
        area = simplex_measure(tris)
        keep = area > SLIVER_TOL * _diameter(tris) ** 2
        tris, src, area = tris[keep], src[keep], area[keep]
        g = affine_gradient(xs, tv)[src]
        normal = g / np.linalg.norm(g, axis=1)[:, None]
        parent = _coarse_parent(mesh, fine, tet_ids[src])
        parts.append((tris, area, normal, parent))
    if parts:
        tris, area, normal, parent = (np.concatenate([q[i] for q in parts]) for i in range(4))
    else:
        tris, area, normal, parent = np.zeros((0, 3, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros(0, np.int64)
    order = np.argsort(parent, kind="stable")
    return CrossSection(tris[order], area[order], normal[order], parent[order], time=float(t))
