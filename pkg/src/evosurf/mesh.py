"""Structured Kuhn tetrahedral meshes of a box and uniform time grids.

Every grid cube is split into the 6 Kuhn tetrahedra sharing the main
diagonal.  Node ids are lexicographic with x fastest, so walking a Kuhn
path (one unit step per axis) visits strictly increasing ids and every
tetrahedron is stored with sorted vertex ids.  The Kuhn mesh of size h/2 is
a refinement of the Kuhn mesh of size h (each coarse tet holds exactly 8
fine tets), which is what the level-set reconstruction relies on.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import ConfigurationError, OutOfDomainError

#: Kuhn permutations; tet ``6*cube + p`` walks the axes in order ``PERMS[p]``.
PERMS = np.array(list(itertools.permutations(range(3))), dtype=np.int64)

_EYE = np.eye(3, dtype=np.int64)
# corner offsets (p, vertex, axis) of each Kuhn path
KUHN_OFFSETS = np.stack(
    [np.cumsum(np.vstack([np.zeros(3, dtype=np.int64), _EYE[list(p)]]), axis=0) for p in PERMS]
)

_TOL = 1e-12


@dataclass(frozen=True)
class BoxDomain:
    lo: tuple[float, float, float] = (-2.0, -2.0, -2.0)
    hi: tuple[float, float, float] = (2.0, 2.0, 2.0)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ConfigurationError("box corners must be points in R^3")
        if np.any(hi <= lo):
            raise ConfigurationError(f"box hi {tuple(hi)} must exceed lo {tuple(lo)} componentwise")
        object.__setattr__(self, "lo", tuple(float(v) for v in lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in hi))

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))


class TetMesh:
    """Kuhn triangulation of a box with uniform spacing ``h``.

    Attributes
    ----------
    lo : ndarray of shape (3,)
        Lower box corner.
    h : float
        Edge length of the grid cubes.
    cells_per_axis : tuple of int
        Number of cubes along x, y, z.
    """

    def __init__(self, lo, h, cells_per_axis):
        self.lo = np.asarray(lo, dtype=float)
        self.h = float(h)
        self.cells_per_axis = tuple(int(m) for m in cells_per_axis)
        m = np.asarray(self.cells_per_axis)
        self._node_strides = np.array([1, m[0] + 1, (m[0] + 1) * (m[1] + 1)], dtype=np.int64)
        self._cube_strides = np.array([1, m[0], m[0] * m[1]], dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(np.asarray(self.cells_per_axis) + 1))

    @property
    def n_cubes(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def n_tets(self) -> int:
        return 6 * self.n_cubes

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.h * np.asarray(self.cells_per_axis)

    # -- index arithmetic -------------------------------------------------
    def node_ids(self, ijk) -> np.ndarray:
        return np.asarray(ijk, dtype=np.int64) @ self._node_strides

    def node_ijk(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        m0, m1, _ = self.cells_per_axis
        i = ids % (m0 + 1)
        j = (ids // (m0 + 1)) % (m1 + 1)
        k = ids // ((m0 + 1) * (m1 + 1))
        return np.stack([i, j, k], axis=-1)

    def node_coords(self, ids) -> np.ndarray:
        return self.lo + self.h * self.node_ijk(ids)

    def cube_ijk(self, cube_ids) -> np.ndarray:
        c = np.asarray(cube_ids, dtype=np.int64)
        m0, m1, _ = self.cells_per_axis
        return np.stack([c % m0, (c // m0) % m1, c // (m0 * m1)], axis=-1)

    def cube_ids(self, ijk) -> np.ndarray:
        return np.asarray(ijk, dtype=np.int64) @ self._cube_strides

    def cube_tets(self, cube_ids) -> np.ndarray:
        """Vertex ids of the 6 tets of each cube, shape (k, 6, 4)."""
        corner = self.cube_ijk(cube_ids)
        ijk = corner[:, None, None, :] + KUHN_OFFSETS[None]
        return self.node_ids(ijk)

    def tet_vertices(self, tet_ids) -> np.ndarray:
        tet_ids = np.asarray(tet_ids, dtype=np.int64)
        corner = self.cube_ijk(tet_ids // 6)
        ijk = corner[..., None, :] + KUHN_OFFSETS[tet_ids % 6]
        return self.node_ids(ijk)

    @cached_property
    def vertices(self) -> np.ndarray:
        return self.node_coords(np.arange(self.n_nodes))

    @cached_property
    def tets(self) -> np.ndarray:
        return self.cube_tets(np.arange(self.n_cubes)).reshape(-1, 4)

    def tet_volumes(self, tet_ids=None) -> np.ndarray:
        tets = self.tets if tet_ids is None else self.tet_vertices(tet_ids)
        x = self.node_coords(tets)
        d = x[..., 1:, :] - x[..., :1, :]
        return np.abs(np.linalg.det(d)) / 6.0

    # -- barycentric coordinates ----------------------------------------
    def barycentric(self, tet_ids, x) -> np.ndarray:
        """P1 barycentric coordinates of points ``x`` in tets ``tet_ids``.

        Uses the closed form of the Kuhn simplex ``s[p0] >= s[p1] >= s[p2]``
        in local cube coordinates ``s``.
        """
        tet_ids = np.asarray(tet_ids, dtype=np.int64)
        x = np.asarray(x, dtype=float)
        corner = self.lo + self.h * self.cube_ijk(tet_ids // 6)
        s = (x - corner) / self.h
        p = np.broadcast_to(PERMS[tet_ids % 6], s.shape)
        sp = np.take_along_axis(s, p, axis=-1)
        return np.stack(
            [1.0 - sp[..., 0], sp[..., 0] - sp[..., 1], sp[..., 1] - sp[..., 2], sp[..., 2]], axis=-1
        )

    def bary_gradients(self, tet_ids) -> np.ndarray:
        """Gradients of the 4 barycentric functions, shape (..., 4, 3)."""
        tet_ids = np.asarray(tet_ids, dtype=np.int64)
        e = np.eye(3)[PERMS[tet_ids % 6]]  # (..., 3, 3), row r = e_{p_r}
        g = np.stack([-e[..., 0, :], e[..., 0, :] - e[..., 1, :], e[..., 1, :] - e[..., 2, :], e[..., 2, :]], axis=-2)
        return g / self.h

    def containing_tet(self, x) -> np.ndarray:
        """Unique tet containing interior points (no tie handling)."""
        x = np.asarray(x, dtype=float)
        s = (x - self.lo) / self.h
        m = np.asarray(self.cells_per_axis)
        cell = np.clip(np.floor(s).astype(np.int64), 0, m - 1)
        local = s - cell
        order = np.argsort(-local, axis=-1, kind="stable")
        perm_id = _perm_lookup(order)
        return 6 * self.cube_ids(cell) + perm_id


_PERM_CODE = {tuple(p): i for i, p in enumerate(PERMS.tolist())}
_PERM_TABLE = np.full(27, -1, dtype=np.int64)
for _p, _i in _PERM_CODE.items():
    _PERM_TABLE[_p[0] * 9 + _p[1] * 3 + _p[2]] = _i


def _perm_lookup(order) -> np.ndarray:
    order = np.asarray(order, dtype=np.int64)
    return _PERM_TABLE[order[..., 0] * 9 + order[..., 1] * 3 + order[..., 2]]


def build_box_mesh(domain: BoxDomain, h: float) -> TetMesh:
    """Kuhn mesh of ``domain`` with cube edge ``h``.

    Raises
    ------
    ConfigurationError
        If ``h`` does not divide the extent of some axis.
    """
    if not h > 0:
        raise ConfigurationError(f"mesh size must be positive, got {h}")
    cells = []
    for axis, ext in zip("xyz", domain.extent):
        m = ext / h
        if abs(m - round(m)) > 1e-12 * max(1.0, m) or round(m) < 1:
            raise ConfigurationError(f"h={h} does not divide the {axis}-extent {ext} of the box")
        cells.append(int(round(m)))
    return TetMesh(domain.lo, h, cells)


def locate_point(mesh: TetMesh, x, tol: float = _TOL):
    """Find a tet containing each point and its barycentric coordinates.

    Points on shared faces, edges or vertices go to the lowest tet index.

    Parameters
    ----------
    mesh : TetMesh
    x : array_like of shape (3,) or (M, 3)

    Returns
    -------
    tet : int or ndarray of int
    bary : ndarray of shape (4,) or (M, 4)
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    lo, hi = mesh.lo, mesh.hi
    slack = tol * np.maximum(1.0, np.abs(hi - lo))
    outside = np.any((x < lo - slack) | (x > hi + slack), axis=1)
    if np.any(outside):
        bad = x[np.argmax(outside)]
        raise OutOfDomainError(f"point {tuple(bad)} lies outside the box [{tuple(lo)}, {tuple(hi)}]")
    x = np.clip(x, lo, hi)
    s = (x - lo) / mesh.h
    m = np.asarray(mesh.cells_per_axis)
    lo_c = np.clip(np.floor(s - 1e-9), 0, m - 1).astype(np.int64)
    hi_c = np.clip(np.floor(s + 1e-9), 0, m - 1).astype(np.int64)
    cand = []
    for pick in itertools.product((0, 1), repeat=3):
        cell = np.where(np.array(pick, dtype=bool), hi_c, lo_c)
        base = 6 * mesh.cube_ids(cell)
        cand.append(base[:, None] + np.arange(6))
    cand = np.concatenate(cand, axis=1)  # (M, 48)
    bary = mesh.barycentric(cand, x[:, None, :])
    ok = bary.min(axis=-1) >= -tol
    key = np.where(ok, cand, np.iinfo(np.int64).max)
    best = np.argmin(key, axis=1)
    rows = np.arange(len(x))
    if not np.all(ok[rows, best]):
        raise OutOfDomainError("point location failed")
    tet = cand[rows, best]
    lam = bary[rows, best]
    if single:
        return int(tet[0]), lam[0]
    return tet, lam


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, t_end]`` into ``n_slabs`` slabs."""

    t_end: float
    n_slabs: int

    def __post_init__(self):
        if self.n_slabs < 1:
            raise ConfigurationError("a time grid needs at least one slab")
        if not self.t_end > 0:
            raise ConfigurationError(f"t_end must be positive, got {self.t_end}")

    @classmethod
    def from_step(cls, t_end: float, dt: float) -> "TimeGrid":
        if not dt > 0:
            raise ConfigurationError(f"dt must be positive, got {dt}")
        n = t_end / dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ConfigurationError(f"t_end={t_end} is not an integer multiple of dt={dt}")
        return cls(float(t_end), int(round(n)))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_slabs

    def t(self, n: int) -> float:
        return n * self.dt

    def slab(self, n: int) -> tuple[float, float]:
        if not 1 <= n <= self.n_slabs:
            raise ConfigurationError(f"slab index {n} outside 1..{self.n_slabs}")
        return self.t(n - 1), self.t(n)
