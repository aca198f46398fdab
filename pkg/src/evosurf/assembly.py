"""Per-slab assembly of the space-time trace finite element system.

Trial and test functions are traces of bulk functions that are P1 in space
(on the coarse mesh) and linear in time on each slab.  The temporal basis is
the endpoint pair ``theta_0 = (t_n - t)/dt``, ``theta_1 = (t - t_{n-1})/dt``;
a dof is a pair (node, layer) with layer 0 at ``t_{n-1}`` and 1 at ``t_n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError, GeometryError, InternalError
from .geometry import CrossSection, SurfacePatch
from .mesh import TetMesh
from .problems import ProblemDefinition, surface_coefficients

CHUNK = 50_000
BARY_TOL = 1e-10


class NodalField:
    """Continuous P1 function on the coarse mesh, possibly known only on some nodes.

    Unknown nodal values are NaN; evaluating where such a node carries a
    non-negligible weight raises ``InternalError``.
    """

    def __init__(self, mesh: TetMesh, values):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)

    @classmethod
    def constant(cls, mesh, c=1.0):
        return cls(mesh, np.full(mesh.n_nodes, float(c)))

    @classmethod
    def interpolate(cls, mesh, func, nodes):
        """Nodal interpolant of ``func(x)`` known on ``nodes``."""
        values = np.full(mesh.n_nodes, np.nan)
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        values[nodes] = func(mesh.node_coords(nodes))
        return cls(mesh, values)

    def _nodal(self, tets, bary):
        v = self.values[self.mesh.tet_vertices(tets)]
        v = v.copy()
        miss = np.isnan(v)
        if np.any(miss):
            if np.any(np.abs(np.asarray(bary)[miss]) > BARY_TOL):
                raise InternalError("bulk field evaluated on a tet with unknown nodal values")
            v[miss] = 0.0
        return v

    def evaluate(self, tets, bary):
        """Values at points given by containing tet and barycentric coordinates.

        ``tets`` must have shape ``bary.shape[:-1]``.
        """
        return np.einsum("...a,...a->...", self._nodal(tets, bary), bary)

    def gradient(self, tets, bary):
        v = self._nodal(tets, bary)
        return np.einsum("...a,...ad->...d", v, self.mesh.bary_gradients(tets))


@dataclass
class TraceDofMap:
    """Dense numbering of (active node, layer) pairs in (node id, layer) order."""

    nodes: np.ndarray

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    def local(self, node_ids) -> np.ndarray:
        node_ids = np.asarray(node_ids, dtype=np.int64)
        idx = np.searchsorted(self.nodes, node_ids)
        idx = np.clip(idx, 0, len(self.nodes) - 1)
        if len(self.nodes) == 0 or np.any(self.nodes[idx] != node_ids):
            raise InternalError("node is not active in this slab")
        return idx

    def dofs(self, node_ids, layer) -> np.ndarray:
        return 2 * self.local(node_ids) + layer

    @classmethod
    def from_tets(cls, mesh: TetMesh, tets) -> "TraceDofMap":
        tets = np.unique(np.asarray(tets, dtype=np.int64))
        return cls(np.unique(mesh.tet_vertices(tets)))


@dataclass
class SlabSystem:
    A: sp.csr_matrix
    b: np.ndarray
    dofs: TraceDofMap
    slab: int
    t_lo: float
    t_hi: float
    mesh: TetMesh
    patch: SurfacePatch
    cross_lo: CrossSection
    cross_hi: Optional[CrossSection] = None

    @property
    def dt(self) -> float:
        return self.t_hi - self.t_lo


def temporal_basis(t, t_lo, t_hi):
    dt = t_hi - t_lo
    t = np.asarray(t, dtype=float)
    theta = np.stack([(t_hi - t) / dt, (t - t_lo) / dt], axis=-1)
    dtheta = np.array([-1.0 / dt, 1.0 / dt])
    return theta, dtheta


def basis_eval(mesh: TetMesh, tet: int, node: int, layer: int, x, t, t_lo: float, t_hi: float):
    """Value, spatial gradient and time derivative of one bulk basis function.

    ``node`` is the local vertex (0..3) of coarse tet ``tet``.
    """
    lam = mesh.barycentric(tet, np.asarray(x, dtype=float))
    span = t_hi - t_lo
    if lam.min() < -BARY_TOL or not (t_lo - BARY_TOL * span <= t <= t_hi + BARY_TOL * span):
        raise InternalError(f"point ({x}, {t}) lies outside prism of tet {tet}")
    theta, dtheta = temporal_basis(t, t_lo, t_hi)
    grad = mesh.bary_gradients(tet)[node]
    return lam[node] * theta[layer], grad * theta[layer], lam[node] * dtheta[layer]


@dataclass
class ElementBasis:
    """Basis data at surface quadrature points; basis index ``2*a + layer``."""

    x: np.ndarray        # (E, Q, 3)
    t: np.ndarray        # (E, Q)
    w: np.ndarray        # (E, Q) quadrature weight times beta
    chi: np.ndarray      # (E, Q, 8)
    dchi_t: np.ndarray   # (E, Q, 8)
    grad_lam: np.ndarray  # (E, 4, 3)
    theta: np.ndarray    # (E, Q, 2)
    nodes: np.ndarray    # (E, 4) coarse node ids


def slab_basis(mesh, patch: SurfacePatch, t_lo, t_hi, sl=slice(None)) -> ElementBasis:
    qp, qw = patch.quad(sl)
    x, t = qp[..., :3], qp[..., 3]
    parent = patch.parent[sl]
    lam = mesh.barycentric(parent[:, None], x)
    if lam.size and lam.min() < -1e-8:
        raise InternalError("surface quadrature point outside its parent prism")
    theta, dtheta = temporal_basis(t, t_lo, t_hi)
    chi = (lam[..., :, None] * theta[..., None, :]).reshape(*lam.shape[:-1], 8)
    dchi = (lam[..., :, None] * dtheta).reshape(*lam.shape[:-1], 8)
    w = qw * patch.beta[sl][:, None]
    return ElementBasis(x, t, w, chi, dchi, mesh.bary_gradients(parent), theta, mesh.tet_vertices(parent))


def _coefficients(p, x, t, n, source):
    nn = np.broadcast_to(n[:, None, :], x.shape)
    coef = surface_coefficients(p, x, t, nn)
    if source is None:
        f = p.source(x, t)
    else:
        f = source(x, t, nn)
    return p.velocity(x, t), coef.alpha, np.broadcast_to(f, x.shape[:2])


def element_matrices(mesh, patch, p, t_lo, t_hi, sl=slice(None), source=None):
    """Local 8x8 matrices and 8-vectors of surface elements in ``sl``."""
    eb = slab_basis(mesh, patch, t_lo, t_hi, sl)
    n = patch.n[sl]
    wv, alpha, f = _coefficients(p, eb.x, eb.t, n, source)
    lam_grad = eb.grad_lam                                      # (E, 4, 3)
    pg = lam_grad - (lam_grad @ n[:, :, None]) * n[:, None, :]
    w_dot = wv @ np.swapaxes(lam_grad, 1, 2)                     # (E, Q, 4)
    conv = eb.dchi_t + (w_dot[..., :, None] * eb.theta[..., None, :]).reshape(eb.chi.shape)
    trial = conv + alpha[..., None] * eb.chi
    chi_w = np.swapaxes(eb.chi * eb.w[..., None], 1, 2)          # (E, 8, Q)
    K = chi_w @ trial
    tt = np.swapaxes(eb.theta * eb.w[..., None], 1, 2) @ eb.theta  # (E, 2, 2)
    gg = pg @ np.swapaxes(pg, 1, 2)                              # (E, 4, 4)
    K += p.nu_d * (gg[:, :, None, :, None] * tt[:, None, :, None, :]).reshape(-1, 8, 8)
    r = (chi_w @ f[..., None])[..., 0]
    return K, r, eb.nodes


def cross_pairing(mesh, cross: CrossSection, prev=None):
    """Mass matrices (F, 4, 4) and prev-data vectors (F, 4) on a cross section."""
    qp = cross.quad_points
    lam = mesh.barycentric(cross.parent[:, None], qp)
    w = cross.quad_weights
    M = np.einsum("fq,fqa,fqb->fab", w, lam, lam)
    r = None
    if prev is not None:
        u = prev.evaluate(np.broadcast_to(cross.parent[:, None], w.shape), lam)
        r = np.einsum("fq,fq,fqa->fa", w, u, lam)
    return M, r, mesh.tet_vertices(cross.parent)


def assemble_slab(mesh: TetMesh, patch: SurfacePatch, cross_lo: CrossSection, prev, p: ProblemDefinition,
                  t_lo: float, t_hi: float, slab: int = 1, source: Optional[Callable] = None,
                  cross_hi: Optional[CrossSection] = None) -> SlabSystem:
    """Assemble the slab system.

    Parameters
    ----------
    prev : NodalField
        Bulk function whose trace at ``t_lo`` is the data from the previous
        slab (or the interpolated initial value).
    source : callable, optional
        ``source(x, t, n)`` replacing ``p.source``; receives the discrete
        spatial normal at each quadrature point.
    """
    if len(patch) == 0:
        raise GeometryError(f"slab {slab}: reconstruction is empty (surface vanished or left the box)")
    dofs = TraceDofMap.from_tets(mesh, np.concatenate([patch.parent, cross_lo.parent]))
    rows, cols, vals = [], [], []
    b = np.zeros(dofs.n_dofs)
    for start in range(0, len(patch), CHUNK):
        sl = slice(start, start + CHUNK)
        K, r, nodes = element_matrices(mesh, patch, p, t_lo, t_hi, sl, source)
        # elements are sorted by parent tet: sum each run before scattering
        first = np.flatnonzero(np.r_[True, np.diff(patch.parent[sl]) != 0])
        K = np.add.reduceat(K, first, axis=0)
        r = np.add.reduceat(r, first, axis=0)
        gd = (2 * dofs.local(nodes[first])[:, :, None] + np.array([0, 1])).reshape(-1, 8)
        rows.append(np.repeat(gd, 8, axis=1).ravel())
        cols.append(np.tile(gd, (1, 8)).ravel())
        vals.append(K.ravel())
        b += np.bincount(gd.ravel(), weights=r.ravel(), minlength=dofs.n_dofs)
    if len(cross_lo):
        M, r, nodes = cross_pairing(mesh, cross_lo, prev)
        gd = 2 * dofs.local(nodes)
        rows.append(np.repeat(gd, 4, axis=1).ravel())
        cols.append(np.tile(gd, (1, 4)).ravel())
        vals.append(M.ravel())
        b += np.bincount(gd.ravel(), weights=r.ravel(), minlength=dofs.n_dofs)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dofs.n_dofs, dofs.n_dofs),
    ).tocsr()
    A.sum_duplicates()
    return SlabSystem(A, b, dofs, slab, t_lo, t_hi, mesh, patch, cross_lo, cross_hi)


# ---------------------------------------------------------------------------
# discrete energy


def _trace_on_patch(system: SlabSystem, coef):
    """Values and tangential gradients of the trace at surface quadrature points."""
    vals, grads, weights = [], [], []
    patch, mesh = system.patch, system.mesh
    for start in range(0, len(patch), CHUNK):
        sl = slice(start, start + CHUNK)
        eb = slab_basis(mesh, patch, system.t_lo, system.t_hi, sl)
        c = coef[(2 * system.dofs.local(eb.nodes)[:, :, None] + np.array([0, 1])).reshape(-1, 8)]
        u = np.einsum("eqi,ei->eq", eb.chi, c)
        ca = c.reshape(-1, 4, 2)
        g = np.einsum("ead,eal,eql->eqd", eb.grad_lam, ca, eb.theta)
        n = patch.n[sl][:, None, :]
        g = g - np.einsum("eqd,eqd->eq", g, np.broadcast_to(n, g.shape))[..., None] * n
        vals.append(u)
        grads.append(g)
        weights.append(eb.w)
    return np.concatenate(vals), np.concatenate(grads), np.concatenate(weights)


def layer_field(system: SlabSystem, coef, layer: int) -> NodalField:
    values = np.full(system.mesh.n_nodes, np.nan)
    values[system.dofs.nodes] = np.asarray(coef)[layer::2]
    return NodalField(system.mesh, values)


def _cross_norm2(mesh, cross, field_a, field_b=None):
    qp = cross.quad_points
    lam = mesh.barycentric(cross.parent[:, None], qp)
    tets = np.broadcast_to(cross.parent[:, None], lam.shape[:-1])
    d = field_a.evaluate(tets, lam)
    if field_b is not None:
        d = d - field_b.evaluate(tets, lam)
    return float(np.sum(cross.quad_weights * d * d))


def coercivity_margin(p: ProblemDefinition, system: SlabSystem) -> float:
    """Minimum of ``alpha - div_G w / 2`` over the surface quadrature points."""
    qp = system.patch.quad_points
    x, t = qp[..., :3], qp[..., 3]
    n = np.broadcast_to(system.patch.n[:, None, :], x.shape)
    c = surface_coefficients(p, x, t, n)
    return float(np.min(c.alpha - 0.5 * c.div_gamma_w))


@dataclass
class EnergyReport:
    energy: float
    bound: float
    c0: float

    @property
    def margin(self) -> float:
        return self.energy - self.bound

    @property
    def scale(self) -> float:
        return max(abs(self.energy), abs(self.bound), 1e-300)

    @property
    def holds(self) -> bool:
        return self.margin >= -1e-8 * self.scale


def energy_check(p: ProblemDefinition, systems, coefs) -> EnergyReport:
    """Compare ``<u', u>_b + a(u, u) + d(u, u)`` with its coercivity lower bound.

    ``systems`` are consecutive slab systems (the last one needs
    ``cross_hi``); ``coefs`` the coefficient vectors of ``u`` on each.
    """
    systems, coefs = list(systems), [np.asarray(c, dtype=float) for c in coefs]
    if not systems or len(systems) != len(coefs):
        raise ConfigurationError("need one coefficient vector per slab system")
    if systems[-1].cross_hi is None:
        raise ConfigurationError("last slab system needs its upper cross section")
    c0 = min(coercivity_margin(p, s) for s in systems)
    if c0 <= 0:
        raise ConfigurationError(f"alpha - div_G w / 2 >= c0 > 0 fails (min {c0:.3g}); form is not coercive")
    for s in systems:
        qp = s.patch.quad_points
        if np.any(p.source(qp[..., :3], qp[..., 3]) != 0):
            raise ConfigurationError("energy check requires a zero source term")
    energy = 0.0
    h_norm = 0.0
    jumps = 0.0
    prev_top = None
    for s, c in zip(systems, coefs):
        energy += float(c @ (s.A @ c))
        bottom = layer_field(s, c, 0)
        if prev_top is not None:
            mesh, cross = s.mesh, s.cross_lo
            lam = mesh.barycentric(cross.parent[:, None], cross.quad_points)
            tets = np.broadcast_to(cross.parent[:, None], lam.shape[:-1])
            energy -= float(np.sum(cross.quad_weights * prev_top.evaluate(tets, lam) * bottom.evaluate(tets, lam)))
            jumps += _cross_norm2(mesh, cross, bottom, prev_top)
        else:
            jumps += _cross_norm2(s.mesh, s.cross_lo, bottom)
        u, g, w = _trace_on_patch(s, c)
        h_norm += float(np.sum(w * (u * u + np.einsum("eqd,eqd->eq", g, g))))
        prev_top = layer_field(s, c, 1)
    last = systems[-1]
    final = _cross_norm2(last.mesh, last.cross_hi, prev_top)
    bound = min(1.0, c0) * (p.nu_d * h_norm + 0.5 * final + 0.5 * jumps)
    return EnergyReport(energy=energy, bound=bound, c0=c0)
