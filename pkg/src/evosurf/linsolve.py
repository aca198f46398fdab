"""Direct solution of the (possibly rank-deficient) slab systems.

The trace generators form a frame, so a slab matrix can be singular while
the system stays consistent.  We try a plain sparse LU first; if that fails
or misses the residual target, the diagonal is shifted by
``1e-12 * max|A|`` and the shifted factorization drives iterative
refinement on the unshifted system.  LSMR is the last resort.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import NodalField, SlabSystem, TraceDofMap
from .exceptions import SolverFailure
from .mesh import TetMesh, locate_point

log = logging.getLogger(__name__)

SHIFT = 1e-12
REFINE_STEPS = 30


@dataclass
class SlabSolution:
    coef: np.ndarray
    slab: int
    dofs: TraceDofMap
    mesh: TetMesh
    t_lo: float
    t_hi: float
    residual: float = 0.0
    method: str = "lu"

    def layer(self, layer: int) -> NodalField:
        values = np.full(self.mesh.n_nodes, np.nan)
        values[self.dofs.nodes] = self.coef[layer::2]
        return NodalField(self.mesh, values)

    @property
    def lower(self) -> NodalField:
        return self.layer(0)

    @property
    def upper(self) -> NodalField:
        """Bulk function at ``t_hi`` (the left limit ``u_-``)."""
        return self.layer(1)

    def evaluate(self, x, t):
        """Bulk bilinear function at points ``x`` (M, 3) and times ``t``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
        tets, lam = locate_point(self.mesh, x)
        theta1 = (t - self.t_lo) / (self.t_hi - self.t_lo)
        lo = self.lower.evaluate(tets, lam)
        hi = self.upper.evaluate(tets, lam)
        return (1.0 - theta1) * lo + theta1 * hi


def _residual(A, x, b):
    nb = np.linalg.norm(b)
    return np.linalg.norm(A @ x - b) / (nb if nb > 0 else 1.0)


def _lu(M, permc_spec):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return spla.splu(M.tocsc(), permc_spec=permc_spec)


def solve_linear(A, b, tol=1e-10, permc_spec="COLAMD"):
    """Solve ``A x = b`` to relative residual ``tol``.

    Returns
    -------
    x : ndarray
    residual : float
    method : str
        ``"lu"``, ``"shifted-lu"`` or ``"lsmr"``.

    Raises
    ------
    SolverFailure
        If no strategy reaches ``tol``.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b), 0.0, "lu"
    best = None
    try:
        x = _lu(A, permc_spec).solve(b)
        if np.all(np.isfinite(x)):
            res = _residual(A, x, b)
            if res <= tol:
                return x, res, "lu"
            best = (x, res)
    except RuntimeError:
        pass

    amax = abs(A).max()
    eps = SHIFT * amax
    try:
        lu = _lu(A + eps * sp.identity(A.shape[0], format="csc"), permc_spec)
        x = lu.solve(b)
        res = _residual(A, x, b)
        # refine while the residual still halves, then keep the best iterate
        for _ in range(REFINE_STEPS):
            x_new = x + lu.solve(b - A @ x)
            res_new = _residual(A, x_new, b)
            if not res_new < 0.5 * res:
                if res_new < res:
                    x, res = x_new, res_new
                break
            x, res = x_new, res_new
        if res <= tol:
            return x, res, "shifted-lu"
        if best is None or res < best[1]:
            best = (x, res)
    except RuntimeError:
        pass

    x0 = best[0] if best is not None else None
    out = spla.lsmr(A, b, atol=tol * 1e-2, btol=tol * 1e-2, maxiter=10 * A.shape[0], x0=x0)
    x = out[0]
    res = _residual(A, x, b)
    if res <= tol:
        return x, res, "lsmr"
    raise SolverFailure(f"slab solve reached relative residual {res:.3e} > {tol:.1e}", residual=res)


def solve_slab(system: SlabSystem, tol: float = 1e-10, permc_spec: str = "COLAMD") -> SlabSolution:
    x, res, method = solve_linear(system.A, system.b, tol=tol, permc_spec=permc_spec)
    if method != "lu":
        log.info("slab %d solved by %s (residual %.2e)", system.slab, method, res)
    return SlabSolution(x, system.slab, system.dofs, system.mesh, system.t_lo, system.t_hi, res, method)
