"""Slab-by-slab time marching."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator

from .assembly import NodalField, SlabSystem, assemble_slab
from .exceptions import EvosurfError, GeometryError
from .geometry import CrossSection, reconstruct_cross_section, reconstruct_slab, refine
from .linsolve import SlabSolution, solve_slab
from .mesh import TetMesh, TimeGrid
from .problems import ProblemDefinition

log = logging.getLogger(__name__)


@dataclass
class SlabResult:
    slab: int
    system: SlabSystem
    solution: SlabSolution
    cross_lo: CrossSection
    cross_hi: CrossSection


def initial_state(p: ProblemDefinition, mesh: TetMesh, fine: TetMesh | None = None):
    """Cross section at ``t = 0`` and the nodal interpolant of the initial value."""
    cross0 = reconstruct_cross_section(mesh, p, 0.0, "lower", fine)
    if len(cross0) == 0:
        raise GeometryError("initial surface does not cut the mesh")
    u0 = NodalField.interpolate(mesh, p.extended_initial_value, mesh.tet_vertices(cross0.parent))
    return cross0, u0


def time_march(p: ProblemDefinition, mesh: TetMesh, grid: TimeGrid, tol: float = 1e-10,
               start=None) -> Iterator[SlabResult]:
    """Yield the solved slabs ``1..N`` in order.

    ``start`` optionally supplies ``initial_state(p, mesh)``.  Errors are
    re-raised with the slab index and element count prepended.
    """
    fine = refine(mesh)
    cross, prev = initial_state(p, mesh, fine) if start is None else start
    for n in range(1, grid.n_slabs + 1):
        t0, t1 = grid.slab(n)
        n_elem = 0
        try:
            patch = reconstruct_slab(mesh, grid, n, p, fine)
            n_elem = len(patch)
            cross_hi = reconstruct_cross_section(mesh, p, t1, "upper", fine)
            system = assemble_slab(mesh, patch, cross, prev, p, t0, t1, n, cross_hi=cross_hi)
            sol = solve_slab(system, tol)
        except EvosurfError as err:
            err.args = (f"slab {n} ({n_elem} surface elements): {err}",) + err.args[1:]
            raise
        log.debug("slab %d: %d elements, %d dofs, %s", n, n_elem, system.dofs.n_dofs, sol.method)
        yield SlabResult(n, system, sol, cross, cross_hi)
        prev = sol.upper
        cross = cross_hi
