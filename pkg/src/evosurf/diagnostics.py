"""Error norms, discrete mass and observed convergence orders."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import NodalField
from .exceptions import ConfigurationError
from .geometry import CrossSection
from .problems import ProblemDefinition


@dataclass
class ErrorReport:
    err_l2_final: float = math.nan
    err_l2h1: float = math.nan
    mass: list = field(default_factory=list)   # (t_n, M_h(t_n)), n = 1..N
    mass_initial: float = math.nan              # integral of u_0 over Gamma_h(0)
    mass_avg: float = math.nan
    mass_abs_err: float = math.nan

    def as_row(self) -> dict:
        return {
            "err_l2_final": self.err_l2_final,
            "err_l2h1": self.err_l2h1,
            "mass_abs_err": self.mass_abs_err,
        }


def _cross_frame(mesh, cross: CrossSection):
    qp = cross.quad_points
    lam = mesh.barycentric(cross.parent[:, None], qp)
    tets = np.broadcast_to(cross.parent[:, None], lam.shape[:-1])
    return qp, lam, tets


def cross_values(field_: NodalField, cross: CrossSection):
    _, lam, tets = _cross_frame(field_.mesh, cross)
    return field_.evaluate(tets, lam)


def _require_exact(p: ProblemDefinition):
    if p.exact_solution is None or p.closest_point is None:
        raise ConfigurationError(f"problem {p.name!r} has no exact solution; error norms unavailable")


def l2_error(uh: NodalField, cross: CrossSection, p: ProblemDefinition, values=None) -> float:
    """``||u^e - u_h||`` on ``Gamma_h(t)`` with ``u^e`` the normal extension.

    ``values`` overrides the discrete values at the quadrature points.
    """
    _require_exact(p)
    if values is None:
        values = cross_values(uh, cross)
    ue = p.extended_solution(cross.quad_points, cross.time)
    return float(np.sqrt(np.sum(cross.quad_weights * (ue - values) ** 2)))


def l2_error_final(solution, cross_final: CrossSection, p: ProblemDefinition) -> float:
    """L2 error of the last slab's left limit on ``Gamma_h(t_N)``."""
    return l2_error(solution.upper, cross_final, p)


def extension_gradient(p: ProblemDefinition, x, t, step):
    """Gradient of the normal extension of the exact solution by central differences."""
    g = np.empty(x.shape)
    for d in range(3):
        e = np.zeros(3)
        e[d] = step
        g[..., d] = (p.extended_solution(x + e, t) - p.extended_solution(x - e, t)) / (2.0 * step)
    return g


def h1_seminorm_error2(uh: NodalField, cross: CrossSection, p: ProblemDefinition, h: float, grad=None) -> float:
    """Squared ``||grad_Gh (u^e - u_h)||`` on ``Gamma_h(t)``."""
    _require_exact(p)
    mesh = uh.mesh
    qp, lam, tets = _cross_frame(mesh, cross)
    if grad is None:
        grad = uh.gradient(tets, lam)
    d = extension_gradient(p, qp, cross.time, 1e-5 * h) - grad
    n = cross.normal[:, None, :]
    d = d - np.sum(d * n, axis=-1, keepdims=True) * n
    return float(np.sum(cross.quad_weights * np.sum(d * d, axis=-1)))


def l2h1_error(levels, p: ProblemDefinition, h: float, dt: float) -> float:
    """Trapezoidal-in-time ``L2(H1)`` error.

    ``levels`` lists ``(field, cross)`` for ``t_0, ..., t_N``; the first
    entry carries the interpolated initial value.
    """
    levels = list(levels)
    if len(levels) < 2:
        raise ConfigurationError("need at least the initial and one final level")
    total = 0.0
    last = len(levels) - 1
    for i, (uh, cross) in enumerate(levels):
        w = 0.5 * dt if i in (0, last) else dt
        total += w * h1_seminorm_error2(uh, cross, p, h)
    return math.sqrt(total)


def mass(uh: Optional[NodalField], cross: CrossSection, values=None) -> float:
    if values is None:
        values = cross_values(uh, cross)
    return float(np.sum(cross.quad_weights * values))


def initial_mass(p: ProblemDefinition, cross0: CrossSection) -> float:
    """``M(0)`` as the integral of the initial value over ``Gamma_h(0)``."""
    return mass(None, cross0, values=p.extended_initial_value(cross0.quad_points))


def mass_trajectory(solutions, crosses, p: ProblemDefinition, cross0: CrossSection, report=None) -> ErrorReport:
    """Fill the mass fields of an ``ErrorReport``.

    ``crosses[k]`` is the upper cross section of ``solutions[k]``.
    """
    report = ErrorReport() if report is None else report
    report.mass = [(c.time, mass(s.upper, c)) for s, c in zip(solutions, crosses)]
    report.mass_initial = initial_mass(p, cross0)
    if report.mass:
        report.mass_avg = float(np.mean([m for _, m in report.mass]))
        report.mass_abs_err = abs(report.mass_initial - report.mass_avg)
    return report


def observed_order(values) -> list[float]:
    """Convergence orders between consecutive ``(step, error)`` pairs.

    Returns ``inf`` for pairs with a non-positive error.
    """
    values = list(values)
    if len(values) < 2:
        raise ValueError("need at least two (step, error) pairs")
    out = []
    for (s0, e0), (s1, e1) in zip(values, values[1:]):
        if e0 <= 0 or e1 <= 0:
            out.append(math.inf)
        else:
            out.append(math.log(e0 / e1) / math.log(s0 / s1))
    return out
