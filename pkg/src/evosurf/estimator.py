"""Estimator-style front end.

``SpaceTimeTraceFEM`` follows the scikit-learn conventions: hyperparameters
in ``__init__`` (so ``get_params``/``set_params``/``clone`` work), ``fit``
runs the time marching for a problem, and ``predict`` evaluates the discrete
solution at space-time points.
"""
from __future__ import annotations

import math
import numbers
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_scalar
from sklearn.utils.validation import check_array, check_is_fitted

from .diagnostics import ErrorReport, h1_seminorm_error2, initial_mass, l2_error, mass
from .exceptions import ConfigurationError
from .mesh import BoxDomain, TimeGrid, build_box_mesh
from .problems import ProblemDefinition, get_problem
from .stepping import initial_state, time_march


def _check_positive(value, name):
    try:
        return check_scalar(value, name, numbers.Real, min_val=0.0, include_boundaries="neither")
    except (TypeError, ValueError) as err:
        raise ConfigurationError(str(err)) from None


class SpaceTimeTraceFEM(BaseEstimator):
    """Space-time trace FEM for advection-diffusion on an evolving surface.

    Parameters
    ----------
    h : float
        Background mesh size.
    dt : float
        Time step; ``t_end / dt`` must be an integer.
    t_end : float
    nu : float, optional
        Overrides the problem's diffusion coefficient.
    box : tuple of 6 floats
        ``(x0, y0, z0, x1, y1, z1)`` of the background box.
    solver_tol : float
        Relative residual accepted from the slab solver.

    Attributes
    ----------
    report_ : ErrorReport
    solutions_ : list of SlabSolution
    crosses_ : list of CrossSection
        Upper cross sections ``Gamma_h(t_n)``, ``n = 1..N``.
    """

    def __init__(self, h=0.25, dt=0.25, t_end=1.0, nu=None, box=(-2.0, -2.0, -2.0, 2.0, 2.0, 2.0),
                 solver_tol=1e-10):
        self.h = h
        self.dt = dt
        self.t_end = t_end
        self.nu = nu
        self.box = box
        self.solver_tol = solver_tol

    def _validate(self):
        for name in ("h", "dt", "t_end", "solver_tol"):
            _check_positive(getattr(self, name), name)
        if self.nu is not None:
            _check_positive(self.nu, "nu")
        box = tuple(float(v) for v in self.box)
        if len(box) != 6:
            raise ConfigurationError("box needs 6 numbers: lo (3) then hi (3)")
        return BoxDomain(box[:3], box[3:])

    def fit(self, problem, y=None, on_slab=None):
        """Solve ``problem`` (a name or a ``ProblemDefinition``) on ``[0, t_end]``.

        ``on_slab(result)`` is called after each slab, before its geometry
        is released.
        """
        domain = self._validate()
        p = get_problem(problem) if isinstance(problem, str) else problem
        if not isinstance(p, ProblemDefinition):
            raise ConfigurationError("problem must be a name or a ProblemDefinition")
        if self.nu is not None:
            p = p.with_nu(self.nu)
        start = time.perf_counter()
        self.mesh_ = build_box_mesh(domain, self.h)
        self.grid_ = TimeGrid.from_step(float(self.t_end), float(self.dt))
        self.problem_ = p
        exact = p.exact_solution is not None and p.closest_point is not None

        self.cross0_, self.initial_ = initial_state(p, self.mesh_)
        h1_sum = 0.5 * self.grid_.dt * h1_seminorm_error2(self.initial_, self.cross0_, p, self.h) if exact else 0.0
        self.solutions_, self.crosses_, self.n_elements_ = [], [], []
        report = ErrorReport(mass_initial=initial_mass(p, self.cross0_))
        for res in time_march(p, self.mesh_, self.grid_, self.solver_tol,
                              start=(self.cross0_, self.initial_)):
            if on_slab is not None:
                on_slab(res)
            uh = res.solution.upper
            report.mass.append((res.cross_hi.time, mass(uh, res.cross_hi)))
            if exact:
                w = 0.5 if res.slab == self.grid_.n_slabs else 1.0
                h1_sum += w * self.grid_.dt * h1_seminorm_error2(uh, res.cross_hi, p, self.h)
            self.solutions_.append(res.solution)
            self.crosses_.append(res.cross_hi)
            self.n_elements_.append(len(res.system.patch))
        report.mass_avg = float(np.mean([m for _, m in report.mass]))
        report.mass_abs_err = abs(report.mass_initial - report.mass_avg)
        if exact:
            report.err_l2_final = l2_error(self.solutions_[-1].upper, self.crosses_[-1], p)
            report.err_l2h1 = math.sqrt(h1_sum)
        self.report_ = report
        self.wall_seconds_ = time.perf_counter() - start
        return self

    def predict(self, X):
        """Evaluate the discrete bulk solution at rows ``(x, y, z, t)`` of ``X``.

        A point at ``t_n`` takes the value of slab ``n`` (left limit); ``t = 0``
        takes slab 1's value.
        """
        check_is_fitted(self, "solutions_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != 4:
            raise ValueError(f"expected 4 columns (x, y, z, t), got {X.shape[1]}")
        t = X[:, 3]
        if np.any(t < -1e-12) or np.any(t > self.grid_.t_end * (1 + 1e-12)):
            raise ValueError("prediction times must lie in [0, t_end]")
        slab = np.clip(np.ceil(t / self.grid_.dt - 1e-9).astype(int), 1, self.grid_.n_slabs)
        out = np.empty(len(X))
        for n in np.unique(slab):
            rows = slab == n
            out[rows] = self.solutions_[n - 1].evaluate(X[rows, :3], t[rows])
        return out

    def score(self, X, y):
        """Negative root-mean-square deviation of ``predict(X)`` from ``y``."""
        y = np.asarray(y, dtype=float)
        return -float(np.sqrt(np.mean((self.predict(X) - y) ** 2)))
