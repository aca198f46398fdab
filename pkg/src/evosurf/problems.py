"""Continuous data of the evolving-surface benchmarks.

All field callables are vectorized: ``x`` has shape ``(..., 3)`` and ``t``
broadcasts against ``x[..., 0]``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

import numpy as np

from .exceptions import ConfigurationError, DomainError

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemDefinition:
    """Surface advection-diffusion problem ``u' + alpha u - nu_d Lap_G u = f``.

    ``alpha_mode`` is either the string ``"div_gamma_w"`` (conservative
    transport) or a callable ``alpha(x, t)``.
    """

    name: str
    phi: Field
    velocity: Field
    velocity_jacobian: Field
    nu_d: float
    source: Field
    initial_value: Callable[[np.ndarray], np.ndarray]
    alpha_mode: Union[str, Field] = "div_gamma_w"
    exact_solution: Optional[Field] = None
    closest_point: Optional[Field] = None

    def __post_init__(self):
        if not self.nu_d > 0:
            raise ConfigurationError(f"diffusion coefficient must be positive, got {self.nu_d}")
        if isinstance(self.alpha_mode, str) and self.alpha_mode != "div_gamma_w":
            raise ConfigurationError(f"unknown alpha_mode {self.alpha_mode!r}")

    def with_nu(self, nu_d: float) -> "ProblemDefinition":
        return replace(self, nu_d=float(nu_d))

    def extended_solution(self, x, t):
        """Exact solution extended constantly along normals."""
        if self.exact_solution is None or self.closest_point is None:
            raise ConfigurationError(f"problem {self.name!r} has no exact solution with closest-point map")
        return self.exact_solution(self.closest_point(x, t), t)

    def extended_initial_value(self, x):
        if self.closest_point is not None:
            x = self.closest_point(x, 0.0)
        return self.initial_value(x)


@dataclass
class SurfaceCoefficients:
    n: np.ndarray
    div_gamma_w: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


def surface_divergence(jac, n):
    """``tr(J) - n.J.n`` for Jacobians ``J[..., i, j] = d w_i / d x_j``."""
    return np.trace(jac, axis1=-2, axis2=-1) - np.einsum("...i,...ij,...j->...", n, jac, n)


def surface_coefficients(p: ProblemDefinition, x, t, n) -> SurfaceCoefficients:
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    w = p.velocity(x, t)
    div = surface_divergence(p.velocity_jacobian(x, t), n)
    if isinstance(p.alpha_mode, str):
        alpha = div
    else:
        alpha = np.broadcast_to(np.asarray(p.alpha_mode(x, t), dtype=float), div.shape)
    wn = np.einsum("...i,...i->...", w, n)
    beta = 1.0 / np.sqrt(1.0 + wn * wn)
    return SurfaceCoefficients(n=n, div_gamma_w=div, alpha=alpha, beta=beta)


def _radius(x):
    r = np.linalg.norm(x, axis=-1)
    if np.any(r < 1e-10):
        raise DomainError("radial field evaluated at the origin")
    return r


def _xyz(x):
    return x[..., 0] * x[..., 1] * x[..., 2]


def sphere_problem(name, r0, rate, exact=None, source=None, u0=None, nu_d=1.0):
    """Sphere of radius ``r0*exp(rate*t/2)`` moving with its normal velocity."""

    def radius(t):
        return r0 * np.exp(0.5 * rate * np.asarray(t, dtype=float))

    def phi(x, t):
        return np.einsum("...i,...i->...", x, x) - radius(t) ** 2

    def velocity(x, t):
        r = _radius(x)
        c = 0.5 * rate * radius(t)
        return (c / r)[..., None] * x

    def jacobian(x, t):
        r = _radius(x)
        c = 0.5 * rate * np.broadcast_to(radius(t), r.shape)
        eye = np.eye(3)
        xx = x[..., :, None] * x[..., None, :]
        return (c / r)[..., None, None] * eye - (c / r**3)[..., None, None] * xx

    def closest_point(x, t):
        r = _radius(x)
        return (radius(t) / r)[..., None] * x

    if source is None:
        def source(x, t):
            return np.zeros(np.shape(x)[:-1])

    if u0 is None:
        def u0(x):
            return 1.0 + _xyz(x)

    return ProblemDefinition(
        name=name,
        phi=phi,
        velocity=velocity,
        velocity_jacobian=jacobian,
        nu_d=nu_d,
        source=source,
        initial_value=u0,
        exact_solution=exact,
        closest_point=closest_point,
    )


def builtin_shrinking_sphere() -> ProblemDefinition:
    """Sphere of radius ``1.5 exp(-t/2)``, solution ``(1 + x y z) e^t``."""

    def exact(x, t):
        return (1.0 + _xyz(x)) * np.exp(t)

    def source(x, t):
        return (-1.5 * np.exp(t) + 16.0 / 3.0 * np.exp(2.0 * t)) * _xyz(x)

    return sphere_problem("shrinking_sphere", 1.5, -1.0, exact=exact, source=source)


def builtin_shrinking_sphere_exp() -> ProblemDefinition:
    def exact(x, t):
        return np.exp(np.broadcast_to(t, np.shape(x)[:-1]))

    return sphere_problem("shrinking_sphere_exp", 1.5, -1.0, exact=exact, u0=lambda x: np.ones(np.shape(x)[:-1]))


def builtin_expanding_sphere() -> ProblemDefinition:
    """Sphere of radius ``1.5 exp(t/2)``; ``div_G w = +1`` makes the form coercive."""
    return sphere_problem("expanding_sphere", 1.5, 1.0)


def builtin_static_sphere() -> ProblemDefinition:
    """Unit sphere at rest, ``u = 1``."""

    def phi(x, t):
        return np.einsum("...i,...i->...", x, x) - 1.0

    def zero_vec(x, t):
        return np.zeros(np.shape(x))

    def zero_jac(x, t):
        return np.zeros(np.shape(x) + (3,))

    def zero(x, t):
        return np.zeros(np.shape(x)[:-1])

    def one(x, t=0.0):
        return np.ones(np.shape(x)[:-1])

    def closest_point(x, t):
        return x / _radius(x)[..., None]

    return ProblemDefinition(
        name="static_sphere",
        phi=phi,
        velocity=zero_vec,
        velocity_jacobian=zero_jac,
        nu_d=1.0,
        source=zero,
        initial_value=one,
        exact_solution=one,
        closest_point=closest_point,
    )


# Example 2: Lagrangian flow of w = (0.1 x cos t, 0.2 y sin t, 0.2 z cos t)
_DZIUK_RATES = np.array([0.1, 0.2, 0.2])


def _dziuk_log_stretch(t):
    t = np.asarray(t, dtype=float)
    return np.stack([0.1 * np.sin(t), 0.2 * (1.0 - np.cos(t)), 0.2 * np.sin(t)], axis=-1)


def dziuk_inverse_flow(x, t):
    """Back-trace ``x`` at time ``t`` to its position on the initial surface."""
    return np.asarray(x, dtype=float) * np.exp(-_dziuk_log_stretch(t))


def dziuk_flow(y, t):
    return np.asarray(y, dtype=float) * np.exp(_dziuk_log_stretch(t))


def dziuk_initial_level_set(y):
    return (y[..., 0] - y[..., 2] ** 2) ** 2 + y[..., 1] ** 2 + y[..., 2] ** 2 - 1.0


def builtin_dziuk_moving() -> ProblemDefinition:
    def phi(x, t):
        return dziuk_initial_level_set(dziuk_inverse_flow(x, t))

    def factors(t):
        t = np.asarray(t, dtype=float)
        return np.stack([0.1 * np.cos(t), 0.2 * np.sin(t), 0.2 * np.cos(t)], axis=-1)

    def velocity(x, t):
        return factors(t) * x

    def jacobian(x, t):
        d = np.broadcast_to(factors(t), np.shape(x))
        out = np.zeros(np.shape(x) + (3,))
        for i in range(3):
            out[..., i, i] = d[..., i]
        return out

    def source(x, t):
        return np.zeros(np.shape(x)[:-1])

    def u0(x):
        return 1.0 + _xyz(x)

    return ProblemDefinition(
        name="dziuk_moving",
        phi=phi,
        velocity=velocity,
        velocity_jacobian=jacobian,
        nu_d=1.0,
        source=source,
        initial_value=u0,
    )


PROBLEMS = {
    "shrinking_sphere": builtin_shrinking_sphere,
    "shrinking_sphere_exp": builtin_shrinking_sphere_exp,
    "dziuk_moving": builtin_dziuk_moving,
    "expanding_sphere": builtin_expanding_sphere,
    "static_sphere": builtin_static_sphere,
}


def get_problem(name: str, nu_d: Optional[float] = None) -> ProblemDefinition:
    try:
        p = PROBLEMS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return p if nu_d is None else p.with_nu(nu_d)
