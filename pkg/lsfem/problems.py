"""Manufactured problems on Ω = (−1, 1)².

Every problem solves the first-order system

    σ⁻¹q − ∇u = g,    −∇·q − ω²ηu = f    in Ω,
    u = u_D on Γ_D,   q·n = 0 on Γ_N,

and carries its exact (u, ∇u, q, ∇·q). Callables take coordinate arrays
``(x, y)`` and return arrays of the same shape; vector fields stack their two
components on a trailing axis.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from lsfem.exceptions import ProblemError

logger = logging.getLogger(__name__)

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]

BUILTIN_PROBLEMS = ("smooth1", "smooth-var", "singular", "patch")

# Wavenumbers at or above this converge preasymptotically on the study meshes.
PREASYMPTOTIC_OMEGA = 6.0

CONSISTENCY_POINTS = 50
CONSISTENCY_TOL = 1e-10


def _one(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.ones(np.broadcast(x, y).shape)


def _zero_vector(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.zeros(np.broadcast(x, y).shape + (2,))


@dataclass(frozen=True)
class Problem:
    """Coefficients, data and exact solution of one manufactured problem.

    Attributes:
        name: Identifier used by the CLI and reports
        omega: Wavenumber ω
        sigma: Diffusion coefficient σ > 0
        eta: Reaction weight η
        f: Scalar source
        g: Vector source of the flux equation
        exact_u: Exact scalar solution (None when unknown)
        exact_grad_u: ∇u
        exact_q: q = σ(∇u + g)
        exact_div_q: ∇·q
        boundary_u: Dirichlet data u_D; None means homogeneous
        regularity: Sobolev excess t with u ∈ H^{2+t}; ``math.inf`` for smooth data
        singular_x: Abscissa of a vertical line where u loses regularity
    """

    name: str
    omega: float
    sigma: ScalarField
    eta: ScalarField
    f: ScalarField
    g: VectorField = _zero_vector
    exact_u: ScalarField | None = None
    exact_grad_u: VectorField | None = None
    exact_q: VectorField | None = None
    exact_div_q: ScalarField | None = None
    boundary_u: ScalarField | None = None
    regularity: float = math.inf
    singular_x: float | None = None

    @property
    def has_exact(self) -> bool:
        return None not in (self.exact_u, self.exact_grad_u, self.exact_q, self.exact_div_q)

    @property
    def is_smooth(self) -> bool:
        return math.isinf(self.regularity)

    @property
    def preasymptotic(self) -> bool:
        return abs(self.omega) >= PREASYMPTOTIC_OMEGA

    def consistency_residual(self, points: np.ndarray) -> tuple[float, float]:
        """Largest relative residuals of the two equations at ``points``.

        Returns:
            (max |−∇·q − ω²ηu − f| / scale, max |q − σ(∇u + g)| / scale)

        Raises:
            ProblemError: If the problem has no exact solution
        """
        if not self.has_exact:
            raise ProblemError(f"problem {self.name!r} has no exact solution")
        x, y = points[:, 0], points[:, 1]
        u = self.exact_u(x, y)
        f = self.f(x, y)
        div_q = self.exact_div_q(x, y)
        pde = -div_q - self.omega**2 * self.eta(x, y) * u - f
        pde_scale = 1.0 + np.max(np.abs(f)) + np.max(np.abs(div_q))
        q = self.exact_q(x, y)
        flux = q - self.sigma(x, y)[:, None] * (self.exact_grad_u(x, y) + self.g(x, y))
        flux_scale = 1.0 + np.max(np.abs(q))
        return (
            float(np.max(np.abs(pde)) / pde_scale),
            float(np.max(np.abs(flux)) / flux_scale),
        )

    def check_consistency(self, seed: int = 0) -> None:
        """Verify the data against the exact solution at random points.

        Raises:
            ProblemError: If either residual exceeds 1e-10
        """
        rng = np.random.default_rng(seed)
        points = rng.uniform(-1.0, 1.0, size=(CONSISTENCY_POINTS, 2))
        if self.singular_x is not None:
            close = np.abs(points[:, 0] - self.singular_x) < 1e-3
            points[close, 0] += np.where(points[close, 0] >= self.singular_x, 2e-3, -2e-3)
        pde, flux = self.consistency_residual(points)
        if pde > CONSISTENCY_TOL or flux > CONSISTENCY_TOL:
            raise ProblemError(
                f"problem {self.name!r} is inconsistent: PDE residual {pde:.2e}, "
                f"flux residual {flux:.2e}"
            )
        logger.debug("problem %s consistent (pde %.1e, flux %.1e)", self.name, pde, flux)


# u = (x² − 1)(y² − 1)eˣ = a(x) b(y)
def _a(x):
    return (x**2 - 1.0) * np.exp(x)


def _da(x):
    return (x**2 + 2.0 * x - 1.0) * np.exp(x)


def _d2a(x):
    return (x**2 + 4.0 * x + 1.0) * np.exp(x)


def _smooth_u(x, y):
    return _a(x) * (y**2 - 1.0)


def _smooth_grad(x, y):
    return np.stack([_da(x) * (y**2 - 1.0), 2.0 * y * _a(x)], axis=-1)


def _smooth_laplacian(x, y):
    return _d2a(x) * (y**2 - 1.0) + 2.0 * _a(x)


def _smooth1(omega: float) -> Problem:
    def f(x, y):
        return -_smooth_laplacian(x, y) - omega**2 * _smooth_u(x, y)

    return Problem(
        name="smooth1",
        omega=omega,
        sigma=_one,
        eta=_one,
        f=f,
        exact_u=_smooth_u,
        exact_grad_u=_smooth_grad,
        exact_q=_smooth_grad,
        exact_div_q=_smooth_laplacian,
    )


def _smooth_var(omega: float) -> Problem:
    def sigma(x, y):
        return x**2 + y**2 + 1.0

    def eta(x, y):
        return (x**2 - x) * (y**2 - y)

    def q(x, y):
        return sigma(x, y)[..., None] * _smooth_grad(x, y)

    def div_q(x, y):
        grad = _smooth_grad(x, y)
        return 2.0 * x * grad[..., 0] + 2.0 * y * grad[..., 1] + sigma(x, y) * _smooth_laplacian(x, y)

    def f(x, y):
        return -div_q(x, y) - omega**2 * eta(x, y) * _smooth_u(x, y)

    return Problem(
        name="smooth-var",
        omega=omega,
        sigma=sigma,
        eta=eta,
        f=f,
        exact_u=_smooth_u,
        exact_grad_u=_smooth_grad,
        exact_q=q,
        exact_div_q=div_q,
    )


# u = v(x) w(y), v = x|x|^{3/4}(1 − x²), w = 1 − y²
def _v(x):
    return np.sign(x) * np.abs(x) ** 1.75 * (1.0 - x**2)


def _dv(x):
    ax = np.abs(x)
    return 1.75 * ax**0.75 - 3.75 * ax**2.75


def _d2v(x):
    ax = np.abs(x)
    safe = np.where(ax > 0.0, ax, 1.0)
    return np.where(ax > 0.0, np.sign(x) * (21.0 - 165.0 * x**2) / (16.0 * safe**0.25), 0.0)


def _singular(omega: float) -> Problem:
    if omega != 0.0:
        raise ProblemError(f"problem 'singular' is defined for ω = 0 only, got ω = {omega}")

    def u(x, y):
        return _v(x) * (1.0 - y**2)

    def grad(x, y):
        return np.stack([_dv(x) * (1.0 - y**2), -2.0 * y * _v(x)], axis=-1)

    def div_q(x, y):
        return _d2v(x) * (1.0 - y**2) - 2.0 * _v(x)

    def f(x, y):
        return -_d2v(x) * (1.0 - y**2) + 2.0 * _v(x)

    return Problem(
        name="singular",
        omega=0.0,
        sigma=_one,
        eta=_one,
        f=f,
        exact_u=u,
        exact_grad_u=grad,
        exact_q=grad,
        exact_div_q=div_q,
        regularity=0.25,
        singular_x=0.0,
    )


def _patch(omega: float) -> Problem:
    def u(x, y):
        return 1.0 + x + 2.0 * y + x**2 - x * y + 0.5 * y**2

    def grad(x, y):
        return np.stack([1.0 + 2.0 * x - y, 2.0 - x + y], axis=-1)

    def div_q(x, y):
        return np.full(np.broadcast(x, y).shape, 3.0)

    def f(x, y):
        return -3.0 - omega**2 * u(x, y)

    return Problem(
        name="patch",
        omega=omega,
        sigma=_one,
        eta=_one,
        f=f,
        exact_u=u,
        exact_grad_u=grad,
        exact_q=grad,
        exact_div_q=div_q,
        boundary_u=u,
    )


_FACTORIES = {
    "smooth1": (_smooth1, 1.0),
    "smooth-var": (_smooth_var, 1.0),
    "singular": (_singular, 0.0),
    "patch": (_patch, 1.0),
}


@lru_cache(maxsize=64)
def _checked(name: str, omega: float) -> Problem:
    factory, _ = _FACTORIES[name]
    problem = factory(omega)
    problem.check_consistency()
    return problem


def builtin(name: str, omega: float | None = None) -> Problem:
    """Return a built-in problem, self-checked once per (name, ω).

    Args:
        name: One of ``smooth1``, ``smooth-var``, ``singular``, ``patch``
        omega: Wavenumber; defaults to 1 (0 for ``singular``)

    Raises:
        ProblemError: For an unknown name, an ω the problem does not admit, or
            failed consistency
    """
    if name not in _FACTORIES:
        raise ProblemError(
            f"unknown problem {name!r}; choose one of {', '.join(BUILTIN_PROBLEMS)}"
        )
    if omega is None:
        omega = _FACTORIES[name][1]
    problem = _checked(name, float(omega))
    if problem.preasymptotic:
        warnings.warn(
            f"ω = {problem.omega:g} converges slowly on coarse meshes; "
            "its rates are reported but not gated",
            stacklevel=2,
        )
    return problem


def regularity_hint(problem: Problem) -> float:
    """Sobolev excess t with u ∈ H^{2+t}; singular data stay just below the value."""
    return problem.regularity
