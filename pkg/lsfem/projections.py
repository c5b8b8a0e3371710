"""Projection and interpolation operators onto discrete spaces."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from lsfem.assembly import integration_batches
from lsfem.exceptions import DegenerateSpaceError
from lsfem.linalg import solve_spd
from lsfem.mesh import Mesh
from lsfem.problems import ScalarField, VectorField
from lsfem.spaces import (
    DiscreteField,
    FluxSpace,
    ScalarSpace,
    eval_monomial_gradients,
    eval_monomials,
    monomial_exponents,
)

logger = logging.getLogger(__name__)

__all__ = [
    "DiscreteField",
    "PiecewisePolynomial",
    "elliptic_project",
    "hdiv_interpolate",
    "l2_project",
    "nodal_interpolate",
]


@dataclass(frozen=True, eq=False)
class PiecewisePolynomial:
    """Discontinuous field, a polynomial of ``degree`` per cell.

    Each cell's polynomial is expanded in the monomials of its reference
    coordinates; ``coefficients`` has shape (T, number of monomials).
    """

    mesh: Mesh
    degree: int
    coefficients: np.ndarray

    @property
    def exponents(self) -> tuple[tuple[int, int], ...]:
        return monomial_exponents(self.degree)

    def evaluate(
        self, xy: np.ndarray, cells: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Values (nc, nq) and physical gradients (nc, nq, 2) at reference points."""
        coeffs = self.coefficients if cells is None else self.coefficients[cells]
        values = np.einsum("qm,cm->cq", eval_monomials(self.exponents, xy), coeffs)
        reference = np.einsum(
            "qmd,cm->cqd", eval_monomial_gradients(self.exponents, xy), coeffs
        )
        jacobian, _ = self.mesh.jacobians(cells)
        gradients = np.einsum("cji,cqj->cqi", np.linalg.inv(jacobian), reference)
        return values, gradients


def l2_project(
    func: ScalarField,
    mesh: Mesh,
    degree: int,
    quad_degree: int | None = None,
    singular_x: float | None = None,
    singular_splits: int = 0,
) -> PiecewisePolynomial:
    """Elementwise L² projection of ``func(x, y)`` onto P_degree.

    The affine map has constant Jacobian per cell, so the local mass matrix is
    the reference one scaled by |det J| and the scaling cancels.
    """
    exponents = monomial_exponents(degree)
    quad_degree = quad_degree or 2 * degree + 6
    coefficients = np.empty((mesh.num_triangles, len(exponents)))
    for cells, rule in integration_batches(mesh, quad_degree, singular_x, singular_splits):
        xy = rule.coords
        mono = eval_monomials(exponents, xy)
        mass = np.einsum("q,qi,qj->ij", rule.weights, mono, mono)
        X = mesh.map_points(xy, cells)
        values = func(X[..., 0], X[..., 1])
        moments = np.einsum("q,cq,qi->ic", rule.weights, values, mono)
        coefficients[cells] = np.linalg.solve(mass, moments).T
    return PiecewisePolynomial(mesh, degree, coefficients)


def hdiv_interpolate(
    q: VectorField,
    space: FluxSpace,
    singular_x: float | None = None,
    singular_splits: int = 0,
) -> DiscreteField:
    """Canonical RT/BDM interpolant of ``q(x, y)``: matches every edge and
    interior moment of ``q``.

    Reference functionals act on the Piola pull-back det J · J⁻¹ q ∘ F, which
    leaves edge moments unchanged in physical terms. Interior moments on cells
    touching ``singular_x`` use the composite rule of ``singular_splits`` levels.
    """
    mesh, element, dofmap = space.mesh, space.element, space.dofmap
    jacobian, det = mesh.jacobians()
    pull = np.linalg.inv(jacobian) * det[:, None, None]

    def pulled_back(points: np.ndarray, cells: np.ndarray | None = None) -> np.ndarray:
        X = mesh.map_points(points, cells)
        values = q(X[..., 0], X[..., 1])
        return np.einsum("cij,cqj->qci", pull if cells is None else pull[cells], values)

    edge_points = element.edge_points
    nqe = edge_points.shape[1]
    edge_values = pulled_back(edge_points.reshape(-1, 2)).reshape(3, nqe, mesh.num_triangles, 2)
    n_edge = 3 * element.edge_dofs
    local = np.empty((mesh.num_triangles, element.dim))
    local[:, :n_edge] = element.edge_moments(edge_values)
    if element.interior_dofs:
        degree = 2 * element.order + 2
        for cells, rule in integration_batches(mesh, degree, singular_x, singular_splits):
            local[cells, n_edge:] = element.interior_moments(
                pulled_back(rule.coords, cells), rule.coords, rule.weights
            )
    coefficients = np.zeros(dofmap.size)
    coefficients[dofmap.cell_dofs] = local * dofmap.signs
    return DiscreteField(space, coefficients)


def nodal_interpolate(func: ScalarField, space: ScalarSpace) -> DiscreteField:
    """Lagrange interpolant of ``func(x, y)``."""
    return DiscreteField(space, space.interpolate(func))


def elliptic_project(
    grad_u: VectorField,
    space: ScalarSpace,
    sigma: ScalarField,
    boundary_u: ScalarField | None = None,
    quad_degree: int | None = None,
    tol: float = 1e-12,
    singular_x: float | None = None,
    singular_splits: int = 0,
) -> DiscreteField:
    """σ-weighted Ritz projection: (σ∇Πu, ∇v) = (σ∇u, ∇v) for all free v.

    Args:
        grad_u: Exact gradient of the projected function
        space: Lagrange space
        sigma: Positive weight
        boundary_u: Dirichlet values of the projected function (None: zero)
        quad_degree: Quadrature degree (default 2m + 6)
        tol: Solver tolerance

    Raises:
        DegenerateSpaceError: If the space has no free DOF
    """
    mesh, dofmap = space.mesh, space.dofmap
    if dofmap.num_dofs == 0:
        raise DegenerateSpaceError(f"{space.descriptor} has no free DOFs")
    quad_degree = quad_degree or 2 * space.descriptor.order + 6
    rows, cols, vals, rhs = [], [], [], np.zeros(dofmap.size)
    for cells, rule in integration_batches(mesh, quad_degree, singular_x, singular_splits):
        xy = rule.coords
        _, grad = space.basis(xy, cells)
        _, det = mesh.jacobians(cells)
        X = mesh.map_points(xy, cells)
        x, y = X[..., 0], X[..., 1]
        w = rule.weights[None, :] * np.abs(det)[:, None] * np.broadcast_to(sigma(x, y), x.shape)
        local = np.einsum("cq,cqid,cqjd->cij", w, grad, grad)
        load = np.einsum("cq,cqd,cqid->ci", w, grad_u(x, y), grad)
        dofs = dofmap.cell_dofs[cells]
        n = dofs.shape[1]
        rows.append(np.repeat(dofs, n, axis=1).ravel())
        cols.append(np.tile(dofs, (1, n)).ravel())
        vals.append(local.ravel())
        np.add.at(rhs, dofs.ravel(), load.ravel())
    stiffness = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dofmap.size, dofmap.size),
    ).tocsr()

    coefficients = np.zeros(dofmap.size)
    essential, free = dofmap.essential_dofs, dofmap.free_dofs
    if boundary_u is not None:
        coords = dofmap.coordinates[essential]
        coefficients[essential] = boundary_u(coords[:, 0], coords[:, 1])
    reduced = stiffness[free][:, free]
    load = rhs[free] - stiffness[free][:, essential] @ coefficients[essential]
    coefficients[free], report = solve_spd(reduced, load, tol=tol)
    logger.debug("elliptic projection: %d DOFs, %d CG iterations", len(free), report.iterations)
    return DiscreteField(space, coefficients)
