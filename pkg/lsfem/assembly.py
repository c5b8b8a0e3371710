"""Assembly of the div least-squares system.

For (q, u) ∈ P_h × V_h and test pair (p, v) the bilinear form is

    a(q, u; p, v) = (σ(σ⁻¹q − ∇u), σ⁻¹p − ∇v) + (∇·q + ω²ηu, ∇·p + ω²ηv)

with right-hand side (σg, σ⁻¹p − ∇v) − (f, ∇·p + ω²ηv). Unknowns are ordered
flux block first, scalar block second; essential DOFs (scalar DOFs on Γ_D,
flux DOFs on Γ_N) are eliminated and their values moved to the right-hand side.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from lsfem.exceptions import CoefficientError
from lsfem.mesh import Mesh
from lsfem.problems import Problem
from lsfem.quadrature import QuadratureRule, refined_triangle_rule, triangle_rule
from lsfem.spaces import DiscreteField, DofMap, FluxSpace, ScalarSpace

logger = logging.getLogger(__name__)

CHUNK_SIZE = 256
THREADS_ENV = "LSFEM_THREADS"


def worker_count(requested: int | None = None) -> int:
    """Number of worker threads, capped by ``$LSFEM_THREADS``."""
    count = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            count = min(count, max(1, int(cap)))
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", THREADS_ENV, cap)
    return count


def default_degree(flux: FluxSpace, scalar: ScalarSpace) -> int:
    """Quadrature degree exact for every mass/stiffness product of the pair."""
    return 2 * max(flux.descriptor.degree, scalar.descriptor.degree) + 2


def singular_cells(mesh: Mesh, singular_x: float | None) -> np.ndarray:
    """Mask of cells whose closure touches the vertical line x = singular_x."""
    if singular_x is None:
        return np.zeros(mesh.num_triangles, dtype=bool)
    x = mesh.vertices[mesh.triangles, 0]
    tol = 1e-12 * (1.0 + abs(singular_x))
    return (x.min(axis=1) <= singular_x + tol) & (x.max(axis=1) >= singular_x - tol)


def integration_batches(
    mesh: Mesh,
    degree: int,
    singular_x: float | None = None,
    splits: int = 0,
    chunk_size: int = CHUNK_SIZE,
) -> Iterator[tuple[np.ndarray, QuadratureRule]]:
    """Yield (cells, rule) chunks in ascending cell order.

    Cells touching the singular line use the composite rule with ``splits``
    refinement levels; all others the plain rule of ``degree``.
    """
    special = singular_cells(mesh, singular_x) if splits > 0 else None
    rule = triangle_rule(degree)
    groups = [(np.arange(mesh.num_triangles), rule)]
    if special is not None and special.any():
        groups = [
            (np.flatnonzero(~special), rule),
            (np.flatnonzero(special), refined_triangle_rule(degree, splits)),
        ]
    for cells, group_rule in groups:
        for start in range(0, len(cells), chunk_size):
            yield cells[start : start + chunk_size], group_rule


@dataclass(frozen=True, eq=False)
class BlockLayout:
    """Map between the reduced unknown vector and full coefficient vectors."""

    flux: DofMap
    scalar: DofMap

    @property
    def full_size(self) -> int:
        return self.flux.size + self.scalar.size

    @property
    def free(self) -> np.ndarray:
        """Full-numbering indices of the unknowns, flux block first."""
        return np.concatenate([self.flux.free_dofs, self.flux.size + self.scalar.free_dofs])

    @property
    def essential(self) -> np.ndarray:
        return np.concatenate(
            [self.flux.essential_dofs, self.flux.size + self.scalar.essential_dofs]
        )

    @property
    def size(self) -> int:
        return self.flux.num_dofs + self.scalar.num_dofs

    def expand(self, x: np.ndarray, lifting: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Full flux and scalar coefficient vectors from reduced unknowns."""
        full = np.zeros(self.full_size) if lifting is None else lifting.copy()
        full[self.free] = x
        return full[: self.flux.size], full[self.flux.size :]

    def restrict(self, q: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.concatenate([q, u])[self.free]


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Reduced SPD system and what is needed to rebuild full fields.

    Attributes:
        matrix: Reduced matrix over free DOFs (flux block, then scalar block)
        rhs: Reduced right-hand side, essential values already eliminated
        layout: Block layout of the unknowns
        lifting: Full coefficient vector holding the essential values
        full_matrix: Matrix over the full numbering, before elimination
        full_rhs: Right-hand side over the full numbering
    """

    matrix: scipy.sparse.csr_matrix
    rhs: np.ndarray
    layout: BlockLayout
    lifting: np.ndarray
    full_matrix: scipy.sparse.csr_matrix
    full_rhs: np.ndarray

    @property
    def num_flux(self) -> int:
        return self.layout.flux.num_dofs

    def flux_block(self) -> scipy.sparse.csr_matrix:
        n = self.num_flux
        return self.matrix[:n, :n]

    def scalar_block(self) -> scipy.sparse.csr_matrix:
        n = self.num_flux
        return self.matrix[n:, n:]

    def coupling_blocks(self) -> tuple[scipy.sparse.csr_matrix, scipy.sparse.csr_matrix]:
        """(flux-row/scalar-column, scalar-row/flux-column) blocks."""
        n = self.num_flux
        return self.matrix[:n, n:], self.matrix[n:, :n]


@dataclass(frozen=True)
class _Quadrature:
    points: np.ndarray
    weights: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray


def _sample(
    mesh: Mesh, problem: Problem, cells: np.ndarray, rule: QuadratureRule
) -> tuple[np.ndarray, _Quadrature]:
    xy = rule.coords
    X = mesh.map_points(xy, cells)
    _, det = mesh.jacobians(cells)
    weights = rule.weights[None, :] * np.abs(det)[:, None]
    x, y = X[..., 0], X[..., 1]
    sigma = np.broadcast_to(problem.sigma(x, y), x.shape)
    invalid = ~((sigma > 0.0) & np.isfinite(sigma))
    if invalid.any():
        bad = np.argwhere(invalid)[0]
        raise CoefficientError(
            f"σ = {sigma[tuple(bad)]:g} at ({x[tuple(bad)]:.6g}, {y[tuple(bad)]:.6g}) "
            f"in cell {int(cells[bad[0]])}; σ must be positive"
        )
    eta = np.broadcast_to(problem.eta(x, y), x.shape)
    return xy, _Quadrature(X, weights, sigma, eta)


def _element_blocks(
    flux: FluxSpace,
    scalar: ScalarSpace,
    problem: Problem,
    cells: np.ndarray,
    rule: QuadratureRule,
) -> tuple[np.ndarray, np.ndarray]:
    xy, quad = _sample(flux.mesh, problem, cells, rule)
    w, sigma, eta = quad.weights, quad.sigma, quad.eta
    om2 = problem.omega**2
    phi, div = flux.basis(xy, cells)
    psi, grad = scalar.basis(xy, cells)
    x, y = quad.points[..., 0], quad.points[..., 1]
    f = problem.f(x, y)
    g = problem.g(x, y)

    a_qq = np.einsum("cq,cqid,cqjd->cij", w / sigma, phi, phi) + np.einsum(
        "cq,cqi,cqj->cij", w, div, div
    )
    a_qu = -np.einsum("cq,cqid,cqjd->cij", w, phi, grad) + om2 * np.einsum(
        "cq,cqi,cqj->cij", w * eta, div, psi
    )
    a_uu = np.einsum("cq,cqid,cqjd->cij", w * sigma, grad, grad) + om2**2 * np.einsum(
        "cq,cqi,cqj->cij", w * eta**2, psi, psi
    )
    b_q = np.einsum("cq,cqd,cqid->ci", w, g, phi) - np.einsum("cq,cq,cqi->ci", w, f, div)
    b_u = -np.einsum("cq,cqd,cqid->ci", w * sigma, g, grad) - om2 * np.einsum(
        "cq,cq,cqi->ci", w * eta, f, psi
    )
    matrix = np.block([[a_qq, a_qu], [a_qu.transpose(0, 2, 1), a_uu]])
    return matrix, np.concatenate([b_q, b_u], axis=1)


def _lifting(layout: BlockLayout, scalar: ScalarSpace, problem: Problem) -> np.ndarray:
    lifting = np.zeros(layout.full_size)
    if problem.boundary_u is not None:
        dofs = layout.scalar.essential_dofs
        coords = layout.scalar.coordinates[dofs]
        lifting[layout.flux.size + dofs] = problem.boundary_u(coords[:, 0], coords[:, 1])
    return lifting


def assemble(
    flux: FluxSpace,
    scalar: ScalarSpace,
    problem: Problem,
    degree: int | None = None,
    *,
    singular_splits: int = 0,
    workers: int | None = None,
    sequential: bool = False,
) -> SparseSystem:
    """Assemble the least-squares system of ``problem`` on the pair of spaces.

    Args:
        flux: Flux space (RT or BDM)
        scalar: Scalar space (Lagrange), on the same mesh
        problem: Coefficients and data
        degree: Quadrature degree (default: ``default_degree``)
        singular_splits: Composite-rule levels for cells touching the singular
            line of the problem (0 disables)
        workers: Thread count for element chunks (capped by ``$LSFEM_THREADS``)
        sequential: Compute chunks in the calling thread

    Raises:
        CoefficientError: If σ ≤ 0 at a quadrature point
    """
    if flux.mesh is not scalar.mesh:
        raise ValueError("flux and scalar spaces live on different meshes")
    mesh = flux.mesh
    degree = degree or default_degree(flux, scalar)
    layout = BlockLayout(flux.dofmap, scalar.dofmap)
    local_dofs = np.hstack([flux.dofmap.cell_dofs, flux.dofmap.size + scalar.dofmap.cell_dofs])
    batches = list(
        integration_batches(mesh, degree, problem.singular_x, singular_splits)
    )

    def work(batch: tuple[np.ndarray, QuadratureRule]) -> tuple[np.ndarray, ...]:
        cells, rule = batch
        matrix, rhs = _element_blocks(flux, scalar, problem, cells, rule)
        dofs = local_dofs[cells]
        n = dofs.shape[1]
        rows = np.repeat(dofs, n, axis=1).ravel()
        cols = np.tile(dofs, (1, n)).ravel()
        return rows, cols, matrix.ravel(), dofs.ravel(), rhs.ravel()

    if sequential or len(batches) == 1:
        parts = [work(batch) for batch in batches]
    else:
        with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
            parts = list(pool.map(work, batches))

    rows, cols, vals, rhs_rows, rhs_vals = (np.concatenate(p) for p in zip(*parts))
    size = layout.full_size
    full = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    full_rhs = np.bincount(rhs_rows, weights=rhs_vals, minlength=size)

    lifting = _lifting(layout, scalar, problem)
    free, essential = layout.free, layout.essential
    reduced = full[free][:, free].tocsr()
    rhs = full_rhs[free] - full[free][:, essential] @ lifting[essential]
    logger.debug(
        "assembled %s/%s on %d cells: %d unknowns, nnz=%d",
        flux.descriptor, scalar.descriptor, mesh.num_triangles, layout.size, reduced.nnz,
    )
    return SparseSystem(reduced, rhs, layout, lifting, full, full_rhs)


def solution_fields(
    system: SparseSystem, flux: FluxSpace, scalar: ScalarSpace, x: np.ndarray
) -> tuple[DiscreteField, DiscreteField]:
    """Discrete (q_h, u_h) from the reduced solution vector."""
    q, u = system.layout.expand(x, system.lifting)
    return DiscreteField(flux, q), DiscreteField(scalar, u)


def error_form(
    problem: Problem,
    q_h: DiscreteField,
    u_h: DiscreteField,
    p_h: DiscreteField,
    v_h: DiscreteField,
    degree: int | None = None,
    singular_splits: int = 0,
) -> float:
    """a(q − q_h, u − u_h; p_h, v_h) by quadrature with the exact (q, u).

    Zero up to quadrature and solver error for the discrete solution (Galerkin
    orthogonality).
    """
    flux, scalar = q_h.space, u_h.space
    mesh = flux.mesh
    degree = degree or default_degree(flux, scalar) + 4
    om2 = problem.omega**2
    total = 0.0
    for cells, rule in integration_batches(mesh, degree, problem.singular_x, singular_splits):
        xy, quad = _sample(mesh, problem, cells, rule)
        x, y = quad.points[..., 0], quad.points[..., 1]
        qh, div_qh = q_h.evaluate(xy, cells)
        uh, grad_uh = u_h.evaluate(xy, cells)
        p, div_p = p_h.evaluate(xy, cells)
        v, grad_v = v_h.evaluate(xy, cells)
        e_q = problem.exact_q(x, y) - qh
        e_div = problem.exact_div_q(x, y) - div_qh
        e_u = problem.exact_u(x, y) - uh
        e_grad = problem.exact_grad_u(x, y) - grad_uh
        sigma = quad.sigma[..., None]
        first = np.sum((e_q / sigma - e_grad) * sigma * (p / sigma - grad_v), axis=-1)
        second = (e_div + om2 * quad.eta * e_u) * (div_p + om2 * quad.eta * v)
        total += float(np.sum(quad.weights * (first + second)))
    return total
