"""Reference elements, Piola transforms and global DOF maps.

Scalar spaces are nodal Lagrange P1..P3. Flux spaces are RT0..RT2 and BDM1..BDM2;
their shape functions are the dual basis of the moment functionals

* edge moments ∫_e v·n L_j ds against shifted Legendre polynomials L_j, j <= k,
* interior moments against [P_{k-1}]² (RT_k) or ∇P_{k-1} ⊕ curl(b_T P_{k-2})
  (BDM_k, b_T the cubic bubble).

Edge moments use Legendre polynomials because reversing the edge parameter only
multiplies L_j by (-1)^j; together with the normal flip, the global DOF j of an
edge equals the local one times sign^(j+1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

from lsfem.exceptions import DegenerateSpaceError, UnsupportedElementError
from lsfem.mesh import DIRICHLET, NEUMANN, Mesh
from lsfem.quadrature import REFERENCE_VERTICES, edge_rule, triangle_rule
from lsfem.types import SpaceDescriptor

logger = logging.getLogger(__name__)

# Local edge i runs from vertex i+1 to vertex i+2; normals are the tangents
# rotated clockwise, i.e. outward and scaled by the edge length.
REFERENCE_EDGES = np.array([[1, 2], [2, 0], [0, 1]])
_TANGENTS = REFERENCE_VERTICES[REFERENCE_EDGES[:, 1]] - REFERENCE_VERTICES[REFERENCE_EDGES[:, 0]]
REFERENCE_NORMALS = np.column_stack([_TANGENTS[:, 1], -_TANGENTS[:, 0]])


def monomial_exponents(degree: int) -> tuple[tuple[int, int], ...]:
    """Exponents (a, b) of x^a y^b with a + b <= degree, graded order."""
    return tuple((total - b, b) for total in range(degree + 1) for b in range(total + 1))


def eval_monomials(exponents: tuple[tuple[int, int], ...], xy: np.ndarray) -> np.ndarray:
    """Monomial values, shape (nq, len(exponents))."""
    x, y = xy[:, 0], xy[:, 1]
    return np.column_stack([x**a * y**b for a, b in exponents])


def eval_monomial_gradients(
    exponents: tuple[tuple[int, int], ...], xy: np.ndarray
) -> np.ndarray:
    """Monomial gradients, shape (nq, len(exponents), 2)."""
    x, y = xy[:, 0], xy[:, 1]
    zero = np.zeros_like(x)
    columns = []
    for a, b in exponents:
        dx = a * x ** (a - 1) * y**b if a > 0 else zero
        dy = b * x**a * y ** (b - 1) if b > 0 else zero
        columns.append(np.stack([dx, dy], axis=-1))
    return np.stack(columns, axis=1)


@dataclass(frozen=True, eq=False)
class ScalarElement:
    """Nodal Lagrange element of order m on the reference triangle.

    Attributes:
        order: Polynomial order m
        nodes: Reference nodes: 3 vertices, then m-1 nodes per local edge in the
            local edge direction, then interior nodes
        exponents: Monomial basis the shape functions are expanded in
        coefficients: Expansion coefficients, shape (len(exponents), dim)
    """

    order: int
    nodes: np.ndarray
    exponents: tuple[tuple[int, int], ...]
    coefficients: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def edge_nodes(self) -> int:
        return self.order - 1

    @property
    def interior_nodes(self) -> int:
        return (self.order - 1) * (self.order - 2) // 2


@lru_cache(maxsize=None)
def scalar_element(order: int) -> ScalarElement:
    """The reference P_m element, m in 1..3."""
    if not 1 <= order <= 3:
        raise UnsupportedElementError(f"Lagrange order must be in 1..3, got {order}")
    nodes = [REFERENCE_VERTICES[i] for i in range(3)]
    for start, stop in REFERENCE_EDGES:
        a, b = REFERENCE_VERTICES[start], REFERENCE_VERTICES[stop]
        nodes.extend(a + (j / order) * (b - a) for j in range(1, order))
    nodes.extend(
        np.array([i / order, j / order])
        for j in range(1, order)
        for i in range(1, order - j)
    )
    nodes_array = np.array(nodes)
    exponents = monomial_exponents(order)
    vandermonde = eval_monomials(exponents, nodes_array)
    return ScalarElement(order, nodes_array, exponents, np.linalg.inv(vandermonde))


def eval_scalar(element: ScalarElement, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference shape function values (nq, dim) and gradients (nq, dim, 2)."""
    xy = np.atleast_2d(xy)
    values = eval_monomials(element.exponents, xy) @ element.coefficients
    gradients = np.einsum(
        "qmd,mn->qnd", eval_monomial_gradients(element.exponents, xy), element.coefficients
    )
    return values, gradients


@dataclass(frozen=True, eq=False)
class FluxElement:
    """RT_k or BDM_k element on the reference triangle.

    Shape functions are stored as vector polynomials over ``exponents``:
    ``basis[j, c, m]`` is the coefficient of monomial m in component c of shape
    function j. Local DOFs are ordered edge 0, edge 1, edge 2 (k+1 moments
    each), then interior moments.
    """

    family: str
    order: int
    exponents: tuple[tuple[int, int], ...]
    basis: np.ndarray
    edge_points: np.ndarray
    edge_weights: np.ndarray
    edge_tests: np.ndarray
    interior_points: np.ndarray
    interior_weights: np.ndarray
    interior_tests: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def edge_dofs(self) -> int:
        return self.order + 1

    @property
    def interior_dofs(self) -> int:
        return self.dim - 3 * self.edge_dofs

    @property
    def div_degree(self) -> int:
        return self.order if self.family == "RT" else self.order - 1

    def apply_dofs(self, edge_values: np.ndarray, interior_values: np.ndarray) -> np.ndarray:
        """Evaluate the DOF functionals on sampled reference vector fields.

        Args:
            edge_values: Field samples at ``edge_points``, shape (3, nqe, B, 2)
            interior_values: Field samples at ``interior_points``, shape (nqi, B, 2)

        Returns:
            DOF values, shape (B, dim)
        """
        return np.concatenate(
            [self.edge_moments(edge_values), self.interior_moments(interior_values)], axis=1
        )

    def edge_moments(self, edge_values: np.ndarray) -> np.ndarray:
        """Normal moments on edges 0, 1, 2, shape (B, 3 * edge_dofs)."""
        moments = []
        for i in range(3):
            flux = np.einsum("qbc,c->qb", edge_values[i], REFERENCE_NORMALS[i])
            moments.append(np.einsum("q,qj,qb->bj", self.edge_weights, self.edge_tests, flux))
        return np.concatenate(moments, axis=1)

    def interior_moments(
        self,
        interior_values: np.ndarray,
        points: np.ndarray | None = None,
        weights: np.ndarray | None = None,
    ) -> np.ndarray:
        """Interior moments, shape (B, interior_dofs).

        ``points`` and ``weights`` replace the element's own interior rule.
        """
        if points is None:
            weights, tests = self.interior_weights, self.interior_tests
        else:
            tests = _interior_tests(self.family, self.order, points)
        return np.einsum("q,qbc,qlc->bl", weights, interior_values, tests)


def _vector_poly_eval(
    polys: np.ndarray, exponents: tuple[tuple[int, int], ...], xy: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    values = np.einsum("qm,pcm->qpc", eval_monomials(exponents, xy), polys)
    divergence = np.einsum("qmc,pcm->qp", eval_monomial_gradients(exponents, xy), polys)
    return values, divergence


def _prime_basis(family: str, order: int) -> tuple[tuple[tuple[int, int], ...], np.ndarray]:
    degree = order + 1 if family == "RT" else order
    exponents = monomial_exponents(degree)
    index = {exp: i for i, exp in enumerate(exponents)}
    polys = []
    for exp in monomial_exponents(order):
        for component in range(2):
            poly = np.zeros((2, len(exponents)))
            poly[component, index[exp]] = 1.0
            polys.append(poly)
    if family == "RT":
        for a, b in exponents:
            if a + b != order:
                continue
            poly = np.zeros((2, len(exponents)))
            poly[0, index[(a + 1, b)]] = 1.0
            poly[1, index[(a, b + 1)]] = 1.0
            polys.append(poly)
    return exponents, np.array(polys)


def _interior_tests(family: str, order: int, xy: np.ndarray) -> np.ndarray:
    x, y = xy[:, 0], xy[:, 1]
    tests = []
    if family == "RT":
        if order > 0:
            for column in eval_monomials(monomial_exponents(order - 1), xy).T:
                tests.append(np.stack([column, np.zeros_like(x)], axis=-1))
                tests.append(np.stack([np.zeros_like(x), column], axis=-1))
    else:
        gradients = eval_monomial_gradients(monomial_exponents(order - 1), xy)
        tests.extend(gradients[:, m, :] for m in range(1, gradients.shape[1]))
        if order >= 2:
            bubble = x * y * (1.0 - x - y)
            bubble_grad = np.stack([y * (1.0 - 2.0 * x - y), x * (1.0 - x - 2.0 * y)], axis=-1)
            exps = monomial_exponents(order - 2)
            mono = eval_monomials(exps, xy)
            mono_grad = eval_monomial_gradients(exps, xy)
            for m in range(len(exps)):
                grad = mono[:, m, None] * bubble_grad + bubble[:, None] * mono_grad[:, m, :]
                tests.append(np.stack([grad[:, 1], -grad[:, 0]], axis=-1))
    if not tests:
        return np.zeros((len(xy), 0, 2))
    return np.stack(tests, axis=1)


@lru_cache(maxsize=None)
def flux_element(family: str, order: int) -> FluxElement:
    """The reference RT_k (k in 0..2) or BDM_k (k in 1..2) element."""
    descriptor = SpaceDescriptor(family, order)
    if not descriptor.is_flux:
        raise UnsupportedElementError(f"{descriptor} is not a flux space")
    exponents, prime = _prime_basis(family, order)

    erule = edge_rule(2 * order + 2)
    t = erule.coords
    edge_points = np.stack(
        [
            REFERENCE_VERTICES[a] + t[:, None] * (REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a])
            for a, b in REFERENCE_EDGES
        ]
    )
    edge_tests = legendre.legvander(2.0 * t - 1.0, order)
    trule = triangle_rule(2 * order + 2)
    interior_tests = _interior_tests(family, order, trule.coords)

    element = FluxElement(
        family=family,
        order=order,
        exponents=exponents,
        basis=prime,
        edge_points=edge_points,
        edge_weights=erule.weights,
        edge_tests=edge_tests,
        interior_points=trule.coords,
        interior_weights=trule.weights,
        interior_tests=interior_tests,
    )
    edge_values = np.stack([_vector_poly_eval(prime, exponents, p)[0] for p in edge_points])
    interior_values = _vector_poly_eval(prime, exponents, trule.coords)[0]
    moments = element.apply_dofs(edge_values, interior_values)
    if moments.shape[0] != moments.shape[1]:
        raise UnsupportedElementError(
            f"{descriptor}: {moments.shape[0]} shape functions but {moments.shape[1]} DOFs"
        )
    dual = np.linalg.inv(moments.T)
    return replace(element, basis=np.einsum("pj,pcm->jcm", dual, prime))


def eval_flux(element: FluxElement, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference shape function values (nq, dim, 2) and divergences (nq, dim)."""
    return _vector_poly_eval(element.basis, element.exponents, np.atleast_2d(xy))


def piola_map(
    jacobian: np.ndarray,
    det: np.ndarray,
    values: np.ndarray,
    divergence: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Contravariant Piola transform v = J v̂ / det J, ∇·v = ∇̂·v̂ / det J.

    Args:
        jacobian: Cell Jacobians, shape (nc, 2, 2)
        det: Jacobian determinants, shape (nc,)
        values: Reference vector values, shape (nq, n, 2)
        divergence: Reference divergences, shape (nq, n)

    Returns:
        Physical values (nc, nq, n, 2) and divergences (nc, nq, n)
    """
    physical = np.einsum("cij,qnj->cqni", jacobian, values) / det[:, None, None, None]
    return physical, divergence[None, :, :] / det[:, None, None]


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering of one space on one mesh.

    Numbering is over all DOFs, essential ones included; ``essential`` marks the
    DOFs fixed by boundary conditions (scalar DOFs on Γ_D, flux DOFs on Γ_N).

    Attributes:
        descriptor: The space
        cell_dofs: Global index of each local DOF, shape (T, dim)
        signs: Factor turning a global basis function into the local one, shape (T, dim)
        essential: Boundary-condition flag per global DOF, shape (size,)
        coordinates: Lagrange node coordinates (scalar spaces only), shape (size, 2)
    """

    descriptor: SpaceDescriptor
    cell_dofs: np.ndarray
    signs: np.ndarray
    essential: np.ndarray
    coordinates: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.essential)

    @property
    def num_dofs(self) -> int:
        """Number of free (unknown) DOFs."""
        return int(np.count_nonzero(~self.essential))

    @property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.essential)

    @property
    def essential_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.essential)


def _scalar_dofmap(mesh: Mesh, descriptor: SpaceDescriptor) -> DofMap:
    element = scalar_element(descriptor.order)
    nv, ne, nt = mesh.num_vertices, mesh.num_edges, mesh.num_triangles
    per_edge, per_cell = element.edge_nodes, element.interior_nodes
    size = nv + ne * per_edge + nt * per_cell

    cell_dofs = np.empty((nt, element.dim), dtype=np.int64)
    cell_dofs[:, :3] = mesh.triangles
    column = 3
    for i in range(3):
        edge = mesh.tri_edges[:, i]
        forward = mesh.tri_edge_signs[:, i] > 0
        for j in range(per_edge):
            cell_dofs[:, column] = nv + edge * per_edge + np.where(forward, j, per_edge - 1 - j)
            column += 1
    for j in range(per_cell):
        cell_dofs[:, column] = nv + ne * per_edge + np.arange(nt) * per_cell + j
        column += 1

    essential = np.zeros(size, dtype=bool)
    dirichlet = np.flatnonzero(mesh.edge_tags == DIRICHLET)
    essential[mesh.edges[dirichlet].ravel()] = True
    for j in range(per_edge):
        essential[nv + dirichlet * per_edge + j] = True

    coordinates = np.empty((size, 2))
    coordinates[cell_dofs] = mesh.map_points(element.nodes)
    return DofMap(descriptor, cell_dofs, np.ones(cell_dofs.shape), essential, coordinates)


def _flux_dofmap(mesh: Mesh, descriptor: SpaceDescriptor) -> DofMap:
    element = flux_element(descriptor.family, descriptor.order)
    ne, nt = mesh.num_edges, mesh.num_triangles
    per_edge, per_cell = element.edge_dofs, element.interior_dofs
    size = ne * per_edge + nt * per_cell

    cell_dofs = np.empty((nt, element.dim), dtype=np.int64)
    signs = np.ones((nt, element.dim))
    for i in range(3):
        for j in range(per_edge):
            column = i * per_edge + j
            cell_dofs[:, column] = mesh.tri_edges[:, i] * per_edge + j
            if j % 2 == 0:
                signs[:, column] = mesh.tri_edge_signs[:, i]
    for j in range(per_cell):
        cell_dofs[:, 3 * per_edge + j] = ne * per_edge + np.arange(nt) * per_cell + j

    essential = np.zeros(size, dtype=bool)
    neumann = np.flatnonzero(mesh.edge_tags == NEUMANN)
    for j in range(per_edge):
        essential[neumann * per_edge + j] = True
    return DofMap(descriptor, cell_dofs, signs, essential)


def build_dofmap(mesh: Mesh, descriptor: SpaceDescriptor | str) -> DofMap:
    """Number the DOFs of ``descriptor`` on ``mesh``.

    Raises:
        UnsupportedElementError: If the descriptor names no implemented space
        DegenerateSpaceError: If a scalar space has no free DOF
    """
    if isinstance(descriptor, str):
        descriptor = SpaceDescriptor.parse(descriptor)
    dofmap = _flux_dofmap(mesh, descriptor) if descriptor.is_flux else _scalar_dofmap(mesh, descriptor)
    if dofmap.num_dofs == 0:
        raise DegenerateSpaceError(
            f"{descriptor} has no free DOFs on this mesh ({mesh.num_triangles} triangles, "
            "all scalar nodes on the Dirichlet boundary); refine the mesh"
        )
    logger.debug("%s: %d DOFs (%d free)", descriptor, dofmap.size, dofmap.num_dofs)
    return dofmap


def _cell_index(cells: np.ndarray | None) -> np.ndarray | slice:
    return slice(None) if cells is None else cells


class ScalarSpace:
    """A Lagrange space on a mesh: reference element, DOF map and evaluation."""

    def __init__(self, mesh: Mesh, descriptor: SpaceDescriptor | str) -> None:
        self.mesh = mesh
        self.dofmap = build_dofmap(mesh, descriptor)
        self.descriptor = self.dofmap.descriptor
        self.element = scalar_element(self.descriptor.order)

    def basis(
        self, xy: np.ndarray, cells: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Physical shape function values (nc, nq, dim) and gradients (nc, nq, dim, 2)."""
        values, gradients = eval_scalar(self.element, xy)
        jacobian, _ = self.mesh.jacobians(cells)
        inverse = np.linalg.inv(jacobian)
        physical = np.einsum("cji,qnj->cqni", inverse, gradients)
        return np.broadcast_to(values, physical.shape[:-1]), physical

    def evaluate(
        self, coefficients: np.ndarray, xy: np.ndarray, cells: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Field values (nc, nq) and gradients (nc, nq, 2)."""
        local = coefficients[self.dofmap.cell_dofs[_cell_index(cells)]]
        values, gradients = self.basis(xy, cells)
        return (
            np.einsum("cqn,cn->cq", values, local),
            np.einsum("cqnd,cn->cqd", gradients, local),
        )

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolation coefficients of ``func(x, y)``."""
        coords = self.dofmap.coordinates
        return np.asarray(func(coords[:, 0], coords[:, 1]), dtype=float)


class FluxSpace:
    """An RT or BDM space on a mesh: reference element, DOF map and evaluation."""

    def __init__(self, mesh: Mesh, descriptor: SpaceDescriptor | str) -> None:
        self.mesh = mesh
        self.dofmap = build_dofmap(mesh, descriptor)
        self.descriptor = self.dofmap.descriptor
        self.element = flux_element(self.descriptor.family, self.descriptor.order)

    def basis(
        self, xy: np.ndarray, cells: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Signed physical shape functions (nc, nq, dim, 2) and divergences (nc, nq, dim)."""
        values, divergence = eval_flux(self.element, xy)
        jacobian, det = self.mesh.jacobians(cells)
        physical, physical_div = piola_map(jacobian, det, values, divergence)
        signs = self.dofmap.signs[_cell_index(cells)]
        return physical * signs[:, None, :, None], physical_div * signs[:, None, :]

    def evaluate(
        self, coefficients: np.ndarray, xy: np.ndarray, cells: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Field values (nc, nq, 2) and divergences (nc, nq)."""
        local = coefficients[self.dofmap.cell_dofs[_cell_index(cells)]]
        values, divergence = self.basis(xy, cells)
        return (
            np.einsum("cqnd,cn->cqd", values, local),
            np.einsum("cqn,cn->cq", divergence, local),
        )


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Coefficient vector of a finite element function over a DOF map.

    ``coefficients`` is indexed by the full numbering (essential DOFs included).
    """

    space: ScalarSpace | FluxSpace
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        if len(self.coefficients) != self.space.dofmap.size:
            raise ValueError(
                f"{self.space.descriptor} field needs {self.space.dofmap.size} "
                f"coefficients, got {len(self.coefficients)}"
            )

    @property
    def dofmap(self) -> DofMap:
        return self.space.dofmap

    def evaluate(
        self, xy: np.ndarray, cells: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Values and derivative (gradient or divergence) at reference points."""
        return self.space.evaluate(self.coefficients, xy, cells)

    def __sub__(self, other: DiscreteField) -> DiscreteField:
        if other.space is not self.space:
            raise ValueError("fields live in different spaces")
        return DiscreteField(self.space, self.coefficients - other.coefficients)
