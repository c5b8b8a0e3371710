"""Tests for lsfem projections module."""

import numpy as np
import pytest

from lsfem.assembly import integration_batches
from lsfem.mesh import Mesh, build_structured, refine_uniform
from lsfem.problems import builtin
from lsfem.projections import (
    elliptic_project,
    hdiv_interpolate,
    l2_project,
    nodal_interpolate,
)
from lsfem.quadrature import triangle_rule
from lsfem.spaces import DiscreteField, FluxSpace, ScalarSpace

FLUX_DESCRIPTORS = ["RT0", "RT1", "RT2", "BDM1", "BDM2"]


def distorted_mesh(seed: int = 2) -> Mesh:
    mesh = refine_uniform(build_structured(2))
    vertices = mesh.vertices.copy()
    interior = np.all(np.abs(vertices) < 1.0 - 1e-12, axis=1)
    vertices[interior] += np.random.default_rng(seed).uniform(-0.1, 0.1, (interior.sum(), 2))
    return Mesh.from_triangles(vertices, mesh.triangles)


def physical_points(mesh: Mesh, degree: int = 6) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rule = triangle_rule(degree)
    X = mesh.map_points(rule.coords)
    return rule.coords, X[..., 0], X[..., 1]


def energy_error(field: DiscreteField, grad_u, sigma) -> float:
    """‖σ^{1/2}∇(u - u_h)‖₀ by quadrature."""
    mesh = field.space.mesh
    total = 0.0
    for cells, rule in integration_batches(mesh, 12):
        X = mesh.map_points(rule.coords, cells)
        x, y = X[..., 0], X[..., 1]
        _, det = mesh.jacobians(cells)
        _, grad = field.evaluate(rule.coords, cells)
        diff = grad_u(x, y) - grad
        weights = rule.weights[None, :] * np.abs(det)[:, None] * sigma(x, y)
        total += float(np.sum(weights * np.sum(diff**2, axis=-1)))
    return float(np.sqrt(total))


class TestL2Project:
    """Tests for l2_project."""

    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    def test_reproduces_polynomials(self, degree: int) -> None:
        """Test projecting a polynomial of the target degree is exact."""
        mesh = distorted_mesh()

        def func(x, y):
            return (1.0 + x - 2.0 * y) ** degree + 0.5

        projection = l2_project(func, mesh, degree)
        xy, x, y = physical_points(mesh)
        values, _ = projection.evaluate(xy)
        np.testing.assert_allclose(values, func(x, y), atol=1e-11)

    def test_physical_gradient(self) -> None:
        """Test gradients are mapped to physical coordinates."""
        mesh = distorted_mesh()
        projection = l2_project(lambda x, y: x**2 + 3.0 * y, mesh, 2)
        xy, x, _ = physical_points(mesh)
        _, gradients = projection.evaluate(xy)
        np.testing.assert_allclose(gradients[..., 0], 2.0 * x, atol=1e-10)
        np.testing.assert_allclose(gradients[..., 1], 3.0, atol=1e-10)

    def test_mean_preserved(self) -> None:
        """Test the P0 projection holds cell means."""
        mesh = build_structured(2)
        projection = l2_project(lambda x, y: np.exp(x + y), mesh, 0, quad_degree=20)
        rule = triangle_rule(20)
        X = mesh.map_points(rule.coords)
        means = (np.exp(X[..., 0] + X[..., 1]) @ rule.weights) / rule.weights.sum()
        np.testing.assert_allclose(projection.coefficients[:, 0], means, rtol=1e-12)


class TestHdivInterpolate:
    """Tests for hdiv_interpolate."""

    @pytest.mark.parametrize("descriptor", FLUX_DESCRIPTORS)
    def test_idempotent_on_space(self, descriptor: str) -> None:
        """Test a field already in the space is reproduced exactly."""
        space = FluxSpace(distorted_mesh(), descriptor)

        def field(x, y):
            # a + b·(x, y) lies in RT0 and therefore in every space tested
            return np.stack([1.0 + 0.5 * x, -2.0 + 0.5 * y], axis=-1)

        interpolant = hdiv_interpolate(field, space)
        xy, x, y = physical_points(space.mesh)
        values, divergence = interpolant.evaluate(xy)
        np.testing.assert_allclose(values, field(x, y), atol=1e-11)
        np.testing.assert_allclose(divergence, 1.0, atol=1e-10)

    @pytest.mark.parametrize("descriptor", ["RT1", "RT2", "BDM1", "BDM2"])
    def test_linear_fields_reproduced(self, descriptor: str) -> None:
        """Test general linear fields are reproduced by the higher-order spaces."""
        space = FluxSpace(distorted_mesh(), descriptor)
        q = builtin("patch").exact_q
        interpolant = hdiv_interpolate(q, space)
        xy, x, y = physical_points(space.mesh)
        values, _ = interpolant.evaluate(xy)
        np.testing.assert_allclose(values, q(x, y), atol=1e-11)

    @pytest.mark.parametrize("descriptor", ["RT1", "BDM2"])
    def test_composite_rule_keeps_polynomial_fields(self, descriptor: str) -> None:
        """Test split interior moments agree with the plain rule on smooth fields."""
        space = FluxSpace(build_structured(4), descriptor)
        q = builtin("patch").exact_q
        plain = hdiv_interpolate(q, space)
        split = hdiv_interpolate(q, space, singular_x=0.0, singular_splits=2)
        np.testing.assert_allclose(split.coefficients, plain.coefficients, atol=1e-12)

    def test_composite_rule_near_singular_line(self) -> None:
        """Test splitting cells at x = 0 moves the interpolant towards a finer reference."""
        problem = builtin("singular")
        space = FluxSpace(build_structured(4), "RT1")

        def interpolate(splits: int) -> np.ndarray:
            return hdiv_interpolate(problem.exact_q, space, problem.singular_x, splits).coefficients

        reference = interpolate(5)
        plain, split = interpolate(0), interpolate(2)
        assert np.abs(split - reference).max() < np.abs(plain - reference).max()

    @pytest.mark.parametrize("descriptor", FLUX_DESCRIPTORS)
    def test_commuting_diagram(self, descriptor: str) -> None:
        """Test ∇·Π_P q equals the L² projection of ∇·q onto the divergence space."""
        space = FluxSpace(distorted_mesh(), descriptor)
        k = space.descriptor.order
        power = k + 2 if space.descriptor.family == "RT" else k + 1

        # degree k + 2 (RT) or k + 1 (BDM), outside the space, moments integrated exactly
        def q(x, y):
            return np.stack([x**power + y, y**power - x], axis=-1)

        def div_q(x, y):
            return power * x ** (power - 1) + power * y ** (power - 1)

        interpolant = hdiv_interpolate(q, space)
        projection = l2_project(div_q, space.mesh, space.descriptor.div_degree)
        xy, _, _ = physical_points(space.mesh)
        _, divergence = interpolant.evaluate(xy)
        values, _ = projection.evaluate(xy)
        scale = 1.0 + np.abs(values).max()
        np.testing.assert_allclose(divergence, values, atol=1e-9 * scale)


class TestNodalInterpolate:
    """Tests for nodal_interpolate."""

    @pytest.mark.parametrize("descriptor", ["P1", "P2", "P3"])
    def test_node_values(self, descriptor: str) -> None:
        """Test interpolant coefficients are the nodal values."""
        space = ScalarSpace(build_structured(3), descriptor)
        field = nodal_interpolate(lambda x, y: np.sin(x) * y, space)
        coords = space.dofmap.coordinates
        np.testing.assert_allclose(field.coefficients, np.sin(coords[:, 0]) * coords[:, 1])

    def test_polynomial_reproduced(self) -> None:
        """Test cubic functions are reproduced by P3."""
        space = ScalarSpace(distorted_mesh(), "P3")
        field = nodal_interpolate(lambda x, y: x**3 - x * y**2 + y, space)
        xy, x, y = physical_points(space.mesh)
        values, _ = field.evaluate(xy)
        np.testing.assert_allclose(values, x**3 - x * y**2 + y, atol=1e-11)


class TestEllipticProject:
    """Tests for elliptic_project."""

    def test_reproduces_discrete_function(self) -> None:
        """Test a function in the space projects onto itself."""
        problem = builtin("patch")
        space = ScalarSpace(distorted_mesh(), "P2")
        projection = elliptic_project(
            problem.exact_grad_u, space, problem.sigma, boundary_u=problem.exact_u
        )
        expected = nodal_interpolate(problem.exact_u, space)
        np.testing.assert_allclose(projection.coefficients, expected.coefficients, atol=1e-9)

    @pytest.mark.parametrize("descriptor", ["P1", "P2"])
    def test_best_approximation(self, descriptor: str) -> None:
        """Test the σ-weighted energy error beats nodal interpolation."""
        problem = builtin("smooth-var")
        space = ScalarSpace(build_structured(4), descriptor)
        projection = elliptic_project(problem.exact_grad_u, space, problem.sigma)
        interpolant = nodal_interpolate(problem.exact_u, space)
        ritz = energy_error(projection, problem.exact_grad_u, problem.sigma)
        nodal = energy_error(interpolant, problem.exact_grad_u, problem.sigma)
        assert ritz <= nodal * (1.0 + 1e-10)

    def test_boundary_values_fixed(self) -> None:
        """Test Dirichlet DOFs carry the boundary data."""
        problem = builtin("patch")
        space = ScalarSpace(build_structured(3), "P2")
        projection = elliptic_project(
            problem.exact_grad_u, space, problem.sigma, boundary_u=problem.exact_u
        )
        essential = space.dofmap.essential_dofs
        coords = space.dofmap.coordinates[essential]
        np.testing.assert_allclose(
            projection.coefficients[essential], problem.exact_u(coords[:, 0], coords[:, 1])
        )
