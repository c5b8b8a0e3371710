"""Tests for lsfem assembly module."""

import numpy as np
import pytest

from lsfem.analysis import compute_errors, implemented_pairs, solve_problem
from lsfem.assembly import (
    BlockLayout,
    assemble,
    default_degree,
    error_form,
    integration_batches,
    singular_cells,
    solution_fields,
    worker_count,
)
from lsfem.exceptions import CoefficientError
from lsfem.linalg import eigen_extrema_dense, solve_spd, symmetry_defect
from lsfem.mesh import Mesh, build_structured, refine_uniform
from lsfem.problems import Problem, builtin
from lsfem.spaces import DiscreteField, FluxSpace, ScalarSpace


def ones(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.ones_like(x)


def zeros(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.zeros_like(x)


def zero_vector(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.zeros(np.shape(x) + (2,))


ZERO_PROBLEM = Problem(
    name="zero",
    omega=1.5,
    sigma=lambda x, y: 1.0 + x**2,
    eta=lambda x, y: 1.0 + 0.5 * y,
    f=zeros,
    exact_u=zeros,
    exact_grad_u=zero_vector,
    exact_q=zero_vector,
    exact_div_q=zeros,
)


def spaces(pair: str, n: int) -> tuple[FluxSpace, ScalarSpace]:
    flux, scalar = pair.split("/")
    mesh = build_structured(n)
    return FluxSpace(mesh, flux), ScalarSpace(mesh, scalar)


def random_fields(
    flux: FluxSpace, scalar: ScalarSpace, seed: int
) -> tuple[DiscreteField, DiscreteField]:
    """Random discrete pair vanishing on essential DOFs."""
    rng = np.random.default_rng(seed)
    q = rng.normal(size=flux.dofmap.size)
    u = rng.normal(size=scalar.dofmap.size)
    q[flux.dofmap.essential] = 0.0
    u[scalar.dofmap.essential] = 0.0
    return DiscreteField(flux, q), DiscreteField(scalar, u)


class TestAssemble:
    """Tests for assemble."""

    @pytest.mark.parametrize("pair", [str(p) for p in implemented_pairs()])
    def test_symmetric_positive_definite(self, pair: str) -> None:
        """Test the reduced matrix is symmetric with positive spectrum on n=2."""
        flux, scalar = spaces(pair, 2)
        system = assemble(flux, scalar, builtin("smooth1"))
        assert symmetry_defect(system.matrix) <= 1e-12
        low, _ = eigen_extrema_dense(system.matrix)
        assert low > 0.0

    def test_sizes_and_blocks(self) -> None:
        """Test the unknown count and block shapes."""
        flux, scalar = spaces("RT1/P2", 2)
        system = assemble(flux, scalar, builtin("smooth1"))
        assert system.matrix.shape == (48 + 9, 48 + 9)
        assert system.num_flux == 48
        assert system.flux_block().shape == (48, 48)
        assert system.scalar_block().shape == (9, 9)
        upper, lower = system.coupling_blocks()
        assert abs(upper - lower.T).max() <= 1e-12 * abs(system.matrix).max()

    def test_zero_data_gives_zero_rhs(self) -> None:
        """Test f = 0, g = 0 with homogeneous boundary data gives b = 0 and x = 0."""
        flux, scalar = spaces("BDM1/P2", 3)
        system = assemble(flux, scalar, ZERO_PROBLEM)
        np.testing.assert_array_equal(system.rhs, 0.0)
        x, report = solve_spd(system.matrix, system.rhs)
        np.testing.assert_array_equal(x, 0.0)
        assert report.iterations == 0

    def test_quadratic_form_matches_error_form(self) -> None:
        """Test xᵀAx equals the bilinear form evaluated by quadrature."""
        flux, scalar = spaces("RT1/P2", 3)
        system = assemble(flux, scalar, ZERO_PROBLEM)
        q_h, u_h = random_fields(flux, scalar, seed=4)
        x = system.layout.restrict(q_h.coefficients, u_h.coefficients)
        degree = default_degree(flux, scalar)
        value = error_form(ZERO_PROBLEM, q_h, u_h, q_h, u_h, degree=degree)
        assert -value == pytest.approx(float(x @ (system.matrix @ x)), rel=1e-10)

    def test_nonpositive_sigma_raises(self) -> None:
        """Test σ ≤ 0 at a quadrature point raises CoefficientError."""
        problem = Problem(name="bad", omega=1.0, sigma=lambda x, y: x, eta=ones, f=ones)
        flux, scalar = spaces("RT0/P1", 2)
        with pytest.raises(CoefficientError, match="σ must be positive"):
            assemble(flux, scalar, problem)

    def test_threaded_matches_sequential(self) -> None:
        """Test chunked threaded assembly is bitwise identical to sequential."""
        flux, scalar = spaces("RT0/P1", 16)
        problem = builtin("smooth1")
        threaded = assemble(flux, scalar, problem, workers=2)
        sequential = assemble(flux, scalar, problem, sequential=True)
        assert abs(threaded.matrix - sequential.matrix).max() == 0.0
        np.testing.assert_array_equal(threaded.rhs, sequential.rhs)

    def test_spaces_on_different_meshes(self) -> None:
        """Test the two spaces must share one mesh."""
        flux = FluxSpace(build_structured(2), "RT0")
        scalar = ScalarSpace(build_structured(2), "P1")
        with pytest.raises(ValueError):
            assemble(flux, scalar, builtin("smooth1"))


class TestPatchExactness:
    """The method reproduces an exact pair lying in the discrete spaces."""

    @pytest.mark.parametrize("pair", ["RT1/P2", "BDM1/P2", "BDM2/P2", "RT2/P3"])
    @pytest.mark.parametrize("omega", [0.0, 1.0, 3.0])
    def test_patch_reproduced(self, pair: str, omega: float) -> None:
        """Test every error norm vanishes for the patch problem."""
        problem = builtin("patch", omega)
        q_h, u_h, _, report = solve_problem(problem, pair, build_structured(4), solver="direct")
        errors = compute_errors(problem, q_h, u_h, solver=report)
        for norm in ("q", "div_q", "u", "grad_u"):
            assert errors.norms[norm] <= 1e-9, norm

    def test_patch_on_distorted_mesh(self) -> None:
        """Test exactness survives a non-uniform mesh."""
        mesh = refine_uniform(build_structured(2))
        vertices = mesh.vertices.copy()
        interior = np.all(np.abs(vertices) < 1.0 - 1e-12, axis=1)
        vertices[interior] += np.random.default_rng(9).uniform(-0.1, 0.1, (interior.sum(), 2))
        mesh = Mesh.from_triangles(vertices, mesh.triangles)
        problem = builtin("patch")
        q_h, u_h, _, _ = solve_problem(problem, "BDM1/P2", mesh, solver="direct")
        errors = compute_errors(problem, q_h, u_h)
        assert errors.norms["q"] <= 1e-9
        assert errors.norms["u"] <= 1e-9


class TestGalerkinOrthogonality:
    """Tests for error_form on discrete solutions."""

    @pytest.mark.parametrize("pair", ["RT1/P1", "BDM2/P2"])
    def test_error_orthogonal_to_discrete_space(self, pair: str) -> None:
        """Test a(q - q_h, u - u_h; p_h, v_h) vanishes for random test pairs."""
        problem = builtin("smooth-var")
        flux, scalar = spaces(pair, 4)
        system = assemble(flux, scalar, problem)
        x, _ = solve_spd(system.matrix, system.rhs, method="direct")
        q_h, u_h = solution_fields(system, flux, scalar, x)
        scale = float(np.linalg.norm(system.rhs))
        for seed in range(3):
            p_h, v_h = random_fields(flux, scalar, seed)
            residual = error_form(
                problem, q_h, u_h, p_h, v_h, degree=default_degree(flux, scalar)
            )
            test_norm = float(np.linalg.norm(system.layout.restrict(p_h.coefficients, v_h.coefficients)))
            assert abs(residual) <= 1e-9 * scale * test_norm


class TestHelpers:
    """Tests for the assembly helpers."""

    def test_default_degree(self) -> None:
        """Test 2·max(deg) + 2."""
        flux, scalar = spaces("RT1/P2", 1)
        assert default_degree(flux, scalar) == 6

    def test_singular_cells(self) -> None:
        """Test cells touching x = 0 on n=4 are the two central columns."""
        mask = singular_cells(build_structured(4), 0.0)
        assert mask.sum() == 16
        assert not singular_cells(build_structured(4), None).any()

    def test_integration_batches_cover_cells(self) -> None:
        """Test batches visit every cell exactly once."""
        mesh = build_structured(12)
        cells = np.concatenate(
            [c for c, _ in integration_batches(mesh, 4, 0.0, splits=2, chunk_size=50)]
        )
        assert sorted(cells.tolist()) == list(range(mesh.num_triangles))

    def test_block_layout_round_trip(self) -> None:
        """Test restrict inverts expand on the free DOFs."""
        flux, scalar = spaces("BDM1/P1", 3)
        layout = BlockLayout(flux.dofmap, scalar.dofmap)
        x = np.arange(float(layout.size))
        np.testing.assert_array_equal(layout.restrict(*layout.expand(x)), x)

    def test_worker_count_env_cap(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test LSFEM_THREADS caps the worker count."""
        monkeypatch.setenv("LSFEM_THREADS", "1")
        assert worker_count(8) == 1
        monkeypatch.setenv("LSFEM_THREADS", "many")
        assert worker_count(3) == 3
