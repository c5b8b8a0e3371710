"""Tests for lsfem analysis module."""

import math

import numpy as np
import pytest

from lsfem import analysis
from lsfem.analysis import (
    compute_errors,
    energy_norm,
    evaluate_gates,
    expected_rates,
    implemented_pairs,
    observed_rates,
    postprocess,
    postprocess_gain_expected,
    rate_table,
    run_study,
    settled_rates,
    solve_problem,
)
from lsfem.exceptions import UnsupportedElementError
from lsfem.mesh import build_structured
from lsfem.problems import Problem, builtin
from lsfem.projections import hdiv_interpolate, nodal_interpolate
from lsfem.quadrature import triangle_rule
from lsfem.spaces import DiscreteField, FluxSpace, ScalarSpace
from lsfem.types import NORMS, ConvergenceReport, ElementPair, ErrorReport, ExpectedRate

FINE_LEVELS = [4, 8, 16, 32, 64]

# ∫(x²-1)²e^{2x} and ∫(x²+2x-1)²e^{2x} over [-1, 1]
_EXP_U = 0.25 * math.e**2 - 3.25 * math.exp(-2.0)
_EXP_DX = 0.75 * math.e**2 - 1.75 * math.exp(-2.0)
SMOOTH1_U_NORM = math.sqrt(16.0 / 15.0 * _EXP_U)
SMOOTH1_GRAD_NORM = math.sqrt(16.0 / 15.0 * _EXP_DX + 8.0 / 3.0 * _EXP_U)


def zeros(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.zeros_like(x)


def zero_vector(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.zeros(np.shape(x) + (2,))


ZERO_PROBLEM = Problem(
    name="zero",
    omega=2.0,
    sigma=lambda x, y: 2.0 + x,
    eta=lambda x, y: 1.0 + y**2,
    f=zeros,
    exact_u=zeros,
    exact_grad_u=zero_vector,
    exact_q=zero_vector,
    exact_div_q=zeros,
)


def random_pair(n: int, flux: str, scalar: str, seed: int) -> tuple[DiscreteField, DiscreteField]:
    mesh = build_structured(n)
    flux_space, scalar_space = FluxSpace(mesh, flux), ScalarSpace(mesh, scalar)
    rng = np.random.default_rng(seed)
    return (
        DiscreteField(flux_space, rng.normal(size=flux_space.dofmap.size)),
        DiscreteField(scalar_space, rng.normal(size=scalar_space.dofmap.size)),
    )


def synthetic_report(
    rates: dict[str, list[float | None]], expected: dict[str, ExpectedRate]
) -> ConvergenceReport:
    return ConvergenceReport(
        pair=ElementPair.parse("RT0/P1"),
        problem="synthetic",
        omega=1.0,
        rates=rates,
        expected=expected,
    )


def values(rates: dict[str, ExpectedRate]) -> dict[str, float]:
    return {norm: rate.value for norm, rate in rates.items()}


class TestExpectedRates:
    """Tests for the expected-rate tables."""

    def test_rt0_p1(self) -> None:
        """Test the lowest-order Raviart-Thomas pair."""
        rates = expected_rates("RT0/P1")
        assert values(rates) == {
            "q": 1.0, "div_q": 1.0, "u": 2.0, "grad_u": 1.0,
            "q_super": 1.0, "div_q_super": 2.0, "u_super": 2.0, "grad_u_super": 2.0,
        }
        assert rates["u_super"].starred
        assert rates["u_super"].gate_value == 2.0
        assert not rates["grad_u_super"].starred

    def test_bdm1_p2_wavenumber(self) -> None:
        """Test the divergence supercloseness rate drops from 3 to 2 for ω ≠ 0."""
        assert expected_rates("BDM1/P2", omega=0.0)["div_q_super"].value == 3.0
        assert expected_rates("BDM1/P2", omega=1.0)["div_q_super"].value == 2.0

    def test_rt1_p1(self) -> None:
        """Test equal-order RT1/P1 supercloseness rates."""
        rates = expected_rates("RT1/P1")
        assert rates["div_q_super"].value == 2.0
        assert rates["u_super"].starred
        assert rates["u_super"].gate_value == 2.0
        assert rates["grad_u_super"].value == 2.0

    def test_bdm2_p1_starred_fallback(self) -> None:
        """Test a starred optimal entry gates on the previously known rate."""
        rates = expected_rates("BDM2/P1")
        assert rates["u"].value == 2.0
        assert rates["grad_u"].value == 1.0
        assert rates["q"].starred
        assert rates["q"].fallback == 2.0

    def test_rt1_p2_table_entry(self) -> None:
        """Test the k+2 scalar rate of RT_k/P_{k+1}."""
        assert rate_table("RT1/P2", "optimal")[2].value == 3.0
        assert rate_table("RT1/P2", "optimal")[2].formula == "k+2"

    def test_all_tables_cover_all_pairs(self) -> None:
        """Test every implemented pair has four entries in each table."""
        pairs = implemented_pairs()
        assert len(pairs) == 11
        for pair in pairs:
            for table in ("state_of_the_art", "optimal", "supercloseness"):
                entries = rate_table(pair, table)
                assert len(entries) == 4
                assert all(entry.value >= 0 for entry in entries)

    def test_singular_printed_rates(self) -> None:
        """Test singular data use printed supercloseness rates and ungate the rest."""
        rates = expected_rates("RT0/P1", regularity=0.25, omega=0.0)
        assert rates["q_super"].value == 1.25
        assert rates["q_super"].observed_better
        assert rates["div_q_super"].value == 2.0
        assert rates["q_super"].gated
        assert not rates["q"].gated
        assert rates["q"].value == 1.0

    def test_regularity_caps_untabulated_pairs(self) -> None:
        """Test pairs without printed singular rates become informational."""
        rates = expected_rates("RT2/P3", regularity=0.25, omega=0.0)
        assert not any(rate.gated for rate in rates.values())
        assert rates["q"].value == 1.25

    @pytest.mark.parametrize("pair", ["RT0/P3", "RT0/P2", "BDM1/P3"])
    def test_unsupported_offset(self, pair: str) -> None:
        """Test pairs outside m - k in {-1, 0, 1} have no prediction."""
        with pytest.raises(UnsupportedElementError):
            expected_rates(pair)

    def test_unknown_table(self) -> None:
        """Test an unknown table name raises ValueError."""
        with pytest.raises(ValueError):
            rate_table("RT0/P1", "pessimistic")

    def test_postprocess_gain_expected(self) -> None:
        """Test which pairs predict a full extra order for u*_h."""
        for pair, expected in [("BDM1/P1", True), ("RT1/P1", True), ("RT0/P1", False)]:
            parsed = ElementPair.parse(pair)
            assert postprocess_gain_expected(parsed, expected_rates(parsed)) is expected


class TestObservedRates:
    """Tests for observed_rates."""

    def levels(self, errors: list[float]) -> list[ErrorReport]:
        return [
            ErrorReport(level=i, n=2**i, h=2.0**-i, flux_dofs=1, scalar_dofs=1, norms={"q": e})
            for i, e in enumerate(errors)
        ]

    def test_second_order(self) -> None:
        """Test errors dividing by four per halving give rate 2."""
        rates = observed_rates(self.levels([1.0, 0.25, 0.0625]), "q")
        assert rates == pytest.approx([2.0, 2.0])

    def test_floor_gives_none(self) -> None:
        """Test errors at solver tolerance give no rate."""
        rates = observed_rates(self.levels([1e-3, 1e-12, 1e-13]), "q")
        assert rates == [None, None]

    def test_missing_norm(self) -> None:
        """Test a norm absent from the reports gives no rate."""
        assert observed_rates(self.levels([1.0, 0.5]), "div_q") == [None]


class TestEvaluateGates:
    """Tests for evaluate_gates."""

    @pytest.mark.parametrize("rate,ok", [(1.85, True), (1.75, False), (None, True)])
    def test_smooth_slack(self, rate: float | None, ok: bool) -> None:
        """Test smooth rates pass down to expected - 0.2."""
        report = synthetic_report({"q": [1.0, rate]}, {"q": ExpectedRate(2.0)})
        assert evaluate_gates(report, smooth=True) == {"q": ok}

    def test_starred_uses_fallback(self) -> None:
        """Test a starred expectation gates on its fallback."""
        expected = {"u": ExpectedRate(3.0, starred=True, fallback=2.0)}
        report = synthetic_report({"u": [1.85]}, expected)
        assert evaluate_gates(report, smooth=True) == {"u": True}

    @pytest.mark.parametrize("rate,ok", [(1.35, True), (1.15, True), (1.45, False), (1.05, False)])
    def test_singular_two_sided(self, rate: float, ok: bool) -> None:
        """Test printed singular rates gate within ±0.15."""
        expected = {"u_super": ExpectedRate(1.25, formula="singular")}
        report = synthetic_report({"u_super": [rate]}, expected)
        assert evaluate_gates(report, smooth=False) == {"u_super": ok}

    @pytest.mark.parametrize("rate,ok", [(1.9, True), (1.2, True), (1.1, False)])
    def test_singular_observed_better(self, rate: float, ok: bool) -> None:
        """Test parenthesised entries only bound the rate from below."""
        expected = {"q_super": ExpectedRate(1.25, formula="singular", observed_better=True)}
        report = synthetic_report({"q_super": [rate]}, expected)
        assert evaluate_gates(report, smooth=False) == {"q_super": ok}

    def test_ungated_entries_skipped(self) -> None:
        """Test informational expectations produce no verdict."""
        report = synthetic_report({"q": [0.1]}, {"q": ExpectedRate(1.0, gated=False)})
        assert evaluate_gates(report, smooth=False) == {}

    @pytest.mark.parametrize("post,ok", [(1.9, True), (1.7, False)])
    def test_postprocess_gain(self, post: float, ok: bool) -> None:
        """Test the postprocessed gradient must gain 0.8 on the plain one."""
        report = synthetic_report({"grad_u": [1.0], "grad_u_post": [post]}, {})
        assert evaluate_gates(report, smooth=True, postprocess_gain=True) == {"grad_u_post": ok}


class TestSettledRates:
    """Tests for settled_rates."""

    @pytest.mark.parametrize("rates,ok", [([1.4, 1.86, 1.95], True), ([1.47, 1.86], False)])
    def test_last_interval_jump(self, rates: list[float], ok: bool) -> None:
        """Test the last two rates must agree within 0.15."""
        report = synthetic_report({"u_super": rates}, {"u_super": ExpectedRate(2.0)})
        assert settled_rates(report) == {"u_super": ok}

    @pytest.mark.parametrize("rates", [[1.9], [None, 2.0], [2.0, None]])
    def test_unmeasurable_counts_as_settled(self, rates: list[float | None]) -> None:
        """Test a single or undefined rate does not flag the norm."""
        report = synthetic_report({"q": rates}, {"q": ExpectedRate(1.0)})
        assert settled_rates(report) == {"q": True}

    def test_ungated_entries_skipped(self) -> None:
        """Test informational expectations are not checked."""
        report = synthetic_report({"q": [0.1, 2.0]}, {"q": ExpectedRate(1.0, gated=False)})
        assert settled_rates(report) == {}

    def test_report_flag(self) -> None:
        """Test asymptotic reflects the stored verdicts and survives to_dict."""
        report = synthetic_report({}, {})
        assert report.asymptotic
        report.settled = {"q": True, "u_super": False}
        assert not report.asymptotic
        assert ConvergenceReport.from_dict(report.to_dict()).settled == report.settled


class TestNorms:
    """Tests for compute_errors and energy_norm."""

    def test_energy_matches_error_energy(self) -> None:
        """Test the error energy of a zero solution is the field's energy norm."""
        q_h, u_h = random_pair(3, "BDM1", "P2", seed=1)
        errors = compute_errors(ZERO_PROBLEM, q_h, u_h, degree=10)
        assert errors.norms["energy"] == pytest.approx(
            energy_norm(ZERO_PROBLEM, q_h, u_h, degree=10), rel=1e-12
        )

    def test_energy_norm_homogeneous(self) -> None:
        """Test ‖(2q, 2u)‖ = 2‖(q, u)‖."""
        q_h, u_h = random_pair(2, "RT1", "P1", seed=2)
        doubled = (
            DiscreteField(q_h.space, 2.0 * q_h.coefficients),
            DiscreteField(u_h.space, 2.0 * u_h.coefficients),
        )
        assert energy_norm(ZERO_PROBLEM, *doubled) == pytest.approx(
            2.0 * energy_norm(ZERO_PROBLEM, q_h, u_h), rel=1e-12
        )

    @pytest.mark.slow
    def test_discrete_energy_bounded(self) -> None:
        """Test ‖(q_h, u_h)‖ stays within twice its coarsest value under refinement."""
        problem = builtin("smooth-var")
        norms = []
        for n in (4, 8, 16, 32, 64):
            q_h, u_h, _, _ = solve_problem(problem, "RT0/P1", build_structured(n))
            norms.append(energy_norm(problem, q_h, u_h))
        assert max(norms) <= 2.0 * norms[0]

    def test_interpolant_in_space_is_superclose(self) -> None:
        """Test u_h = I_h u with u ∈ V_h gives a vanishing supercloseness error."""
        problem = builtin("patch")
        mesh = build_structured(3)
        u_h = nodal_interpolate(problem.exact_u, ScalarSpace(mesh, "P2"))
        q_h = hdiv_interpolate(problem.exact_q, FluxSpace(mesh, "RT1"))
        norms = compute_errors(problem, q_h, u_h).norms
        assert norms["u_super"] <= 1e-10
        assert norms["grad_u_super"] <= 1e-9
        assert norms["q"] <= 1e-10
        assert norms["div_q_super"] <= 1e-9

    def test_zero_fields_measure_exact_solution(self) -> None:
        """Test zero discrete fields give ‖u‖₀ and ‖∇u‖₀ of smooth1."""
        mesh = build_structured(4)
        flux, scalar = FluxSpace(mesh, "RT0"), ScalarSpace(mesh, "P1")
        q_h = DiscreteField(flux, np.zeros(flux.dofmap.size))
        u_h = DiscreteField(scalar, np.zeros(scalar.dofmap.size))
        norms = compute_errors(builtin("smooth1"), q_h, u_h, degree=24).norms
        assert norms["u"] == pytest.approx(SMOOTH1_U_NORM, rel=1e-12)
        assert norms["grad_u"] == pytest.approx(SMOOTH1_GRAD_NORM, rel=1e-12)

    def test_report_contents(self) -> None:
        """Test every norm is reported with DOF counts and solver summary."""
        problem = builtin("smooth1")
        q_h, u_h, _, report = solve_problem(problem, "RT1/P2", build_structured(4))
        errors = compute_errors(problem, q_h, u_h, level=1, n=4, solver=report)
        assert set(NORMS) <= set(errors.norms)
        assert {"energy", "u_proj", "q_proj"} <= set(errors.norms)
        assert errors.n == 4 and errors.level == 1
        assert errors.dofs == q_h.space.dofmap.num_dofs + u_h.space.dofmap.num_dofs
        assert errors.solver["converged"]

    def test_triangle_inequality(self) -> None:
        """Test ‖u - u_h‖ ≤ ‖Π u - u_h‖ + ‖u - Π u‖ and likewise for q."""
        problem = builtin("smooth-var")
        q_h, u_h, _, _ = solve_problem(problem, "BDM1/P1", build_structured(4))
        norms = compute_errors(problem, q_h, u_h).norms
        assert norms["u"] <= norms["u_super"] + norms["u_proj"] + 1e-12
        assert norms["q"] <= norms["q_super"] + norms["q_proj"] + 1e-12


class TestPostprocess:
    """Tests for postprocess."""

    def test_cell_means_preserved(self) -> None:
        """Test u*_h has the cell means of u_h."""
        q_h, u_h = random_pair(3, "RT0", "P1", seed=3)
        post = postprocess(u_h, q_h, lambda x, y: 1.0 + x**2)
        rule = triangle_rule(8)
        post_values, _ = post.evaluate(rule.coords)
        plain_values, _ = u_h.evaluate(rule.coords)
        np.testing.assert_allclose(post_values @ rule.weights, plain_values @ rule.weights, atol=1e-12)
        assert post.degree == 2

    def test_exact_for_higher_degree_solution(self) -> None:
        """Test u*_h recovers a quadratic u from its P2 interpolant and exact flux."""
        problem = builtin("patch")
        mesh = build_structured(3)
        u_h = nodal_interpolate(problem.exact_u, ScalarSpace(mesh, "P2"))
        q_h = hdiv_interpolate(problem.exact_q, FluxSpace(mesh, "BDM1"))
        post = postprocess(u_h, q_h, problem.sigma)
        rule = triangle_rule(6)
        X = mesh.map_points(rule.coords)
        post_values, post_grad = post.evaluate(rule.coords)
        np.testing.assert_allclose(post_values, problem.exact_u(X[..., 0], X[..., 1]), atol=1e-10)
        np.testing.assert_allclose(post_grad, problem.exact_grad_u(X[..., 0], X[..., 1]), atol=1e-10)


class TestRunStudy:
    """Tests for run_study on small level sets."""

    def test_structure(self) -> None:
        """Test report layout and level order."""
        seen = []
        report = run_study(
            builtin("smooth1"),
            "RT0/P1",
            [2, 4, 8],
            gate=False,
            sequential=True,
            on_level=lambda result: seen.append(result.report.n),
        )
        assert seen == [2, 4, 8]
        assert [level.n for level in report.levels] == [2, 4, 8]
        assert all(len(rates) == 2 for rates in report.rates.values())
        assert not report.gated
        assert report.ok
        errors = [level.norms["q"] for level in report.levels]
        assert errors[0] > errors[1] > errors[2]

    def test_override_fails_gate(self) -> None:
        """Test an unreachable expected rate fails the study."""
        report = run_study(
            builtin("smooth1"), "RT0/P1", [2, 4, 8], expected_overrides={"q": 9.0}
        )
        assert report.expected["q"].value == 9.0
        assert report.passed["q"] is False
        assert not report.ok

    def test_unknown_override(self) -> None:
        """Test overriding an unknown norm raises ValueError."""
        with pytest.raises(ValueError):
            run_study(builtin("smooth1"), "RT0/P1", [2, 4, 8], expected_overrides={"w": 1.0})

    def test_preasymptotic_not_gated(self) -> None:
        """Test high wavenumbers are reported but never gated."""
        with pytest.warns(UserWarning):
            problem = builtin("smooth1", 8.0)
        report = run_study(problem, "RT0/P1", [2, 4, 8], expected_overrides={"q": 9.0})
        assert not report.gated
        assert report.ok

    @pytest.mark.parametrize("levels", [[4, 8], [4, 2, 8]])
    def test_invalid_levels(self, levels: list[int]) -> None:
        """Test fewer than three or non-increasing levels raise ValueError."""
        with pytest.raises(ValueError):
            run_study(builtin("smooth1"), "RT0/P1", levels)

    def test_threads_do_not_change_results(self) -> None:
        """Test threaded and sequential studies give identical norms."""
        problem = builtin("smooth-var")
        threaded = run_study(problem, "BDM1/P1", [2, 4, 8], gate=False)
        sequential = run_study(problem, "BDM1/P1", [2, 4, 8], gate=False, sequential=True)
        for a, b in zip(threaded.levels, sequential.levels):
            assert a.norms == b.norms

    def test_coarse_rates_flagged_not_asymptotic(self) -> None:
        """Test rates still climbing on coarse levels are flagged but not failed."""
        report = run_study(builtin("smooth1"), "RT0/P1", [2, 4, 8, 16])
        assert report.ok
        assert set(report.settled) == set(report.passed)
        assert report.settled["u_super"] is False
        assert not report.asymptotic

    def test_singular_data_not_checked_for_settling(self) -> None:
        """Test settling is only judged for smooth problems."""
        report = run_study(builtin("singular"), "RT0/P1", [2, 4, 8], gate=False)
        assert report.settled == {}

    @pytest.mark.parametrize("sequential", [False, True])
    def test_levels_assemble_without_nested_pool(
        self, monkeypatch: pytest.MonkeyPatch, sequential: bool
    ) -> None:
        """Test each level assembles in its own thread whether or not levels overlap."""
        seen = []

        def recording(*args, **kwargs):
            seen.append(kwargs["sequential"])
            return solve_problem(*args, **kwargs)

        monkeypatch.setattr(analysis, "solve_problem", recording)
        run_study(builtin("smooth1"), "RT0/P1", [2, 4, 8], gate=False, sequential=sequential)
        assert len(seen) == 3
        assert all(seen)

    def test_postprocessed_norm_recorded(self) -> None:
        """Test the postprocessed gradient error is measured on request."""
        report = run_study(
            builtin("smooth1"), "RT1/P1", [2, 4, 8], gate=False, postprocess_fields=True
        )
        assert all("grad_u_post" in level.norms for level in report.levels)
        assert len(report.rates["grad_u_post"]) == 2


@pytest.mark.slow
class TestAcceptance:
    """Refinement studies on the full level set."""

    @pytest.mark.parametrize("omega,low,high", [(1.0, 1.8, 2.3), (0.0, 2.8, math.inf)])
    def test_divergence_supercloseness_bdm1_p2(self, omega: float, low: float, high: float) -> None:
        """Test the BDM1/P2 divergence supercloseness rate with and without ω."""
        report = run_study(builtin("smooth1", omega), "BDM1/P2", FINE_LEVELS, gate=False)
        rate = report.final_rate("div_q_super")
        assert low <= rate <= high

    @pytest.mark.parametrize(
        "pair,norm",
        [("RT0/P1", "grad_u_super"), ("RT1/P1", "div_q_super"), ("BDM2/P1", "u")],
    )
    def test_smooth_spot_checks(self, pair: str, norm: str) -> None:
        """Test selected smooth supercloseness and optimal rates reach 1.8."""
        report = run_study(builtin("smooth1"), pair, FINE_LEVELS, gate=False)
        assert report.final_rate(norm) >= 1.8

    @pytest.mark.parametrize("pair", ["RT0/P1", "BDM1/P2"])
    def test_smooth_rates_settle(self, pair: str) -> None:
        """Test every gated rate moves by at most 0.15 over the last interval."""
        report = run_study(builtin("smooth1"), pair, FINE_LEVELS)
        for norm in report.passed:
            rates = report.rates[norm]
            if rates[-1] is not None and rates[-2] is not None:
                assert abs(rates[-1] - rates[-2]) <= 0.15, norm
        assert report.asymptotic, report.settled

    @pytest.mark.parametrize("pair", ["BDM1/P1", "RT1/P1"])
    def test_postprocessing_gain(self, pair: str) -> None:
        """Test u*_h gains close to a full order in the gradient."""
        report = run_study(
            builtin("smooth-var"), pair, FINE_LEVELS, gate=False, postprocess_fields=True
        )
        gain = report.final_rate("grad_u_post") - report.final_rate("grad_u")
        assert gain >= 0.8

    @pytest.mark.parametrize(
        "pair", ["RT0/P1", "RT1/P1", "RT1/P2", "BDM1/P1", "BDM1/P2", "BDM2/P2"]
    )
    def test_singular_suite(self, pair: str) -> None:
        """Test supercloseness rates for singular data match the printed values."""
        report = run_study(builtin("singular"), pair, FINE_LEVELS)
        assert report.gated
        assert report.ok, report.passed
