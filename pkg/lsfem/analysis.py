"""Error norms, postprocessing, expected rates and convergence studies."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from lsfem.assembly import (
    SparseSystem,
    assemble,
    integration_batches,
    solution_fields,
    worker_count,
)
from lsfem.exceptions import LocalSolveError, ProblemError, UnsupportedElementError
from lsfem.linalg import DEFAULT_TOL, SolveReport, solve_spd
from lsfem.mesh import Mesh, build_structured
from lsfem.problems import Problem
from lsfem.projections import (
    PiecewisePolynomial,
    elliptic_project,
    hdiv_interpolate,
)
from lsfem.quadrature import MAX_TRIANGLE_DEGREE
from lsfem.spaces import (
    DiscreteField,
    FluxSpace,
    ScalarSpace,
    eval_monomial_gradients,
    eval_monomials,
    monomial_exponents,
)
from lsfem.types import (
    FLUX_DESCRIPTORS,
    NORMS,
    PLAIN_NORMS,
    SCALAR_DESCRIPTORS,
    SUPER_NORMS,
    ConvergenceReport,
    ElementPair,
    ErrorReport,
    ExpectedRate,
    SpaceDescriptor,
)

logger = logging.getLogger(__name__)

DEFAULT_SLACK = 0.2
SINGULAR_TOLERANCE = 0.15
OBSERVED_BETTER_MARGIN = 0.1
POSTPROCESS_GAIN = 0.8
SETTLE_TOLERANCE = 0.15
RATE_FLOOR_FACTOR = 10.0

# ---------------------------------------------------------------------------
# Expected rates
# ---------------------------------------------------------------------------

TABLE_NAMES = ("state_of_the_art", "optimal", "supercloseness")


def _never(k: int) -> bool:
    return False


def _always(k: int) -> bool:
    return True


def _positive(k: int) -> bool:
    return k > 0


FORMULAS: dict[str, Callable[[int], int]] = {
    "k-1": lambda k: k - 1,
    "k": lambda k: k,
    "k+1": lambda k: k + 1,
    "k+2": lambda k: k + 2,
    "k+k1": lambda k: k + min(k - 2, 1),
    "k+k2": lambda k: k + min(k, 2),
    "k+2+k3": lambda k: k + 2 + min(k, 1),
}


@dataclass(frozen=True)
class _Entry:
    formula: str
    starred: Callable[[int], bool] = _never


def _row(*entries: str | _Entry) -> tuple[_Entry, ...]:
    return tuple(e if isinstance(e, _Entry) else _Entry(e) for e in entries)


_LOW_ORDER = {
    "state_of_the_art": _row("k", "k-1", "k", "k-1"),
    "optimal": _row(_Entry("k+k1", _always), "k", "k", "k-1"),
    "supercloseness": _row(_Entry("k+k1", _always), "k", _Entry("k+k1", _always), "k"),
}

# Keyed by (flux family, m − k); columns follow PLAIN_NORMS / SUPER_NORMS.
RATE_TABLES: dict[str, dict[tuple[str, int], tuple[_Entry, ...]]] = {
    "state_of_the_art": {
        ("BDM", -1): _LOW_ORDER["state_of_the_art"],
        ("BDM", 0): _row("k+1", "k", "k+1", "k"),
        ("BDM", 1): _row("k+1", "k", "k+1", "k"),
        ("RT", -1): _LOW_ORDER["state_of_the_art"],
        ("RT", 0): _row("k+1", "k", "k+1", "k"),
        ("RT", 1): _row("k+1", "k+1", "k+2", "k+1"),
    },
    "optimal": {
        ("BDM", -1): _LOW_ORDER["optimal"],
        ("BDM", 0): _row("k+1", "k", "k+1", "k"),
        ("BDM", 1): _row("k+1", "k", "k+k2", "k+1"),
        ("RT", -1): _LOW_ORDER["optimal"],
        ("RT", 0): _row("k+1", "k+1", "k+1", "k"),
        ("RT", 1): _row("k+1", "k+1", "k+2", "k+1"),
    },
    "supercloseness": {
        ("BDM", -1): _LOW_ORDER["supercloseness"],
        ("BDM", 0): _row("k+1", "k+1", _Entry("k+k2", _always), "k+1"),
        ("BDM", 1): _row("k+1", "k+2", "k+k2", "k+1"),
        ("RT", -1): _LOW_ORDER["supercloseness"],
        ("RT", 0): _row("k+1", "k+1", _Entry("k+k2", _always), "k+1"),
        ("RT", 1): _row("k+1", "k+2", _Entry("k+2+k3", _always), _Entry("k+2", _positive)),
    },
}

# Printed rates of the supercloseness quantities for singular data (t = 1/4);
# True marks entries that experiments are known to beat.
SINGULAR_RATES: dict[str, tuple[tuple[float, bool], ...]] = {
    "RT0/P1": ((1.25, True), (2.0, False), (1.25, False), (1.25, False)),
    "RT1/P1": ((1.25, False), (2.0, False), (2.0, False), (1.25, True)),
    "RT1/P2": ((1.25, False), (2.25, False), (2.25, False), (1.25, False)),
    "BDM1/P1": ((1.25, True), (2.0, False), (1.25, True), (1.25, False)),
    "BDM1/P2": ((1.25, False), (2.25, False), (1.25, False), (1.25, False)),
    "BDM2/P2": ((1.25, False), (2.25, False), (2.25, False), (1.25, False)),
}

# Rate caps for u ∈ H^{2+t}: 1+t for flux and gradient errors, 2+t for
# scalar and divergence supercloseness, t for the plain divergence error.
_REGULARITY_SHIFT = {
    "q": 1.0, "div_q": 0.0, "u": 2.0, "grad_u": 1.0,
    "q_super": 1.0, "div_q_super": 2.0, "u_super": 2.0, "grad_u_super": 1.0,
}


def _table_key(pair: ElementPair) -> tuple[str, int]:
    offset = pair.scalar.order - pair.flux.order
    if offset not in (-1, 0, 1) or pair.scalar.order < 1:
        raise UnsupportedElementError(
            f"no rate prediction for {pair}: scalar order must be k-1, k or k+1"
        )
    return pair.flux.family, offset


def implemented_pairs() -> list[ElementPair]:
    """Every flux/scalar pair with a rate prediction, in table order."""
    pairs = []
    for flux in FLUX_DESCRIPTORS:
        for scalar in SCALAR_DESCRIPTORS:
            pair = ElementPair(SpaceDescriptor.parse(flux), SpaceDescriptor.parse(scalar))
            try:
                _table_key(pair)
            except UnsupportedElementError:
                continue
            pairs.append(pair)
    return pairs


def rate_table(pair: ElementPair | str, table: str) -> tuple[ExpectedRate, ...]:
    """The four raw entries of one estimate table for ``pair``.

    Args:
        pair: Element pair, e.g. ``"BDM2/P1"``
        table: One of ``TABLE_NAMES``

    Raises:
        UnsupportedElementError: If the pair has no entry
    """
    if isinstance(pair, str):
        pair = ElementPair.parse(pair)
    if table not in RATE_TABLES:
        raise ValueError(f"unknown table {table!r}; choose one of {', '.join(TABLE_NAMES)}")
    k = pair.flux.order
    row = RATE_TABLES[table][_table_key(pair)]
    return tuple(
        ExpectedRate(float(FORMULAS[e.formula](k)), formula=e.formula, starred=e.starred(k))
        for e in row
    )


def _with_fallback(entries: tuple[ExpectedRate, ...], *fallbacks: tuple[ExpectedRate, ...]):
    resolved = []
    for column, entry in enumerate(entries):
        if entry.starred:
            for table in fallbacks:
                if not table[column].starred:
                    entry = replace(entry, fallback=table[column].value)
                    break
        resolved.append(entry)
    return tuple(resolved)


def expected_rates(
    pair: ElementPair | str,
    regularity: float = math.inf,
    omega: float = 1.0,
) -> dict[str, ExpectedRate]:
    """Expected rate of every norm in ``NORMS`` for ``pair``.

    Starred entries (needing H³ regularity) gate on the same column of the
    optimal table, or of the state-of-the-art table when that one is starred
    too. Finite regularity caps every rate; the supercloseness rates of the
    tabulated singular pairs are the printed ones, everything else becomes
    informational.

    Raises:
        UnsupportedElementError: If the pair has no rate prediction
    """
    if isinstance(pair, str):
        pair = ElementPair.parse(pair)
    sota = rate_table(pair, "state_of_the_art")
    optimal = _with_fallback(rate_table(pair, "optimal"), sota)
    superclose = _with_fallback(rate_table(pair, "supercloseness"), optimal, sota)

    if str(pair) == "BDM1/P2" and omega != 0.0:
        superclose = (
            superclose[0],
            replace(superclose[1], value=2.0, formula="k+1 (ω≠0)"),
            *superclose[2:],
        )
    rates = dict(zip(PLAIN_NORMS, optimal)) | dict(zip(SUPER_NORMS, superclose))
    if math.isinf(regularity):
        return rates

    for norm, rate in rates.items():
        cap = regularity + _REGULARITY_SHIFT[norm]
        rates[norm] = replace(
            rate,
            value=min(rate.value, cap),
            fallback=None if rate.fallback is None else min(rate.fallback, cap),
            gated=False,
        )
    printed = SINGULAR_RATES.get(str(pair))
    if printed is not None and math.isclose(regularity, 0.25):
        for norm, (value, better) in zip(SUPER_NORMS, printed):
            rates[norm] = ExpectedRate(value, formula="singular", observed_better=better)
    return rates


def postprocess_gain_expected(pair: ElementPair, rates: dict[str, ExpectedRate]) -> bool:
    """Whether u*_h should beat u_h in the gradient by a full order."""
    flux_rate = min(rates["q"].gate_value, pair.scalar.order + 1)
    return flux_rate >= rates["grad_u"].gate_value + 1.0


# ---------------------------------------------------------------------------
# Errors and norms
# ---------------------------------------------------------------------------


def _error_degree(q_h: DiscreteField, u_h: DiscreteField) -> int:
    order = max(q_h.space.descriptor.degree, u_h.space.descriptor.order)
    return min(2 * order + 8, MAX_TRIANGLE_DEGREE)


def _sq(values: np.ndarray) -> np.ndarray:
    return values**2 if values.ndim == 2 else np.sum(values**2, axis=-1)


def compute_errors(
    problem: Problem,
    q_h: DiscreteField,
    u_h: DiscreteField,
    *,
    level: int = 0,
    n: int = 0,
    degree: int | None = None,
    singular_splits: int = 2,
    postprocessed: PiecewisePolynomial | None = None,
    solver: SolveReport | None = None,
) -> ErrorReport:
    """Measure every error norm of (q_h, u_h) against the exact solution.

    Cells touching the problem's singular line integrate with a composite rule
    of ``singular_splits`` levels.

    Raises:
        ProblemError: If the problem has no exact solution
    """
    if not problem.has_exact:
        raise ProblemError(f"problem {problem.name!r} has no exact solution to measure against")
    flux, scalar = q_h.space, u_h.space
    mesh = flux.mesh
    degree = degree or _error_degree(q_h, u_h)
    splits = singular_splits if problem.singular_x is not None else 0
    om2 = problem.omega**2

    pi_q = hdiv_interpolate(problem.exact_q, flux, problem.singular_x, splits)
    pi_u = elliptic_project(
        problem.exact_grad_u,
        scalar,
        problem.sigma,
        problem.boundary_u,
        singular_x=problem.singular_x,
        singular_splits=splits,
    )

    keys = NORMS + ("energy", "u_proj", "q_proj") + (("grad_u_post",) if postprocessed else ())
    sums = dict.fromkeys(keys, 0.0)
    for cells, rule in integration_batches(mesh, degree, problem.singular_x, splits):
        xy = rule.coords
        X = mesh.map_points(xy, cells)
        x, y = X[..., 0], X[..., 1]
        _, det = mesh.jacobians(cells)
        w = rule.weights[None, :] * np.abs(det)[:, None]
        sigma = np.broadcast_to(problem.sigma(x, y), x.shape)
        eta = np.broadcast_to(problem.eta(x, y), x.shape)

        q, div_q = problem.exact_q(x, y), problem.exact_div_q(x, y)
        u, grad_u = problem.exact_u(x, y), problem.exact_grad_u(x, y)
        qh, div_qh = q_h.evaluate(xy, cells)
        uh, grad_uh = u_h.evaluate(xy, cells)
        pq, div_pq = pi_q.evaluate(xy, cells)
        pu, grad_pu = pi_u.evaluate(xy, cells)

        differences = {
            "q": q - qh,
            "div_q": div_q - div_qh,
            "u": u - uh,
            "grad_u": grad_u - grad_uh,
            "q_super": pq - qh,
            "div_q_super": div_pq - div_qh,
            "u_super": pu - uh,
            "grad_u_super": grad_pu - grad_uh,
            "u_proj": u - pu,
            "q_proj": q - pq,
        }
        if postprocessed is not None:
            _, grad_post = postprocessed.evaluate(xy, cells)
            differences["grad_u_post"] = grad_post - grad_u
        for key, diff in differences.items():
            sums[key] += float(np.sum(w * _sq(diff)))
        energy = (
            _sq(differences["q"]) / sigma
            + differences["div_q"] ** 2
            + sigma * _sq(differences["grad_u"])
            + (om2 * eta * differences["u"]) ** 2
        )
        sums["energy"] += float(np.sum(w * energy))

    return ErrorReport(
        level=level,
        n=n,
        h=mesh.h,
        flux_dofs=flux.dofmap.num_dofs,
        scalar_dofs=scalar.dofmap.num_dofs,
        norms={key: math.sqrt(max(value, 0.0)) for key, value in sums.items()},
        solver=solver.to_dict() if solver else {},
    )


def energy_norm(
    problem: Problem, q_h: DiscreteField, u_h: DiscreteField, degree: int | None = None
) -> float:
    """‖(q_h, u_h)‖² = ‖σ^{-1/2}q_h‖² + ‖∇·q_h‖² + ‖σ^{1/2}∇u_h‖² + ‖ω²ηu_h‖²."""
    mesh = q_h.space.mesh
    degree = degree or _error_degree(q_h, u_h)
    om2 = problem.omega**2
    total = 0.0
    for cells, rule in integration_batches(mesh, degree):
        xy = rule.coords
        X = mesh.map_points(xy, cells)
        x, y = X[..., 0], X[..., 1]
        _, det = mesh.jacobians(cells)
        w = rule.weights[None, :] * np.abs(det)[:, None]
        sigma = np.broadcast_to(problem.sigma(x, y), x.shape)
        eta = np.broadcast_to(problem.eta(x, y), x.shape)
        q, div_q = q_h.evaluate(xy, cells)
        u, grad_u = u_h.evaluate(xy, cells)
        density = _sq(q) / sigma + div_q**2 + sigma * _sq(grad_u) + (om2 * eta * u) ** 2
        total += float(np.sum(w * density))
    return math.sqrt(total)


def postprocess(
    u_h: DiscreteField,
    q_h: DiscreteField,
    sigma: Callable[[np.ndarray, np.ndarray], np.ndarray],
    degree: int | None = None,
) -> PiecewisePolynomial:
    """Element-by-element reconstruction u*_h ∈ P_{m+1}(T).

    On each cell, find (u*_h, λ) ∈ P_{m+1}(T) × P_0(T) with

        (σ∇u*_h, ∇v)_T + (λ, v)_T = (q_h, ∇v)_T   for all v ∈ P_{m+1}(T),
        (u*_h, 1)_T = (u_h, 1)_T.

    Raises:
        LocalSolveError: If a local saddle-point system is singular
    """
    mesh = u_h.space.mesh
    order = u_h.space.descriptor.order + 1
    exponents = monomial_exponents(order)
    nm = len(exponents)
    degree = degree or min(2 * max(order, q_h.space.descriptor.degree) + 4, MAX_TRIANGLE_DEGREE)
    coefficients = np.empty((mesh.num_triangles, nm))
    for cells, rule in integration_batches(mesh, degree):
        xy = rule.coords
        mono = eval_monomials(exponents, xy)
        jacobian, det = mesh.jacobians(cells)
        grad = np.einsum("cji,qmj->cqmi", np.linalg.inv(jacobian), eval_monomial_gradients(exponents, xy))
        X = mesh.map_points(xy, cells)
        w = rule.weights[None, :] * np.abs(det)[:, None]
        sig = np.broadcast_to(sigma(X[..., 0], X[..., 1]), w.shape)
        qh, _ = q_h.evaluate(xy, cells)
        uh, _ = u_h.evaluate(xy, cells)

        system = np.zeros((len(cells), nm + 1, nm + 1))
        system[:, :nm, :nm] = np.einsum("cq,cqid,cqjd->cij", w * sig, grad, grad)
        means = np.einsum("cq,qi->ci", w, mono)
        system[:, :nm, nm] = means
        system[:, nm, :nm] = means
        rhs = np.empty((len(cells), nm + 1))
        rhs[:, :nm] = np.einsum("cq,cqd,cqid->ci", w, qh, grad)
        rhs[:, nm] = np.sum(w * uh, axis=1)
        try:
            solution = np.linalg.solve(system, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as err:
            for local, cell in enumerate(cells):
                if np.linalg.matrix_rank(system[local]) < nm + 1:
                    raise LocalSolveError(int(cell), "singular saddle-point system") from err
            raise LocalSolveError(int(cells[0]), str(err)) from err
        coefficients[cells] = solution[:, :nm]
    return PiecewisePolynomial(mesh, order, coefficients)


# ---------------------------------------------------------------------------
# Solves and studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LevelResult:
    """Everything produced on one refinement level."""

    mesh: Mesh
    q_h: DiscreteField
    u_h: DiscreteField
    system: SparseSystem
    solve: SolveReport
    report: ErrorReport | None
    postprocessed: PiecewisePolynomial | None = None


def solve_problem(
    problem: Problem,
    pair: ElementPair | str,
    mesh: Mesh,
    *,
    tol: float = DEFAULT_TOL,
    solver: str = "cg",
    maxiter: int | None = None,
    assembly_degree: int | None = None,
    singular_splits: int = 2,
    sequential: bool = False,
) -> tuple[DiscreteField, DiscreteField, SparseSystem, SolveReport]:
    """Assemble and solve the least-squares system on one mesh.

    Returns:
        (q_h, u_h, assembled system, solve report)
    """
    if isinstance(pair, str):
        pair = ElementPair.parse(pair)
    flux = FluxSpace(mesh, pair.flux)
    scalar = ScalarSpace(mesh, pair.scalar)
    system = assemble(
        flux,
        scalar,
        problem,
        assembly_degree,
        singular_splits=singular_splits if problem.singular_x is not None else 0,
        sequential=sequential,
    )
    x, report = solve_spd(system.matrix, system.rhs, tol=tol, maxiter=maxiter, method=solver)
    q_h, u_h = solution_fields(system, flux, scalar, x)
    return q_h, u_h, system, report


def observed_rates(levels: Sequence[ErrorReport], norm: str, tol: float = DEFAULT_TOL) -> list[float | None]:
    """Rates log(e_{i-1}/e_i) / log(h_{i-1}/h_i) between consecutive levels.

    A rate is None when either error sits within 10× the solver tolerance.
    """
    floor = RATE_FLOOR_FACTOR * tol
    rates: list[float | None] = []
    for coarse, fine in zip(levels, levels[1:]):
        e0, e1 = coarse.norms.get(norm), fine.norms.get(norm)
        if e0 is None or e1 is None or e0 <= floor or e1 <= floor or coarse.h == fine.h:
            rates.append(None)
            continue
        rates.append(math.log(e0 / e1) / math.log(coarse.h / fine.h))
    return rates


def _passes(
    rate: float | None,
    expected: ExpectedRate,
    smooth: bool,
    slack: float,
    singular_tolerance: float,
) -> bool:
    if rate is None:
        return True
    if smooth or expected.formula != "singular":
        return rate >= expected.gate_value - slack
    if expected.observed_better:
        return rate >= expected.value - OBSERVED_BETTER_MARGIN
    return abs(rate - expected.value) <= singular_tolerance


def evaluate_gates(
    report: ConvergenceReport,
    *,
    smooth: bool,
    slack: float = DEFAULT_SLACK,
    singular_tolerance: float = SINGULAR_TOLERANCE,
    postprocess_gain: bool = False,
) -> dict[str, bool]:
    """Pass flag per gated norm, judged on the final-interval rate."""
    passed = {}
    for norm in NORMS:
        expected = report.expected.get(norm)
        if expected is None or not expected.gated:
            continue
        passed[norm] = _passes(
            report.final_rate(norm), expected, smooth, slack, singular_tolerance
        )
    if postprocess_gain:
        post, plain = report.final_rate("grad_u_post"), report.final_rate("grad_u")
        passed["grad_u_post"] = post is None or plain is None or post - plain >= POSTPROCESS_GAIN
    return passed


def settled_rates(
    report: ConvergenceReport, tolerance: float = SETTLE_TOLERANCE
) -> dict[str, bool]:
    """Per gated norm, whether |r_last - r_prev| <= tolerance.

    Norms with fewer than two measurable rates count as settled.
    """
    settled = {}
    for norm in NORMS:
        expected = report.expected.get(norm)
        if expected is None or not expected.gated:
            continue
        rates = report.rates.get(norm) or []
        if len(rates) < 2 or rates[-1] is None or rates[-2] is None:
            settled[norm] = True
            continue
        settled[norm] = abs(rates[-1] - rates[-2]) <= tolerance
    return settled


def _level_meshes(levels: Sequence[int] | None, meshes: Sequence[Mesh] | None) -> list[tuple[int, Mesh]]:
    if meshes is not None:
        return list(enumerate(meshes))
    if not levels:
        raise ValueError("a study needs structured levels or a mesh sequence")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be strictly increasing, got {list(levels)}")
    return [(n, build_structured(n)) for n in levels]


def iter_levels(
    problem: Problem,
    pair: ElementPair,
    meshes: Sequence[tuple[int, Mesh]],
    *,
    tol: float,
    solver: str,
    maxiter: int | None,
    assembly_degree: int | None,
    error_degree: int | None,
    singular_splits: int,
    postprocess_fields: bool,
    sequential: bool,
) -> Iterator[LevelResult]:
    """Solve and measure every level; results arrive in level order.

    Levels run on a thread pool unless ``sequential``; concurrent levels
    assemble sequentially so the pools do not nest.
    """
    items = list(enumerate(meshes))
    concurrent = not sequential and len(items) > 1

    def run(item: tuple[int, tuple[int, Mesh]]) -> LevelResult:
        index, (n, mesh) = item
        start = time.perf_counter()
        q_h, u_h, system, solve = solve_problem(
            problem,
            pair,
            mesh,
            tol=tol,
            solver=solver,
            maxiter=maxiter,
            assembly_degree=assembly_degree,
            singular_splits=singular_splits,
            sequential=sequential or concurrent,
        )
        post = postprocess(u_h, q_h, problem.sigma) if postprocess_fields else None
        report = compute_errors(
            problem,
            q_h,
            u_h,
            level=index,
            n=n,
            degree=error_degree,
            singular_splits=singular_splits,
            postprocessed=post,
            solver=solve,
        )
        logger.info(
            "%s %s ω=%g n=%d: %d DOFs, %d iterations, %.2fs",
            problem.name, pair, problem.omega, n, report.dofs, solve.iterations,
            time.perf_counter() - start,
        )
        return LevelResult(mesh, q_h, u_h, system, solve, report, post)

    if not concurrent:
        yield from map(run, items)
        return
    with ThreadPoolExecutor(max_workers=min(worker_count(), len(items))) as pool:
        yield from pool.map(run, items)


def run_study(
    problem: Problem,
    pair: ElementPair | str,
    levels: Sequence[int] | None = None,
    *,
    meshes: Sequence[Mesh] | None = None,
    tol: float = DEFAULT_TOL,
    solver: str = "cg",
    maxiter: int | None = None,
    assembly_degree: int | None = None,
    error_degree: int | None = None,
    singular_splits: int = 2,
    slack: float = DEFAULT_SLACK,
    singular_tolerance: float = SINGULAR_TOLERANCE,
    postprocess_fields: bool = False,
    gate: bool = True,
    sequential: bool = False,
    expected_overrides: dict[str, float] | None = None,
    on_level: Callable[[LevelResult], None] | None = None,
) -> ConvergenceReport:
    """Refinement study of one pair on one problem.

    Args:
        problem: Problem (ω included)
        pair: Element pair
        levels: Structured mesh sizes n, strictly increasing
        meshes: Explicit mesh sequence (used instead of ``levels``)
        postprocess_fields: Also compute u*_h and its gradient error
        gate: Judge final-interval rates against expectations
        expected_overrides: Per-norm expected values replacing the tables
        on_level: Called with each level's result, in level order

    Raises:
        ValueError: For fewer than three levels or non-increasing sizes
    """
    if isinstance(pair, str):
        pair = ElementPair.parse(pair)
    sequence = _level_meshes(levels, meshes)
    if len(sequence) < 3:
        raise ValueError(f"a convergence study needs at least 3 levels, got {len(sequence)}")
    expected = expected_rates(pair, problem.regularity, problem.omega)
    for norm, value in (expected_overrides or {}).items():
        if norm not in NORMS:
            raise ValueError(f"cannot override unknown norm {norm!r}")
        expected[norm] = ExpectedRate(float(value), formula="override")

    reports = []
    for result in iter_levels(
        problem,
        pair,
        sequence,
        tol=tol,
        solver=solver,
        maxiter=maxiter,
        assembly_degree=assembly_degree,
        error_degree=error_degree,
        singular_splits=singular_splits,
        postprocess_fields=postprocess_fields,
        sequential=sequential,
    ):
        reports.append(result.report)
        if on_level is not None:
            on_level(result)

    keys = list(reports[0].norms)
    report = ConvergenceReport(
        pair=pair,
        problem=problem.name,
        omega=problem.omega,
        levels=reports,
        rates={norm: observed_rates(reports, norm, tol) for norm in keys},
        expected=expected,
        gated=gate and not problem.preasymptotic,
    )
    report.passed = evaluate_gates(
        report,
        smooth=problem.is_smooth,
        slack=slack,
        singular_tolerance=singular_tolerance,
        postprocess_gain=postprocess_fields
        and problem.is_smooth
        and postprocess_gain_expected(pair, expected),
    )
    failed = [norm for norm, ok in report.passed.items() if not ok]
    if failed and report.gated:
        logger.warning("%s %s ω=%g: rates below expectation for %s",
                       problem.name, pair, problem.omega, ", ".join(failed))
    if problem.is_smooth:
        report.settled = settled_rates(report)
        moving = [norm for norm, ok in report.settled.items() if not ok]
        if moving:
            logger.warning("%s %s ω=%g: rates not yet asymptotic for %s",
                           problem.name, pair, problem.omega, ", ".join(moving))
    return report
