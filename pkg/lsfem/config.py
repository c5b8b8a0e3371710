"""Study configuration: JSON files plus command-line overrides."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from lsfem.exceptions import ConfigError, LsfemError
from lsfem.linalg import DEFAULT_TOL, SOLVER_METHODS
from lsfem.problems import BUILTIN_PROBLEMS
from lsfem.types import NORMS, ElementPair


@dataclass
class StudyConfig:
    """Everything needed to reproduce a study run.

    Attributes:
        problem: Built-in problem name
        pairs: Element pairs as ``FLUX/SCALAR`` strings
        omegas: Wavenumbers; None uses the problem default
        levels: Structured mesh sizes n, strictly increasing
        mesh: Mesh file used instead of ``levels``
        refinements: Uniform refinements of ``mesh`` (levels = refinements + 1)
        assembly_degree: Quadrature degree override for assembly
        error_degree: Quadrature degree override for error norms
        singular_splits: Composite-rule levels on cells touching a singular line
        tol: Solver tolerance
        solver: "cg" or "direct"
        maxiter: CG iteration cap
        out: Output directory
        gate: Judge rates against expectations
        slack: Allowed shortfall of smooth rates
        singular_tolerance: Allowed deviation of singular rates
        postprocess: Compute the postprocessed scalar u*_h
        vtk: Write a VTK file per level
        gnuplot: Write a gnuplot script per run
        dump_matrix: Write the finest system in MatrixMarket format
        sequential: Disable threads
        expected_overrides: Per pair, expected values replacing the tables
    """

    problem: str = "smooth1"
    pairs: list[str] = field(default_factory=lambda: ["RT0/P1"])
    omegas: list[float] | None = None
    levels: list[int] = field(default_factory=lambda: [4, 8, 16, 32])
    mesh: str | None = None
    refinements: int = 3
    assembly_degree: int | None = None
    error_degree: int | None = None
    singular_splits: int = 2
    tol: float = DEFAULT_TOL
    solver: str = "cg"
    maxiter: int | None = None
    out: str = "results"
    gate: bool = True
    slack: float = 0.2
    singular_tolerance: float = 0.15
    postprocess: bool = False
    vtk: bool = False
    gnuplot: bool = False
    dump_matrix: bool = False
    sequential: bool = False
    expected_overrides: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Raise ConfigError naming the first invalid field."""
        if self.problem not in BUILTIN_PROBLEMS:
            raise ConfigError(
                f"unknown problem {self.problem!r}; choose one of {', '.join(BUILTIN_PROBLEMS)}"
            )
        if not self.pairs:
            raise ConfigError("at least one element pair is required")
        for pair in self.pairs:
            try:
                ElementPair.parse(pair)
            except LsfemError as err:
                raise ConfigError(f"pairs: {err}") from err
        if self.mesh is None:
            if len(self.levels) < 3:
                raise ConfigError(f"levels: need at least 3, got {self.levels}")
            if any(n < 1 for n in self.levels):
                raise ConfigError(f"levels: sizes must be positive, got {self.levels}")
            if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
                raise ConfigError(f"levels must be strictly increasing, got {self.levels}")
        elif self.refinements < 2:
            raise ConfigError(f"refinements: need at least 2, got {self.refinements}")
        if self.solver not in SOLVER_METHODS:
            raise ConfigError(f"solver must be one of {', '.join(SOLVER_METHODS)}")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.singular_splits < 0:
            raise ConfigError("singular_splits must be >= 0")
        for pair, overrides in self.expected_overrides.items():
            unknown = set(overrides) - set(NORMS)
            if unknown:
                raise ConfigError(
                    f"expected_overrides[{pair!r}]: unknown norms {', '.join(sorted(unknown))}"
                )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> StudyConfig:
        """Build from a mapping; unknown keys are rejected.

        Raises:
            ConfigError: On unknown keys or invalid values
        """
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def load(cls, path: str | Path) -> StudyConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from err
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def dump(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    def merged(self, **overrides: Any) -> StudyConfig:
        """Copy with every non-None override applied (command-line flags win)."""
        data = self.to_dict()
        data.update({key: value for key, value in overrides.items() if value is not None})
        return StudyConfig.from_dict(data)

    def plan(self) -> list[dict[str, Any]]:
        """Ordered runs: one entry per pair and ω, with the settings that shape it."""
        omegas = self.omegas if self.omegas else [None]
        meshes: dict[str, Any] = (
            {"mesh": self.mesh, "refinements": self.refinements}
            if self.mesh
            else {"levels": list(self.levels)}
        )
        runs = []
        for pair in self.pairs:
            for omega in omegas:
                runs.append(
                    {
                        "problem": self.problem,
                        "pair": pair,
                        "omega": omega,
                        **meshes,
                        "assembly_degree": self.assembly_degree,
                        "error_degree": self.error_degree,
                        "singular_splits": self.singular_splits,
                        "tol": self.tol,
                        "solver": self.solver,
                        "maxiter": self.maxiter,
                        "postprocess": self.postprocess,
                        "gate": self.gate,
                        "slack": self.slack,
                        "singular_tolerance": self.singular_tolerance,
                        "expected_overrides": self.expected_overrides.get(pair, {}),
                    }
                )
        return runs

    def plan_hash(self) -> str:
        """SHA-256 of the canonical JSON of ``plan()``."""
        canonical = json.dumps(self.plan(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
