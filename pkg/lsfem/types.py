"""Data types shared across lsfem: space descriptors, element pairs and reports."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any

from lsfem.exceptions import UnsupportedElementError

SCALAR_DESCRIPTORS = ("P1", "P2", "P3")
FLUX_DESCRIPTORS = ("RT0", "RT1", "RT2", "BDM1", "BDM2")

_DESCRIPTOR_PATTERN = re.compile(r"^(P|RT|BDM)(\d)$")

# Plain errors (optimal estimates) followed by the supercloseness quantities.
PLAIN_NORMS = ("q", "div_q", "u", "grad_u")
SUPER_NORMS = ("q_super", "div_q_super", "u_super", "grad_u_super")
NORMS = PLAIN_NORMS + SUPER_NORMS
EXTRA_NORMS = ("energy", "u_proj", "q_proj", "grad_u_post")

NORM_LABELS = {
    "q": "‖q−q_h‖₀",
    "div_q": "‖∇·(q−q_h)‖₀",
    "u": "‖u−u_h‖₀",
    "grad_u": "‖∇(u−u_h)‖₀",
    "q_super": "‖Π_P q−q_h‖₀",
    "div_q_super": "‖∇·(Π_P q−q_h)‖₀",
    "u_super": "‖Π_V u−u_h‖₀",
    "grad_u_super": "‖∇(Π_V u−u_h)‖₀",
    "energy": "‖(q−q_h,u−u_h)‖",
    "u_proj": "‖u−Π_V u‖₀",
    "q_proj": "‖q−Π_P q‖₀",
    "grad_u_post": "‖∇(u*_h−u)‖₀",
}


@dataclass(frozen=True)
class SpaceDescriptor:
    """A finite element space family and order, e.g. ``P2``, ``RT1`` or ``BDM2``.

    Attributes:
        family: One of "P" (Lagrange), "RT" (Raviart-Thomas) or "BDM"
            (Brezzi-Douglas-Marini)
        order: Polynomial order m (Lagrange) or k (flux families)
    """

    family: str
    order: int

    def __post_init__(self) -> None:
        if str(self) not in SCALAR_DESCRIPTORS + FLUX_DESCRIPTORS:
            raise UnsupportedElementError(
                f"unsupported space {self}; valid descriptors are "
                f"{', '.join(SCALAR_DESCRIPTORS + FLUX_DESCRIPTORS)}"
            )

    def __str__(self) -> str:
        return f"{self.family}{self.order}"

    @classmethod
    def parse(cls, text: str) -> SpaceDescriptor:
        """Parse a descriptor string such as ``"RT1"``.

        Raises:
            UnsupportedElementError: If the string names no implemented space
        """
        match = _DESCRIPTOR_PATTERN.match(text.strip().upper())
        if match is None:
            raise UnsupportedElementError(
                f"unknown space {text!r}; valid descriptors are "
                f"{', '.join(SCALAR_DESCRIPTORS + FLUX_DESCRIPTORS)}"
            )
        return cls(match.group(1), int(match.group(2)))

    @property
    def is_flux(self) -> bool:
        return self.family != "P"

    @property
    def degree(self) -> int:
        """Highest total polynomial degree of the local shape functions."""
        return self.order + 1 if self.family == "RT" else self.order

    @property
    def div_degree(self) -> int:
        """Degree ℓ of the divergence image (and of the commuting L² projection)."""
        if self.family == "RT":
            return self.order
        if self.family == "BDM":
            return self.order - 1
        raise UnsupportedElementError(f"{self} is not a flux space")


@dataclass(frozen=True)
class ElementPair:
    """A flux space paired with a scalar space, written ``FLUX/SCALAR``."""

    flux: SpaceDescriptor
    scalar: SpaceDescriptor

    def __post_init__(self) -> None:
        if not self.flux.is_flux or self.scalar.is_flux:
            raise UnsupportedElementError(
                f"element pair must be FLUX/SCALAR, got {self.flux}/{self.scalar}"
            )

    def __str__(self) -> str:
        return f"{self.flux}/{self.scalar}"

    @classmethod
    def parse(cls, text: str) -> ElementPair:
        """Parse ``"RT1/P2"`` style pair strings."""
        parts = text.split("/")
        if len(parts) != 2:
            raise UnsupportedElementError(
                f"element pair must look like 'RT1/P2', got {text!r}"
            )
        return cls(SpaceDescriptor.parse(parts[0]), SpaceDescriptor.parse(parts[1]))

    @property
    def max_degree(self) -> int:
        return max(self.flux.degree, self.scalar.degree)


@dataclass(frozen=True)
class ExpectedRate:
    """Predicted convergence rate of one norm.

    Attributes:
        value: The printed rate
        formula: The symbolic entry the value was expanded from, e.g. "k+k1"
        starred: The estimate needs H³ elliptic regularity
        fallback: Rate used for gating when ``starred`` is set
        observed_better: Experiments are known to beat ``value`` (parenthesised
            table entries); gating then only bounds the rate from below
        gated: Whether the norm takes part in pass/fail decisions
    """

    value: float
    formula: str = ""
    starred: bool = False
    fallback: float | None = None
    observed_better: bool = False
    gated: bool = True

    @property
    def gate_value(self) -> float:
        if self.starred and self.fallback is not None:
            return self.fallback
        return self.value

    def label(self) -> str:
        text = f"{self.value:g}"
        if self.starred:
            text += "*"
        if self.observed_better:
            text = f"({text})"
        return text

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "formula": self.formula,
            "starred": self.starred,
            "fallback": self.fallback,
            "observed_better": self.observed_better,
            "gated": self.gated,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExpectedRate:
        return cls(
            value=data["value"],
            formula=data.get("formula", ""),
            starred=data.get("starred", False),
            fallback=data.get("fallback"),
            observed_better=data.get("observed_better", False),
            gated=data.get("gated", True),
        )


@dataclass
class ErrorReport:
    """Errors measured on one refinement level.

    Attributes:
        level: Position of the level in the study (0-based)
        n: Structured subdivision count, or the refinement count for imported meshes
        h: Mesh size (longest edge)
        flux_dofs: Free flux degrees of freedom
        scalar_dofs: Free scalar degrees of freedom
        norms: Mapping from norm key (see ``NORMS`` and ``EXTRA_NORMS``) to value
        solver: Summary of the linear solve for this level
    """

    level: int
    n: int
    h: float
    flux_dofs: int
    scalar_dofs: int
    norms: dict[str, float] = field(default_factory=dict)
    solver: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, value in self.norms.items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"norm {key} must be finite and >= 0, got {value}")

    @property
    def dofs(self) -> int:
        return self.flux_dofs + self.scalar_dofs

    def to_dict(self) -> dict[str, Any]:
        return {
            "level": self.level,
            "n": self.n,
            "h": self.h,
            "flux_dofs": self.flux_dofs,
            "scalar_dofs": self.scalar_dofs,
            "norms": dict(self.norms),
            "solver": dict(self.solver),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ErrorReport:
        return cls(
            level=data["level"],
            n=data["n"],
            h=data["h"],
            flux_dofs=data["flux_dofs"],
            scalar_dofs=data["scalar_dofs"],
            norms=dict(data.get("norms", {})),
            solver=dict(data.get("solver", {})),
        )


@dataclass
class ConvergenceReport:
    """Errors, observed rates and expected rates of one refinement study.

    Attributes:
        pair: Element pair studied
        problem: Problem name
        omega: Wavenumber
        levels: One ErrorReport per level, in level order
        rates: Per norm, the observed rate between consecutive levels
            (None where a rate is undefined)
        expected: Per norm, the expected rate (absent when no prediction exists)
        passed: Per gated norm, whether the final-interval rate passes
        settled: Per gated norm of a smooth problem, whether the last two rates
            agree within the settling tolerance
        gated: False when the whole study is informational (gate disabled or
            preasymptotic wavenumber)
    """

    pair: ElementPair
    problem: str
    omega: float
    levels: list[ErrorReport] = field(default_factory=list)
    rates: dict[str, list[float | None]] = field(default_factory=dict)
    expected: dict[str, ExpectedRate] = field(default_factory=dict)
    passed: dict[str, bool] = field(default_factory=dict)
    settled: dict[str, bool] = field(default_factory=dict)
    gated: bool = True

    @property
    def ok(self) -> bool:
        """True when every gated norm passed (always True for ungated studies)."""
        return not self.gated or all(self.passed.values())

    @property
    def asymptotic(self) -> bool:
        """False when some gated rate still moves between the last two intervals."""
        return all(self.settled.values())

    def final_rate(self, norm: str) -> float | None:
        rates = self.rates.get(norm) or []
        return rates[-1] if rates else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "pair": str(self.pair),
            "problem": self.problem,
            "omega": self.omega,
            "levels": [level.to_dict() for level in self.levels],
            "rates": {key: list(values) for key, values in self.rates.items()},
            "expected": {key: rate.to_dict() for key, rate in self.expected.items()},
            "passed": dict(self.passed),
            "settled": dict(self.settled),
            "gated": self.gated,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ConvergenceReport:
        return cls(
            pair=ElementPair.parse(data["pair"]),
            problem=data["problem"],
            omega=data["omega"],
            levels=[ErrorReport.from_dict(level) for level in data.get("levels", [])],
            rates={key: list(values) for key, values in data.get("rates", {}).items()},
            expected={
                key: ExpectedRate.from_dict(rate)
                for key, rate in data.get("expected", {}).items()
            },
            passed=dict(data.get("passed", {})),
            settled=dict(data.get("settled", {})),
            gated=data.get("gated", True),
        )
