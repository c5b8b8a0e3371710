"""Tests for lsfem config module."""

import json
from pathlib import Path

import pytest

from lsfem.config import StudyConfig
from lsfem.exceptions import ConfigError

REPRODUCE = Path(__file__).resolve().parent.parent / "reproduce"


class TestValidation:
    """Tests for StudyConfig.validate."""

    def test_defaults_valid(self) -> None:
        """Test the default configuration validates."""
        config = StudyConfig()
        assert config.problem == "smooth1"
        assert config.pairs == ["RT0/P1"]

    @pytest.mark.parametrize(
        "overrides,match",
        [
            ({"problem": "smooth2"}, "unknown problem"),
            ({"pairs": []}, "at least one"),
            ({"pairs": ["RT9/P1"]}, "pairs"),
            ({"pairs": ["P1/RT0"]}, "pairs"),
            ({"levels": [4, 8]}, "at least 3"),
            ({"levels": [0, 4, 8]}, "positive"),
            ({"levels": [4, 4, 8]}, "strictly increasing"),
            ({"solver": "gmres"}, "solver"),
            ({"tol": 0.0}, "tol"),
            ({"singular_splits": -1}, "singular_splits"),
            ({"expected_overrides": {"RT0/P1": {"w": 1.0}}}, "unknown norms"),
        ],
    )
    def test_invalid_fields(self, overrides: dict, match: str) -> None:
        """Test each invalid field raises ConfigError naming it."""
        with pytest.raises(ConfigError, match=match):
            StudyConfig(**overrides)

    def test_mesh_needs_refinements(self) -> None:
        """Test a mesh file study needs at least three levels."""
        with pytest.raises(ConfigError, match="refinements"):
            StudyConfig(mesh="square.mesh", refinements=1)
        assert StudyConfig(mesh="square.mesh", levels=[], refinements=2).mesh == "square.mesh"

    def test_config_error_is_value_error(self) -> None:
        """Test ConfigError can be caught as ValueError."""
        with pytest.raises(ValueError):
            StudyConfig(problem="")


class TestSerialization:
    """Tests for from_dict, load and dump."""

    def test_unknown_keys_rejected(self) -> None:
        """Test unknown keys raise ConfigError."""
        with pytest.raises(ConfigError, match="unknown config keys: colour"):
            StudyConfig.from_dict({"colour": "blue"})

    def test_dump_and_load(self, tmp_path: Path) -> None:
        """Test a dumped config loads back with the same plan hash."""
        config = StudyConfig(
            problem="smooth-var", pairs=["BDM1/P1", "RT1/P1"], omegas=[0.0, 2.0], postprocess=True
        )
        path = config.dump(tmp_path / "nested" / "config.json")
        loaded = StudyConfig.load(path)
        assert loaded == config
        assert loaded.plan_hash() == config.plan_hash()

    def test_missing_file(self, tmp_path: Path) -> None:
        """Test a missing file raises ConfigError."""
        with pytest.raises(ConfigError, match="not found"):
            StudyConfig.load(tmp_path / "absent.json")

    def test_invalid_json_reports_line(self, tmp_path: Path) -> None:
        """Test malformed JSON reports its line."""
        path = tmp_path / "broken.json"
        path.write_text('{\n  "problem": "smooth1",\n  "pairs": [\n}\n', encoding="utf-8")
        with pytest.raises(ConfigError, match="line 4"):
            StudyConfig.load(path)

    def test_top_level_must_be_object(self, tmp_path: Path) -> None:
        """Test a JSON list is rejected."""
        path = tmp_path / "list.json"
        path.write_text("[1, 2, 3]", encoding="utf-8")
        with pytest.raises(ConfigError, match="object"):
            StudyConfig.load(path)

    @pytest.mark.parametrize("path", sorted(REPRODUCE.glob("*.json")), ids=lambda p: p.stem)
    def test_reproduce_configs_load(self, path: Path) -> None:
        """Test every shipped reproduction config is valid."""
        config = StudyConfig.load(path)
        assert config.plan()


class TestMergedAndPlan:
    """Tests for merged, plan and plan_hash."""

    def test_overrides_win(self) -> None:
        """Test non-None overrides replace file values."""
        config = StudyConfig(levels=[2, 4, 8], tol=1e-9)
        merged = config.merged(levels=[4, 8, 16], tol=None, sequential=True)
        assert merged.levels == [4, 8, 16]
        assert merged.tol == 1e-9
        assert merged.sequential
        assert config.levels == [2, 4, 8]

    def test_merged_validates(self) -> None:
        """Test invalid overrides raise ConfigError."""
        with pytest.raises(ConfigError):
            StudyConfig().merged(levels=[4, 8])

    def test_plan_order(self) -> None:
        """Test runs are ordered by pair, then ω."""
        config = StudyConfig(pairs=["RT0/P1", "BDM1/P1"], omegas=[1.0, 0.0])
        plan = config.plan()
        assert [(run["pair"], run["omega"]) for run in plan] == [
            ("RT0/P1", 1.0),
            ("RT0/P1", 0.0),
            ("BDM1/P1", 1.0),
            ("BDM1/P1", 0.0),
        ]

    def test_plan_default_omega(self) -> None:
        """Test a missing ω list plans one run with the problem default."""
        plan = StudyConfig().plan()
        assert len(plan) == 1
        assert plan[0]["omega"] is None

    def test_plan_overrides_per_pair(self) -> None:
        """Test expected overrides are attached to their own pair."""
        config = StudyConfig(
            pairs=["RT0/P1", "BDM1/P1"], expected_overrides={"BDM1/P1": {"q": 2.5}}
        )
        plan = config.plan()
        assert plan[0]["expected_overrides"] == {}
        assert plan[1]["expected_overrides"] == {"q": 2.5}

    def test_hash_ignores_output_settings(self) -> None:
        """Test output-only settings do not change the plan hash."""
        base = StudyConfig()
        assert base.merged(out="elsewhere", vtk=True).plan_hash() == base.plan_hash()
        assert base.merged(tol=1e-9).plan_hash() != base.plan_hash()

    def test_hash_is_sha256_of_canonical_plan(self) -> None:
        """Test the hash is a 64-character hex digest, stable across calls."""
        config = StudyConfig(pairs=["RT1/P2"])
        digest = config.plan_hash()
        assert len(digest) == 64
        assert digest == StudyConfig.from_dict(json.loads(json.dumps(config.to_dict()))).plan_hash()
