"""Tests for config module and profile bundles."""
import json
from pathlib import Path

import pytest

from src.config import (
    RESOLVED_CONFIG_NAME,
    PipelineConfig,
    deep_merge,
    load_config,
    resolve_config,
    write_resolved_config,
)
from src.constants.profiles import PROFILE_ENV, load_profile, selected_profile
from src.errors import ConfigFormatError, InvalidArgumentError


@pytest.fixture(autouse=True)
def clear_profile_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(PROFILE_ENV, raising=False)


def write_config(tmp_path: Path, doc: dict) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class TestProfiles:
    """Tests for profile selection and loading."""

    def test_default_is_desk(self) -> None:
        """Without a name or environment variable the desk profile is used."""
        assert selected_profile() == "desk"

    def test_environment_selects_profile(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """RARESYNTH_PROFILE should select the bundle."""
        monkeypatch.setenv(PROFILE_ENV, "smoke")
        assert selected_profile() == "smoke"
        assert selected_profile("paper") == "paper"

    def test_unknown_profile_raises_error(self) -> None:
        """Unknown profile names should be rejected."""
        with pytest.raises(InvalidArgumentError, match="unknown profile"):
            selected_profile("huge")

    def test_missing_file_falls_back(self, tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
        """A missing profile file should fall back to built-in defaults with a warning."""
        assert load_profile("paper", tmp_path) == {"profile": "paper"}
        assert "not found" in caplog.text

    def test_bad_json_raises_error(self, tmp_path: Path) -> None:
        """A malformed profile should be a format error."""
        (tmp_path / "desk.json").write_text("{not json")
        with pytest.raises(ConfigFormatError, match="invalid JSON"):
            load_profile("desk", tmp_path)

    @pytest.mark.parametrize("name", ["desk", "paper", "smoke"])
    def test_shipped_profiles_resolve(self, name: str) -> None:
        """Every shipped profile should produce a valid config."""
        cfg = resolve_config({}, profile=name)
        assert cfg.profile == name

    def test_paper_profile_values(self) -> None:
        """The paper profile should carry rank 64, alpha 8 and a 1000-step schedule."""
        cfg = resolve_config({}, profile="paper")
        assert cfg.lora.rank == 64
        assert cfg.lora.scale == pytest.approx(0.125)
        assert cfg.schedule.T == 1000
        assert cfg.sweep.pool_size == 1000


class TestPipelineConfig:
    """Tests for PipelineConfig."""

    def test_roundtrip_through_dict(self) -> None:
        """to_dict then from_dict should reproduce the config."""
        cfg = resolve_config({"seed": 4, "domain": "lungspot"}, profile="smoke")
        again = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg

    def test_sweep_follows_domain(self) -> None:
        """The sweep's domain should follow the top-level domain."""
        cfg = PipelineConfig(domain="lungspot")
        assert cfg.sweep.domain == "lungspot"

    def test_unknown_key_raises_error(self) -> None:
        """Unknown top-level keys should be rejected."""
        with pytest.raises(ConfigFormatError, match="unknown config keys: colour"):
            PipelineConfig.from_dict({"colour": "red"})

    def test_unknown_section_field_raises_error(self) -> None:
        """Unknown fields inside a section should be rejected."""
        with pytest.raises(ConfigFormatError, match="section 'lora'"):
            PipelineConfig.from_dict({"lora": {"rnk": 4}})

    def test_section_must_be_object(self) -> None:
        """Sections must be JSON objects."""
        with pytest.raises(ConfigFormatError, match="must be an object"):
            PipelineConfig.from_dict({"sweep": [1, 2]})

    def test_image_size_mismatch_raises_error(self) -> None:
        """All image sizes must agree."""
        with pytest.raises(InvalidArgumentError, match="image sizes disagree"):
            PipelineConfig.from_dict({"classifier": {"image_size": 16}})

    def test_sampler_steps_beyond_schedule_raise_error(self) -> None:
        """Sampler steps cannot exceed T."""
        with pytest.raises(InvalidArgumentError, match="exceed schedule T"):
            PipelineConfig.from_dict({"schedule": {"T": 10}, "sampler": {"steps": 20}})

    def test_schema_version_checked(self) -> None:
        """Other schema versions should be rejected."""
        with pytest.raises(ConfigFormatError, match="schema_version"):
            PipelineConfig.from_dict({"schema_version": 2})

    def test_unknown_domain_raises_error(self) -> None:
        """Unknown domains should be rejected."""
        with pytest.raises(InvalidArgumentError, match="unknown domain"):
            PipelineConfig(domain="xray")


class TestLoadConfig:
    """Tests for load_config and deep_merge."""

    def test_deep_merge(self) -> None:
        """Nested mappings should merge; other values replace."""
        merged = deep_merge({"a": {"x": 1, "y": 2}, "b": [1]}, {"a": {"y": 3}, "b": [2]})
        assert merged == {"a": {"x": 1, "y": 3}, "b": [2]}

    def test_partial_document_over_profile(self, tmp_path: Path) -> None:
        """A config file should only need what differs from its profile."""
        path = write_config(tmp_path, {"profile": "smoke", "lora": {"rank": 3}})
        cfg = load_config(path)
        assert cfg.lora.rank == 3
        assert cfg.lora.steps == 5
        assert cfg.image_size == 16

    def test_environment_profile(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        """Without a profile key the environment chooses the bundle."""
        monkeypatch.setenv(PROFILE_ENV, "smoke")
        cfg = load_config(write_config(tmp_path, {"seed": 9}))
        assert cfg.profile == "smoke"
        assert cfg.seed == 9

    def test_missing_file_raises_error(self, tmp_path: Path) -> None:
        """A missing config should name its path."""
        with pytest.raises(FileNotFoundError, match="absent.json"):
            load_config(tmp_path / "absent.json")

    def test_bad_json_raises_error(self, tmp_path: Path) -> None:
        """Malformed JSON should be a format error."""
        path = tmp_path / "config.json"
        path.write_text("{")
        with pytest.raises(ConfigFormatError, match="invalid JSON"):
            load_config(path)

    def test_non_object_raises_error(self, tmp_path: Path) -> None:
        """The document must be an object."""
        with pytest.raises(ConfigFormatError, match="JSON object"):
            load_config(write_config(tmp_path, [1, 2]))

    def test_resolved_config_reloads(self, tmp_path: Path) -> None:
        """resolved_config.json should load back to the same config."""
        cfg = load_config(write_config(tmp_path, {"profile": "smoke", "seed": 2}))
        path = write_resolved_config(tmp_path / "out", cfg)
        assert path.name == RESOLVED_CONFIG_NAME
        assert path.read_text().endswith("}\n")
        assert load_config(path) == cfg
