"""Profile bundles: JSON overlays on the built-in config defaults."""
import json
import logging
import os
from pathlib import Path
from typing import Mapping

from src.errors import ConfigFormatError, InvalidArgumentError

logger = logging.getLogger(__name__)

PROFILE_ENV = "RARESYNTH_PROFILE"
DEFAULT_PROFILE = "desk"
KNOWN_PROFILES = ("desk", "paper", "smoke")

DEFAULT_PROFILE_DIR = Path(__file__).parent.parent.parent / "data" / "profiles"


def selected_profile(name: str | None = None) -> str:
    """
    Resolve the profile name: explicit name, then RARESYNTH_PROFILE, then desk.

    Raises:
        InvalidArgumentError: If the name is unknown
    """
    chosen = name or os.environ.get(PROFILE_ENV) or DEFAULT_PROFILE
    if chosen not in KNOWN_PROFILES:
        raise InvalidArgumentError(
            f"unknown profile {chosen!r}; expected one of {', '.join(KNOWN_PROFILES)}"
        )
    return chosen


def load_profile(name: str | None = None, profile_dir: Path | None = None) -> Mapping:
    """
    Load a profile overlay.

    Args:
        name: Profile name (see selected_profile)
        profile_dir: Directory of ``<name>.json`` files. If None, uses the shipped data.

    Returns:
        Overlay mapping; empty (built-in defaults) when the file is absent
    """
    chosen = selected_profile(name)
    path = (profile_dir or DEFAULT_PROFILE_DIR) / f"{chosen}.json"

    if not path.exists():
        logger.warning("profile file %s not found; using built-in defaults", path)
        return {"profile": chosen}

    try:
        with open(path, "r", encoding="utf-8") as f:
            overlay = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(overlay, dict):
        raise ConfigFormatError(f"{path}: profile must be a JSON object")
    overlay.setdefault("profile", chosen)
    return overlay
