"""Constants module for raresynth."""
from src.constants.profiles import (
    DEFAULT_PROFILE,
    KNOWN_PROFILES,
    PROFILE_ENV,
    load_profile,
    selected_profile,
)

__all__ = [
    "DEFAULT_PROFILE",
    "KNOWN_PROFILES",
    "PROFILE_ENV",
    "load_profile",
    "selected_profile",
]
