# Tests for raresynth
