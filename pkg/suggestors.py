#!/usr/bin/env python3

# suggestors.py
import logging
import os
from typing import List, Optional

from fem import SOLVERS

logger = logging.getLogger(__name__)

SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))


def list_presets(prefix: Optional[str] = None) -> List[str]:
    """
    List the preset problem names available under presets/.

    Args:
        prefix: Optional prefix to filter names by (e.g. "beam")

    Returns:
        List of preset names sorted alphabetically
    """
    preset_dir = os.path.join(SCRIPT_DIR, "presets")
    try:
        if not os.path.isdir(preset_dir):
            logger.warning(f"Preset directory {preset_dir} not found")
            return []
        names = [os.path.splitext(f)[0] for f in os.listdir(preset_dir) if f.endswith(".json")]
    except PermissionError:
        logger.warning(f"Permission denied accessing {preset_dir}")
        return []
    if prefix:
        names = [n for n in names if n.startswith(prefix)]
    return sorted(names)


def list_directions(dim: str = "3") -> List[str]:
    """Axis-aligned build directions, in candidate order."""
    names = ["+y", "-y", "+x", "-x"]
    if str(dim) == "3":
        names += ["+z", "-z"]
    return names


def list_modes() -> List[str]:
    return ["reference", "selfsupporting", "both"]


def list_solvers() -> List[str]:
    return list(SOLVERS)


suggestors = {
    "list_presets": list_presets,
    "list_directions": list_directions,
    "list_modes": list_modes,
    "list_solvers": list_solvers,
}
