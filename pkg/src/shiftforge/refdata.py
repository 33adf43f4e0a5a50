"""Optional reference vocabularies shipped with the package.

These are pass-through data, not logic: the general-context and attribute
ontologies group the tag vocabulary by theme for users curating recipes,
and the COCO supercategory map gives ready-made indoor/outdoor general
contexts for `parse_coco`.
"""

from __future__ import annotations

import json
from importlib import resources


def _load(name: str) -> dict:
    path = resources.files(__package__).joinpath("data", name)
    return json.loads(path.read_text(encoding="utf-8"))


def general_context_ontology() -> dict[str, list[str]]:
    """General contexts grouped by theme (location, weather, room, place)."""
    return _load("general_contexts.json")


def attribute_ontology() -> dict[str, list[str]]:
    """Object attributes grouped by theme (color, material, pose, ...)."""
    return _load("attribute_contexts.json")


def coco_indoor_outdoor_map() -> dict[str, list[str]]:
    """Supercategory merge giving COCO images indoor/outdoor contexts."""
    return _load("coco_indoor_outdoor.json")
