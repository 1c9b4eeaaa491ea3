"""sadforge: scene-graph-grounded instruction dataset construction."""

__version__ = "0.1.0"

from .sgl import SceneGraph, ObjectNode, Relation, parse_sgl, serialize_sgl, prune, validate

__all__ = [
    "SceneGraph",
    "ObjectNode",
    "Relation",
    "parse_sgl",
    "serialize_sgl",
    "prune",
    "validate",
    "__version__",
]
