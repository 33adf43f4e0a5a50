"""Canonical record types for metadata-tagged image corpora."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

from .errors import ValidationError

SOURCE_SCENE_GRAPH = "scene_graph"
SOURCE_COCO = "coco"
SOURCE_CANONICAL = "canonical"
SOURCES = (SOURCE_SCENE_GRAPH, SOURCE_COCO, SOURCE_CANONICAL)


@dataclass(frozen=True, slots=True)
class ObjectAnnotation:
    """One annotated object instance: a class label plus its attribute tags."""

    name: str
    attributes: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.name:
            raise ValidationError("object name must be non-empty")
        if any(not a for a in self.attributes):
            raise ValidationError(f"object {self.name!r} has an empty attribute")


@dataclass(frozen=True, slots=True)
class ImageRecord:
    """One image: its objects and its image-level general contexts."""

    image_id: str
    objects: tuple[ObjectAnnotation, ...] = ()
    general_contexts: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be non-empty")
        if any(not g for g in self.general_contexts):
            raise ValidationError(f"image {self.image_id} has an empty general context")

    @property
    def object_names(self) -> frozenset[str]:
        return frozenset(o.name for o in self.objects)

    def attributes_of(self, name: str) -> frozenset[str]:
        """Union of attributes across all instances of `name` in this image."""
        out: set[str] = set()
        for o in self.objects:
            if o.name == name:
                out |= o.attributes
        return frozenset(out)


@dataclass(frozen=True)
class VocabStats:
    object_names: int
    attributes: int
    general_contexts: int

    @property
    def total(self) -> int:
        return self.object_names + self.attributes + self.general_contexts


@dataclass(frozen=True)
class Corpus:
    """An immutable collection of image records from one source."""

    records: tuple[ImageRecord, ...]
    source: str = SOURCE_CANONICAL

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValidationError(f"unknown corpus source {self.source!r}")
        seen: set[str] = set()
        for r in self.records:
            if r.image_id in seen:
                raise ValidationError(f"duplicate image_id {r.image_id!r} in corpus")
            seen.add(r.image_id)

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def vocab_stats(self) -> VocabStats:
        names: set[str] = set()
        attrs: set[str] = set()
        contexts: set[str] = set()
        for r in self.records:
            for o in r.objects:
                names.add(o.name)
                attrs |= o.attributes
            contexts |= r.general_contexts
        return VocabStats(len(names), len(attrs), len(contexts))

    @cached_property
    def object_vocabulary(self) -> frozenset[str]:
        out: set[str] = set()
        for r in self.records:
            out |= r.object_names
        return frozenset(out)


def merge_instances(raw_objects: list[tuple[str, set[str]]]) -> tuple[ObjectAnnotation, ...]:
    """Collapse repeated instance names into one annotation per name.

    Presence is what downstream consumes, so duplicate names collapse; the
    per-instance attribute sets union onto the shared name.
    """
    by_name: dict[str, set[str]] = {}
    for name, attrs in raw_objects:
        by_name.setdefault(name, set()).update(attrs)
    return tuple(
        ObjectAnnotation(name, frozenset(attrs)) for name, attrs in sorted(by_name.items())
    )
