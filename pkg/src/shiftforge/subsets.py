"""Per-class context subsets: enumerate candidates from metadata tags and
drop the ones below a size threshold.

A subset is all images of one class that share one context tag. Three tag
kinds exist: co-occurring object presence, an attribute carried by the
class's own instances, and image-level general contexts. Subsets of one
class may overlap in images; that is expected and handled downstream.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, ValidationError
from .records import Corpus

KIND_OBJECT = "object_presence"
KIND_ATTRIBUTE = "attribute"
KIND_GENERAL = "general_context"
KINDS = (KIND_OBJECT, KIND_ATTRIBUTE, KIND_GENERAL)

DEFAULT_MIN_SIZE = 25


@dataclass(frozen=True, slots=True)
class ContextTag:
    kind: str
    value: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown context kind {self.kind!r}")
        if not self.value:
            raise ValidationError("context value must be non-empty")

    def __str__(self) -> str:
        return f"{self.kind}:{self.value}"


@dataclass(frozen=True)
class Subset:
    """All images of `class_name` sharing one context tag."""

    class_name: str
    context: ContextTag
    image_ids: tuple[str, ...]  # sorted, deduplicated

    def __post_init__(self):
        if self.context.kind == KIND_OBJECT and self.context.value == self.class_name:
            raise ValidationError(
                f"object-presence context {self.context.value!r} equals the class itself"
            )

    @property
    def size(self) -> int:
        return len(self.image_ids)

    @property
    def name(self) -> str:
        return f"{self.class_name}({self.context.value})"


@dataclass(frozen=True)
class SubsetCollection:
    class_name: str
    min_size: int
    class_image_count: int
    subsets: tuple[Subset, ...]

    def by_context(self) -> dict[ContextTag, Subset]:
        return {s.context: s for s in self.subsets}


def _image_tags(record, class_name: str):
    """Context tags this image contributes for `class_name` membership."""
    for other in record.object_names:
        if other != class_name:
            yield (KIND_OBJECT, other)
    for attr in record.attributes_of(class_name):
        yield (KIND_ATTRIBUTE, attr)
    for ctx in record.general_contexts:
        yield (KIND_GENERAL, ctx)


def generate_subsets(
    corpus: Corpus, class_name: str, min_size: int = DEFAULT_MIN_SIZE
) -> SubsetCollection:
    """Enumerate the context subsets of one class and drop small ones.

    Membership by tag kind: object presence means the image contains an
    object with that name (other than the class itself); attribute means
    some instance of the class carries it; general context means the
    image-level contexts include it. A class absent from the corpus yields
    an empty collection, which is not an error.
    """
    if min_size < 1:
        raise ValidationError(f"min_size must be >= 1, got {min_size}")
    candidates: dict[tuple[str, str], set[str]] = {}
    class_image_count = 0
    for record in corpus.records:
        if class_name not in record.object_names:
            continue
        class_image_count += 1
        for tag in _image_tags(record, class_name):
            candidates.setdefault(tag, set()).add(record.image_id)

    subsets = [
        Subset(class_name, ContextTag(kind, value), tuple(sorted(ids)))
        for (kind, value), ids in candidates.items()
        if len(ids) >= min_size
    ]
    subsets.sort(key=lambda s: (s.context.kind, s.context.value))
    return SubsetCollection(
        class_name=class_name,
        min_size=min_size,
        class_image_count=class_image_count,
        subsets=tuple(subsets),
    )


def generate_all_subsets(
    corpus: Corpus, min_size: int = DEFAULT_MIN_SIZE
) -> dict[str, SubsetCollection]:
    """Subset collections for every class that retains at least one subset.

    Equivalent to calling `generate_subsets` per vocabulary class but runs
    in two corpus passes: a counting pass, then id materialization only for
    (class, tag) pairs that meet the threshold.
    """
    if min_size < 1:
        raise ValidationError(f"min_size must be >= 1, got {min_size}")
    counts: dict[tuple[str, str, str], int] = {}
    class_image_counts: dict[str, int] = {}
    for record in corpus.records:
        names = record.object_names
        for class_name in names:
            class_image_counts[class_name] = class_image_counts.get(class_name, 0) + 1
            for kind, value in _image_tags(record, class_name):
                key = (class_name, kind, value)
                counts[key] = counts.get(key, 0) + 1

    keep = {key for key, n in counts.items() if n >= min_size}
    members: dict[tuple[str, str, str], list[str]] = {key: [] for key in keep}
    for record in corpus.records:
        names = record.object_names
        for class_name in names:
            for kind, value in _image_tags(record, class_name):
                key = (class_name, kind, value)
                if key in keep:
                    members[key].append(record.image_id)

    by_class: dict[str, list[Subset]] = {}
    for (class_name, kind, value), ids in members.items():
        subset = Subset(class_name, ContextTag(kind, value), tuple(sorted(set(ids))))
        by_class.setdefault(class_name, []).append(subset)

    collections = {}
    for class_name, subsets in sorted(by_class.items()):
        subsets.sort(key=lambda s: (s.context.kind, s.context.value))
        collections[class_name] = SubsetCollection(
            class_name=class_name,
            min_size=min_size,
            class_image_count=class_image_counts[class_name],
            subsets=tuple(subsets),
        )
    return collections


def corpus_statistics(corpus: Corpus, min_size: int = DEFAULT_MIN_SIZE) -> dict:
    """Summary statistics of the subset construction, as a JSON-able dict."""
    collections = generate_all_subsets(corpus, min_size) if len(corpus) else {}
    return summarize_collections(corpus, collections, min_size)


def summarize_collections(
    corpus: Corpus, collections: dict[str, SubsetCollection], min_size: int
) -> dict:
    """The `corpus_statistics` summary, given already-built collections."""
    sizes = [s.size for c in collections.values() for s in c.subsets]
    per_class = [len(c.subsets) for c in collections.values()]
    retained: dict[str, set[str]] = {kind: set() for kind in KINDS}
    for c in collections.values():
        for s in c.subsets:
            retained[s.context.kind].add(s.context.value)
    vocab = corpus.vocab_stats if len(corpus) else None
    return {
        "min_size": min_size,
        "images": len(corpus),
        "classes_total": vocab.object_names if vocab else 0,
        "classes_with_subsets": len(collections),
        "subsets_total": len(sizes),
        "mean_subsets_per_class": round(sum(per_class) / len(per_class), 4) if per_class else 0.0,
        "mean_subset_size": round(sum(sizes) / len(sizes), 4) if sizes else 0.0,
        "median_subset_size": float(statistics.median(sizes)) if sizes else 0.0,
        "context_vocabulary": {
            "object_presence": vocab.object_names if vocab else 0,
            "attribute": vocab.attributes if vocab else 0,
            "general_context": vocab.general_contexts if vocab else 0,
            "total": vocab.total if vocab else 0,
        },
        "retained_contexts": {
            "object_presence": len(retained[KIND_OBJECT]),
            "attribute": len(retained[KIND_ATTRIBUTE]),
            "general_context": len(retained[KIND_GENERAL]),
            "total": len(set().union(*retained.values())) if sizes else 0,
        },
    }


def collection_to_json(collection: SubsetCollection) -> dict:
    return {
        "class": collection.class_name,
        "min_size": collection.min_size,
        "class_image_count": collection.class_image_count,
        "subsets": [
            {"kind": s.context.kind, "value": s.context.value, "image_ids": list(s.image_ids)}
            for s in collection.subsets
        ],
    }


def collection_from_json(obj: dict) -> SubsetCollection:
    try:
        subsets = tuple(
            Subset(obj["class"], ContextTag(s["kind"], s["value"]), tuple(s["image_ids"]))
            for s in obj["subsets"]
        )
        return SubsetCollection(
            class_name=obj["class"],
            min_size=obj["min_size"],
            class_image_count=obj.get("class_image_count", 0),
            subsets=subsets,
        )
    except KeyError as e:
        raise ParseError(f"subset collection JSON missing field {e}") from e


def write_collection(collection: SubsetCollection, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(collection_to_json(collection), f, ensure_ascii=False, sort_keys=True)
        f.write("\n")


def read_collection(path: str | Path) -> SubsetCollection:
    with open(path, "r", encoding="utf-8") as f:
        return collection_from_json(json.load(f))
