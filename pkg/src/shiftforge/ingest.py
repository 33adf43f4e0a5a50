"""Parsers turning source annotation files into canonical corpora.

Three sources are supported: scene-graph JSON (one object keyed by image
id), COCO instance annotations, and our own canonical JSONL.
Object names and attributes are lowercased and whitespace-trimmed here and
nowhere else; no stemming or pluralization is applied because that would
silently change subset membership downstream.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ParseError, ValidationError
from .records import (
    SOURCE_CANONICAL,
    SOURCE_COCO,
    SOURCE_SCENE_GRAPH,
    Corpus,
    ImageRecord,
    merge_instances,
)


@dataclass
class IngestReport:
    """Record-level problems collected while parsing in lenient mode."""

    skipped: list[str] = field(default_factory=list)

    def add(self, message: str) -> None:
        self.skipped.append(message)

    def __len__(self) -> int:
        return len(self.skipped)


def _norm(s: str) -> str:
    return s.strip().lower()


def _load_json(path: str | Path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON at byte offset {e.pos}: {e.msg}") from e


def parse_scene_graph(
    path: str | Path,
    *,
    strict: bool = False,
    report: IngestReport | None = None,
) -> Corpus:
    """Parse a scene-graph JSON file into a canonical corpus.

    Expected shape: a JSON object keyed by image id; each value carries an
    ``objects`` mapping (or list) whose entries have a ``name`` and an
    optional ``attributes`` list, plus optional image-level ``location``
    and ``weather`` strings that become general contexts.

    In lenient mode (default), records with missing object names are
    skipped and noted in `report`; ``strict=True`` aborts instead.
    """
    data = _load_json(path)
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected a JSON object keyed by image id, got {type(data).__name__}")
    report = report if report is not None else IngestReport()

    records = []
    for image_id, entry in data.items():
        try:
            records.append(_scene_graph_record(str(image_id), entry))
        except (ParseError, ValidationError) as e:
            if strict:
                raise ParseError(f"{path}: image {image_id}: {e}") from e
            report.add(f"image {image_id}: {e}")
    return Corpus(records=tuple(records), source=SOURCE_SCENE_GRAPH)


def _scene_graph_record(image_id: str, entry) -> ImageRecord:
    if not isinstance(entry, dict):
        raise ParseError(f"expected an object, got {type(entry).__name__}")
    raw = entry.get("objects", {})
    if isinstance(raw, dict):
        items = raw.values()
    elif isinstance(raw, list):
        items = raw
    else:
        raise ParseError(f"field 'objects' must be an object or array, got {type(raw).__name__}")

    instances: list[tuple[str, set[str]]] = []
    for obj in items:
        if not isinstance(obj, dict):
            raise ParseError("object entry is not a JSON object")
        name = obj.get("name")
        if not isinstance(name, str) or not _norm(name):
            raise ParseError("object without a name")
        attrs = obj.get("attributes", [])
        if not isinstance(attrs, list):
            raise ParseError(f"object {name!r}: 'attributes' must be an array")
        instances.append((_norm(name), {_norm(a) for a in attrs if _norm(a)}))

    contexts = set()
    for key in ("location", "weather"):
        value = entry.get(key)
        if isinstance(value, str) and _norm(value):
            contexts.add(_norm(value))
    return ImageRecord(
        image_id=image_id,
        objects=merge_instances(instances),
        general_contexts=frozenset(contexts),
    )


def parse_coco(
    instances_path: str | Path,
    *,
    context_map: dict[str, list[str]] | None = None,
    strict: bool = False,
    report: IngestReport | None = None,
) -> Corpus:
    """Parse COCO instance annotations into a canonical corpus.

    Each annotation contributes its category name as an object with no
    attributes. When `context_map` maps a context name to a list of
    supercategories, an image whose annotations touch any of those
    supercategories gains that general context.
    """
    data = _load_json(instances_path)
    for key in ("images", "annotations", "categories"):
        if key not in data or not isinstance(data[key], list):
            raise ParseError(f"{instances_path}: missing or non-array field {key!r}")

    categories: dict[int, tuple[str, str]] = {}
    for cat in data["categories"]:
        categories[cat["id"]] = (_norm(str(cat["name"])), _norm(str(cat.get("supercategory", ""))))

    super_to_context: dict[str, list[str]] = {}
    if context_map:
        for context, supers in context_map.items():
            for sc in supers:
                super_to_context.setdefault(_norm(sc), []).append(_norm(context))

    image_ids = {img["id"] for img in data["images"]}
    names_by_image: dict[int, list[tuple[str, set[str]]]] = {i: [] for i in image_ids}
    contexts_by_image: dict[int, set[str]] = {i: set() for i in image_ids}

    dangling: list[str] = []
    for ann in data["annotations"]:
        img = ann.get("image_id")
        cat = ann.get("category_id")
        if img not in image_ids:
            dangling.append(f"annotation {ann.get('id')} references unknown image_id {img}")
            continue
        if cat not in categories:
            dangling.append(f"annotation {ann.get('id')} references unknown category_id {cat}")
            continue
        name, supercategory = categories[cat]
        names_by_image[img].append((name, set()))
        for context in super_to_context.get(supercategory, ()):
            contexts_by_image[img].add(context)
    if dangling:
        raise ValidationError(f"{instances_path}: dangling references: " + "; ".join(dangling))

    records = []
    for img in sorted(image_ids, key=str):
        records.append(
            ImageRecord(
                image_id=str(img),
                objects=merge_instances(names_by_image[img]),
                general_contexts=frozenset(contexts_by_image[img]),
            )
        )
    return Corpus(records=tuple(records), source=SOURCE_COCO)


def load_context_map(path: str | Path) -> dict[str, list[str]]:
    """Load a context-map file: {context_name: [supercategory, ...]}."""
    data = _load_json(path)
    if not isinstance(data, dict) or not all(
        isinstance(v, list) and all(isinstance(s, str) for s in v) for v in data.values()
    ):
        raise ParseError(f"{path}: context map must be an object of string arrays")
    return data


# Canonical JSONL: one image per line so corpora stream without loading
# whole files. Field names are part of the external contract.

def record_to_canonical(record: ImageRecord) -> dict:
    return {
        "image_id": record.image_id,
        "objects": [
            {"name": o.name, "attributes": sorted(o.attributes)}
            for o in sorted(record.objects, key=lambda o: o.name)
        ],
        "general_contexts": sorted(record.general_contexts),
    }


def write_canonical(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus as canonical JSONL with deterministic byte output."""
    with open(path, "w", encoding="utf-8") as f:
        for record in corpus.records:
            json.dump(record_to_canonical(record), f, ensure_ascii=False,
                      sort_keys=True, separators=(",", ":"))
            f.write("\n")


def iter_canonical(path: str | Path) -> Iterable[ImageRecord]:
    """Stream records from a canonical JSONL file, validating each line."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{lineno}: malformed JSON: {e.msg}") from e
            yield _canonical_record(obj, path, lineno)


def _canonical_record(obj, path, lineno: int) -> ImageRecord:
    def fail(fieldname: str, why: str):
        raise ParseError(f"{path}:{lineno}: field {fieldname!r} {why}")

    if not isinstance(obj, dict):
        fail("<line>", "must be a JSON object")
    image_id = obj.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        fail("image_id", "missing or not a non-empty string")
    objects = obj.get("objects")
    if not isinstance(objects, list):
        fail("objects", "missing or not an array")
    parsed = []
    for o in objects:
        if not isinstance(o, dict):
            fail("objects", "contains a non-object entry")
        name = o.get("name")
        if not isinstance(name, str) or not name:
            fail("objects.name", "missing or not a non-empty string")
        attrs = o.get("attributes")
        if not isinstance(attrs, list) or not all(isinstance(a, str) and a for a in attrs):
            fail("objects.attributes", "must be an array of non-empty strings")
        parsed.append((name, set(attrs)))
    contexts = obj.get("general_contexts")
    if not isinstance(contexts, list) or not all(isinstance(g, str) and g for g in contexts):
        fail("general_contexts", "must be an array of non-empty strings")
    return ImageRecord(
        image_id=image_id,
        objects=merge_instances(parsed),
        general_contexts=frozenset(contexts),
    )


def parse_canonical(path: str | Path) -> Corpus:
    """Parse a canonical JSONL file into a corpus."""
    return Corpus(records=tuple(iter_canonical(path)), source=SOURCE_CANONICAL)


def canonical_bytes(corpus: Corpus) -> bytes:
    """The exact bytes `write_canonical` would produce, for hashing."""
    buf = io.StringIO()
    for record in corpus.records:
        json.dump(record_to_canonical(record), buf, ensure_ascii=False,
                  sort_keys=True, separators=(",", ":"))
        buf.write("\n")
    return buf.getvalue().encode("utf-8")
