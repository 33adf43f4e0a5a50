"""Materialize distribution-shift benchmarks as image-id manifests.

Three recipes: domain-generalization splits (fixed test domains, train
domains chosen at controlled embedding distance), subpopulation-shift
splits (same cells, different mixture weights), and training-conflict
splits (fixed-cap training subsets with in/out-of-domain evaluation sets).

Every sampler removes train/test leakage before sampling, draws without
replacement from seeded named substreams, and validates the emitted
manifest, so identical inputs and seed give byte-identical output.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParseError, ValidationError
from .seeding import substream_seed
from .subsets import Subset

ROLE_TRAIN = "train"
ROLE_TEST = "test"


@dataclass(frozen=True)
class GroupSpec:
    """One named pool of image ids playing a role in a benchmark task."""

    name: str
    class_name: str
    label: int
    role: str
    image_ids: tuple[str, ...]
    context: str = ""
    budget: int | None = None  # None: test takes all, train shares the class budget
    embedding: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.role not in (ROLE_TRAIN, ROLE_TEST):
            raise ValidationError(f"group {self.name!r}: unknown role {self.role!r}")
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ValidationError(f"group {self.name!r}: duplicate image ids in pool")

    @property
    def id_set(self) -> frozenset[str]:
        return frozenset(self.image_ids)


@dataclass(frozen=True)
class ManifestGroup:
    name: str
    class_label: int
    role: str
    context: str
    image_ids: tuple[str, ...]
    d: float | None = None
    p: float | None = None


@dataclass(frozen=True)
class SplitManifest:
    """A fully materialized benchmark: named groups of image ids."""

    task: str
    seed: int
    classes: tuple[str, ...]
    groups: tuple[ManifestGroup, ...]
    annotations: dict = field(default_factory=dict)
    created_from: dict = field(default_factory=dict)

    def ids_by_role(self, role: str) -> set[str]:
        out: set[str] = set()
        for g in self.groups:
            if g.role == role:
                out.update(g.image_ids)
        return out

    def validate(self, per_class_unique: bool = True) -> None:
        """Assert the manifest invariants; raises ValidationError.

        `per_class_unique=False` is for conflict manifests, whose groups
        are multi-membership subsets rather than disjoint classification
        cells; the no-leakage invariant still applies.
        """
        train = self.ids_by_role(ROLE_TRAIN)
        test = self.ids_by_role(ROLE_TEST)
        leaked = train & test
        if leaked:
            raise ValidationError(
                f"manifest {self.task!r}: {len(leaked)} image ids appear in both train and test"
            )
        for g in self.groups:
            if len(set(g.image_ids)) != len(g.image_ids):
                raise ValidationError(f"group {g.name!r}: duplicate ids within group")
            if not 0 <= g.class_label < len(self.classes):
                raise ValidationError(f"group {g.name!r}: label {g.class_label} out of range")
        if not per_class_unique:
            return
        seen: dict[tuple[str, int], set[str]] = {}
        for g in self.groups:
            bucket = seen.setdefault((g.role, g.class_label), set())
            dup = bucket & set(g.image_ids)
            if dup:
                raise ValidationError(
                    f"group {g.name!r}: {len(dup)} ids already used by another "
                    f"{g.role} group of class {self.classes[g.class_label]!r}"
                )
            bucket.update(g.image_ids)


def remove_leakage(train_ids: Iterable[str], test_ids: Iterable[str]) -> frozenset[str]:
    """Drop from the training pool every id that occurs in the test set."""
    return frozenset(train_ids) - frozenset(test_ids)


def apportion(total: int, weights: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of `total` into len(weights) parts.

    Ties on remainder go to the larger quota, then to input order, so the
    result is deterministic and sums exactly to `total`.
    """
    if total < 0:
        raise ValidationError(f"cannot apportion negative total {total}")
    if not weights or any(w < 0 for w in weights) or sum(weights) == 0:
        raise ValidationError("apportion needs nonnegative weights with a positive sum")
    scale = sum(weights)
    quotas = [total * w / scale for w in weights]
    base = [math.floor(q) for q in quotas]
    leftover = total - sum(base)
    order = sorted(
        range(len(weights)), key=lambda i: (-(quotas[i] - base[i]), -quotas[i], i)
    )
    for i in order[:leftover]:
        base[i] += 1
    return base


def rank_train_candidates(
    candidates: Sequence[tuple[str, Sequence[float]]],
    test_embedding: Sequence[float],
) -> list[tuple[str, float]]:
    """Candidates sorted by ascending embedding distance to the test group.

    Ties break lexicographically on the candidate name.
    """
    ranked = []
    for name, vector in candidates:
        if len(vector) != len(test_embedding):
            raise ValidationError(
                f"candidate {name!r}: dimension {len(vector)} != test dimension {len(test_embedding)}"
            )
        ranked.append((name, float(math.dist(vector, test_embedding))))
    ranked.sort(key=lambda item: (item[1], item[0]))
    return ranked


def _sample(pool: frozenset[str], count: int, seed: int) -> tuple[str, ...]:
    """Seeded uniform sample without replacement, emitted sorted."""
    ordered = sorted(pool)
    if count == len(ordered):
        return tuple(ordered)
    chosen = random.Random(seed).sample(ordered, count)
    return tuple(sorted(chosen))


def _task_classes(specs: Sequence[GroupSpec]) -> tuple[str, ...]:
    by_label: dict[int, str] = {}
    for s in specs:
        if s.label in by_label and by_label[s.label] != s.class_name:
            raise ValidationError(
                f"label {s.label} maps to both {by_label[s.label]!r} and {s.class_name!r}"
            )
        by_label[s.label] = s.class_name
    labels = sorted(by_label)
    if labels != list(range(len(labels))):
        raise ValidationError(f"class labels must be contiguous from 0, got {labels}")
    return tuple(by_label[i] for i in labels)


def sample_domain_split(
    specs: Sequence[GroupSpec],
    total_train_per_class: int,
    seed: int,
    task: str = "dg",
    created_from: dict | None = None,
) -> SplitManifest:
    """Materialize a domain-generalization split.

    Test groups take all their images. Train groups are sampled uniformly
    without replacement from their leakage-removed pools, hitting the
    per-class budget exactly; a union source is one deduplicated pool.
    Each train group is annotated with its embedding distance d to the
    same-class test group when both embeddings are known.
    """
    if total_train_per_class < 0:
        raise ValidationError("total_train_per_class must be >= 0")
    classes = _task_classes(specs)
    tests = [s for s in specs if s.role == ROLE_TEST]
    trains = [s for s in specs if s.role == ROLE_TRAIN]
    if len({s.name for s in specs}) != len(specs):
        raise ValidationError("group names must be unique within a task")

    taken: set[str] = set()
    for t in tests:
        overlap = taken & t.id_set
        if overlap:
            raise ValidationError(
                f"test group {t.name!r} overlaps another test group on {len(overlap)} ids"
            )
        taken |= t.id_set
    all_test_ids = frozenset(taken)

    budgets = _train_budgets(trains, total_train_per_class)
    groups: list[ManifestGroup] = []
    for s in specs:
        if s.role == ROLE_TEST:
            groups.append(
                ManifestGroup(
                    name=s.name,
                    class_label=s.label,
                    role=ROLE_TEST,
                    context=s.context,
                    image_ids=tuple(sorted(s.image_ids)),
                )
            )
            continue
        pool = remove_leakage(s.id_set, all_test_ids)
        budget = budgets[s.name]
        if budget > len(pool):
            raise ValidationError(
                f"train group {s.name!r}: budget {budget} exceeds the {len(pool)} "
                f"images available after leakage removal (short by {budget - len(pool)})"
            )
        ids = _sample(pool, budget, substream_seed(seed, "sample", task, s.name))
        groups.append(
            ManifestGroup(
                name=s.name,
                class_label=s.label,
                role=ROLE_TRAIN,
                context=s.context,
                image_ids=ids,
                d=_distance_to_test(s, tests),
            )
        )

    manifest = SplitManifest(
        task=task,
        seed=seed,
        classes=classes,
        groups=tuple(groups),
        annotations={"total_train_per_class": total_train_per_class},
        created_from=created_from or {},
    )
    manifest.validate()
    return manifest


def _train_budgets(trains: Sequence[GroupSpec], per_class: int) -> dict[str, int]:
    budgets: dict[str, int] = {}
    by_class: dict[str, list[GroupSpec]] = {}
    for s in trains:
        by_class.setdefault(s.class_name, []).append(s)
    for class_name, members in by_class.items():
        fixed = sum(s.budget for s in members if s.budget is not None)
        flexible = [s for s in members if s.budget is None]
        remaining = per_class - fixed
        if remaining < 0:
            raise ValidationError(
                f"class {class_name!r}: explicit budgets ({fixed}) exceed the "
                f"per-class total ({per_class})"
            )
        if flexible:
            shares = apportion(remaining, [1.0] * len(flexible))
            for s, n in zip(flexible, shares):
                budgets[s.name] = n
        elif remaining:
            raise ValidationError(
                f"class {class_name!r}: explicit budgets sum to {fixed}, "
                f"not the per-class total {per_class}"
            )
        for s in members:
            if s.budget is not None:
                budgets[s.name] = s.budget
    return budgets


def _distance_to_test(train: GroupSpec, tests: Sequence[GroupSpec]) -> float | None:
    if train.embedding is None:
        return None
    matches = [t for t in tests if t.class_name == train.class_name and t.embedding is not None]
    if len(matches) != 1:
        return None
    test = matches[0]
    if len(test.embedding) != len(train.embedding):
        raise ValidationError(
            f"group {train.name!r}: embedding dimension {len(train.embedding)} != "
            f"test group {test.name!r} dimension {len(test.embedding)}"
        )
    return float(math.dist(train.embedding, test.embedding))


def sample_subpop_split(
    pairs: Sequence[tuple[GroupSpec, GroupSpec]],
    p: float,
    total_train: int,
    balanced_test: int,
    seed: int,
    task: str = "subpop",
    created_from: dict | None = None,
) -> SplitManifest:
    """Materialize a subpopulation-shift split.

    `pairs` gives (majority, minority) context cells per class. p is the
    combined minority share of the training data, divided evenly across
    the minority cells; each class trains on total_train/len(pairs)
    images. The test set is balanced across all class-context cells and
    sampled first, so training pools are leakage-removed against it.
    """
    if not 0.0 <= p <= 0.5:
        raise ValidationError(f"minority fraction p must be in [0, 0.5], got {p}")
    if not pairs:
        raise ValidationError("at least one (majority, minority) pair is required")
    for majority, minority in pairs:
        if majority.class_name != minority.class_name:
            raise ValidationError(
                f"pair mixes classes {majority.class_name!r} and {minority.class_name!r}"
            )
    specs = [s for pair in pairs for s in pair]
    classes = _task_classes(specs)
    if len({s.name for s in specs}) != len(specs):
        raise ValidationError("cell names must be unique within a task")

    class_totals = apportion(total_train, [1.0] * len(pairs))
    cell_tests = apportion(balanced_test, [1.0] * (2 * len(pairs)))

    # test side first: balanced cells, sampled from the full pools; ids that
    # fall in several cells (multi-label images) go to the first cell drawn
    test_groups: list[ManifestGroup] = []
    used_test: set[str] = set()
    cell_index = 0
    for majority, minority in pairs:
        for cell in (majority, minority):
            want = cell_tests[cell_index]
            cell_index += 1
            pool = cell.id_set - used_test
            if want > len(pool):
                raise ValidationError(
                    f"test cell {cell.name!r}: needs {want} images, only {len(pool)} available"
                )
            ids = _sample(frozenset(pool), want, substream_seed(seed, "sample", task, "test", cell.name))
            used_test.update(ids)
            test_groups.append(
                ManifestGroup(
                    name=f"test:{cell.name}",
                    class_label=cell.label,
                    role=ROLE_TEST,
                    context=cell.context,
                    image_ids=ids,
                )
            )
    all_test_ids = frozenset(used_test)

    train_groups: list[ManifestGroup] = []
    taken: set[str] = set()
    for (majority, minority), class_total in zip(pairs, class_totals):
        minority_budget, majority_budget = apportion(class_total, [p, 1.0 - p])
        # minority first: its budget is the small, exactness-critical one
        for cell, budget in ((minority, minority_budget), (majority, majority_budget)):
            pool = cell.id_set - all_test_ids - taken
            if budget > len(pool):
                raise ValidationError(
                    f"train cell {cell.name!r}: needs {budget} images, only {len(pool)} "
                    f"available after leakage removal"
                )
            ids = _sample(frozenset(pool), budget, substream_seed(seed, "sample", task, "train", cell.name))
            taken.update(ids)
            train_groups.append(
                ManifestGroup(
                    name=f"train:{cell.name}",
                    class_label=cell.label,
                    role=ROLE_TRAIN,
                    context=cell.context,
                    image_ids=ids,
                    p=round(budget / class_total, 10) if class_total else None,
                )
            )

    manifest = SplitManifest(
        task=task,
        seed=seed,
        classes=classes,
        groups=tuple(train_groups + test_groups),
        annotations={"p": p, "total_train": total_train, "balanced_test": balanced_test},
        created_from=created_from or {},
    )
    manifest.validate()
    return manifest


@dataclass(frozen=True)
class ConflictSplit:
    """Per-subset train/in-domain-eval partition plus out-of-domain evals."""

    cap: int
    seed: int
    classes: tuple[str, ...]
    train_groups: tuple[ManifestGroup, ...]
    in_domain_eval: tuple[ManifestGroup, ...]
    ood_eval: tuple[ManifestGroup, ...]

    @property
    def train_names(self) -> tuple[str, ...]:
        return tuple(g.name.split(":", 1)[1] for g in self.train_groups)

    @property
    def eval_names(self) -> tuple[str, ...]:
        return tuple(g.name.split(":", 1)[1] for g in self.in_domain_eval + self.ood_eval)

    def to_manifest(self, task: str = "conflict", created_from: dict | None = None) -> SplitManifest:
        manifest = SplitManifest(
            task=task,
            seed=self.seed,
            classes=self.classes,
            groups=self.train_groups + self.in_domain_eval + self.ood_eval,
            annotations={"cap": self.cap},
            created_from=created_from or {},
        )
        # subsets legitimately share images (multi-membership)
        manifest.validate(per_class_unique=False)
        return manifest


def _subset_names(subsets: Sequence[Subset]) -> list[str]:
    plain = [s.name for s in subsets]
    counts: dict[str, int] = {}
    for name in plain:
        counts[name] = counts.get(name, 0) + 1
    names = []
    for s, name in zip(subsets, plain):
        if counts[name] > 1:
            names.append(f"{s.class_name}({s.context.kind}:{s.context.value})")
        else:
            names.append(name)
    return names


def build_conflict_split(
    train_subsets: Sequence[Subset],
    ood_subsets: Sequence[Subset],
    cap: int = 50,
    seed: int = 0,
) -> ConflictSplit:
    """Split subsets into capped training samples and evaluation sets.

    Each training subset contributes exactly `cap` seeded-sampled train
    ids; its remaining images become its in-domain evaluation set. OOD
    subsets are taken whole. Training ids never intersect any evaluation
    set: OOD images are excluded from the sampling pools, and in-domain
    evaluations exclude everything sampled for training.
    """
    if cap < 1:
        raise ValidationError(f"per-subset cap must be >= 1, got {cap}")
    if not train_subsets:
        raise ValidationError("at least one training subset is required")
    all_names = _subset_names(list(train_subsets) + list(ood_subsets))
    if len(set(all_names)) != len(all_names):
        raise ValidationError("subset names are not unique across the chosen subsets")
    train_names = all_names[: len(train_subsets)]
    ood_names = all_names[len(train_subsets):]

    classes = tuple(dict.fromkeys(s.class_name for s in list(train_subsets) + list(ood_subsets)))
    label = {c: i for i, c in enumerate(classes)}

    ood_ids: set[str] = set()
    for s in ood_subsets:
        ood_ids.update(s.image_ids)

    samples: dict[str, tuple[str, ...]] = {}
    for s, name in zip(train_subsets, train_names):
        if cap > s.size:
            raise ValidationError(
                f"subset {name!r}: cap {cap} exceeds its size {s.size}"
            )
        if cap == s.size:
            raise ValidationError(
                f"subset {name!r}: cap {cap} equals its size, leaving an empty "
                "in-domain evaluation set; shrink the cap"
            )
        pool = frozenset(s.image_ids) - ood_ids
        if cap > len(pool):
            raise ValidationError(
                f"subset {name!r}: only {len(pool)} images remain after excluding "
                f"out-of-domain evaluation ids (cap {cap})"
            )
        samples[name] = _sample(pool, cap, substream_seed(seed, "conflict", name))

    train_all: set[str] = set()
    for ids in samples.values():
        train_all.update(ids)

    train_groups = []
    eval_groups = []
    for s, name in zip(train_subsets, train_names):
        eval_ids = tuple(sorted(set(s.image_ids) - train_all))
        if not eval_ids:
            raise ValidationError(
                f"subset {name!r}: no images left for in-domain evaluation after sampling"
            )
        train_groups.append(
            ManifestGroup(
                name=f"train:{name}",
                class_label=label[s.class_name],
                role=ROLE_TRAIN,
                context=str(s.context),
                image_ids=samples[name],
            )
        )
        eval_groups.append(
            ManifestGroup(
                name=f"eval:{name}",
                class_label=label[s.class_name],
                role=ROLE_TEST,
                context=str(s.context),
                image_ids=eval_ids,
            )
        )
    ood_groups = []
    for s, name in zip(ood_subsets, ood_names):
        ood_groups.append(
            ManifestGroup(
                name=f"ood:{name}",
                class_label=label[s.class_name],
                role=ROLE_TEST,
                context=str(s.context),
                image_ids=tuple(sorted(s.image_ids)),
            )
        )

    split = ConflictSplit(
        cap=cap,
        seed=seed,
        classes=classes,
        train_groups=tuple(train_groups),
        in_domain_eval=tuple(eval_groups),
        ood_eval=tuple(ood_groups),
    )
    split.to_manifest()  # runs the leakage/shape validation
    return split


def manifest_to_json(manifest: SplitManifest) -> dict:
    groups = []
    for g in manifest.groups:
        entry = {
            "name": g.name,
            "class_label": g.class_label,
            "role": g.role,
            "context": g.context,
            "image_ids": list(g.image_ids),
        }
        if g.d is not None:
            entry["d"] = g.d
        if g.p is not None:
            entry["p"] = g.p
        groups.append(entry)
    return {
        "task": manifest.task,
        "seed": manifest.seed,
        "classes": list(manifest.classes),
        "groups": groups,
        "annotations": manifest.annotations,
        "created_from": manifest.created_from,
    }


def manifest_from_json(obj: dict) -> SplitManifest:
    try:
        groups = tuple(
            ManifestGroup(
                name=g["name"],
                class_label=g["class_label"],
                role=g["role"],
                context=g.get("context", ""),
                image_ids=tuple(g["image_ids"]),
                d=g.get("d"),
                p=g.get("p"),
            )
            for g in obj["groups"]
        )
        return SplitManifest(
            task=obj["task"],
            seed=obj["seed"],
            classes=tuple(obj["classes"]),
            groups=groups,
            annotations=obj.get("annotations", {}),
            created_from=obj.get("created_from", {}),
        )
    except KeyError as e:
        raise ParseError(f"manifest JSON missing field {e}") from e


def write_manifest(manifest: SplitManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest_to_json(manifest), f, ensure_ascii=False, sort_keys=True)
        f.write("\n")


def read_manifest(path: str | Path) -> SplitManifest:
    with open(path, "r", encoding="utf-8") as f:
        return manifest_from_json(json.load(f))
