"""Triple store: parsing, typed entities, relation smoothing, splits, noise.

Entities and relations get dense integer ids in first-seen order, which makes
parsing deterministic and lets serialize/parse round-trip a graph exactly.
All randomized operations take an explicit seed and are pure functions of
(inputs, seed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SMOOTH_CLASSES = ("positive", "interaction", "negative")
DEFAULT_ENTITY_TYPE = "node"


class ParseError(ValueError):
    pass


class ConflictError(ValueError):
    pass


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class LinkExample:
    """A task instance over an entity pair.

    label is an int for binary (0/1) and multi-class tasks (class index),
    or a sorted tuple of class indices for multi-label tasks.
    """

    head: int
    tail: int
    label: object


@dataclass
class LinkDataset:
    task_mode: str                      # binary | multi_class | multi_label
    class_names: tuple
    examples: tuple


@dataclass
class DatasetSplit:
    fold: int
    train: tuple
    valid: tuple
    test: tuple


@dataclass
class SmoothingMap:
    """relation name -> smoothed class; policy governs unmapped relations."""

    mapping: dict
    policy: str = "keep"                # keep | drop | strict

    def __post_init__(self):
        for rel, cls in self.mapping.items():
            if cls not in SMOOTH_CLASSES:
                raise ValueError(f"smoothing: unknown class {cls!r} for relation {rel!r}")
        if self.policy not in ("keep", "drop", "strict"):
            raise ValueError(f"smoothing: unknown policy {self.policy!r}")


class KnowledgeGraph:
    """Immutable-by-convention triple store with adjacency indexes.

    Indexes are derived on construction and never mutated; operations that
    change the triple set build a fresh graph.
    """

    def __init__(self, entity_names, entity_types, relation_names, triples,
                 reflexive_relations=()):
        self.entity_names = tuple(entity_names)
        self.entity_types = tuple(entity_types)
        self.relation_names = tuple(relation_names)
        self.reflexive_relations = frozenset(reflexive_relations)
        if len(self.entity_names) != len(self.entity_types):
            raise ValueError("entity_names and entity_types length mismatch")
        if len(set(self.entity_names)) != len(self.entity_names):
            raise ConflictError("duplicate entity name")
        if len(set(self.relation_names)) != len(self.relation_names):
            raise ConflictError("duplicate relation name")
        self.entity_ids = {n: i for i, n in enumerate(self.entity_names)}
        self.relation_ids = {n: i for i, n in enumerate(self.relation_names)}

        seen = set()
        uniq = []
        for t in triples:
            if not (0 <= t.head < len(self.entity_names)):
                raise ValueError(f"triple head id out of range: {t}")
            if not (0 <= t.tail < len(self.entity_names)):
                raise ValueError(f"triple tail id out of range: {t}")
            if not (0 <= t.relation < len(self.relation_names)):
                raise ValueError(f"triple relation id out of range: {t}")
            if t.head == t.tail and self.relation_names[t.relation] not in self.reflexive_relations:
                raise ValueError(
                    f"self-loop triple on non-reflexive relation "
                    f"{self.relation_names[t.relation]!r}"
                )
            key = (t.head, t.relation, t.tail)
            if key in seen:
                continue
            seen.add(key)
            uniq.append(t)
        self.triples = tuple(uniq)
        self.triple_set = frozenset(seen)

        n = len(self.entity_names)
        self.out_edges = [[] for _ in range(n)]   # triple indexes by head
        self.in_edges = [[] for _ in range(n)]    # triple indexes by tail
        self.by_relation = [[] for _ in self.relation_names]
        nbr = [set() for _ in range(n)]
        for i, t in enumerate(self.triples):
            self.out_edges[t.head].append(i)
            self.in_edges[t.tail].append(i)
            self.by_relation[t.relation].append(i)
            nbr[t.head].add(t.tail)
            nbr[t.tail].add(t.head)
        self.neighbors = [np.array(sorted(s - {i}), dtype=np.intp) for i, s in enumerate(nbr)]

    @property
    def n_entities(self):
        return len(self.entity_names)

    @property
    def n_relations(self):
        return len(self.relation_names)

    def entity_type(self, entity_id: int) -> str:
        return self.entity_types[entity_id]

    def has_triple(self, head: int, relation: int, tail: int) -> bool:
        return (head, relation, tail) in self.triple_set

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entity_names == other.entity_names
            and self.entity_types == other.entity_types
            and self.relation_names == other.relation_names
            and self.triples == other.triples
        )

    def validate(self) -> None:
        """Full rescan of the index invariants; raises on any mismatch."""
        for rel, idxs in enumerate(self.by_relation):
            for i in idxs:
                assert self.triples[i].relation == rel
        for node in range(self.n_entities):
            for i in self.out_edges[node]:
                assert self.triples[i].head == node
            for i in self.in_edges[node]:
                assert self.triples[i].tail == node
        count = sum(len(x) for x in self.by_relation)
        assert count == len(self.triples), "relation index does not cover every triple"
        assert sum(len(x) for x in self.out_edges) == len(self.triples)
        assert sum(len(x) for x in self.in_edges) == len(self.triples)
        assert len(self.triple_set) == len(self.triples)

    # -- serialization ------------------------------------------------------

    def to_triples_tsv(self) -> str:
        # relation header pins vocabulary order (and unused relations) for round-trips
        lines = [f"#relation\t{r}" for r in self.relation_names]
        for t in self.triples:
            lines.append(
                f"{self.entity_names[t.head]}\t{self.relation_names[t.relation]}"
                f"\t{self.entity_names[t.tail]}"
            )
        return "\n".join(lines) + ("\n" if lines else "")

    def to_types_tsv(self) -> str:
        lines = [f"{n}\t{ty}" for n, ty in zip(self.entity_names, self.entity_types)]
        return "\n".join(lines) + ("\n" if lines else "")


def parse_triples(lines: Iterable[str], types_lines: Iterable[str] | None = None,
                  reflexive_relations: Sequence[str] = ()) -> KnowledgeGraph:
    """Build a graph from tab-separated head/relation/tail lines.

    `#`-prefixed lines are comments, except `#type<TAB>entity<TAB>type`
    header lines, which assign entity types inline. A separate two-column
    types stream may be given instead (processed first, so it also pins
    entity id order). Duplicate triples collapse to the first occurrence.
    """
    names: list = []
    types: dict = {}
    ids: dict = {}

    def intern(name: str) -> int:
        if name not in ids:
            ids[name] = len(names)
            names.append(name)
        return ids[name]

    def assign_type(entity: str, etype: str, where: str):
        prev = types.get(entity)
        if prev is not None and prev != etype:
            raise ConflictError(
                f"{where}: entity {entity!r} typed {etype!r} but already {prev!r}"
            )
        types[entity] = etype
        intern(entity)

    if types_lines is not None:
        for ln, raw in enumerate(types_lines, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"types line {ln}: expected 2 tab-separated fields")
            assign_type(parts[0], parts[1], f"types line {ln}")

    relations: list = []
    rel_ids: dict = {}
    triples: list = []
    reflexive = frozenset(reflexive_relations)
    for ln, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        stripped = line.lstrip()
        if stripped.startswith("#"):
            body = stripped.lstrip("#").lstrip()
            parts = body.split("\t")
            if len(parts) == 3 and parts[0] == "type":
                assign_type(parts[1], parts[2], f"line {ln}")
            elif len(parts) == 2 and parts[0] == "relation":
                if parts[1] not in rel_ids:
                    rel_ids[parts[1]] = len(relations)
                    relations.append(parts[1])
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"line {ln}: expected 3 tab-separated fields, got {len(parts)}")
        h, r, t = parts
        if not h or not r or not t:
            raise ParseError(f"line {ln}: empty field")
        if h == t and r not in reflexive:
            raise ParseError(f"line {ln}: self-loop on non-reflexive relation {r!r}")
        hi, ti = intern(h), intern(t)
        if r not in rel_ids:
            rel_ids[r] = len(relations)
            relations.append(r)
        triples.append(Triple(hi, rel_ids[r], ti))

    type_list = [types.get(n, DEFAULT_ENTITY_TYPE) for n in names]
    return KnowledgeGraph(names, type_list, relations, triples,
                          reflexive_relations=reflexive)


def parse_smoothing(lines: Iterable[str], policy: str = "keep") -> SmoothingMap:
    mapping = {}
    for ln, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"smoothing line {ln}: expected 2 tab-separated fields")
        rel, cls = parts
        if cls not in SMOOTH_CLASSES:
            raise ParseError(
                f"smoothing line {ln}: class {cls!r} not in {sorted(SMOOTH_CLASSES)}"
            )
        if rel in mapping and mapping[rel] != cls:
            raise ConflictError(f"smoothing line {ln}: relation {rel!r} mapped twice")
        mapping[rel] = cls
    return SmoothingMap(mapping, policy)


def smooth_relations(kg: KnowledgeGraph, smoothing: SmoothingMap) -> KnowledgeGraph:
    """Rewrite relations onto {positive, interaction, negative} (+ kept unmapped).

    Never increases the triple count (merged duplicates collapse) and never
    changes the entity set. policy=strict errors on the first unmapped
    relation; drop removes its triples but keeps the entities.
    """
    new_relations = list(SMOOTH_CLASSES)
    new_ids = {n: i for i, n in enumerate(new_relations)}
    rel_map: list = []
    for name in kg.relation_names:
        cls = smoothing.mapping.get(name)
        if cls is not None:
            rel_map.append(new_ids[cls])
        elif smoothing.policy == "keep":
            if name in new_ids:
                raise ConflictError(
                    f"relation {name!r} collides with a smoothing class name"
                )
            new_ids[name] = len(new_relations)
            new_relations.append(name)
            rel_map.append(new_ids[name])
        elif smoothing.policy == "drop":
            rel_map.append(-1)
        else:
            raise ConflictError(f"smoothing: unmapped relation {name!r} under strict policy")

    triples = []
    for t in kg.triples:
        nr = rel_map[t.relation]
        if nr < 0:
            continue
        triples.append(Triple(t.head, nr, t.tail))
    reflexive = {
        new_relations[rel_map[kg.relation_ids[r]]]
        for r in kg.reflexive_relations
        if r in kg.relation_ids and rel_map[kg.relation_ids[r]] >= 0
    }
    return KnowledgeGraph(kg.entity_names, kg.entity_types, new_relations, triples,
                          reflexive_relations=reflexive)


# ---------------------------------------------------------------------------
# task examples


def label_key(example: LinkExample) -> str:
    return repr(example.label)


def parse_links(lines: Iterable[str], kg: KnowledgeGraph, task_mode: str) -> LinkDataset:
    """head<TAB>tail<TAB>label rows; label shape depends on task_mode."""
    if task_mode not in ("binary", "multi_class", "multi_label"):
        raise ValueError(f"unknown task mode {task_mode!r}")
    class_names: list = []
    class_ids: dict = {}

    def intern_class(name: str) -> int:
        if name not in class_ids:
            class_ids[name] = len(class_names)
            class_names.append(name)
        return class_ids[name]

    examples = []
    for ln, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"links line {ln}: expected 3 tab-separated fields")
        h, t, lab = parts
        if h not in kg.entity_ids:
            raise ParseError(f"links line {ln}: unknown entity {h!r}")
        if t not in kg.entity_ids:
            raise ParseError(f"links line {ln}: unknown entity {t!r}")
        if task_mode == "binary":
            if lab not in ("0", "1"):
                raise ParseError(f"links line {ln}: binary label must be 0 or 1")
            label: object = int(lab)
        elif task_mode == "multi_class":
            label = intern_class(lab)
        else:
            classes = [c for c in lab.split(";") if c]
            label = tuple(sorted(intern_class(c) for c in classes))
        examples.append(LinkExample(kg.entity_ids[h], kg.entity_ids[t], label))
    return LinkDataset(task_mode, tuple(class_names), tuple(examples))


def links_to_tsv(dataset: LinkDataset, kg: KnowledgeGraph) -> str:
    lines = []
    for ex in dataset.examples:
        if dataset.task_mode == "multi_class":
            lab = dataset.class_names[ex.label]
        elif dataset.task_mode == "multi_label":
            lab = ";".join(dataset.class_names[c] for c in ex.label)
        else:
            lab = str(ex.label)
        lines.append(f"{kg.entity_names[ex.head]}\t{kg.entity_names[ex.tail]}\t{lab}")
    return "\n".join(lines) + ("\n" if lines else "")


def kfold_split(examples: Sequence[LinkExample], k: int, seed: int,
                stratify_by_class: bool = True) -> list:
    """Shuffled k-fold partition; fold i tests on fold i, validates on fold i+1.

    The train/valid/test sets of each split are pairwise disjoint and their
    union is the input. Stratification spreads every label class across all
    folds and errors on classes with fewer than k members.
    """
    n = len(examples)
    if k < 2:
        raise ValueError("kfold_split: k must be at least 2")
    if n < k:
        raise ValueError("kfold_split: fewer examples than folds")
    rng = np.random.default_rng(seed)
    folds: list = [[] for _ in range(k)]
    if stratify_by_class:
        groups: dict = {}
        order = []
        for i, ex in enumerate(examples):
            key = label_key(ex)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(i)
        for key in order:
            idxs = groups[key]
            if len(idxs) < k:
                raise ValueError(
                    f"kfold_split: class {key} has {len(idxs)} members, fewer than k={k}"
                )
            perm = rng.permutation(len(idxs))
            for j, pi in enumerate(perm):
                folds[j % k].append(idxs[pi])
    else:
        perm = rng.permutation(n)
        base, extra = divmod(n, k)
        start = 0
        for f in range(k):
            size = base + (1 if f < extra else 0)
            folds[f].extend(perm[start:start + size].tolist())
            start += size
    folds = [sorted(f) for f in folds]

    splits = []
    for i in range(k):
        vi = (i + 1) % k
        train_idx = []
        for f in range(k):
            if f not in (i, vi):
                train_idx.extend(folds[f])
        splits.append(DatasetSplit(
            fold=i,
            train=tuple(examples[j] for j in sorted(train_idx)),
            valid=tuple(examples[j] for j in folds[vi]),
            test=tuple(examples[j] for j in folds[i]),
        ))
    return splits


def sample_negatives(positives: Sequence[LinkExample], kg: KnowledgeGraph,
                     mode: str, seed: int) -> list:
    """Tail-corruption negatives drawn from the tails observed in positives.

    balanced_per_head emits as many negatives per head as it has positives
    (distinct pairs); counterpart_per_positive emits one draw per positive.
    """
    if mode not in ("balanced_per_head", "counterpart_per_positive"):
        raise ValueError(f"sample_negatives: unknown mode {mode!r}")
    if not positives:
        return []
    rng = np.random.default_rng(seed)
    known = {(ex.head, ex.tail) for ex in positives}
    tail_pool = sorted({ex.tail for ex in positives})
    neg_label: object = () if isinstance(positives[0].label, tuple) else 0

    negatives = []
    if mode == "balanced_per_head":
        by_head: dict = {}
        head_order = []
        for ex in positives:
            if ex.head not in by_head:
                by_head[ex.head] = 0
                head_order.append(ex.head)
            by_head[ex.head] += 1
        for head in head_order:
            need = by_head[head]
            candidates = [t for t in tail_pool if (head, t) not in known and t != head]
            if not candidates:
                raise SamplingError(
                    f"sample_negatives: empty candidate pool for head "
                    f"{kg.entity_names[head]!r}"
                )
            if len(candidates) < need:
                raise SamplingError(
                    f"sample_negatives: head {kg.entity_names[head]!r} needs {need} "
                    f"negatives but only {len(candidates)} candidate tails exist"
                )
            picked = rng.choice(len(candidates), size=need, replace=False)
            for pi in sorted(picked.tolist()):
                negatives.append(LinkExample(head, candidates[pi], neg_label))
    else:
        for ex in positives:
            candidates = [t for t in tail_pool if (ex.head, t) not in known and t != ex.head]
            if not candidates:
                raise SamplingError(
                    f"sample_negatives: empty candidate pool for head "
                    f"{kg.entity_names[ex.head]!r}"
                )
            pick = int(rng.integers(len(candidates)))
            negatives.append(LinkExample(ex.head, candidates[pick], neg_label))
    return negatives


# ---------------------------------------------------------------------------
# noise injection


def _rebuild_with(kg: KnowledgeGraph, added: list) -> KnowledgeGraph:
    return KnowledgeGraph(kg.entity_names, kg.entity_types, kg.relation_names,
                          list(kg.triples) + added,
                          reflexive_relations=kg.reflexive_relations)


def inject_structural_noise(kg: KnowledgeGraph, ratio: float, seed: int) -> KnowledgeGraph:
    """Add floor(ratio * |triples|) unknown triples drawn uniformly from the
    full head x relation x tail space (self-loops excluded)."""
    if ratio < 0:
        raise ValueError("noise ratio must be non-negative")
    count = math.floor(ratio * len(kg.triples))
    if count == 0:
        return _rebuild_with(kg, [])
    n, r = kg.n_entities, kg.n_relations
    space = r * n * (n - 1)
    available = space - len(kg.triple_set)
    if count > available:
        raise SamplingError(
            f"structural noise: need {count} new triples but only {available} "
            f"candidates remain"
        )
    rng = np.random.default_rng(seed)
    existing = set(kg.triple_set)
    added = []
    attempts = 0
    limit = 200 * count + 10_000
    while len(added) < count and attempts < limit:
        attempts += 1
        h = int(rng.integers(n))
        t = int(rng.integers(n))
        if h == t:
            continue
        rel = int(rng.integers(r))
        key = (h, rel, t)
        if key in existing:
            continue
        existing.add(key)
        added.append(Triple(h, rel, t))
    if len(added) < count:
        # dense corner: enumerate what remains and sample exactly
        remaining = [
            (h, rel, t)
            for h in range(n) for t in range(n) if h != t
            for rel in range(r)
            if (h, rel, t) not in existing
        ]
        picked = rng.choice(len(remaining), size=count - len(added), replace=False)
        for pi in sorted(picked.tolist()):
            added.append(Triple(*remaining[pi]))
    return _rebuild_with(kg, added)


def inject_semantic_noise(kg: KnowledgeGraph, ratio: float, seed: int) -> KnowledgeGraph:
    """Add unknown triples that conform to observed (head type, relation,
    tail type) schemes, sampled uniformly over the scheme-conformant space."""
    if ratio < 0:
        raise ValueError("noise ratio must be non-negative")
    count = math.floor(ratio * len(kg.triples))
    if count == 0:
        return _rebuild_with(kg, [])
    by_type: dict = {}
    for i, ty in enumerate(kg.entity_types):
        by_type.setdefault(ty, []).append(i)
    schemes = sorted({
        (kg.entity_types[t.head], t.relation, kg.entity_types[t.tail])
        for t in kg.triples
    })
    weights = []
    for th, rel, tt in schemes:
        heads, tails = by_type[th], by_type[tt]
        size = len(heads) * len(tails)
        if th == tt:
            size -= len(heads)  # no self-loops
        weights.append(size)
    total = sum(weights)
    if total == 0:
        raise SamplingError("semantic noise: no scheme-conformant candidate pairs")
    available = total - len(kg.triple_set)
    if count > available:
        raise SamplingError(
            f"semantic noise: need {count} new triples but at most {available} "
            f"scheme-conformant candidates remain"
        )
    cum = np.cumsum(np.asarray(weights, dtype=np.float64) / total)
    rng = np.random.default_rng(seed)
    existing = set(kg.triple_set)
    added = []
    attempts = 0
    limit = 200 * count + 10_000
    while len(added) < count and attempts < limit:
        attempts += 1
        si = int(np.searchsorted(cum, rng.random(), side="right"))
        si = min(si, len(schemes) - 1)
        th, rel, tt = schemes[si]
        heads, tails = by_type[th], by_type[tt]
        h = heads[int(rng.integers(len(heads)))]
        t = tails[int(rng.integers(len(tails)))]
        if h == t:
            continue
        key = (h, rel, t)
        if key in existing:
            continue
        existing.add(key)
        added.append(Triple(h, rel, t))
    if len(added) < count:
        remaining = []
        for th, rel, tt in schemes:
            for h in by_type[th]:
                for t in by_type[tt]:
                    if h != t and (h, rel, t) not in existing:
                        remaining.append((h, rel, t))
        picked = rng.choice(len(remaining), size=count - len(added), replace=False)
        for pi in sorted(picked.tolist()):
            added.append(Triple(*remaining[pi]))
    return _rebuild_with(kg, added)
