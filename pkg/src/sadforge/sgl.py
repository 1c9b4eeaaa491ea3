"""Scene Graph Language (SGL): parse, validate, serialize, and prune.

An SGL text is a flat sequence of statements:

    obj-<label>-<id>:[<attr>,<attr>,...]; rel-<id>:(<label>-<id>,<predicate>,<label>-<id>);

Labels, attributes, and predicates are normalized tokens: lowercase, with
internal whitespace replaced by underscores, and containing none of the
reserved characters ``: ; , [ ] ( )``. Object ids and relation ids live in
two independent id spaces. Graphs are immutable values; all construction
goes through :meth:`SceneGraph.build`, which enforces every invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

RESERVED_CHARS = frozenset(":;,[]()")
_DIGITS = frozenset("0123456789")


class SglError(ValueError):
    """Base class for all scene-graph errors.

    ``position`` is the character offset of the offending statement when the
    error came from parsing text; None for programmatically built graphs.
    """

    position: "int | None" = None


class SglSyntaxError(SglError):
    """Malformed SGL text. Carries the byte offset and the offending fragment."""

    def __init__(self, message: str, position: int, fragment: str = ""):
        super().__init__(f"{message} at position {position}: {fragment!r}")
        self.position = position
        self.fragment = fragment


class TokenError(SglError):
    """A label, attribute, or predicate is empty or contains illegal characters."""


class DuplicateIdError(SglError):
    """An object or relation id is declared more than once."""

    def __init__(self, kind: str, id: int, position: "int | None" = None):
        suffix = "" if position is None else f" (statement at position {position})"
        super().__init__(f"duplicate {kind} id {id}{suffix}")
        self.kind = kind
        self.id = id
        self.position = position


class DanglingReferenceError(SglError):
    """A relation endpoint names an object that does not exist or whose label differs."""

    def __init__(self, message: str, position: "int | None" = None):
        suffix = "" if position is None else f" (statement at position {position})"
        super().__init__(message + suffix)
        self.position = position


class SelfRelationError(SglError):
    """A relation connects an object to itself; only pairwise relations are allowed."""

    def __init__(self, message: str, position: "int | None" = None):
        suffix = "" if position is None else f" (statement at position {position})"
        super().__init__(message + suffix)
        self.position = position


class UnknownObjectIdError(SglError):
    """A prune request named an object id absent from the graph."""


def normalize_token(raw: str) -> str:
    """Normalize a free-form name into an SGL token.

    Lowercases and replaces internal whitespace runs with a single
    underscore, so catalog labels like ``"Trash Can"`` become ``trash_can``.
    Raises :class:`TokenError` if the result is empty or contains a
    reserved character.
    """
    token = "_".join(raw.lower().split())
    if not token:
        raise TokenError(f"empty token from {raw!r}")
    bad = set(token) & RESERVED_CHARS
    if bad:
        raise TokenError(f"token {token!r} contains reserved characters {sorted(bad)}")
    return token


def _token_problem(token: str) -> Optional[str]:
    """Return a description of why ``token`` is malformed, or None if it is fine."""
    if not token:
        return "empty token"
    if set(token) & RESERVED_CHARS:
        return f"token {token!r} contains reserved characters"
    if any(c.isspace() for c in token):
        return f"token {token!r} contains whitespace"
    if token != token.lower():
        return f"token {token!r} is not lowercase"
    return None


@dataclass(frozen=True)
class ObjectNode:
    """One object: a normalized label, a non-negative id, and ordered attributes."""

    label: str
    id: int
    attributes: tuple[str, ...] = ()

    @classmethod
    def normalized(cls, label: str, id: int, attributes: Iterable[str] = ()) -> "ObjectNode":
        """Build a node from raw catalog strings, normalizing tokens and
        dropping duplicate attributes (first occurrence wins)."""
        seen: dict[str, None] = {}
        for attr in attributes:
            seen.setdefault(normalize_token(attr), None)
        return cls(label=normalize_token(label), id=int(id), attributes=tuple(seen))


@dataclass(frozen=True)
class Relation:
    """One typed, directed edge between two distinct objects."""

    id: int
    subject_label: str
    subject_id: int
    predicate: str
    object_label: str
    object_id: int

    @classmethod
    def normalized(
        cls,
        id: int,
        subject_label: str,
        subject_id: int,
        predicate: str,
        object_label: str,
        object_id: int,
    ) -> "Relation":
        return cls(
            id=int(id),
            subject_label=normalize_token(subject_label),
            subject_id=int(subject_id),
            predicate=normalize_token(predicate),
            object_label=normalize_token(object_label),
            object_id=int(object_id),
        )


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by :func:`validate`."""

    kind: str  # duplicate-id | dangling-reference | self-relation | malformed-token | negative-id
    message: str
    subject: Union[int, str, None] = None


@dataclass(frozen=True, eq=False)
class SceneGraph:
    """An immutable scene graph; objects and relations are kept sorted by id.

    Equality is set equality on objects and relations, so statement order
    never matters.
    """

    objects: tuple[ObjectNode, ...] = ()
    relations: tuple[Relation, ...] = ()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return frozenset(self.objects) == frozenset(other.objects) and frozenset(
            self.relations
        ) == frozenset(other.relations)

    def __hash__(self) -> int:
        return hash((frozenset(self.objects), frozenset(self.relations)))

    @classmethod
    def build(
        cls, objects: Iterable[ObjectNode], relations: Iterable[Relation] = ()
    ) -> "SceneGraph":
        """Construct a validated graph; raises the first violation found."""
        objs = list(objects)
        rels = list(relations)
        by_id: dict[int, ObjectNode] = {}
        for obj in objs:
            if obj.id in by_id:
                raise DuplicateIdError("object", obj.id)
            by_id[obj.id] = obj
        rel_ids: set[int] = set()
        for rel in rels:
            if rel.id in rel_ids:
                raise DuplicateIdError("relation", rel.id)
            rel_ids.add(rel.id)
            for label, obj_id in ((rel.subject_label, rel.subject_id), (rel.object_label, rel.object_id)):
                node = by_id.get(obj_id)
                if node is None or node.label != label:
                    raise DanglingReferenceError(
                        f"relation {rel.id} references unknown object {label}-{obj_id}"
                    )
            if rel.subject_id == rel.object_id:
                raise SelfRelationError(
                    f"relation {rel.id} connects object {rel.subject_id} to itself"
                )
        return cls(
            objects=tuple(sorted(objs, key=lambda o: o.id)),
            relations=tuple(sorted(rels, key=lambda r: r.id)),
        )

    def object_ids(self) -> frozenset[int]:
        return frozenset(o.id for o in self.objects)

    def objects_by_id(self) -> dict[int, ObjectNode]:
        return {o.id: o for o in self.objects}

    def relation_degree(self) -> dict[int, int]:
        """Number of relations each object participates in."""
        degree = {o.id: 0 for o in self.objects}
        for rel in self.relations:
            degree[rel.subject_id] = degree.get(rel.subject_id, 0) + 1
            degree[rel.object_id] = degree.get(rel.object_id, 0) + 1
        return degree

    def is_empty(self) -> bool:
        return not self.objects and not self.relations


class _Scanner:
    """Character scanner over SGL text with position tracking."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def skip_ws(self) -> None:
        while not self.eof() and self.text[self.pos].isspace():
            self.pos += 1

    def fail(self, message: str) -> SglSyntaxError:
        fragment = self.text[self.pos : self.pos + 24]
        return SglSyntaxError(message, self.pos, fragment)

    def expect(self, literal: str) -> None:
        if not self.text.startswith(literal, self.pos):
            raise self.fail(f"expected {literal!r}")
        self.pos += len(literal)

    def token(self, what: str) -> str:
        """Read a maximal run of token characters (anything but reserved or whitespace)."""
        start = self.pos
        while not self.eof():
            ch = self.text[self.pos]
            if ch in RESERVED_CHARS or ch.isspace():
                break
            self.pos += 1
        if self.pos == start:
            raise self.fail(f"expected {what}")
        return self.text[start:self.pos]

    def labelled_id(self, what: str) -> tuple[str, int]:
        """Read ``<label>-<int>``; the id is the digits after the last hyphen,
        so labels may themselves contain hyphens."""
        start = self.pos
        raw = self.token(what)
        label, sep, digits = raw.rpartition("-")
        if not sep or not label or not digits or not set(digits) <= _DIGITS:
            raise SglSyntaxError(f"expected {what} of the form <label>-<id>", start, raw)
        return label, int(digits)

    def integer(self, what: str) -> int:
        start = self.pos
        while not self.eof() and self.text[self.pos] in _DIGITS:
            self.pos += 1
        if self.pos == start:
            raise self.fail(f"expected {what}")
        return int(self.text[start:self.pos])


def parse_sgl(text: str) -> SceneGraph:
    """Parse SGL text into a :class:`SceneGraph`.

    Statements may appear in any order and be separated by arbitrary
    whitespace; relations may precede the objects they reference. Raises
    :class:`SglSyntaxError` with a position for malformed text, and
    :class:`DuplicateIdError` / :class:`DanglingReferenceError` /
    :class:`SelfRelationError` for semantic violations.
    """
    scanner = _Scanner(text)
    objects: list[ObjectNode] = []
    relations: list[Relation] = []
    object_positions: dict[int, int] = {}
    relation_positions: dict[int, int] = {}
    scanner.skip_ws()
    while not scanner.eof():
        stmt_pos = scanner.pos
        if scanner.text.startswith("obj-", scanner.pos):
            scanner.pos += 4
            label, obj_id = scanner.labelled_id("object label-id")
            scanner.expect(":")
            scanner.expect("[")
            attrs: list[str] = []
            if not scanner.text.startswith("]", scanner.pos):
                while True:
                    attrs.append(scanner.token("attribute"))
                    if scanner.text.startswith(",", scanner.pos):
                        scanner.pos += 1
                        continue
                    break
            scanner.expect("]")
            scanner.expect(";")
            if obj_id in object_positions:
                raise DuplicateIdError("object", obj_id, position=stmt_pos)
            object_positions[obj_id] = stmt_pos
            objects.append(ObjectNode.normalized(label, obj_id, attrs))
        elif scanner.text.startswith("rel-", scanner.pos):
            scanner.pos += 4
            rel_id = scanner.integer("relation id")
            scanner.expect(":")
            scanner.expect("(")
            subj_label, subj_id = scanner.labelled_id("subject label-id")
            scanner.expect(",")
            predicate = scanner.token("predicate")
            scanner.expect(",")
            obj_label, obj_id = scanner.labelled_id("object label-id")
            scanner.expect(")")
            scanner.expect(";")
            if rel_id in relation_positions:
                raise DuplicateIdError("relation", rel_id, position=stmt_pos)
            relation_positions[rel_id] = stmt_pos
            if subj_id == obj_id:
                raise SelfRelationError(
                    f"relation {rel_id} connects object {subj_id} to itself", position=stmt_pos
                )
            relations.append(
                Relation.normalized(rel_id, subj_label, subj_id, predicate, obj_label, obj_id)
            )
        else:
            raise scanner.fail("expected 'obj-' or 'rel-' statement")
        scanner.skip_ws()
    nodes = {o.id: o for o in objects}
    for rel in relations:
        for label, endpoint_id in ((rel.subject_label, rel.subject_id), (rel.object_label, rel.object_id)):
            node = nodes.get(endpoint_id)
            if node is None or node.label != label:
                raise DanglingReferenceError(
                    f"relation {rel.id} references unknown object {label}-{endpoint_id}",
                    position=relation_positions[rel.id],
                )
    return SceneGraph.build(objects, relations)


def serialize_sgl(graph: SceneGraph) -> str:
    """Render the canonical SGL text: objects sorted by id, then relations
    sorted by id, one space between statements. Empty graph serializes to ``""``."""
    parts = [
        f"obj-{o.label}-{o.id}:[{','.join(o.attributes)}];"
        for o in sorted(graph.objects, key=lambda o: o.id)
    ]
    parts.extend(
        f"rel-{r.id}:({r.subject_label}-{r.subject_id},{r.predicate},{r.object_label}-{r.object_id});"
        for r in sorted(graph.relations, key=lambda r: r.id)
    )
    return " ".join(parts)


def prune(graph: SceneGraph, keep_ids: Iterable[int]) -> SceneGraph:
    """Restrict the graph to ``keep_ids``: only those objects survive, and
    only relations with both endpoints kept. Unknown ids raise
    :class:`UnknownObjectIdError`."""
    keep = set(keep_ids)
    known = graph.object_ids()
    unknown = keep - known
    if unknown:
        raise UnknownObjectIdError(f"unknown object ids {sorted(unknown)}")
    objects = [o for o in graph.objects if o.id in keep]
    relations = [
        r for r in graph.relations if r.subject_id in keep and r.object_id in keep
    ]
    return SceneGraph.build(objects, relations)


def validate(graph: SceneGraph) -> list[Violation]:
    """Check every invariant and return all violations (empty list = valid).

    Unlike :meth:`SceneGraph.build`, this inspects graphs that were
    assembled directly in memory, so it also reports malformed tokens.
    """
    violations: list[Violation] = []
    by_id: dict[int, ObjectNode] = {}
    seen_obj_ids: set[int] = set()
    for obj in graph.objects:
        if obj.id < 0:
            violations.append(Violation("negative-id", f"object id {obj.id} is negative", obj.id))
        if obj.id in seen_obj_ids:
            violations.append(Violation("duplicate-id", f"duplicate object id {obj.id}", obj.id))
        else:
            seen_obj_ids.add(obj.id)
            by_id[obj.id] = obj
        for token in (obj.label, *obj.attributes):
            problem = _token_problem(token)
            if problem:
                violations.append(Violation("malformed-token", f"object {obj.id}: {problem}", obj.id))
        if len(set(obj.attributes)) != len(obj.attributes):
            violations.append(
                Violation("duplicate-attribute", f"object {obj.id} repeats an attribute", obj.id)
            )
    seen_rel_ids: set[int] = set()
    for rel in graph.relations:
        if rel.id < 0:
            violations.append(Violation("negative-id", f"relation id {rel.id} is negative", rel.id))
        if rel.id in seen_rel_ids:
            violations.append(Violation("duplicate-id", f"duplicate relation id {rel.id}", rel.id))
        else:
            seen_rel_ids.add(rel.id)
        problem = _token_problem(rel.predicate)
        if problem:
            violations.append(Violation("malformed-token", f"relation {rel.id}: {problem}", rel.id))
        for label, obj_id in ((rel.subject_label, rel.subject_id), (rel.object_label, rel.object_id)):
            node = by_id.get(obj_id)
            if node is None or node.label != label:
                violations.append(
                    Violation(
                        "dangling-reference",
                        f"relation {rel.id} references unknown object {label}-{obj_id}",
                        rel.id,
                    )
                )
        if rel.subject_id == rel.object_id:
            violations.append(
                Violation("self-relation", f"relation {rel.id} connects an object to itself", rel.id)
            )
    return violations
