"""Personal knowledge graph built from one story's event triples.

Subjects, predicates, and objects become nodes; each event triple becomes an
edge-triple over those nodes. Nodes with the same normalized surface and role
are merged. Coreference clusters additionally merge subject/object nodes whose
surfaces co-occur in a cluster; predicates are only ever exact-match merged.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

from .corpus import Mention, Story, clean_text, normalize_text
from .errors import CorefError, UnknownNode


class NodeRole(Enum):
    SUBJECT = "subject"
    PREDICATE = "predicate"
    OBJECT = "object"


@dataclass(frozen=True)
class KGNode:
    node_id: str
    surface_forms: frozenset[str]
    role: NodeRole
    cluster_id: str


@dataclass(frozen=True)
class KGTriple:
    triple_id: str
    subject_id: str
    predicate_id: str
    object_id: str | None
    sentence_index: int
    # Cleaned surface texts of the source event, kept so support events can
    # be keyed on the original triple rather than merged node surfaces.
    subject_text: str = ""
    predicate_text: str = ""
    object_text: str | None = None

    def node_ids(self) -> tuple[str, ...]:
        ids = [self.subject_id, self.predicate_id]
        if self.object_id is not None:
            ids.append(self.object_id)
        return tuple(ids)


@dataclass(frozen=True)
class CorefMap:
    clusters: tuple[tuple[Mention, ...], ...]

    @classmethod
    def from_story(cls, story: Story) -> "CorefMap":
        return cls(clusters=story.coref_clusters)


@dataclass(frozen=True)
class PersonalKG:
    nodes: tuple[KGNode, ...]
    triples: tuple[KGTriple, ...]

    @cached_property
    def node_by_id(self) -> dict[str, KGNode]:
        return {n.node_id: n for n in self.nodes}

    @cached_property
    def cluster_members(self) -> dict[str, tuple[str, ...]]:
        members: dict[str, list[str]] = {}
        for n in self.nodes:
            members.setdefault(n.cluster_id, []).append(n.node_id)
        return {cid: tuple(ids) for cid, ids in members.items()}


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[object, object] = {}

    def add(self, key) -> None:
        self.parent.setdefault(key, key)

    def find(self, key):
        root = key
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[key] != root:
            self.parent[key], key = root, self.parent[key]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _slots(triple) -> list[tuple[NodeRole, str]]:
    slots = [(NodeRole.SUBJECT, triple.subject), (NodeRole.PREDICATE, triple.predicate)]
    if triple.object is not None and clean_text(triple.object):
        slots.append((NodeRole.OBJECT, triple.object))
    return slots


def build_kg(story: Story, coref: CorefMap | None = None) -> PersonalKG:
    """Construct the graph for one story.

    When no explicit coreference map is given, clusters stored on the story
    are used; without either, only exact normalized-surface merging applies.
    """
    if coref is None:
        coref = CorefMap.from_story(story)
    _check_coref(story, coref)

    # Node keys are (normalized surface, role); exact-match merging is the
    # identity on keys. Union-find closes coreference links transitively.
    merge = _UnionFind()  # merges nodes of one role
    cluster = _UnionFind()  # groups subject/object nodes across roles
    key_order: list[tuple[str, NodeRole]] = []
    surfaces: dict[tuple[str, NodeRole], list[str]] = {}
    for triple in story.triples:
        for role, text in _slots(triple):
            key = (normalize_text(text), role)
            if key not in surfaces:
                key_order.append(key)
                surfaces[key] = []
                merge.add(key)
                cluster.add(key)
            cleaned = clean_text(text)
            if cleaned not in surfaces[key]:
                surfaces[key].append(cleaned)

    for mentions in coref.clusters:
        linked: list[tuple[str, NodeRole]] = []
        for _idx, text in mentions:
            norm = normalize_text(text)
            for role in (NodeRole.SUBJECT, NodeRole.OBJECT):
                key = (norm, role)
                if key in surfaces:
                    linked.append(key)
        for other in linked[1:]:
            cluster.union(linked[0], other)
        # Same-role keys in one cluster merge into one node; cross-role keys
        # only share a cluster id.
        by_role: dict[NodeRole, list[tuple[str, NodeRole]]] = {}
        for key in linked:
            by_role.setdefault(key[1], []).append(key)
        for keys in by_role.values():
            for other in keys[1:]:
                merge.union(keys[0], other)

    node_ids: dict[tuple[str, NodeRole], str] = {}
    cluster_ids: dict[tuple[str, NodeRole], str] = {}
    group_surfaces: dict[tuple[str, NodeRole], list[str]] = {}
    for key in key_order:
        root = merge.find(key)
        group_surfaces.setdefault(root, [])
        for form in surfaces[key]:
            if form not in group_surfaces[root]:
                group_surfaces[root].append(form)
    for key in key_order:
        root = merge.find(key)
        if root not in node_ids:
            node_ids[root] = f"n{len(node_ids):03d}"
        croot = cluster.find(key)
        if croot not in cluster_ids:
            cluster_ids[croot] = f"c{len(cluster_ids):03d}"

    nodes = tuple(
        KGNode(
            node_id=node_ids[root],
            surface_forms=frozenset(group_surfaces[root]),
            role=root[1],
            cluster_id=cluster_ids[cluster.find(root)],
        )
        for root in node_ids
    )

    def node_id_for(text: str, role: NodeRole) -> str:
        return node_ids[merge.find((normalize_text(text), role))]

    triples = []
    for t in story.triples:
        has_object = t.object is not None and clean_text(t.object)
        triples.append(
            KGTriple(
                triple_id=t.triple_id,
                subject_id=node_id_for(t.subject, NodeRole.SUBJECT),
                predicate_id=node_id_for(t.predicate, NodeRole.PREDICATE),
                object_id=node_id_for(t.object, NodeRole.OBJECT) if has_object else None,
                sentence_index=t.sentence_index,
                subject_text=clean_text(t.subject),
                predicate_text=clean_text(t.predicate),
                object_text=clean_text(t.object) if has_object else None,
            )
        )
    return PersonalKG(nodes=nodes, triples=tuple(triples))


def _check_coref(story: Story, coref: CorefMap) -> None:
    seen: set[Mention] = set()
    for mentions in coref.clusters:
        here: set[Mention] = set()
        for idx, text in mentions:
            if not 0 <= idx < len(story.sentences):
                raise CorefError(
                    f"story {story.story_id}: coref mention ({idx}, {text!r}) "
                    f"references a sentence outside the story"
                )
            here.add((idx, normalize_text(text)))
        overlap = seen.intersection(here)
        if overlap:
            raise CorefError(
                f"story {story.story_id}: mention {sorted(overlap)[0]} "
                f"appears in more than one cluster"
            )
        seen.update(here)


def triples_containing(kg: PersonalKG, node_id: str) -> list[KGTriple]:
    """Triples referencing the node directly or via its coreference cluster,
    ordered by triple_id."""
    node = kg.node_by_id.get(node_id)
    if node is None:
        raise UnknownNode(f"no node {node_id!r} in graph")
    mates = set(kg.cluster_members[node.cluster_id])
    found = [t for t in kg.triples if mates.intersection(t.node_ids())]
    return sorted(found, key=lambda t: t.triple_id)


def kg_to_dict(kg: PersonalKG) -> dict:
    """JSON-friendly export of nodes, clusters, and triples."""
    return {
        "nodes": [
            {
                "node_id": n.node_id,
                "surface_forms": sorted(n.surface_forms),
                "role": n.role.value,
                "cluster_id": n.cluster_id,
            }
            for n in kg.nodes
        ],
        "clusters": {
            cid: list(members) for cid, members in sorted(kg.cluster_members.items())
        },
        "triples": [
            {
                "triple_id": t.triple_id,
                "subject_id": t.subject_id,
                "predicate_id": t.predicate_id,
                "object_id": t.object_id,
                "sentence_index": t.sentence_index,
                "subject": t.subject_text,
                "predicate": t.predicate_text,
                "object": t.object_text,
            }
            for t in kg.triples
        ],
    }
