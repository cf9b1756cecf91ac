"""Question-schema heterogeneous graph construction.

Nodes are question tokens, the star column, tables and columns. Edges carry
one of the relation types below; every forward relation has an inverse twin
so messages flow both ways, and every node carries a self loop.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import numpy as np

from .schema import Database, Question

MODIFIER_LABELS = frozenset(
    {"amod", "nmod", "nummod", "advmod", "compound", "poss", "appos", "det", "acl"})

STOP_WORDS = frozenset("""
a an the of in on at to for from by with and or is are was were be been do does did
what which who whom whose how many much show list give find tell me all each every
there that this these those it its their his her as than please return display
? , . ! ; '
""".split())


class LinkingMode(str, Enum):
    BRIDGE = "bridge"
    NO_MATCH = "nomatch"


class NodeKind(str, Enum):
    QUESTION = "QuestionToken"
    STAR = "Star"
    TABLE = "Table"
    COLUMN = "Column"


Q, S, T, C = NodeKind.QUESTION, NodeKind.STAR, NodeKind.TABLE, NodeKind.COLUMN


class Relation(IntEnum):
    # Forward relations take even ids and their inverse twins the next odd id.
    MODIFIER = 0
    MODIFIER_INV = 1
    ARGUMENT = 2
    ARGUMENT_INV = 3
    DISTANCE1 = 4
    DISTANCE1_INV = 5
    FOREIGN_KEY = 6
    FOREIGN_KEY_INV = 7
    SAME_TABLE = 8
    SAME_TABLE_INV = 9
    HAS = 10
    HAS_INV = 11
    PRIMARY_KEY = 12
    PRIMARY_KEY_INV = 13
    EXACT_MATCH_TABLE = 14
    EXACT_MATCH_TABLE_INV = 15
    PARTIAL_MATCH_TABLE = 16
    PARTIAL_MATCH_TABLE_INV = 17
    EXACT_MATCH_COLUMN = 18
    EXACT_MATCH_COLUMN_INV = 19
    PARTIAL_MATCH_COLUMN = 20
    PARTIAL_MATCH_COLUMN_INV = 21
    VALUE_MATCH = 22
    VALUE_MATCH_INV = 23
    BRIDGE = 24
    BRIDGE_INV = 25
    NO_MATCH = 26
    NO_MATCH_INV = 27
    SELF_LOOP = 28

    @property
    def is_self_loop(self) -> bool:
        return self is Relation.SELF_LOOP

    @property
    def is_inverse(self) -> bool:
        return not self.is_self_loop and self.value % 2 == 1

    @property
    def inverse(self) -> "Relation":
        if self.is_self_loop:
            return self
        return Relation(self.value ^ 1)

    @property
    def forward(self) -> "Relation":
        return self.inverse if self.is_inverse else self

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "Relation":
        try:
            return _BY_LABEL[label]
        except KeyError:
            raise ValueError(f"unknown relation {label!r}") from None


_BASE_LABELS = {
    Relation.MODIFIER: "Modifier", Relation.ARGUMENT: "Argument",
    Relation.DISTANCE1: "Distance1", Relation.FOREIGN_KEY: "ForeignKey",
    Relation.SAME_TABLE: "SameTable", Relation.HAS: "Has",
    Relation.PRIMARY_KEY: "PrimaryKey", Relation.EXACT_MATCH_TABLE: "ExactMatchTable",
    Relation.PARTIAL_MATCH_TABLE: "PartialMatchTable",
    Relation.EXACT_MATCH_COLUMN: "ExactMatchColumn",
    Relation.PARTIAL_MATCH_COLUMN: "PartialMatchColumn",
    Relation.VALUE_MATCH: "ValueMatch", Relation.BRIDGE: "Bridge",
    Relation.NO_MATCH: "NoMatch", Relation.SELF_LOOP: "SelfLoop",
}
_LABELS = {r: _BASE_LABELS[r] if r in _BASE_LABELS else _BASE_LABELS[r.inverse] + "-inv"
           for r in Relation}
_BY_LABEL = {v: k for k, v in _LABELS.items()}

NUM_RELATIONS = len(Relation)

# Permitted (source kind, target kind) pairs for each forward relation.
LEGAL_ROWS: dict[Relation, frozenset[tuple[NodeKind, NodeKind]]] = {
    Relation.MODIFIER: frozenset({(Q, Q)}),
    Relation.ARGUMENT: frozenset({(Q, Q)}),
    Relation.DISTANCE1: frozenset({(Q, Q)}),
    Relation.FOREIGN_KEY: frozenset({(C, C)}),
    Relation.SAME_TABLE: frozenset({(C, C)}),
    Relation.HAS: frozenset({(T, C)}),
    Relation.PRIMARY_KEY: frozenset({(T, C)}),
    Relation.EXACT_MATCH_TABLE: frozenset({(Q, T)}),
    Relation.PARTIAL_MATCH_TABLE: frozenset({(Q, T)}),
    Relation.EXACT_MATCH_COLUMN: frozenset({(Q, C)}),
    Relation.PARTIAL_MATCH_COLUMN: frozenset({(Q, C)}),
    Relation.VALUE_MATCH: frozenset({(Q, C)}),
    Relation.BRIDGE: frozenset({(Q, S), (T, S), (C, S)}),
    Relation.NO_MATCH: frozenset({(Q, T), (Q, C)}),
}

MATCH_RELATIONS = frozenset({
    Relation.EXACT_MATCH_TABLE, Relation.PARTIAL_MATCH_TABLE, Relation.EXACT_MATCH_COLUMN,
    Relation.PARTIAL_MATCH_COLUMN, Relation.VALUE_MATCH})

# Relations skipped by path search: they connect everything to everything.
PLUMBING_RELATIONS = frozenset({
    Relation.BRIDGE, Relation.BRIDGE_INV, Relation.NO_MATCH, Relation.NO_MATCH_INV,
    Relation.SELF_LOOP})


def is_legal(src_kind: NodeKind, dst_kind: NodeKind, rel: Relation) -> bool:
    if rel.is_self_loop:
        return src_kind == dst_kind
    if rel.is_inverse:
        return (dst_kind, src_kind) in LEGAL_ROWS[rel.forward]
    return (src_kind, dst_kind) in LEGAL_ROWS[rel]


class GraphError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class NodeRef:
    kind: NodeKind
    id: int

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.id}"


@dataclass(frozen=True)
class Edge:
    src: NodeRef
    dst: NodeRef
    rel: Relation

    def inverted(self) -> "Edge":
        return Edge(self.dst, self.src, self.rel.inverse)


def classify_dependency(label: str, modifier_labels: frozenset[str] = MODIFIER_LABELS) -> Relation:
    """Map a raw dependency label to Modifier or Argument.

    Subtyped labels such as ``nmod:poss`` are classified by their base label.
    """
    base = label.lower().split(":", 1)[0]
    return Relation.MODIFIER if base in modifier_labels else Relation.ARGUMENT


def build_nodes(question: Question, db: Database) -> list[NodeRef]:
    """Canonical node order: question tokens, star, then each table followed by its columns."""
    nodes = [NodeRef(Q, i) for i in range(len(question.tokens))]
    nodes.append(NodeRef(S, db.star.id))
    for table in db.tables:
        nodes.append(NodeRef(T, table.id))
        nodes.extend(NodeRef(C, cid) for cid in table.column_ids)
    return nodes


def schema_relations(db: Database) -> list[Edge]:
    edges = []
    for table in db.tables:
        t = NodeRef(T, table.id)
        for cid in table.column_ids:
            edges.append(Edge(t, NodeRef(C, cid), Relation.HAS))
        for cid in table.column_ids:
            if db.columns[cid].is_primary:
                edges.append(Edge(t, NodeRef(C, cid), Relation.PRIMARY_KEY))
        ids = sorted(table.column_ids)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                edges.append(Edge(NodeRef(C, a), NodeRef(C, b), Relation.SAME_TABLE))
    for src, dst in db.foreign_keys:
        edges.append(Edge(NodeRef(C, src), NodeRef(C, dst), Relation.FOREIGN_KEY))
    return edges


def question_relations(question: Question,
                       modifier_labels: frozenset[str] = MODIFIER_LABELS) -> list[Edge]:
    edges = []
    for head, dep, label in question.dep_edges:
        rel = classify_dependency(label, modifier_labels)
        if rel is Relation.MODIFIER:
            # head -> modifier: "y is a modifier of x"
            edges.append(Edge(NodeRef(Q, head), NodeRef(Q, dep), rel))
        else:
            # dependent -> head: "y is the source token of x"
            edges.append(Edge(NodeRef(Q, dep), NodeRef(Q, head), rel))
    for i in range(len(question.tokens) - 1):
        edges.append(Edge(NodeRef(Q, i), NodeRef(Q, i + 1), Relation.DISTANCE1))
    return edges


def _contains_span(seq: Sequence[str], span: Sequence[str]) -> bool:
    k = len(span)
    return any(tuple(seq[i:i + k]) == tuple(span) for i in range(len(seq) - k + 1))


def _value_words(values: Iterable[str]) -> frozenset[str]:
    return frozenset(w for v in values for w in v.lower().split())


def match_relations(question: Question, db: Database) -> list[Edge]:
    """Exact, partial and value matches from question tokens to schema items."""
    lemmas = [l.lower() for l in question.lemmas]
    edges = []
    value_words = {c.id: _value_words(c.candidate_values) for c in db.columns if not c.is_star}
    for i, lemma in enumerate(lemmas):
        q = NodeRef(Q, i)
        for table in db.tables:
            if lemma in table.name_tokens:
                exact = _contains_span(lemmas, table.name_tokens)
                rel = Relation.EXACT_MATCH_TABLE if exact else Relation.PARTIAL_MATCH_TABLE
                edges.append(Edge(q, NodeRef(T, table.id), rel))
        for col in db.columns:
            if col.is_star:
                continue
            if lemma in col.name_tokens:
                exact = _contains_span(lemmas, col.name_tokens)
                rel = Relation.EXACT_MATCH_COLUMN if exact else Relation.PARTIAL_MATCH_COLUMN
                edges.append(Edge(q, NodeRef(C, col.id), rel))
        for col in db.columns:
            if not col.is_star and lemma in value_words[col.id]:
                edges.append(Edge(q, NodeRef(C, col.id), Relation.VALUE_MATCH))
    return edges


def unmatched_items(question: Question, db: Database, match_edges: Sequence[Edge] | None = None,
                    stop_words: frozenset[str] = STOP_WORDS) -> tuple[list[NodeRef], list[NodeRef]]:
    """Question tokens (minus stop words) and schema items without any match edge."""
    if match_edges is None:
        match_edges = match_relations(question, db)
    touched = {e.src for e in match_edges} | {e.dst for e in match_edges}
    tokens = [NodeRef(Q, t.index) for t in question.tokens
              if NodeRef(Q, t.index) not in touched and t.lemma.lower() not in stop_words]
    items = [n for n in build_nodes(question, db)
             if n.kind in (T, C) and n not in touched]
    return tokens, items


def linking_relations(question: Question, db: Database, mode: LinkingMode | str,
                      stop_words: frozenset[str] = STOP_WORDS) -> list[Edge]:
    mode = LinkingMode(mode)
    edges = match_relations(question, db)
    if mode is LinkingMode.BRIDGE:
        star = NodeRef(S, db.star.id)
        edges.extend(Edge(n, star, Relation.BRIDGE)
                     for n in build_nodes(question, db) if n.kind is not S)
    else:
        tokens, items = unmatched_items(question, db, edges, stop_words)
        edges.extend(Edge(t, i, Relation.NO_MATCH) for t in tokens for i in items)
    return edges


def edge_count_stats(question: Question, db: Database,
                     stop_words: frozenset[str] = STOP_WORDS) -> dict[str, int]:
    """Mode-edge counts under both linking modes.

    Bridge needs one edge per question token and schema item (A + B style
    growth); No-Match needs one per unmatched token/item pair (A x B).
    """
    tokens, items = unmatched_items(question, db, stop_words=stop_words)
    return {
        "bridge_count": len(question.tokens) + len(db.tables) + len(db.columns) - 1,
        "nomatch_count": len(tokens) * len(items),
        "unmatched_question": len(tokens),
        "unmatched_schema": len(items),
    }


@dataclass(frozen=True)
class HeterogeneousGraph:
    nodes: tuple[NodeRef, ...]
    edges: tuple[Edge, ...]
    mode: LinkingMode
    labels: tuple[str, ...] = ()
    stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        index = {n: i for i, n in enumerate(self.nodes)}
        if len(index) != len(self.nodes):
            raise GraphError("duplicate nodes")
        neighbors: list[list[tuple[int, Relation]]] = [[] for _ in self.nodes]
        outgoing: list[list[tuple[int, Relation]]] = [[] for _ in self.nodes]
        for e in self.edges:
            if e.src not in index or e.dst not in index:
                raise GraphError(f"edge {e} references an unknown node")
            neighbors[index[e.dst]].append((index[e.src], e.rel))
            outgoing[index[e.src]].append((index[e.dst], e.rel))
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_neighbors", tuple(tuple(n) for n in neighbors))
        object.__setattr__(self, "_outgoing", tuple(tuple(sorted(o)) for o in outgoing))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(n) for n in self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def index(self, node: NodeRef) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise GraphError(f"unknown node {node}") from None

    def neighborhood(self, i: int) -> tuple[tuple[int, Relation], ...]:
        """Relational reception field: (source node index, relation) of incoming edges."""
        return self._neighbors[i]

    def outgoing(self, i: int) -> tuple[tuple[int, Relation], ...]:
        return self._outgoing[i]

    @property
    def forward_edges(self) -> list[Edge]:
        return [e for e in self.edges if not e.rel.is_inverse and not e.rel.is_self_loop]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src index, dst index, relation id) arrays in edge order."""
        src = np.array([self._index[e.src] for e in self.edges], dtype=np.int64)
        dst = np.array([self._index[e.dst] for e in self.edges], dtype=np.int64)
        rel = np.array([int(e.rel) for e in self.edges], dtype=np.int64)
        return src, dst, rel

    def find(self, label: str) -> NodeRef:
        """Resolve a node by its label or a ``kind:id`` reference."""
        if ":" in label:
            kind, _, ident = label.partition(":")
            for k in NodeKind:
                if k.value.lower() == kind.lower() or k.name.lower() == kind.lower():
                    try:
                        node = NodeRef(k, int(ident))
                    except ValueError:
                        raise GraphError(f"bad node id in {label!r}") from None
                    self.index(node)
                    return node
        hits = [n for n, lab in zip(self.nodes, self.labels) if lab.lower() == label.lower()]
        if not hits:
            raise GraphError(f"no node labelled {label!r}")
        if len(hits) > 1:
            raise GraphError(f"label {label!r} is ambiguous: {', '.join(map(str, hits))}")
        return hits[0]

    def label(self, node: NodeRef) -> str:
        return self.labels[self.index(node)]

    def to_dict(self) -> dict:
        return {
            "nodes": [{"kind": n.kind.value, "id": n.id, "label": lab}
                      for n, lab in zip(self.nodes, self.labels)],
            "edges": [{"src": self._index[e.src], "dst": self._index[e.dst], "rel": e.rel.label}
                      for e in self.edges],
            "mode": self.mode.value,
            "stats": dict(self.stats),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "HeterogeneousGraph":
        try:
            nodes = tuple(NodeRef(NodeKind(n["kind"]), int(n["id"])) for n in obj["nodes"])
            labels = tuple(str(n.get("label", "")) for n in obj["nodes"])
            edges = tuple(Edge(nodes[e["src"]], nodes[e["dst"]], Relation.from_label(e["rel"]))
                          for e in obj["edges"])
            mode = LinkingMode(obj["mode"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed graph JSON: {exc}") from None
        return cls(nodes, edges, mode, labels, dict(obj.get("stats", {})))


def node_labels(question: Question, db: Database, nodes: Sequence[NodeRef]) -> tuple[str, ...]:
    out = []
    for n in nodes:
        if n.kind is Q:
            out.append(question.tokens[n.id].surface)
        elif n.kind is T:
            out.append(db.tables[n.id].label)
        else:
            out.append(db.columns[n.id].label)
    return tuple(out)


def build_graph(question: Question, db: Database, mode: LinkingMode | str = LinkingMode.BRIDGE,
                *, stop_words: frozenset[str] = STOP_WORDS,
                modifier_labels: frozenset[str] = MODIFIER_LABELS) -> HeterogeneousGraph:
    if not question.tokens:
        raise GraphError("cannot build a graph for an empty question")
    mode = LinkingMode(mode)
    nodes = build_nodes(question, db)
    forward = list(dict.fromkeys(
        schema_relations(db)
        + question_relations(question, modifier_labels)
        + linking_relations(question, db, mode, stop_words)))
    edges = forward + [e.inverted() for e in forward] + [Edge(n, n, Relation.SELF_LOOP) for n in nodes]
    stats = {"forward_edges": len(forward), **edge_count_stats(question, db, stop_words)}
    return HeterogeneousGraph(tuple(nodes), tuple(edges), mode, node_labels(question, db, nodes),
                              stats)


@dataclass(frozen=True)
class RelationPath:
    src: NodeRef
    dst: NodeRef
    edges: tuple[Edge, ...]

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def relations(self) -> list[str]:
        return [e.rel.label for e in self.edges]

    def render(self, graph: HeterogeneousGraph) -> str:
        parts = [graph.label(self.src)]
        for e in self.edges:
            parts.append(f"-[{e.rel.label}]-> {graph.label(e.dst)}")
        return " ".join(parts)


def find_multihop_path(graph: HeterogeneousGraph, src: NodeRef, dst: NodeRef, max_hops: int,
                       *, skip: frozenset[Relation] = PLUMBING_RELATIONS) -> RelationPath | None:
    """Shortest directed relation path from ``src`` to ``dst``.

    Among shortest paths the one with the lexicographically smallest sequence
    of (relation id, node index) hops wins. Bridge, No-Match and self-loop
    edges are skipped by default; they would put every pair two hops apart.
    """
    if max_hops < 1:
        raise GraphError("max_hops must be at least 1")
    s, t = graph.index(src), graph.index(dst)
    if s == t:
        return RelationPath(src, dst, ())
    # Distances to the target over reversed edges.
    dist = {t: 0}
    queue = deque([t])
    while queue:
        v = queue.popleft()
        if dist[v] >= max_hops:
            continue
        for u, rel in graph.neighborhood(v):
            if rel not in skip and u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    if s not in dist:
        return None
    hops = []
    cur = s
    while cur != t:
        need = dist[cur] - 1
        rel, nxt = min((int(r), v) for v, r in graph.outgoing(cur)
                       if Relation(r) not in skip and dist.get(v) == need)
        hops.append(Edge(graph.nodes[cur], graph.nodes[nxt], Relation(rel)))
        cur = nxt
    return RelationPath(src, dst, tuple(hops))
