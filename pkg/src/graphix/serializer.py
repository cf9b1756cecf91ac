"""Flat text rendering of a question and its schema, with node alignment.

Layout::

    q1 ... qn | db name | t1 : c11 , c12 | t2 : c21 | *

Every graph node owns a contiguous token span; separators and the database
name belong to no node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .graph import NodeKind, NodeRef
from .schema import Database, Question, STAR

BAR, COLON, COMMA = "|", ":", ","
SEPARATORS = frozenset({BAR, COLON, COMMA})


class SerializationError(ValueError):
    pass


@dataclass(frozen=True)
class SerializedInput:
    tokens: tuple[str, ...]
    node_refs: tuple[NodeRef, ...]
    node_spans: tuple[tuple[int, int], ...]  # half-open [start, end)
    separators: tuple[int, ...]
    db_name_span: tuple[int, int]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def owner(self) -> list[int]:
        """Node index owning each position, -1 for unowned positions."""
        owner = [-1] * len(self.tokens)
        for i, (a, b) in enumerate(self.node_spans):
            for p in range(a, b):
                owner[p] = i
        return owner

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "tokens": list(self.tokens),
            "nodes": [{"kind": n.kind.value, "id": n.id, "span": list(span)}
                      for n, span in zip(self.node_refs, self.node_spans)],
            "separators": list(self.separators),
            "db_name_span": list(self.db_name_span),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False) + "\n"


def serialize(question: Question, db: Database) -> SerializedInput:
    tokens: list[str] = []
    spans: dict[NodeRef, tuple[int, int]] = {}
    seps: list[int] = []

    def sep(tok: str) -> None:
        seps.append(len(tokens))
        tokens.append(tok)

    def emit(node: NodeRef, words: Sequence[str]) -> None:
        start = len(tokens)
        tokens.extend(words)
        spans[node] = (start, len(tokens))

    for tok in question.tokens:
        if tok.surface == BAR:
            raise SerializationError(f"question token {tok.index} is the reserved '|'")
        emit(NodeRef(NodeKind.QUESTION, tok.index), [tok.surface])
    sep(BAR)
    db_start = len(tokens)
    tokens.extend(db.name_tokens)
    db_span = (db_start, len(tokens))
    for table in db.tables:
        if not table.column_ids:
            raise SerializationError(f"table {table.label!r} has no columns")
        sep(BAR)
        emit(NodeRef(NodeKind.TABLE, table.id), table.name_tokens)
        sep(COLON)
        for k, cid in enumerate(table.column_ids):
            if k:
                sep(COMMA)
            emit(NodeRef(NodeKind.COLUMN, cid), db.columns[cid].name_tokens)
    sep(BAR)
    emit(NodeRef(NodeKind.STAR, db.star.id), [STAR])

    # Node order must match graph.build_nodes.
    order = [NodeRef(NodeKind.QUESTION, t.index) for t in question.tokens]
    order.append(NodeRef(NodeKind.STAR, db.star.id))
    for table in db.tables:
        order.append(NodeRef(NodeKind.TABLE, table.id))
        order.extend(NodeRef(NodeKind.COLUMN, c) for c in table.column_ids)
    return SerializedInput(tuple(tokens), tuple(order), tuple(spans[n] for n in order),
                           tuple(seps), db_span)


def parse_serialized(text: str) -> SerializedInput:
    """Recover tokens and node alignment from :func:`serialize` output.

    Table ids are assigned in order of appearance, column ids consecutively
    from 1 (the star column takes id 0), as in the schema loader.
    """
    tokens = text.split()
    if not tokens:
        raise SerializationError("empty input")
    bars = [i for i, t in enumerate(tokens) if t == BAR]
    if len(bars) < 3:
        raise SerializationError("expected question, database name, tables and '*' sections")
    if tokens[-1] != STAR or bars[-1] != len(tokens) - 2:
        raise SerializationError("input must end with '| *'")

    spans: list[tuple[NodeRef, tuple[int, int]]] = []
    seps = list(bars)
    n_q = bars[0]
    for i in range(n_q):
        spans.append((NodeRef(NodeKind.QUESTION, i), (i, i + 1)))
    db_span = (bars[0] + 1, bars[1])
    if db_span[0] == db_span[1] or any(t in SEPARATORS for t in tokens[slice(*db_span)]):
        raise SerializationError("malformed database name section")

    schema_nodes: list[tuple[NodeRef, tuple[int, int]]] = []
    next_col = 1
    for t_id, (a, b) in enumerate(zip(bars[1:-1], bars[2:])):
        section = range(a + 1, b)
        colons = [p for p in section if tokens[p] == COLON]
        if len(colons) != 1:
            raise SerializationError(f"table section {t_id} needs exactly one ':'")
        colon = colons[0]
        if colon == a + 1 or colon == b - 1:
            raise SerializationError(f"table section {t_id} has an empty name or column list")
        seps.append(colon)
        schema_nodes.append((NodeRef(NodeKind.TABLE, t_id), (a + 1, colon)))
        start = colon + 1
        for p in list(range(colon + 1, b)) + [b]:
            if p == b or tokens[p] == COMMA:
                if p == start:
                    raise SerializationError(f"empty column name in table section {t_id}")
                schema_nodes.append((NodeRef(NodeKind.COLUMN, next_col), (start, p)))
                next_col += 1
                if p != b:
                    seps.append(p)
                start = p + 1
        if any(tokens[p] in (BAR, STAR) for p in range(a + 1, colon)):
            raise SerializationError(f"malformed table name in section {t_id}")
    star = len(tokens) - 1
    spans.append((NodeRef(NodeKind.STAR, 0), (star, star + 1)))
    spans.extend(schema_nodes)
    return SerializedInput(tuple(tokens), tuple(n for n, _ in spans),
                           tuple(s for _, s in spans), tuple(sorted(seps)), db_span)


class Vocabulary:
    """Word-level vocabulary with reserved padding, unknown and start symbols."""

    PAD, UNK, BOS = "<pad>", "<unk>", "<bos>"

    def __init__(self, words: Iterable[str] = ()):
        self.itos: list[str] = [self.PAD, self.UNK, self.BOS]
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    @property
    def bos_id(self) -> int:
        return self.stoi[self.BOS]

    def encode(self, tokens: Iterable[str], strict: bool = False) -> list[int]:
        unk = self.stoi[self.UNK]
        out = []
        for t in tokens:
            if t in self.stoi:
                out.append(self.stoi[t])
            elif strict:
                raise KeyError(f"token {t!r} not in vocabulary")
            else:
                out.append(unk)
        return out

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, words: Sequence[str]) -> "Vocabulary":
        words = list(words)
        if words[:3] != [cls.PAD, cls.UNK, cls.BOS]:
            raise ValueError("vocabulary must start with the reserved symbols")
        return cls(words[3:])
