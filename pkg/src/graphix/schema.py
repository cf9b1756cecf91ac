"""Database and question data model, plus JSON/CSV ingestion.

Schema files follow the Spider ``tables.json`` layout for a single database,
extended with a ``candidate_values`` map used for value matching. Question
files carry pre-tokenized text with lemmas and dependency arcs.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

DATA_TYPES = ("text", "number", "time", "boolean", "other")
STAR = "*"

_CASE_BOUNDARY = re.compile(r"(?<=[a-z])(?=[A-Z])")
_SPLIT = re.compile(r"[_\s]+")


class SchemaError(ValueError):
    """Raised when a schema or question file is malformed."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


def split_name(name: str) -> tuple[str, ...]:
    """Split an identifier into lowercase word tokens.

    Splits on underscores, whitespace and lower->upper case boundaries, then
    lowercases. Digits and punctuation stay attached to their neighbours.

    >>> split_name("StuID")
    ('stu', 'id')
    >>> split_name("country_name")
    ('country', 'name')
    """
    pieces = []
    for chunk in _SPLIT.split(name):
        pieces.extend(_CASE_BOUNDARY.split(chunk))
    return tuple(p.lower() for p in pieces if p)


@dataclass(frozen=True)
class Column:
    id: int
    table_id: int | None
    name_tokens: tuple[str, ...]
    data_type: str = "text"
    is_primary: bool = False
    candidate_values: tuple[str, ...] = ()
    original_name: str = ""

    def __post_init__(self):
        if self.data_type not in DATA_TYPES:
            raise SchemaError(f"unknown data type {self.data_type!r}", f"column {self.id}")
        if self.table_id is None:
            if self.name_tokens:
                raise SchemaError("only the star column may lack a table", f"column {self.id}")
            if self.is_primary:
                raise SchemaError("primary key column needs a table", f"column {self.id}")
        elif not self.name_tokens:
            raise SchemaError("empty column name", f"column {self.id}")

    @property
    def is_star(self) -> bool:
        return self.table_id is None

    @property
    def label(self) -> str:
        return self.original_name or " ".join(self.name_tokens) or STAR


@dataclass(frozen=True)
class Table:
    id: int
    name_tokens: tuple[str, ...]
    column_ids: tuple[int, ...]
    original_name: str = ""

    def __post_init__(self):
        if not self.name_tokens:
            raise SchemaError("empty table name", f"table {self.id}")
        if not self.column_ids:
            raise SchemaError("table has no columns", f"table {self.id}")

    @property
    def label(self) -> str:
        return self.original_name or " ".join(self.name_tokens)


@dataclass(frozen=True)
class Database:
    name: str
    tables: tuple[Table, ...]
    columns: tuple[Column, ...]
    foreign_keys: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        stars = [c.id for c in self.columns if c.is_star]
        if len(stars) != 1:
            raise SchemaError(f"expected exactly one star column, found {len(stars)}")
        for i, col in enumerate(self.columns):
            if col.id != i:
                raise SchemaError(f"column id {col.id} at position {i}", f"column {i}")
            if col.table_id is not None and not 0 <= col.table_id < len(self.tables):
                raise SchemaError(f"unknown table {col.table_id}", f"column {i}")
        for t_pos, table in enumerate(self.tables):
            if table.id != t_pos:
                raise SchemaError(f"table id {table.id} at position {t_pos}", f"table {t_pos}")
            for cid in table.column_ids:
                if not 0 <= cid < len(self.columns) or self.columns[cid].table_id != table.id:
                    raise SchemaError(f"column {cid} does not belong here", f"table {t_pos}")
        owned = sum(len(t.column_ids) for t in self.tables)
        if owned + 1 != len(self.columns):
            raise SchemaError(f"{len(self.columns) - 1 - owned} column(s) not listed by any table")
        # Canonical numbering: star first, then each table's columns consecutively.
        flat = [cid for t in self.tables for cid in t.column_ids]
        if not self.columns[0].is_star or flat != list(range(1, len(self.columns))):
            raise SchemaError("columns must be numbered star first, then table by table")
        for k, (src, dst) in enumerate(self.foreign_keys):
            where = f"foreign_keys[{k}]"
            for cid in (src, dst):
                if not 0 <= cid < len(self.columns):
                    raise SchemaError(f"dangling foreign key to column {cid}", where)
                if self.columns[cid].is_star:
                    raise SchemaError("foreign key on the star column", where)
            if self.columns[src].table_id == self.columns[dst].table_id:
                raise SchemaError(f"foreign key {src}->{dst} stays within one table", where)

    @property
    def star(self) -> Column:
        return next(c for c in self.columns if c.is_star)

    @property
    def name_tokens(self) -> tuple[str, ...]:
        return split_name(self.name)

    def table_columns(self, table_id: int) -> list[Column]:
        return [self.columns[c] for c in self.tables[table_id].column_ids]

    def with_candidate_values(self, values: dict[int, Sequence[str]]) -> "Database":
        """Return a copy whose columns carry extra candidate values."""
        cols = list(self.columns)
        for cid, extra in values.items():
            col = cols[cid]
            merged = tuple(dict.fromkeys([*col.candidate_values, *map(str, extra)]))
            cols[cid] = replace(col, candidate_values=merged)
        return replace(self, columns=tuple(cols))


@dataclass(frozen=True)
class QuestionToken:
    index: int
    surface: str
    lemma: str


@dataclass(frozen=True)
class Question:
    tokens: tuple[QuestionToken, ...]
    dep_edges: tuple[tuple[int, int, str], ...] = ()

    def __post_init__(self):
        for i, tok in enumerate(self.tokens):
            if tok.index != i:
                raise SchemaError(f"token index {tok.index} at position {i}", f"tokens[{i}]")
            if not tok.surface or any(ch.isspace() for ch in tok.surface):
                raise SchemaError(f"bad surface form {tok.surface!r}", f"tokens[{i}]")
        n = len(self.tokens)
        for k, (head, dep, _label) in enumerate(self.dep_edges):
            if not (0 <= head < n and 0 <= dep < n):
                raise SchemaError(f"dependency ({head}, {dep}) out of range for {n} tokens",
                                  f"deps[{k}]")
            if head == dep:
                raise SchemaError("dependency head equals dependent", f"deps[{k}]")

    @property
    def lemmas(self) -> tuple[str, ...]:
        return tuple(t.lemma for t in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


def make_question(surfaces: Iterable[str], lemmas: Iterable[str] | None = None,
                  deps: Iterable[tuple[int, int, str]] = ()) -> Question:
    """Convenience constructor; lemmas default to lowercased surfaces."""
    surfaces = list(surfaces)
    lemmas = [s.lower() for s in surfaces] if lemmas is None else [l.lower() for l in lemmas]
    if len(lemmas) != len(surfaces):
        raise SchemaError("surfaces and lemmas differ in length")
    toks = tuple(QuestionToken(i, s, l) for i, (s, l) in enumerate(zip(surfaces, lemmas)))
    return Question(toks, tuple((int(h), int(d), str(lab)) for h, d, lab in deps))


def make_database(name: str, tables: Sequence[tuple[str, Sequence[Any]]],
                  foreign_keys: Sequence[tuple[int, int]] = ()) -> Database:
    """Build a database from ``[(table_name, [col, ...]), ...]``.

    Each column is a name or a dict with ``name`` and optional ``type``,
    ``pk`` and ``values``. Column ids are assigned in order after the star
    column (id 0).
    """
    columns = [Column(0, None, (), "text", original_name=STAR)]
    built = []
    for t_id, (t_name, cols) in enumerate(tables):
        ids = []
        for spec in cols:
            spec = {"name": spec} if isinstance(spec, str) else dict(spec)
            cid = len(columns)
            columns.append(Column(cid, t_id, split_name(spec["name"]), spec.get("type", "text"),
                                  bool(spec.get("pk", False)), tuple(spec.get("values", ())),
                                  spec["name"]))
            ids.append(cid)
        built.append(Table(t_id, split_name(t_name), tuple(ids), t_name))
    return Database(name, tuple(built), tuple(columns), tuple(map(tuple, foreign_keys)))


def _read_json(path: Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(str(exc), str(path)) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}:{exc.colno}") from exc


def _flatten_keys(raw: Any) -> list[int]:
    out = []
    for item in raw or ():
        out.extend(_flatten_keys(item) if isinstance(item, list) else [item])
    return [int(k) for k in out]


def database_from_dict(obj: Any, source: str = "<schema>") -> Database:
    if isinstance(obj, list):
        if len(obj) != 1:
            raise SchemaError(f"expected a single database, found {len(obj)}", source)
        obj = obj[0]
    if not isinstance(obj, dict):
        raise SchemaError("schema must be a JSON object", source)
    try:
        db_id = str(obj["db_id"])
        table_names = obj.get("table_names_original", obj.get("table_names"))
        raw_cols = obj.get("column_names_original", obj.get("column_names"))
        if table_names is None or raw_cols is None:
            raise KeyError("table_names_original" if table_names is None else "column_names_original")
    except KeyError as exc:
        raise SchemaError(f"missing field {exc.args[0]!r}", source) from None

    raw_cols = [list(c) for c in raw_cols]
    types = list(obj.get("column_types") or [])
    has_star = bool(raw_cols) and raw_cols[0][0] == -1 and raw_cols[0][1] == STAR
    # Column indices in the file count the star column when it is present.
    shift = 1 if has_star else 0
    if has_star:
        raw_cols, types = raw_cols[1:], types[1:]
    if types and len(types) != len(raw_cols):
        raise SchemaError(f"{len(types)} column types for {len(raw_cols)} columns",
                          f"{source}: column_types")

    seen: dict[str, int] = {}
    for t_id, t_name in enumerate(table_names):
        key = str(t_name).lower()
        if key in seen:
            raise SchemaError(f"duplicate table name {t_name!r} (also table {seen[key]})",
                              f"{source}: table_names_original[{t_id}]")
        seen[key] = t_id

    # Renumber columns table by table (stable), star at 0.
    order = sorted(range(len(raw_cols)), key=lambda k: (raw_cols[k][0], k))
    new_id = {k: pos + 1 for pos, k in enumerate(order)}

    def file_index(cid: int) -> int:
        return cid - shift

    primary = set()
    for k, cid in enumerate(_flatten_keys(obj.get("primary_keys"))):
        if not 0 <= file_index(cid) < len(raw_cols):
            raise SchemaError(f"primary key column {cid} does not exist",
                              f"{source}: primary_keys[{k}]")
        primary.add(new_id[file_index(cid)])

    values: dict[int, tuple[str, ...]] = {}
    for key, vals in (obj.get("candidate_values") or {}).items():
        cid = int(key)
        if not 0 <= file_index(cid) < len(raw_cols):
            raise SchemaError(f"candidate values for unknown column {cid}",
                              f"{source}: candidate_values[{key}]")
        values[new_id[file_index(cid)]] = tuple(str(v) for v in vals)

    for k, (t_idx, _name) in enumerate(raw_cols):
        if not 0 <= t_idx < len(table_names):
            raise SchemaError(f"unknown table index {t_idx}",
                              f"{source}: column_names_original[{k + shift}]")
    columns = [Column(0, None, (), "text", original_name=STAR)]
    per_table: list[list[int]] = [[] for _ in table_names]
    for k in order:
        t_idx, c_name = raw_cols[k]
        where = f"{source}: column_names_original[{k + shift}]"
        tokens = split_name(str(c_name))
        if not tokens:
            raise SchemaError(f"column name {c_name!r} has no word tokens", where)
        dtype = str(types[k]).lower() if types else "text"
        dtype = "other" if dtype in ("others", "") else dtype
        if dtype not in DATA_TYPES:
            raise SchemaError(f"unknown column type {types[k]!r}", f"{source}: column_types")
        cid = new_id[k]
        columns.append(Column(cid, int(t_idx), tokens, dtype, cid in primary,
                              values.get(cid, ()), str(c_name)))
        per_table[t_idx].append(cid)

    tables = []
    for t_id, t_name in enumerate(table_names):
        tokens = split_name(str(t_name))
        where = f"{source}: table_names_original[{t_id}]"
        if not tokens:
            raise SchemaError(f"table name {t_name!r} has no word tokens", where)
        if not per_table[t_id]:
            raise SchemaError(f"table {t_name!r} has no columns", where)
        tables.append(Table(t_id, tokens, tuple(per_table[t_id]), str(t_name)))

    fks = []
    for k, pair in enumerate(obj.get("foreign_keys") or ()):
        where = f"{source}: foreign_keys[{k}]"
        try:
            src, dst = (int(c) for c in pair)
        except (TypeError, ValueError):
            raise SchemaError(f"malformed foreign key {pair!r}", where) from None
        for cid in (src, dst):
            if not 0 <= file_index(cid) < len(raw_cols):
                raise SchemaError(f"dangling foreign key to column {cid}", where)
        fks.append((new_id[file_index(src)], new_id[file_index(dst)]))

    try:
        return Database(db_id, tuple(tables), tuple(columns), tuple(fks))
    except SchemaError as exc:
        raise SchemaError(str(exc), source) from None


def load_database(path: str | Path) -> Database:
    """Load a single-database schema JSON file."""
    return database_from_dict(_read_json(Path(path)), str(path))


def question_from_dict(obj: Any, source: str = "<question>") -> Question:
    if not isinstance(obj, dict) or not isinstance(obj.get("tokens"), list):
        raise SchemaError("question must be an object with a 'tokens' list", source)
    tokens = []
    for i, tok in enumerate(obj["tokens"]):
        if isinstance(tok, str):
            tok = {"surface": tok}
        if not isinstance(tok, dict) or "surface" not in tok:
            raise SchemaError("token needs a 'surface' field", f"{source}: tokens[{i}]")
        surface = str(tok["surface"])
        lemma = str(tok.get("lemma") or surface).lower()
        tokens.append(QuestionToken(i, surface, lemma))
    deps = []
    for k, dep in enumerate(obj.get("deps") or ()):
        try:
            deps.append((int(dep["head"]), int(dep["dep"]), str(dep.get("label", "dep"))))
        except (KeyError, TypeError, ValueError):
            raise SchemaError(f"malformed dependency {dep!r}", f"{source}: deps[{k}]") from None
    try:
        return Question(tuple(tokens), tuple(deps))
    except SchemaError as exc:
        raise SchemaError(str(exc), source) from None


def load_question(path: str | Path) -> Question:
    return question_from_dict(_read_json(Path(path)), str(path))


def database_to_dict(db: Database) -> dict:
    """Inverse of :func:`database_from_dict` (star column written explicitly)."""
    return {
        "db_id": db.name,
        "table_names_original": [t.label for t in db.tables],
        "column_names_original": [[-1, STAR]] + [[c.table_id, c.label] for c in db.columns[1:]],
        "column_types": [c.data_type for c in db.columns],
        "primary_keys": [c.id for c in db.columns if c.is_primary],
        "foreign_keys": [list(fk) for fk in db.foreign_keys],
        "candidate_values": {str(c.id): list(c.candidate_values)
                             for c in db.columns if c.candidate_values},
    }


def question_to_dict(q: Question) -> dict:
    return {
        "tokens": [{"surface": t.surface, "lemma": t.lemma} for t in q.tokens],
        "deps": [{"head": h, "dep": d, "label": lab} for h, d, lab in q.dep_edges],
    }


def load_candidate_values_csv(db: Database, table: str, path: str | Path) -> Database:
    """Attach cell values from a CSV dump of one table.

    The header row names the columns (matched after name normalization);
    unknown headers are ignored.
    """
    matches = [t for t in db.tables if t.label.lower() == table.lower()
               or t.name_tokens == split_name(table)]
    if not matches:
        raise SchemaError(f"unknown table {table!r}", str(path))
    tbl = matches[0]
    by_tokens = {db.columns[c].name_tokens: c for c in tbl.column_ids}
    collected: dict[int, list[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty CSV file", str(path)) from None
        targets = [by_tokens.get(split_name(h)) for h in header]
        for row in reader:
            for cid, cell in zip(targets, row):
                if cid is not None and cell.strip():
                    collected.setdefault(cid, []).append(cell.strip())
    return db.with_candidate_values(collected)
