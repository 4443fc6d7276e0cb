import keyword
import re
import unicodedata
from collections import OrderedDict
from typing import AbstractSet, Dict, Iterable, Iterator, List, Optional, Tuple

from pydantic import ValidationError

from app.exceptions import OntologyLoadError
from app.models.ontology import EventTypeDef
from app.utils.jsonl import read_records
from app.utils.logging import get_logger

logger = get_logger(__name__)

_BOUNDARY = re.compile(r"[\s_\-]+")
_NON_ALNUM = re.compile(r"[^A-Za-z0-9]")
_SNAKE_SPLIT = re.compile(r"[^a-z0-9]+")

# names already bound in class-style prompts
RESERVED_IDENTIFIERS = frozenset({"Event", "List"})
RESERVED_FIELDS = frozenset({"trigger"})


def _ascii_fold(text: str) -> str:
    return unicodedata.normalize("NFKD", text).encode("ascii", "ignore").decode("ascii")


def _camel_base(name: str) -> str:
    if not any(ch.isalnum() for ch in name):
        raise ValueError(f"type name {name!r} has no alphanumeric character")
    parts = [_NON_ALNUM.sub("", part) for part in _BOUNDARY.split(_ascii_fold(name))]
    parts = [part for part in parts if part]
    if not parts:
        # alphanumeric only outside ASCII; collisions get numbered below
        return "Type"
    ident = "".join(part[0].upper() + part[1:] for part in parts)
    if not ident[0].isalpha():
        ident = "T" + ident
    if keyword.iskeyword(ident):
        ident += "_"
    return ident


def sanitize_type_identifier(name: str, taken: AbstractSet[str] = frozenset()) -> str:
    """Upper-camel identifier for a type name, numbered `_2`, `_3`, ... when already taken"""
    base = _camel_base(name)
    if base not in taken and base not in RESERVED_IDENTIFIERS:
        return base
    n = 2
    while f"{base}_{n}" in taken:
        n += 1
    return f"{base}_{n}"


def role_field_names(type_def: EventTypeDef) -> Dict[str, str]:
    """Map each role name to a unique snake_case field identifier"""
    fields: Dict[str, str] = {}
    used = set(RESERVED_FIELDS)
    for role in type_def.roles:
        if role.name in fields:
            continue
        base = "_".join(part for part in _SNAKE_SPLIT.split(_ascii_fold(role.name).lower()) if part) or "role"
        if base[0].isdigit():
            base = "r_" + base
        if keyword.iskeyword(base) or base in RESERVED_FIELDS:
            base += "_"
        candidate, n = base, 2
        while candidate in used:
            candidate = f"{base}_{n}"
            n += 1
        used.add(candidate)
        fields[role.name] = candidate
    return fields


class Ontology:
    """Immutable event schema indexed by id, with the id <-> identifier bijection"""

    def __init__(self, types: Iterable[EventTypeDef] = ()):
        self._types: "OrderedDict[str, EventTypeDef]" = OrderedDict()
        self._to_identifier: Dict[str, str] = {}
        self._from_identifier: Dict[str, str] = {}
        self._fields: Dict[str, Dict[str, str]] = {}
        for type_def in types:
            if type_def.id in self._types:
                raise OntologyLoadError(f"duplicate id {type_def.id!r}")
            ident = sanitize_type_identifier(type_def.name, self._from_identifier.keys())
            self._types[type_def.id] = type_def
            self._to_identifier[type_def.id] = ident
            self._from_identifier[ident] = type_def.id
            self._fields[type_def.id] = role_field_names(type_def)

    def __len__(self) -> int:
        return len(self._types)

    def __iter__(self) -> Iterator[EventTypeDef]:
        return iter(self._types.values())

    def __contains__(self, type_id: object) -> bool:
        return type_id in self._types

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Ontology):
            return NotImplemented
        return list(self._types.items()) == list(other._types.items()) and self.identifier_map == other.identifier_map

    @property
    def ids(self) -> List[str]:
        return list(self._types)

    @property
    def identifier_map(self) -> Dict[str, str]:
        return dict(self._to_identifier)

    def get(self, type_id: str) -> EventTypeDef:
        try:
            return self._types[type_id]
        except KeyError:
            raise KeyError(f"unknown event type {type_id!r}") from None

    def identifier(self, type_id: str) -> str:
        return self._to_identifier[type_id]

    def type_for_identifier(self, identifier: str) -> Optional[EventTypeDef]:
        type_id = self._from_identifier.get(identifier)
        return self._types[type_id] if type_id is not None else None

    def role_fields(self, type_id: str) -> Dict[str, str]:
        return dict(self._fields[type_id])


def load_ontology(source: Iterable) -> Ontology:
    """Read an ontology from a JSON-lines stream, keeping file order"""
    types: List[EventTypeDef] = []
    seen: Dict[str, int] = {}
    taken: Dict[str, str] = {}
    for line_no, payload in read_records(source, OntologyLoadError):
        try:
            type_def = EventTypeDef.model_validate(payload)
        except ValidationError as exc:
            raise OntologyLoadError(_describe(exc), line=line_no) from exc
        if type_def.id in seen:
            raise OntologyLoadError(
                f"duplicate id {type_def.id!r} (first defined on line {seen[type_def.id]})", line=line_no)
        try:
            taken[sanitize_type_identifier(type_def.name, taken.keys())] = type_def.id
        except ValueError as exc:
            raise OntologyLoadError(str(exc), line=line_no) from exc
        seen[type_def.id] = line_no
        types.append(type_def)

    ontology = Ontology(types)
    logger.info("Ontology loaded", event_types=len(ontology), role_types=len(role_inventory(ontology)))
    return ontology


def _describe(exc: ValidationError) -> str:
    first = exc.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "<record>"
    return f"{location}: {first['msg']}"


def validate_ontology(ontology: Ontology) -> List[str]:
    """List every violated type invariant; an empty list means the schema is sound"""
    violations: List[str] = []
    for type_def in ontology:
        if not type_def.id.strip():
            violations.append(f"empty id: {type_def.id!r}")
        if not type_def.description.strip():
            violations.append(f"empty description: {type_def.id}")
        names = [role.name for role in type_def.roles]
        for name in names:
            if not name.strip():
                violations.append(f"empty role name: {type_def.id}")
        for name in sorted({n for n in names if names.count(n) > 1}):
            violations.append(f"duplicate role name {name!r}: {type_def.id}")
    return violations


def role_inventory(ontology: Ontology) -> List[str]:
    """Distinct role names across the schema, sorted"""
    return sorted({role.name.strip() for type_def in ontology for role in type_def.roles if role.name.strip()})


def role_counts(ontology: Ontology) -> Tuple[int, int]:
    return len(ontology), len(role_inventory(ontology))
