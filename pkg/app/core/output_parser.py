import ast
import json
import re
from abc import ABC, abstractmethod
from typing import Dict, Generic, List, NamedTuple, Optional, Sequence, Tuple, TypeVar

from app.core.ontology import Ontology
from app.exceptions import OutputParseError
from app.models.annotation import NONE_OF_THEM, RoleMap
from app.models.extraction import ParsedArguments, ParsedEvent
from app.models.ontology import EventTypeDef
from app.utils.logging import get_logger, log_dropped

logger = get_logger(__name__)

T = TypeVar("T")

_FENCE = re.compile(r"```[A-Za-z]*")
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")
_FILTER_LINE = re.compile(r"\*\*Reasonable Annotations\*\*\s*:\s*(.*)", re.IGNORECASE)
_BACKTICK = re.compile(r"`([^`]+)`")
_REFINE_LINE = re.compile(r"\*\*Event Type\*\*\s*:\s*\**\s*([A-Za-z])(?![A-Za-z])")


class OutputParser(Generic[T], ABC):
    """Turns raw model text into a value or raises OutputParseError"""

    @abstractmethod
    def parse(self, text: str) -> T:
        pass

    def __call__(self, text: str) -> T:
        return self.parse(text)


def strip_fences(text: str) -> str:
    return _FENCE.sub("", text).strip()


def _role_key(name: str) -> str:
    return " ".join(name.replace("_", " ").split()).lower()


class FilterVerdictParser(OutputParser[bool]):
    """True when the trigger surface is among the backticked reasonable annotations"""

    def __init__(self, trigger: str):
        self.trigger = trigger

    def parse(self, text: str) -> bool:
        match = _FILTER_LINE.search(text)
        if match is None:
            raise OutputParseError("missing **Reasonable Annotations** line")
        answer = match.group(1)
        items = _BACKTICK.findall(answer)
        if not items:
            if "none of them" in answer.lower():
                return False
            raise OutputParseError(f"no backticked annotation in {answer!r}")
        return any(item.split("(", 1)[0].strip() == self.trigger for item in items)


class RefinementChoiceParser(OutputParser[str]):
    """Maps the answered letter onto the option list; the letter after the last type is NONE_OF_THEM"""

    def __init__(self, options: Sequence[str]):
        self.options = list(options)

    def parse(self, text: str) -> str:
        match = _REFINE_LINE.search(text)
        if match is None:
            raise OutputParseError("missing **Event Type** line")
        index = ord(match.group(1).upper()) - ord("A")
        if index == len(self.options):
            return NONE_OF_THEM
        if index > len(self.options):
            raise OutputParseError(f"option {match.group(1)!r} outside A..{chr(ord('A') + len(self.options))}")
        return self.options[index]


def load_json_object(text: str) -> dict:
    """First {...} object in the text; tolerates code fences and trailing commas"""
    body = strip_fences(text)
    start, end = body.find("{"), body.rfind("}")
    if start == -1 or end < start:
        raise OutputParseError("no JSON object in output")
    try:
        value = json.loads(_TRAILING_COMMA.sub(r"\1", body[start:end + 1]))
    except json.JSONDecodeError as exc:
        raise OutputParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(value, dict):
        raise OutputParseError("JSON output is not an object")
    return value


class RoleMapParser(OutputParser[RoleMap]):
    """Role-keyed JSON answer restricted to the event type's roles, in role order"""

    def __init__(self, roles: Sequence[str], record_id: Optional[str] = None):
        self.roles = list(roles)
        self.record_id = record_id
        self._lookup = {_role_key(role): role for role in self.roles}

    def parse(self, text: str) -> RoleMap:
        payload = load_json_object(text)
        found: Dict[str, List[str]] = {}
        for key, value in payload.items():
            role = key if key in self.roles else self._lookup.get(_role_key(key))
            if role is None:
                log_dropped(logger, "unknown_role", self.record_id, role=key)
                continue
            fillers = found.setdefault(role, [])
            for filler in _string_list(value, key):
                if filler not in fillers:
                    fillers.append(filler)
        return {role: found.get(role, []) for role in self.roles}


def _string_list(value: object, key: str, unique: bool = True) -> List[str]:
    """Stripped non-empty fillers; repeats are kept when unique is false"""
    if value is None:
        return []
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(item, str) for item in value):
        raise OutputParseError(f"role {key!r} must map to a list of strings")
    fillers: List[str] = []
    for item in value:
        item = item.strip()
        if item and (not unique or item not in fillers):
            fillers.append(item)
    return fillers


def _module_body(text: str) -> ast.expr:
    """The value of a lone `results = <expr>` assignment or bare expression"""
    try:
        tree = ast.parse(strip_fences(text), mode="exec")
    except SyntaxError as exc:
        raise OutputParseError(f"not a Python expression: {exc.msg}") from exc
    if len(tree.body) != 1:
        raise OutputParseError("expected a single statement")
    statement = tree.body[0]
    if isinstance(statement, ast.Assign) and len(statement.targets) == 1 \
            and isinstance(statement.targets[0], ast.Name) and statement.targets[0].id in ("results", "result"):
        return statement.value
    if isinstance(statement, ast.Expr):
        return statement.value
    raise OutputParseError("expected `results = [...]` or a bare expression")


def _instantiation(node: ast.expr) -> Tuple[str, Dict[str, object]]:
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise OutputParseError("expected `Identifier(...)` terms")
    if node.args:
        raise OutputParseError(f"{node.func.id}: positional arguments are not allowed")
    fields: Dict[str, object] = {}
    for keyword in node.keywords:
        if keyword.arg is None:
            raise OutputParseError(f"{node.func.id}: ** arguments are not allowed")
        try:
            fields[keyword.arg] = ast.literal_eval(keyword.value)
        except (ValueError, TypeError, SyntaxError) as exc:
            raise OutputParseError(f"{node.func.id}.{keyword.arg}: not a literal") from exc
    trigger = fields.get("trigger")
    if not isinstance(trigger, str):
        raise OutputParseError(f"{node.func.id}: trigger must be a string")
    return node.func.id, fields


class DetectionParse(NamedTuple):
    events: List[ParsedEvent]
    out_of_partition: List[str]


class DetectionParser(OutputParser[DetectionParse]):
    """`[Identifier(trigger="...")]`, scoped to the identifiers of one partition"""

    def __init__(self, part: Sequence[EventTypeDef], ontology: Ontology, record_id: Optional[str] = None):
        self.ontology = ontology
        self.record_id = record_id
        self.allowed = {ontology.identifier(t.id) for t in part}

    def parse(self, text: str) -> DetectionParse:
        value = _module_body(text)
        if not isinstance(value, ast.List):
            raise OutputParseError("expected a list of instantiations")
        events: List[ParsedEvent] = []
        dropped: List[str] = []
        for node in value.elts:
            identifier, fields = _instantiation(node)
            type_def = self.ontology.type_for_identifier(identifier)
            if identifier not in self.allowed or type_def is None:
                log_dropped(logger, "out_of_partition", self.record_id, identifier=identifier)
                dropped.append(identifier)
                continue
            event = ParsedEvent(identifier=identifier, type_id=type_def.id, trigger=str(fields["trigger"]).strip())
            if event.trigger and event not in events:
                events.append(event)
        return DetectionParse(events, dropped)


class ArgumentParser(OutputParser[ParsedArguments]):
    """`Identifier(trigger="...", field=["...", ...])` for one event type"""

    def __init__(self, type_def: EventTypeDef, ontology: Ontology, record_id: Optional[str] = None):
        self.type_def = type_def
        self.identifier = ontology.identifier(type_def.id)
        self.record_id = record_id
        self.field_roles = {field: role for role, field in ontology.role_fields(type_def.id).items()}

    def parse(self, text: str) -> ParsedArguments:
        value = _module_body(text)
        if isinstance(value, ast.List):
            if len(value.elts) != 1:
                raise OutputParseError("expected exactly one instantiation")
            value = value.elts[0]
        identifier, fields = _instantiation(value)
        if identifier != self.identifier:
            raise OutputParseError(f"expected {self.identifier}, got {identifier}")
        found: Dict[str, List[str]] = {}
        for name, filler_value in fields.items():
            if name == "trigger":
                continue
            role = self.field_roles.get(name)
            if role is None:
                log_dropped(logger, "unknown_role", self.record_id, role=name, type_id=self.type_def.id)
                continue
            # a repeated filler names another occurrence in the sentence
            found[role] = _string_list(filler_value, name, unique=False)
        return {role: found.get(role, []) for role in self.type_def.role_names}
