"""Prompt templates shipped as editable text assets.

Placeholders are written `{name}`; only the names listed in PLACEHOLDERS are
substituted, so JSON braces inside the templates stay literal.
"""
import hashlib
import re
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet

PROMPT_DIR = Path(__file__).parent

PLACEHOLDERS: Dict[str, FrozenSet[str]] = {
    "filter": frozenset({"sentence", "annotations"}),
    "refine": frozenset({"options", "trigger", "sentence"}),
    "arguments": frozenset({"event_type", "description", "trigger", "roles", "sentence"}),
    "align": frozenset({"event_type", "description", "trigger", "roles", "sentence", "input"}),
    "align_multi": frozenset({"roles", "sentence", "input1", "input2", "input3"}),
    "ed": frozenset({"schema", "sentence"}),
    "eae": frozenset({"schema", "identifier", "answer_format", "trigger", "sentence"}),
}

_FIELD = re.compile(r"\{(\w+)\}")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in PLACEHOLDERS:
        raise KeyError(f"unknown prompt template {name!r}")
    return (PROMPT_DIR / f"{name}.txt").read_text(encoding="utf-8")


def template_placeholders(name: str) -> FrozenSet[str]:
    """Placeholders that actually occur in the template text"""
    return frozenset(m.group(1) for m in _FIELD.finditer(load_template(name)) if m.group(1) in PLACEHOLDERS[name])


def template_digest(name: str) -> str:
    return hashlib.sha256(load_template(name).encode("utf-8")).hexdigest()


def render(name: str, **values: str) -> str:
    expected = PLACEHOLDERS[name]
    if set(values) != expected:
        raise KeyError(f"template {name!r} takes {sorted(expected)}, got {sorted(values)}")

    def substitute(match: "re.Match[str]") -> str:
        key = match.group(1)
        return values[key] if key in expected else match.group(0)

    return _FIELD.sub(substitute, load_template(name))
