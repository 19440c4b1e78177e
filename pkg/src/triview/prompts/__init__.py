"""Prompt templates and rendering.

Templates live as plain-text files next to this module. They contain literal
JSON braces, so rendering replaces only named ``{placeholder}`` tokens instead
of using str.format.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

EXTRACTION = "graph_extraction"
DECOMPOSE = "decompose"
STEP_ANSWER = "step_answer"
FINAL_ANSWER = "final_answer"
JUDGE = "judge"

# Placeholders each template is allowed (and required) to bind.
TEMPLATE_FIELDS: dict[str, tuple[str, ...]] = {
    EXTRACTION: ("schema", "passage"),
    DECOMPOSE: ("question", "evidence"),
    STEP_ANSWER: ("original_question", "acquired_information", "sub_question", "evidence"),
    FINAL_ANSWER: ("question", "evidence"),
    JUDGE: ("pred_answer", "gold_answer"),
}


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in TEMPLATE_FIELDS:
        raise KeyError(f"unknown prompt template: {name!r}")
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(name: str, **values: str) -> str:
    """Fill a template's placeholders; every declared field must be supplied."""
    fields = TEMPLATE_FIELDS[name]
    missing = set(fields) - set(values)
    extra = set(values) - set(fields)
    if missing or extra:
        raise ValueError(f"template {name!r} fields mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    text = load_template(name)
    for field in fields:
        text = text.replace("{" + field + "}", values[field])
    return text
