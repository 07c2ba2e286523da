"""Prompt templates for generation, verification, and judging.

Templates use ``{slot}`` placeholders that are substituted literally, so
JSON braces in the bodies need no escaping.  Rendering fails when a
declared slot is left unfilled.
"""

from __future__ import annotations

from dataclasses import dataclass


class MissingSlotError(KeyError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    slots: tuple[str, ...]
    body: str

    def render(self, **values: str) -> str:
        unknown = set(values) - set(self.slots)
        if unknown:
            raise ValueError(f"template {self.name!r} has no slots {sorted(unknown)}")
        text = self.body
        for slot in self.slots:
            if slot not in values:
                raise MissingSlotError(f"template {self.name!r} is missing slot {slot!r}")
            text = text.replace("{" + slot + "}", str(values[slot]))
        return text


EXPAND_INSTRUCTIONS = PromptTemplate(
    name="expand_instructions",
    slots=("exemplars", "count", "avoid_names", "categories", "itypes"),
    body=(
        "You write modeling instructions for a 3D scripting assistant.\n"
        "Here are existing instructions for reference:\n{exemplars}\n\n"
        "Write {count} NEW instructions that differ clearly from the references\n"
        "and from each other. Spread them across object categories ({categories})\n"
        "and phrasing styles ({itypes}). Do not describe these objects: {avoid_names}.\n\n"
        "Reply with a JSON array only. Each element must be an object with keys\n"
        '"text", "category", "type", and "object_name".\n'
    ),
)

GENERATE_SCRIPT = PromptTemplate(
    name="generate_script",
    slots=("example_instruction", "example_script", "instruction"),
    body=(
        "You translate modeling instructions into Blender Python (bpy) scripts.\n\n"
        "Example instruction:\n{example_instruction}\n\n"
        "Example script:\n```python\n{example_script}\n```\n\n"
        "Instruction:\n{instruction}\n\n"
        "Reply with one complete bpy script in a fenced code block.\n"
    ),
)

VERIFY_PAIR = PromptTemplate(
    name="verify_pair",
    slots=("instruction",),
    body=(
        "Four renders of a generated 3D model are attached.\n"
        "Instruction:\n{instruction}\n\n"
        'Do the renders show what the instruction asks for? Reply with JSON only:\n'
        '{"match": true} or {"match": false}\n'
    ),
)

VERIFY_PAIR_REPROMPT = PromptTemplate(
    name="verify_pair_reprompt",
    slots=("instruction",),
    body=(
        "Your previous reply was not valid JSON. Look at the four attached\n"
        "renders again for this instruction:\n{instruction}\n\n"
        'Reply with exactly {"match": true} or {"match": false} and nothing else.\n'
    ),
)

JUDGE_IMAGES = PromptTemplate(
    name="judge_criteria_images",
    slots=("instruction", "criteria"),
    body=(
        "Four renders of a generated 3D model are attached.\n"
        "Instruction:\n{instruction}\n\n"
        "Score each criterion 1 if the renders satisfy it, else 0:\n{criteria}\n\n"
        'Reply with JSON only, e.g. {"scores": {"<criterion id>": 1}}.\n'
        "Include every listed criterion id exactly once.\n"
    ),
)

JUDGE_SCRIPT = PromptTemplate(
    name="judge_criteria_script",
    slots=("instruction", "criteria", "script"),
    body=(
        "A generated bpy script is given below.\n"
        "Instruction:\n{instruction}\n\n"
        "Script:\n```python\n{script}\n```\n\n"
        "Score each criterion 1 if the script satisfies it, else 0:\n{criteria}\n\n"
        'Reply with JSON only, e.g. {"scores": {"<criterion id>": 1}}.\n'
        "Include every listed criterion id exactly once.\n"
    ),
)

JUDGE_REPROMPT = PromptTemplate(
    name="judge_criteria_reprompt",
    slots=("criteria",),
    body=(
        "Your previous reply could not be parsed. Score the same criteria again:\n"
        "{criteria}\n\n"
        'Reply with JSON only: {"scores": {"<criterion id>": 0 or 1, ...}},\n'
        "covering every listed id exactly once.\n"
    ),
)

FILTER_VERDICT = PromptTemplate(
    name="filter_verdict",
    slots=("instruction",),
    body=(
        "You are a quality gate for instruction/render training pairs.\n"
        "Four renders are attached. Instruction:\n{instruction}\n\n"
        "Should this pair be kept as training data? Reply with JSON only:\n"
        '{"match": true} or {"match": false}\n'
    ),
)


def criteria_block(criteria) -> str:
    """Render criteria as '- [id] text' lines for judge prompts."""
    return "\n".join(f"- [{c.id}] {c.text}" for c in criteria)
