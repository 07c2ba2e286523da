"""Restricted bpy-dialect interpretation: script -> scene IR -> script."""

from cadforge.scene.ir import (
    KINDS,
    ParseMalformed,
    ParseOutcome,
    ParsedScene,
    ParseUnsupported,
    SceneIR,
    Unit,
    count_parameters,
    scene_from_json,
    scene_to_json,
)
from cadforge.scene.parser import parse_script
from cadforge.scene.emitter import emit_script

__all__ = [
    "KINDS",
    "ParseMalformed",
    "ParseOutcome",
    "ParsedScene",
    "ParseUnsupported",
    "SceneIR",
    "Unit",
    "count_parameters",
    "emit_script",
    "parse_script",
    "scene_from_json",
    "scene_to_json",
]
