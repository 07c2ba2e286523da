"""Canonical script emission from a SceneIR.

Emitted text stays inside the accepted grammar, so parse(emit(scene))
always succeeds.  Floats are written with repr(), which round-trips
exactly (well within the 9-significant-digit contract).
"""

from __future__ import annotations

from cadforge.scene.ir import KINDS, SceneIR, Unit

_KIND_OPS = {
    "Cube": "primitive_cube_add",
    "UvSphere": "primitive_uv_sphere_add",
    "Cylinder": "primitive_cylinder_add",
    "Cone": "primitive_cone_add",
    "Torus": "primitive_torus_add",
    "Plane": "primitive_plane_add",
}

assert set(_KIND_OPS) == set(KINDS)


def _fmt(value: float) -> str:
    return repr(float(value))


def _fmt_value(value) -> str:
    if isinstance(value, tuple):
        return "(" + ", ".join(_fmt(c) for c in value) + ")"
    return _fmt(value)


def _emit_unit(lines: list[str], unit: Unit, index: int) -> None:
    kwargs = ", ".join(f"{name}={_fmt_value(value)}" for name, value in unit.creation_params.items())
    lines.append(f"bpy.ops.mesh.{_KIND_OPS[unit.kind]}({kwargs})")
    needs_ref = any(v is not None for v in (unit.location, unit.rotation_euler, unit.scale, unit.material))
    if not needs_ref:
        return
    lines.append("obj = bpy.context.object")
    if unit.location is not None:
        lines.append(f"obj.location = {_fmt_value(unit.location)}")
    if unit.rotation_euler is not None:
        lines.append(f"obj.rotation_euler = {_fmt_value(unit.rotation_euler)}")
    if unit.scale is not None:
        lines.append(f"obj.scale = {_fmt_value(unit.scale)}")
    if unit.material is not None:
        lines.append(f'mat = bpy.data.materials.new(name="unit_{index}_material")')
        rgba = "(" + ", ".join(_fmt(c) for c in unit.material) + ")"
        lines.append(f"mat.diffuse_color = {rgba}")
        lines.append("obj.data.materials.append(mat)")


def emit_script(scene: SceneIR) -> str:
    """Render a SceneIR back to a script in the restricted dialect."""
    scene.validate()
    lines = ["import bpy", ""]
    for index, unit in enumerate(scene.units):
        _emit_unit(lines, unit, index)
    text = "\n".join(lines)
    return text if text.endswith("\n") else text + "\n"
