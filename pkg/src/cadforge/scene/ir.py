"""Scene IR: the interpreted form of a restricted bpy script.

A scene is an ordered list of primitive units.  Each unit records which
numeric parameters the script set explicitly; anything left at its default
is absent from the IR (location/rotation/scale stay ``None``), which is
what the parameter-counting rule keys off.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

Vec3 = tuple[float, float, float]
Rgba = tuple[float, float, float, float]

KINDS = ("Cube", "UvSphere", "Cylinder", "Cone", "Torus", "Plane")


@dataclass
class Unit:
    """One primitive shape created by the script."""

    kind: str
    creation_params: dict[str, float | Vec3] = field(default_factory=dict)
    location: Vec3 | None = None
    rotation_euler: Vec3 | None = None
    scale: Vec3 | None = None
    material: Rgba | None = None

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown unit kind {self.kind!r}")
        if self.scale is not None and any(c <= 0 for c in self.scale):
            raise ValueError(f"scale components must be > 0, got {self.scale}")
        if self.material is not None:
            if len(self.material) != 4 or any(not 0.0 <= c <= 1.0 for c in self.material):
                raise ValueError(f"material RGBA channels must be in [0,1], got {self.material}")
        for name, value in self.creation_params.items():
            if isinstance(value, tuple):
                if len(value) != 3:
                    raise ValueError(f"param {name!r} must be a scalar or 3-vector")

    def effective_location(self) -> Vec3:
        return self.location if self.location is not None else (0.0, 0.0, 0.0)

    def effective_rotation(self) -> Vec3:
        return self.rotation_euler if self.rotation_euler is not None else (0.0, 0.0, 0.0)

    def effective_scale(self) -> Vec3:
        return self.scale if self.scale is not None else (1.0, 1.0, 1.0)

    def parameter_count(self) -> int:
        n = 0
        for value in self.creation_params.values():
            n += 3 if isinstance(value, tuple) else 1
        for vec in (self.location, self.rotation_euler, self.scale):
            if vec is not None:
                n += 3
        if self.material is not None:
            n += 4
        return n

    def approx_equal(self, other: "Unit", tol: float = 1e-9) -> bool:
        if self.kind != other.kind:
            return False
        if set(self.creation_params) != set(other.creation_params):
            return False
        for name, value in self.creation_params.items():
            if not _values_close(value, other.creation_params[name], tol):
                return False
        for a, b in (
            (self.location, other.location),
            (self.rotation_euler, other.rotation_euler),
            (self.scale, other.scale),
            (self.material, other.material),
        ):
            if (a is None) != (b is None):
                return False
            if a is not None and not _values_close(a, b, tol):
                return False
        return True


def _values_close(a, b, tol: float) -> bool:
    if isinstance(a, tuple) != isinstance(b, tuple):
        return False
    if isinstance(a, tuple):
        return len(a) == len(b) and all(math.isclose(x, y, rel_tol=tol, abs_tol=tol) for x, y in zip(a, b))
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)


@dataclass
class SceneIR:
    """Ordered units plus a content hash of the originating script."""

    units: list[Unit] = field(default_factory=list)
    source_digest: str = ""

    def validate(self) -> None:
        for unit in self.units:
            unit.validate()

    def approx_equal(self, other: "SceneIR", tol: float = 1e-9) -> bool:
        """Structural equality up to float tolerance; ignores the digest."""
        return len(self.units) == len(other.units) and all(
            a.approx_equal(b, tol) for a, b in zip(self.units, other.units)
        )


def script_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def count_parameters(scene: SceneIR) -> int:
    """Total numeric scalars explicitly set across all units.

    Creation kwargs count 1 per scalar and 3 per vector; explicitly-set
    location/rotation/scale count 3 each; a material counts its 4 RGBA
    channels.  Defaults that were never set count 0.
    """
    return sum(unit.parameter_count() for unit in scene.units)


@dataclass
class ParsedScene:
    scene: SceneIR
    warnings: list[str] = field(default_factory=list)


@dataclass
class ParseUnsupported:
    reason: str
    line: int


@dataclass
class ParseMalformed:
    reason: str
    line: int


ParseOutcome = ParsedScene | ParseUnsupported | ParseMalformed


def _vec_to_json(value):
    return list(value) if isinstance(value, tuple) else value


def scene_to_json(scene: SceneIR) -> dict:
    units = []
    for unit in scene.units:
        record: dict = {
            "kind": unit.kind,
            "params": {k: _vec_to_json(v) for k, v in unit.creation_params.items()},
        }
        if unit.location is not None:
            record["location"] = list(unit.location)
        if unit.rotation_euler is not None:
            record["rotation_euler"] = list(unit.rotation_euler)
        if unit.scale is not None:
            record["scale"] = list(unit.scale)
        if unit.material is not None:
            record["material"] = list(unit.material)
        units.append(record)
    return {"units": units, "source_digest": scene.source_digest}


def _vec_from_json(value):
    if isinstance(value, list):
        return tuple(float(c) for c in value)
    return float(value)


def scene_from_json(data: dict) -> SceneIR:
    units = []
    for record in data.get("units", []):
        unit = Unit(
            kind=record["kind"],
            creation_params={k: _vec_from_json(v) for k, v in record.get("params", {}).items()},
            location=_opt_vec(record.get("location")),
            rotation_euler=_opt_vec(record.get("rotation_euler")),
            scale=_opt_vec(record.get("scale")),
            material=_opt_vec(record.get("material")),
        )
        unit.validate()
        units.append(unit)
    return SceneIR(units=units, source_digest=data.get("source_digest", ""))


def _opt_vec(value):
    if value is None:
        return None
    return tuple(float(c) for c in value)
