"""Scene complexity metrics: unit count, parameter density, voxel entropy.

Entropy is the Shannon entropy (natural log) of a normalized occupancy
distribution over an R^3 voxel grid spanning the scene's padded bounding
box.  Each unit contributes equal total mass regardless of its volume,
distributed over the voxels its analytic volume intersects via seeded
Monte-Carlo sampling, so the measure reflects spatial arrangement rather
than absolute size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cadforge.scene.ir import SceneIR, Unit, count_parameters

DEFAULT_RESOLUTION = 32
DEFAULT_SAMPLES_PER_UNIT = 4096
DEFAULT_SEED = 0

_MIN_EXTENT = 1e-6
_PAD_FRACTION = 0.05


class ZeroUnitsError(ValueError):
    """Raised for metrics that are undefined on an empty scene."""


@dataclass
class VoxelGrid:
    resolution: int
    mass: np.ndarray  # shape (R, R, R), nonnegative, sums to 1
    bounds_min: np.ndarray  # (3,)
    bounds_max: np.ndarray  # (3,)


@dataclass
class ComplexityReport:
    unit_number: int
    parameter_density: float
    entropy: float

    def to_json(self) -> dict:
        return {
            "unit_number": self.unit_number,
            "parameter_density": self.parameter_density,
            "entropy": self.entropy,
        }


def unit_number(scene: SceneIR) -> int:
    return len(scene.units)


def parameter_density(scene: SceneIR) -> float:
    if not scene.units:
        raise ZeroUnitsError("parameter density is undefined for an empty scene")
    return count_parameters(scene) / len(scene.units)


def _param(unit: Unit, name: str, default: float) -> float:
    value = unit.creation_params.get(name, default)
    return float(value) if not isinstance(value, tuple) else default


def _local_half_extents(unit: Unit) -> tuple[float, float, float]:
    """Axis-aligned half extents of the primitive in its local frame."""
    if unit.kind == "Cube":
        h = _param(unit, "size", 2.0) / 2.0
        return (h, h, h)
    if unit.kind == "UvSphere":
        r = _param(unit, "radius", 1.0)
        return (r, r, r)
    if unit.kind == "Cylinder":
        r = _param(unit, "radius", 1.0)
        return (r, r, _param(unit, "depth", 2.0) / 2.0)
    if unit.kind == "Cone":
        r = max(_param(unit, "radius1", 1.0), _param(unit, "radius2", 0.0))
        return (r, r, _param(unit, "depth", 2.0) / 2.0)
    if unit.kind == "Torus":
        major = _param(unit, "major_radius", 1.0)
        minor = _param(unit, "minor_radius", 0.25)
        return (major + minor, major + minor, minor)
    if unit.kind == "Plane":
        h = _param(unit, "size", 2.0) / 2.0
        return (h, h, 0.0)
    raise ValueError(f"unknown unit kind {unit.kind!r}")


def _rotation_matrix(euler: tuple[float, float, float]) -> np.ndarray:
    """XYZ euler rotation, matching the scripting API's convention."""
    rx, ry, rz = euler
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def _unit_aabb(unit: Unit) -> tuple[np.ndarray, np.ndarray]:
    hx, hy, hz = _local_half_extents(unit)
    corners = np.array(
        [[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    )
    corners *= np.asarray(unit.effective_scale())
    corners = corners @ _rotation_matrix(unit.effective_rotation()).T
    loc = np.asarray(unit.effective_location())
    return corners.min(axis=0) + loc, corners.max(axis=0) + loc


def scene_bounds(scene: SceneIR) -> tuple[np.ndarray, np.ndarray]:
    mins, maxs = zip(*(_unit_aabb(u) for u in scene.units))
    return np.min(mins, axis=0), np.max(maxs, axis=0)


def _sample_local(unit: Unit, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniform over the primitive's analytic volume, local frame."""
    if unit.kind == "Cube":
        h = _param(unit, "size", 2.0) / 2.0
        return rng.uniform(-h, h, size=(n, 3))
    if unit.kind == "Plane":
        h = _param(unit, "size", 2.0) / 2.0
        pts = rng.uniform(-h, h, size=(n, 3))
        pts[:, 2] = 0.0
        return pts
    if unit.kind == "UvSphere":
        r = _param(unit, "radius", 1.0)
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = r * np.cbrt(rng.uniform(size=(n, 1)))
        return dirs * radii
    if unit.kind == "Cylinder":
        r = _param(unit, "radius", 1.0)
        half_depth = _param(unit, "depth", 2.0) / 2.0
        disk = _sample_disk(n, rng) * r
        z = rng.uniform(-half_depth, half_depth, size=(n, 1))
        return np.hstack([disk, z])
    if unit.kind == "Cone":
        return _sample_cone(unit, n, rng)
    if unit.kind == "Torus":
        return _sample_torus(unit, n, rng)
    raise ValueError(f"unknown unit kind {unit.kind!r}")


def _sample_disk(n: int, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0, 2 * math.pi, size=n)
    radius = np.sqrt(rng.uniform(size=n))
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])


def _sample_cone(unit: Unit, n: int, rng: np.random.Generator) -> np.ndarray:
    r1 = _param(unit, "radius1", 1.0)
    r2 = _param(unit, "radius2", 0.0)
    half_depth = _param(unit, "depth", 2.0) / 2.0
    rmax = max(r1, r2, 1e-12)
    out = np.empty((0, 3))
    # Rejection on z: acceptance weight is the relative cross-section area.
    while len(out) < n:
        want = n - len(out)
        z = rng.uniform(-half_depth, half_depth, size=want)
        t = (z + half_depth) / max(2 * half_depth, 1e-12)
        r_at = r1 + (r2 - r1) * t
        keep = rng.uniform(size=want) <= (r_at / rmax) ** 2
        z, r_at = z[keep], r_at[keep]
        disk = _sample_disk(len(z), rng) * r_at[:, None]
        out = np.vstack([out, np.column_stack([disk, z])])
    return out[:n]


def _sample_torus(unit: Unit, n: int, rng: np.random.Generator) -> np.ndarray:
    major = _param(unit, "major_radius", 1.0)
    minor = _param(unit, "minor_radius", 0.25)
    out = np.empty((0, 3))
    # Rejection weight (major + rho*cos(phi)) keeps density uniform in the solid.
    while len(out) < n:
        want = n - len(out)
        u = rng.uniform(0, 2 * math.pi, size=want)
        disk = _sample_disk(want, rng) * minor
        rho_cos = disk[:, 0]
        keep = rng.uniform(size=want) <= (major + rho_cos) / (major + minor)
        u, disk = u[keep], disk[keep]
        ring = major + disk[:, 0]
        pts = np.column_stack([ring * np.cos(u), ring * np.sin(u), disk[:, 1]])
        out = np.vstack([out, pts])
    return out[:n]


def voxelize(
    scene: SceneIR,
    resolution: int = DEFAULT_RESOLUTION,
    samples_per_unit: int = DEFAULT_SAMPLES_PER_UNIT,
    seed: int = DEFAULT_SEED,
) -> VoxelGrid:
    """Distribute per-unit occupancy mass over an R^3 grid.

    Deterministic for a given seed; per-unit streams are independent so
    accumulation order cannot change the result.
    """
    if not 2 <= resolution <= 128:
        raise ValueError(f"resolution must be in [2, 128], got {resolution}")
    if not scene.units:
        raise ZeroUnitsError("cannot voxelize an empty scene")

    bounds_min, bounds_max = scene_bounds(scene)
    extent = bounds_max - bounds_min
    degenerate = extent < _MIN_EXTENT
    if degenerate.any():
        center = (bounds_min + bounds_max) / 2
        bounds_min = np.where(degenerate, center - _MIN_EXTENT / 2, bounds_min)
        bounds_max = np.where(degenerate, center + _MIN_EXTENT / 2, bounds_max)
        extent = bounds_max - bounds_min
    bounds_min = bounds_min - _PAD_FRACTION * extent
    bounds_max = bounds_max + _PAD_FRACTION * extent

    voxel_size = (bounds_max - bounds_min) / resolution
    mass = np.zeros((resolution, resolution, resolution))
    unit_mass = 1.0 / len(scene.units)
    for index, unit in enumerate(scene.units):
        rng = np.random.default_rng([seed, index])
        pts = _sample_local(unit, samples_per_unit, rng)
        pts = pts * np.asarray(unit.effective_scale())
        pts = pts @ _rotation_matrix(unit.effective_rotation()).T
        # Translation-invariant binning: offset relative to the grid origin.
        rel = pts + (np.asarray(unit.effective_location()) - bounds_min)
        idx = np.floor(rel / voxel_size).astype(int)
        np.clip(idx, 0, resolution - 1, out=idx)
        np.add.at(mass, (idx[:, 0], idx[:, 1], idx[:, 2]), unit_mass / samples_per_unit)
    mass /= mass.sum()
    return VoxelGrid(resolution=resolution, mass=mass, bounds_min=bounds_min, bounds_max=bounds_max)


def entropy(grid: VoxelGrid) -> float:
    """H = -sum p_i ln p_i over occupied voxels (0 ln 0 taken as 0)."""
    p = grid.mass[grid.mass > 0]
    return float(-(p * np.log(p)).sum()) if p.size else 0.0


def analyze(
    scene: SceneIR,
    resolution: int = DEFAULT_RESOLUTION,
    samples_per_unit: int = DEFAULT_SAMPLES_PER_UNIT,
    seed: int = DEFAULT_SEED,
) -> ComplexityReport:
    if not scene.units:
        raise ZeroUnitsError("complexity metrics need at least one unit")
    grid = voxelize(scene, resolution=resolution, samples_per_unit=samples_per_unit, seed=seed)
    return ComplexityReport(
        unit_number=unit_number(scene),
        parameter_density=parameter_density(scene),
        entropy=entropy(grid),
    )
