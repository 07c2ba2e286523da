import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadforge import complexity
from cadforge.complexity import (
    VoxelGrid,
    ZeroUnitsError,
    analyze,
    entropy,
    parameter_density,
    unit_number,
    voxelize,
)
from cadforge.scene import ParsedScene, SceneIR, Unit, parse_script


def cube(size=1.0, at=(0.0, 0.0, 0.0)):
    return Unit(kind="Cube", creation_params={"size": size}, location=at)


def grid_from_masses(masses):
    r = 2
    mass = np.zeros((r, r, r))
    flat = mass.reshape(-1)
    flat[: len(masses)] = masses
    return VoxelGrid(resolution=r, mass=mass, bounds_min=np.zeros(3), bounds_max=np.ones(3))


def test_unit_number():
    assert unit_number(SceneIR()) == 0
    assert unit_number(SceneIR(units=[cube()])) == 1
    scene = SceneIR(units=[cube(at=(x, y, z)) for x in range(3) for y in range(3) for z in range(3)])
    assert unit_number(scene) == 27


def test_parameter_density():
    one = Unit(
        kind="Cube",
        location=(0.0, 0.0, 0.0),
        rotation_euler=(0.0, 0.0, 0.0),
        scale=(1.0, 1.0, 1.0),
    )
    assert parameter_density(SceneIR(units=[one])) == 9.0
    # 2 units carrying 27 scalars in total (14 + 13)
    a = Unit(kind="Cube", creation_params={"size": 1.0}, location=(0, 0, 0), rotation_euler=(0, 0, 0), scale=(1, 1, 1), material=(1, 1, 1, 1))
    b = Unit(kind="UvSphere", location=(0, 0, 0), rotation_euler=(0, 0, 0), scale=(1, 1, 1), material=(1, 1, 1, 1))
    scene = SceneIR(units=[a, b])
    assert parameter_density(scene) == pytest.approx(13.5)
    with pytest.raises(ZeroUnitsError):
        parameter_density(SceneIR())


def test_entropy_degenerate_and_uniform():
    assert entropy(grid_from_masses([1.0])) == 0.0
    assert entropy(grid_from_masses([1 / 8] * 8)) == pytest.approx(math.log(8), abs=1e-12)
    assert entropy(grid_from_masses([0.5, 0.25, 0.25])) == pytest.approx(1.5 * math.log(2), abs=1e-12)


def test_voxelize_concentrates_tiny_cube():
    # Bounds are set by the large anchor cube; the tiny cube is far smaller
    # than a voxel, so its whole 0.5 share lands in a single cell.
    scene = SceneIR(units=[cube(size=4.0, at=(0.0, 0.0, 0.0)), cube(size=1e-3, at=(10.0, 10.0, 10.0))])
    grid = voxelize(scene, resolution=4)
    assert (grid.mass >= 0.5 - 1e-12).sum() == 1
    assert grid.mass.sum() == pytest.approx(1.0)


def test_voxelize_two_disjoint_cubes_split_mass():
    scene = SceneIR(units=[cube(size=0.1, at=(-2.0, -2.0, -2.0)), cube(size=0.1, at=(2.0, 2.0, 2.0))])
    grid = voxelize(scene, resolution=2)
    occupied = grid.mass[grid.mass > 0]
    assert sorted(occupied.tolist()) == pytest.approx([0.5, 0.5])


def test_voxelize_cube_spanning_eight_voxels():
    # One cube centered at the origin on a 2x2x2 grid: the padded bounds are
    # symmetric, so each octant of the cube falls in its own voxel.
    grid = voxelize(SceneIR(units=[cube(size=2.0)]), resolution=2)
    assert grid.mass.shape == (2, 2, 2)
    assert np.count_nonzero(grid.mass) == 8
    np.testing.assert_allclose(grid.mass, 1 / 8, atol=0.02)


def test_voxelize_determinism():
    scene = SceneIR(units=[cube(), Unit(kind="Torus", location=(3.0, 0.0, 0.0))])
    a = voxelize(scene, seed=11)
    b = voxelize(scene, seed=11)
    np.testing.assert_array_equal(a.mass, b.mass)


def test_entropy_translation_invariant():
    units = [cube(at=(0.0, 0.0, 0.0)), Unit(kind="Cylinder", location=(2.0, 1.0, 0.0))]
    moved = [
        Unit(kind=u.kind, creation_params=dict(u.creation_params), location=tuple(c + 7.0 for c in u.effective_location()))
        for u in units
    ]
    h0 = entropy(voxelize(SceneIR(units=units)))
    h1 = entropy(voxelize(SceneIR(units=moved)))
    assert h1 == pytest.approx(h0, abs=1e-9)


def test_entropy_bounds():
    scene = SceneIR(units=[cube(size=3.0), Unit(kind="UvSphere", location=(4.0, 4.0, 0.0))])
    grid = voxelize(scene, resolution=8)
    h = entropy(grid)
    occupied = int(np.count_nonzero(grid.mass))
    assert 0.0 <= h <= math.log(occupied) + 1e-12
    assert h <= 3 * math.log(8) + 1e-12


def test_degenerate_bounds_padded():
    # A lone plane has zero z extent; the z axis is padded instead of failing.
    scene = SceneIR(units=[Unit(kind="Plane", creation_params={"size": 2.0})])
    grid = voxelize(scene, resolution=4)
    assert (grid.bounds_max > grid.bounds_min).all()
    assert grid.mass.sum() == pytest.approx(1.0)


def test_resolution_validation():
    with pytest.raises(ValueError):
        voxelize(SceneIR(units=[cube()]), resolution=1)
    with pytest.raises(ValueError):
        voxelize(SceneIR(units=[cube()]), resolution=129)


def test_analyze_torus_cone_scene():
    script = (
        "import bpy\n"
        "bpy.ops.mesh.primitive_torus_add(major_radius=2, minor_radius=0.3)\n"
        "bpy.ops.mesh.primitive_cone_add(radius1=1, radius2=0.2, depth=2, location=(4, 0, 0))\n"
    )
    outcome = parse_script(script)
    assert isinstance(outcome, ParsedScene)
    report = analyze(outcome.scene)
    assert report.unit_number == 2
    assert report.entropy > 0


def test_density_times_units_equals_param_count():
    a = Unit(kind="Cube", creation_params={"size": 1.0}, location=(0, 0, 0))
    b = Unit(kind="Cone", creation_params={"radius1": 1.0, "radius2": 0.5})
    scene = SceneIR(units=[a, b, cube()])
    total = sum(u.parameter_count() for u in scene.units)
    assert parameter_density(scene) * unit_number(scene) == pytest.approx(total, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=1, max_size=8))
def test_entropy_nonnegative_and_bounded(weights):
    masses = np.asarray(weights) / sum(weights)
    grid = grid_from_masses(masses.tolist())
    h = entropy(grid)
    assert -1e-12 <= h <= math.log(len(masses)) + 1e-9


def test_report_json_shape():
    report = complexity.ComplexityReport(unit_number=3, parameter_density=7.67, entropy=1.34)
    assert report.to_json() == {"unit_number": 3, "parameter_density": 7.67, "entropy": 1.34}
