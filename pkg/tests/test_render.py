from pathlib import Path

import pytest

from cadforge.render import (
    EnvError,
    MockRenderer,
    Rendered,
    RenderConfig,
    RenderSyntaxError,
    RenderTimeout,
    render,
    render_batch,
    solid_png,
)

CUBE_SCRIPT = "import bpy\nbpy.ops.mesh.primitive_cube_add(size=2, location=(0, 0, 1))\n"


def cfg_for(exe, timeout_ms=20_000):
    return RenderConfig(blender_executable=exe, timeout_ms=timeout_ms, resolution=(32, 32))


def test_valid_script_renders_four_pngs(fake_blender_exe, tmp_path):
    outcome = render(CUBE_SCRIPT, tmp_path / "out", cfg_for(fake_blender_exe))
    assert isinstance(outcome, Rendered), outcome
    assert len(outcome.image_paths) == 4
    for path in outcome.image_paths:
        data = Path(path).read_bytes()
        assert data.startswith(b"\x89PNG")


def test_raising_script_classifies_syntax_error(fake_blender_exe, tmp_path):
    outcome = render("raise Exception('boom')\n", tmp_path / "out", cfg_for(fake_blender_exe))
    assert isinstance(outcome, RenderSyntaxError)
    assert outcome.exit_code != 0
    assert "boom" in outcome.stderr_excerpt
    # cleanup rule: no stray view files survive a failure
    assert not list((tmp_path / "out").glob("view_*.png"))


def test_empty_scene_classifies_syntax_error(fake_blender_exe, tmp_path):
    outcome = render("import bpy\n", tmp_path / "out", cfg_for(fake_blender_exe))
    assert isinstance(outcome, RenderSyntaxError)
    assert "no mesh objects" in outcome.stderr_excerpt


def test_unbounded_loop_classifies_timeout(fake_blender_exe, tmp_path):
    outcome = render(
        "while True:\n    pass\n", tmp_path / "out", cfg_for(fake_blender_exe, timeout_ms=1_000)
    )
    assert isinstance(outcome, RenderTimeout)
    assert outcome.elapsed_ms >= 1_000


def test_missing_executable_is_env_error(tmp_path, monkeypatch):
    monkeypatch.delenv("CADFORGE_BLENDER", raising=False)
    with pytest.raises(EnvError):
        render(CUBE_SCRIPT, tmp_path / "out", RenderConfig(blender_executable="/no/such/blender"))
    with pytest.raises(EnvError):
        render(CUBE_SCRIPT, tmp_path / "out", RenderConfig())


def test_env_var_overrides_config(fake_blender_exe, tmp_path, monkeypatch):
    monkeypatch.setenv("CADFORGE_BLENDER", fake_blender_exe)
    outcome = render(CUBE_SCRIPT, tmp_path / "out", RenderConfig(blender_executable="/no/such/blender"))
    assert isinstance(outcome, Rendered)


def test_render_batch_mixed_jobs(fake_blender_exe, tmp_path):
    jobs = [
        ("good-1", CUBE_SCRIPT),
        ("bad", "raise Exception('x')\n"),
        ("good-2", CUBE_SCRIPT.replace("size=2", "size=3")),
    ]
    outcomes = render_batch(jobs, tmp_path, cfg_for(fake_blender_exe), workers=2)
    assert set(outcomes) == {"good-1", "bad", "good-2"}
    assert isinstance(outcomes["good-1"], Rendered)
    assert isinstance(outcomes["bad"], RenderSyntaxError)
    assert isinstance(outcomes["good-2"], Rendered)


def test_render_batch_empty():
    assert render_batch([], "/tmp/unused", RenderConfig(blender_executable="x")) == {}


def test_batch_matches_sequential_classification(fake_blender_exe, tmp_path):
    jobs = [("a", CUBE_SCRIPT), ("b", "raise Exception()\n")]
    seq = render_batch(jobs, tmp_path / "w1", cfg_for(fake_blender_exe), workers=1)
    par = render_batch(jobs, tmp_path / "w2", cfg_for(fake_blender_exe), workers=2)
    assert {k: type(v) for k, v in seq.items()} == {k: type(v) for k, v in par.items()}


def test_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(timeout_ms=500).validate()
    with pytest.raises(ValueError):
        RenderConfig(camera_azimuths_deg=(0.0, 90.0)).validate()


def test_solid_png_is_deterministic():
    assert solid_png((10, 20, 30)) == solid_png((10, 20, 30))
    assert solid_png((10, 20, 30)) != solid_png((10, 20, 31))


class TestMockRenderer:
    def test_success_writes_four_views(self, tmp_path):
        mock = MockRenderer()
        outcome = mock.render(CUBE_SCRIPT, tmp_path)
        assert isinstance(outcome, Rendered)
        assert [Path(p).name for p in outcome.image_paths] == [
            "view_1.png", "view_2.png", "view_3.png", "view_4.png",
        ]

    def test_uncompilable_script_fails(self, tmp_path):
        outcome = MockRenderer().render("def broken(:\n", tmp_path)
        assert isinstance(outcome, RenderSyntaxError)

    def test_raise_marker_fails(self, tmp_path):
        outcome = MockRenderer().render("raise Exception('x')\n", tmp_path)
        assert isinstance(outcome, RenderSyntaxError)

    def test_timeout_marker(self, tmp_path):
        outcome = MockRenderer().render("# RENDER:TIMEOUT\n", tmp_path)
        assert isinstance(outcome, RenderTimeout)

    def test_deterministic_bytes(self, tmp_path):
        a = MockRenderer().render(CUBE_SCRIPT, tmp_path / "a")
        b = MockRenderer().render(CUBE_SCRIPT, tmp_path / "b")
        bytes_a = [Path(p).read_bytes() for p in a.image_paths]
        bytes_b = [Path(p).read_bytes() for p in b.image_paths]
        assert bytes_a == bytes_b
