"""Headless rendering of full (unrestricted) scripts via external Blender.

The harness appends a camera-rig postamble to the user script and runs
``<blender> --background --python <merged>``.  The postamble frames the
scene's bounding sphere after user code has run (scripts often start by
deleting everything), places four cameras around it, and writes
``view_1..4.png``.  Classification: four PNGs present means Rendered;
a nonzero exit, an uncaught script exception, or an empty scene with no
output means the script could not produce an image.  Wall-clock overrun
kills the process tree (one automatic retry first).

MockRenderer fabricates deterministic outcomes for pipeline runs that
must not depend on an installed renderer.
"""

from __future__ import annotations

import hashlib
import os
import shutil
import signal
import struct
import subprocess
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

BLENDER_ENV_VAR = "CADFORGE_BLENDER"


class EnvError(RuntimeError):
    """Renderer misconfiguration (missing executable), not a model failure."""


@dataclass
class Rendered:
    image_paths: list[str]


@dataclass
class RenderSyntaxError:
    stderr_excerpt: str
    exit_code: int


@dataclass
class RenderTimeout:
    elapsed_ms: int


RenderOutcome = Rendered | RenderSyntaxError | RenderTimeout


@dataclass
class RenderConfig:
    blender_executable: str | None = None
    timeout_ms: int = 120_000
    resolution: tuple[int, int] = (512, 512)
    camera_azimuths_deg: tuple[float, ...] = (45.0, 135.0, 225.0, 315.0)
    camera_elevation_deg: float = 30.0
    framing_margin: float = 1.4
    background: str = "white"

    def validate(self) -> None:
        if self.timeout_ms < 1_000:
            raise ValueError("timeout_ms must be >= 1000")
        if len(self.camera_azimuths_deg) != 4:
            raise ValueError("exactly 4 camera azimuths required")


_VIEW_NAMES = tuple(f"view_{i}.png" for i in range(1, 5))

# Substitution tokens keep the postamble free of format-brace noise.
_POSTAMBLE = """

# ---- render rig (appended by the harness) ----
import math as _cadforge_math
import sys as _cadforge_sys
import bpy as _cadforge_bpy

_cf_objs = [o for o in _cadforge_bpy.data.objects if getattr(o, "type", "") == "MESH"]
if not _cf_objs:
    print("render rig: no mesh objects after script execution", file=_cadforge_sys.stderr)
    _cadforge_sys.exit(4)

_cf_center = [0.0, 0.0, 0.0]
for _cf_o in _cf_objs:
    for _cf_k in range(3):
        _cf_center[_cf_k] += float(_cf_o.location[_cf_k]) / len(_cf_objs)
_cf_radius = 1e-3
for _cf_o in _cf_objs:
    _cf_d = _cadforge_math.dist(_cf_center, [float(c) for c in _cf_o.location])
    _cf_d += max([float(c) for c in _cf_o.dimensions] + [1e-6]) / 2.0
    _cf_radius = max(_cf_radius, _cf_d)
_cf_dist = _cf_radius * @MARGIN@ / _cadforge_math.tan(0.3455)  # half of the ~39.6 deg default FOV

_cf_scene = _cadforge_bpy.context.scene
_cf_scene.render.resolution_x = @RES_X@
_cf_scene.render.resolution_y = @RES_Y@
_cf_scene.render.image_settings.file_format = "PNG"
try:
    _cf_world = _cadforge_bpy.data.worlds[0]
except IndexError:
    _cf_world = _cadforge_bpy.data.worlds.new("World")
_cf_scene.world = _cf_world
try:
    _cf_world.use_nodes = False
    _cf_world.color = (1.0, 1.0, 1.0)
except AttributeError:
    pass
_cadforge_bpy.ops.object.light_add(type="SUN", location=(_cf_center[0], _cf_center[1], _cf_center[2] + _cf_dist))

_cf_elev = _cadforge_math.radians(@ELEVATION@)
for _cf_i, _cf_az_deg in enumerate(@AZIMUTHS@):
    _cf_az = _cadforge_math.radians(_cf_az_deg)
    _cf_loc = (
        _cf_center[0] + _cf_dist * _cadforge_math.cos(_cf_elev) * _cadforge_math.cos(_cf_az),
        _cf_center[1] + _cf_dist * _cadforge_math.cos(_cf_elev) * _cadforge_math.sin(_cf_az),
        _cf_center[2] + _cf_dist * _cadforge_math.sin(_cf_elev),
    )
    _cf_rot = (_cadforge_math.pi / 2 - _cf_elev, 0.0, _cf_az + _cadforge_math.pi / 2)
    _cadforge_bpy.ops.object.camera_add(location=_cf_loc, rotation=_cf_rot)
    _cf_scene.camera = _cadforge_bpy.context.object
    _cf_scene.render.filepath = @OUT_DIR@ + "/view_%d.png" % (_cf_i + 1)
    _cadforge_bpy.ops.render.render(write_still=True)
"""


def build_postamble(out_dir: str | Path, cfg: RenderConfig) -> str:
    return (
        _POSTAMBLE.replace("@MARGIN@", repr(cfg.framing_margin))
        .replace("@RES_X@", str(cfg.resolution[0]))
        .replace("@RES_Y@", str(cfg.resolution[1]))
        .replace("@ELEVATION@", repr(cfg.camera_elevation_deg))
        .replace("@AZIMUTHS@", repr(tuple(cfg.camera_azimuths_deg)))
        .replace("@OUT_DIR@", repr(str(out_dir)))
    )


def _resolve_executable(cfg: RenderConfig) -> str:
    exe = os.environ.get(BLENDER_ENV_VAR) or cfg.blender_executable
    if not exe:
        raise EnvError(f"no renderer executable configured (set {BLENDER_ENV_VAR} or RenderConfig)")
    resolved = shutil.which(exe) or (exe if os.path.isfile(exe) else None)
    if resolved is None:
        raise EnvError(f"renderer executable not found: {exe}")
    return resolved


def _cleanup_views(out_dir: Path) -> None:
    for name in _VIEW_NAMES:
        try:
            (out_dir / name).unlink()
        except FileNotFoundError:
            pass


def _run_once(exe: str, merged_path: Path, timeout_s: float) -> tuple[int, str] | None:
    """Returns (exit_code, stderr) or None on timeout (process tree killed)."""
    proc = subprocess.Popen(
        [exe, "--background", "--python", str(merged_path)],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        start_new_session=True,
        text=True,
    )
    try:
        _, stderr = proc.communicate(timeout=timeout_s)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.wait()
        return None
    return proc.returncode, stderr or ""


def render(script: str, out_dir: str | Path, cfg: RenderConfig | None = None) -> RenderOutcome:
    """Execute a script under the external renderer and capture 4 views."""
    cfg = cfg or RenderConfig()
    cfg.validate()
    exe = _resolve_executable(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _cleanup_views(out_dir)

    merged_path = out_dir / "merged_script.py"
    merged_path.write_text(script + build_postamble(out_dir, cfg), encoding="utf-8")

    started = time.monotonic()
    result = _run_once(exe, merged_path, cfg.timeout_ms / 1000.0)
    if result is None:
        # One retry guards against a flaky environment before classifying.
        result = _run_once(exe, merged_path, cfg.timeout_ms / 1000.0)
        if result is None:
            _cleanup_views(out_dir)
            return RenderTimeout(elapsed_ms=int((time.monotonic() - started) * 1000))

    exit_code, stderr = result
    paths = [out_dir / name for name in _VIEW_NAMES]
    if exit_code == 0 and all(p.is_file() for p in paths):
        return Rendered(image_paths=[str(p) for p in paths])
    _cleanup_views(out_dir)
    excerpt = stderr[-2000:] if stderr else "no render output"
    return RenderSyntaxError(stderr_excerpt=excerpt, exit_code=exit_code)


def render_batch(
    jobs: list[tuple[str, str]],
    out_root: str | Path,
    cfg: RenderConfig | None = None,
    workers: int = 2,
) -> dict[str, RenderOutcome]:
    """Render (id, script) jobs with at most ``workers`` renderer processes."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    out_root = Path(out_root)
    if not jobs:
        return {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            job_id: pool.submit(render, script, out_root / str(job_id), cfg)
            for job_id, script in jobs
        }
        return {job_id: future.result() for job_id, future in futures.items()}


class BlenderRenderer:
    """Renderer interface bound to an external Blender executable."""

    def __init__(self, cfg: RenderConfig | None = None):
        self.cfg = cfg or RenderConfig()

    def render(self, script: str, out_dir: str | Path) -> RenderOutcome:
        return render(script, out_dir, self.cfg)

    def render_batch(self, jobs, out_root, workers: int = 2):
        return render_batch(jobs, out_root, self.cfg, workers)


def solid_png(rgb: tuple[int, int, int], size: tuple[int, int] = (8, 8)) -> bytes:
    """A minimal valid RGB PNG of one solid color (deterministic bytes)."""
    width, height = size
    raw = b"".join(b"\x00" + bytes(rgb) * width for _ in range(height))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + tag
            + data
            + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
        )

    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


class MockRenderer:
    """Deterministic renderer stand-in.

    Scripts that do not even compile (or contain a top-level ``raise``)
    classify as failures, mirroring the real harness's observable rule;
    the ``# RENDER:TIMEOUT`` marker forces the timeout path.  Successful
    renders write four PNGs whose color derives from the script digest.
    """

    def __init__(self, cfg: RenderConfig | None = None):
        self.cfg = cfg or RenderConfig()
        self.calls = 0

    def render(self, script: str, out_dir: str | Path) -> RenderOutcome:
        self.calls += 1
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if "# RENDER:TIMEOUT" in script:
            return RenderTimeout(elapsed_ms=self.cfg.timeout_ms)
        try:
            compile(script, "<script>", "exec")
        except SyntaxError as exc:
            return RenderSyntaxError(stderr_excerpt=f"SyntaxError: {exc.msg}", exit_code=1)
        if any(line.startswith("raise") for line in script.splitlines()):
            return RenderSyntaxError(stderr_excerpt="uncaught exception", exit_code=1)
        digest = hashlib.sha256(script.encode("utf-8")).digest()
        paths = []
        for i, name in enumerate(_VIEW_NAMES):
            rgb = (digest[3 * i], digest[3 * i + 1], digest[3 * i + 2])
            path = out_dir / name
            path.write_bytes(solid_png(rgb))
            paths.append(str(path))
        return Rendered(image_paths=paths)

    def render_batch(self, jobs, out_root, workers: int = 2):
        out_root = Path(out_root)
        return {job_id: self.render(script, out_root / str(job_id)) for job_id, script in jobs}
