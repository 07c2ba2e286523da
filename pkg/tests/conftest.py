import sys
from pathlib import Path

import pytest

FAKE_BLENDER = Path(__file__).parent / "fake_blender.py"


@pytest.fixture
def fake_blender_exe(tmp_path, monkeypatch):
    """A CLI-compatible renderer executable backed by the stub bpy module."""
    wrapper = tmp_path / "fake-blender"
    wrapper.write_text(f'#!/bin/sh\nexec "{sys.executable}" "{FAKE_BLENDER}" "$@"\n')
    wrapper.chmod(0o755)
    monkeypatch.delenv("CADFORGE_BLENDER", raising=False)
    return str(wrapper)
