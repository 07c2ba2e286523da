"""Layered run configuration: defaults < config file < env < flags.

The file is JSON with a fixed schema; unknown keys anywhere are rejected
so typos fail loudly before a stage runs.  Factories here turn backend,
renderer, and trainer specs into live objects.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from cadforge import backends as be
from cadforge import render as render_mod
from cadforge import selfimprove as si

CONFIG_ENV_VAR = "CADFORGE_CONFIG"

DEFAULTS: dict = {
    "rng_seed": 0,
    "backends": {
        "model": {"kind": "mock", "seed": 0},
        "judge": {"kind": "mock", "seed": 1},
        "coarse": {"kind": "mock", "seed": 2},
        "fine": {"kind": "mock", "seed": 3},
    },
    "render": {
        "kind": "blender",
        "blender_executable": None,
        "timeout_ms": 120_000,
        "resolution": [512, 512],
    },
    "datagen": {
        "target": 50,
        "avoid_threshold": 5,
        "workers": 4,
        "seeds_file": None,
    },
    "selfimprove": {
        "run_dir": "runs/selfimprove",
        "instructions_file": None,
        "validation_file": None,
        "collect_threshold": 20,
        "max_iterations": 8,
        "trainer": {"kind": "scripted", "losses": [0.9, 0.8, 0.7], "command": None},
    },
    "bench": {"workers": 4},
    "review": {"port": 8321, "db": "review.sqlite3", "pairs_file": None, "static_dir": None},
}

_BACKEND_KEYS = {
    "kind", "seed", "fixtures", "endpoint_url", "model_id", "auth_token_env",
    "temperature", "max_retries", "request_timeout_ms", "max_in_flight",
}


class ConfigError(ValueError):
    pass


def _check_keys(section: dict, allowed, path: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)} under {path!r}")


def _merge(base: dict, override: dict, path: str = "config") -> dict:
    _check_keys(override, base, path)
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(base[key], dict) and isinstance(value, dict):
            if key in ("backends",):
                _check_keys(value, base[key], f"{path}.{key}")
                for name, spec in value.items():
                    _check_keys(spec, _BACKEND_KEYS, f"{path}.{key}.{name}")
                    merged[key][name] = spec
            elif key == "trainer":
                _check_keys(value, base[key], f"{path}.{key}")
                merged[key] = copy.deepcopy(base[key]) | value
            else:
                merged[key] = _merge(base[key], value, f"{path}.{key}")
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path | None = None, env: dict | None = None) -> dict:
    """Resolve the full config; ``path`` falls back to $CADFORGE_CONFIG."""
    env = os.environ if env is None else env
    if path is None:
        path = env.get(CONFIG_ENV_VAR)
    config = copy.deepcopy(DEFAULTS)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        config = _merge(config, data)
    return config


def build_backend(spec: dict) -> be.Backend:
    kind = spec.get("kind", "http")
    if kind == "mock":
        return be.MockModelBackend(seed=int(spec.get("seed", 0)))
    if kind == "replay":
        if not spec.get("fixtures"):
            raise ConfigError("replay backend needs a 'fixtures' path")
        return be.ReplayBackend(spec["fixtures"])
    if kind == "http":
        fields = {k: spec[k] for k in (
            "endpoint_url", "model_id", "auth_token_env", "temperature",
            "max_retries", "request_timeout_ms", "max_in_flight") if k in spec}
        return be.HttpBackend(be.BackendConfig(**fields))
    raise ConfigError(f"unknown backend kind {kind!r}")


def build_renderer(spec: dict):
    kind = spec.get("kind", "blender")
    cfg = render_mod.RenderConfig(
        blender_executable=spec.get("blender_executable"),
        timeout_ms=int(spec.get("timeout_ms", 120_000)),
        resolution=tuple(spec.get("resolution", (512, 512))),
    )
    cfg.validate()
    if kind == "mock":
        return render_mod.MockRenderer(cfg)
    if kind == "blender":
        return render_mod.BlenderRenderer(cfg)
    raise ConfigError(f"unknown renderer kind {kind!r}")


def build_trainer(spec: dict) -> si.TrainerInterface:
    kind = spec.get("kind", "scripted")
    if kind == "scripted":
        losses = spec.get("losses")
        if not losses:
            raise ConfigError("scripted trainer needs a non-empty 'losses' list")
        return si.ScriptedTrainer([float(x) for x in losses])
    if kind == "external":
        command = spec.get("command")
        if not command:
            raise ConfigError("external trainer needs a 'command' list")
        # Generation for externally-trained models goes through a mock keyed
        # by model id; a served-model HTTP backend would slot in here.
        return si.ExternalTrainer(
            [str(c) for c in command],
            backend_factory=lambda model_id: be.MockModelBackend(seed=si._stable_seed(model_id)),
        )
    raise ConfigError(f"unknown trainer kind {kind!r}")
