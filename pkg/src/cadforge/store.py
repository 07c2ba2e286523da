"""Run persistence: manifests, JSONL record streams, and image storage.

Layout per run::

    runs/<run_id>/
        manifest.json        # immutable, written atomically
        *.jsonl              # append-only record streams
        images/<hash>.png    # content-addressed renders

Records are serialized canonically (sorted keys, no whitespace) so that a
rerun with identical config, seed, and mock backends produces
byte-identical files.  Timestamps live only in the manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

from cadforge import __version__

log = logging.getLogger(__name__)

STAGES = ("datagen", "filter", "selfimprove", "bench", "review")


class IoError(OSError):
    pass


class SchemaError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LockHeld(RuntimeError):
    pass


class ManifestExists(RuntimeError):
    pass


def canonical_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    run_id: str
    created_at: str
    config_digest: str
    rng_seed: int
    tool_version: str
    stage: str

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "created_at": self.created_at,
            "config_digest": self.config_digest,
            "rng_seed": self.rng_seed,
            "tool_version": self.tool_version,
            "stage": self.stage,
        }


def new_manifest(stage: str, config: dict, rng_seed: int) -> RunManifest:
    digest = config_digest(config)
    manifest = RunManifest(
        run_id=f"{stage}-{digest[:8]}-seed{rng_seed}",
        created_at=datetime.now(timezone.utc).isoformat(),
        config_digest=digest,
        rng_seed=rng_seed,
        tool_version=__version__,
        stage=stage,
    )
    manifest.validate()
    return manifest


def append_record(path: str | Path, record: dict) -> None:
    """Append one record as a single JSON line (O_APPEND semantics)."""
    line = canonical_json(record)
    if "\n" in line:
        raise ValueError("record does not serialize to a single line")
    try:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_records(path: str | Path, schema: Callable[[dict], None] | None = None) -> list[dict]:
    """Read a JSONL stream, validating each record.

    A truncated trailing line (crash artifact) is skipped with a warning;
    any other malformed or schema-violating line raises SchemaError with
    its line number.  Unknown fields pass through untouched.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    records: list[dict] = []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for number, line in enumerate(lines, start=1):
        is_last = number == len(lines)
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            if is_last:
                log.warning("%s: skipping truncated trailing line %d", path, number)
                continue
            raise SchemaError(f"invalid JSON: {exc.msg}", number) from exc
        if schema is not None:
            try:
                schema(record)
            except ValueError as exc:
                raise SchemaError(str(exc), number) from exc
        records.append(record)
    return records


def write_manifest(run_dir: str | Path, manifest: RunManifest) -> Path:
    """Write the manifest atomically; manifests are immutable once written."""
    run_dir = Path(run_dir)
    target = run_dir / "manifest.json"
    if target.exists():
        raise ManifestExists(f"{target} already written")
    tmp = target.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, target)
    return target


def read_manifest(run_dir: str | Path) -> RunManifest:
    data = json.loads((Path(run_dir) / "manifest.json").read_text(encoding="utf-8"))
    manifest = RunManifest(**{k: data[k] for k in (
        "run_id", "created_at", "config_digest", "rng_seed", "tool_version", "stage")})
    manifest.validate()
    return manifest


class RunDir:
    """A run directory with a single-writer lock and an image store."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.images_dir = self.path / "images"
        self._lock_fd: int | None = None

    def create(self) -> "RunDir":
        self.path.mkdir(parents=True, exist_ok=True)
        self.images_dir.mkdir(exist_ok=True)
        return self

    # -- locking ------------------------------------------------------

    @property
    def lock_path(self) -> Path:
        return self.path / ".lock"

    def acquire(self) -> "RunDir":
        try:
            self._lock_fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockHeld(f"run directory {self.path} is locked by another writer") from None
        os.write(self._lock_fd, str(os.getpid()).encode())
        return self

    def release(self) -> None:
        if self._lock_fd is not None:
            os.close(self._lock_fd)
            self._lock_fd = None
            try:
                self.lock_path.unlink()
            except FileNotFoundError:
                pass

    def __enter__(self) -> "RunDir":
        self.create()
        return self.acquire()

    def __exit__(self, *exc_info) -> None:
        self.release()

    # -- images ---------------------------------------------------------

    def store_image(self, source: str | Path | bytes) -> str:
        """Store image content by hash; returns the run-relative path."""
        data = source if isinstance(source, bytes) else Path(source).read_bytes()
        digest = hashlib.sha256(data).hexdigest()
        rel = f"images/{digest}.png"
        target = self.path / rel
        if not target.exists():
            target.write_bytes(data)
        return rel

    def store_images(self, sources: Iterable[str | Path | bytes]) -> list[str]:
        return [self.store_image(s) for s in sources]

    def resolve(self, rel: str) -> Path:
        return self.path / rel


def copy_image_tree(src_run: RunDir, rel_paths: list[str], dst_run: RunDir) -> list[str]:
    """Re-home content-addressed images between run directories."""
    out = []
    for rel in rel_paths:
        target = dst_run.path / rel
        if not target.exists():
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src_run.path / rel, target)
        out.append(rel)
    return out
