import json

import pytest

from cadforge import store
from cadforge.store import (
    LockHeld,
    ManifestExists,
    RunDir,
    SchemaError,
    append_record,
    load_records,
    new_manifest,
    read_manifest,
    write_manifest,
)


def test_append_then_load_roundtrip(tmp_path):
    path = tmp_path / "records.jsonl"
    append_record(path, {"b": 2, "a": 1})
    append_record(path, {"x": [1, 2, 3]})
    assert load_records(path) == [{"a": 1, "b": 2}, {"x": [1, 2, 3]}]


def test_canonical_serialization_is_stable(tmp_path):
    p1 = tmp_path / "one.jsonl"
    p2 = tmp_path / "two.jsonl"
    append_record(p1, {"b": 2, "a": 1})
    append_record(p2, {"a": 1, "b": 2})
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_trailing_line_skipped(tmp_path, caplog):
    path = tmp_path / "records.jsonl"
    append_record(path, {"a": 1})
    with open(path, "a", encoding="utf-8") as fh:
        fh.write('{"broken": ')
    with caplog.at_level("WARNING"):
        records = load_records(path)
    assert records == [{"a": 1}]
    assert any("truncated" in message for message in caplog.messages)


def test_mid_file_corruption_raises(tmp_path):
    path = tmp_path / "records.jsonl"
    path.write_text('{"a": 1}\nnot json\n{"b": 2}\n', encoding="utf-8")
    with pytest.raises(SchemaError) as err:
        load_records(path)
    assert err.value.line == 2


def test_schema_validation_reports_line(tmp_path):
    path = tmp_path / "records.jsonl"
    append_record(path, {"stage": "datagen"})
    append_record(path, {"stage": "nonsense"})

    def schema(record):
        if record["stage"] not in store.STAGES:
            raise ValueError(f"bad stage {record['stage']!r}")

    with pytest.raises(SchemaError) as err:
        load_records(path, schema)
    assert err.value.line == 2


def test_empty_file_loads_empty(tmp_path):
    path = tmp_path / "records.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_records(path) == []


def test_single_writer_lock(tmp_path):
    with RunDir(tmp_path / "run") as run:
        other = RunDir(tmp_path / "run")
        with pytest.raises(LockHeld):
            other.acquire()
    # released on exit
    RunDir(tmp_path / "run").acquire().release()


def test_manifest_roundtrip_and_immutability(tmp_path):
    run = RunDir(tmp_path / "run").create()
    manifest = new_manifest("datagen", {"target": 10}, rng_seed=42)
    write_manifest(run.path, manifest)
    loaded = read_manifest(run.path)
    assert loaded == manifest
    with pytest.raises(ManifestExists):
        write_manifest(run.path, manifest)


def test_manifest_digest_depends_on_config():
    a = new_manifest("bench", {"x": 1}, rng_seed=0)
    b = new_manifest("bench", {"x": 2}, rng_seed=0)
    assert a.config_digest != b.config_digest
    assert a.run_id != b.run_id


def test_image_store_dedupes(tmp_path):
    run = RunDir(tmp_path / "run").create()
    rel1 = run.store_image(b"png-bytes-1")
    rel2 = run.store_image(b"png-bytes-1")
    rel3 = run.store_image(b"png-bytes-2")
    assert rel1 == rel2 != rel3
    assert (run.path / rel1).read_bytes() == b"png-bytes-1"
    assert len(list((run.path / "images").iterdir())) == 2


def test_record_must_be_single_line(tmp_path):
    # canonical serialization never embeds raw newlines
    path = tmp_path / "records.jsonl"
    append_record(path, {"text": "line one\nline two"})
    assert load_records(path) == [{"text": "line one\nline two"}]
    assert json.loads(path.read_text().splitlines()[0])["text"] == "line one\nline two"
