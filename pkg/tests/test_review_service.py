import json

import pytest
from fastapi.testclient import TestClient

from cadforge.datagen import CATEGORIES, ITYPES, DatasetPair, InstructionRecord, Verdicts, classify_length
from cadforge.render import solid_png
from cadforge.review import create_app
from cadforge.review.db import ReviewDb


def make_pair_record(i, fine=None, with_images=True, images_root=None):
    text = f"Review object {i}: a small stand with {i + 1} feet."
    instruction = InstructionRecord(
        id=f"pair-{i}", text=text, category=CATEGORIES[i % 16], itype=ITYPES[i % 8],
        length_class=classify_length(text), object_name=f"object {i}",
    )
    images = None
    if with_images:
        images = []
        for k in range(4):
            name = f"img-{i}-{k}.png"
            if images_root is not None:
                (images_root / "images").mkdir(parents=True, exist_ok=True)
                (images_root / "images" / name).write_bytes(solid_png((i, k, 0)))
            images.append(f"images/{name}")
    return DatasetPair(
        instruction=instruction, script="import bpy", images=images,
        verdicts=Verdicts(fine=fine),
    ).to_json()


@pytest.fixture
def client(tmp_path):
    records = [make_pair_record(i, fine=(i % 2 == 0), images_root=tmp_path) for i in range(6)]
    db = ReviewDb(tmp_path / "review.sqlite3")
    assert db.import_pairs(records) == 6
    app = create_app(str(tmp_path / "review.sqlite3"), images_root=str(tmp_path))
    return TestClient(app)


def register(client, name):
    response = client.post("/annotators", json={"name": name})
    assert response.status_code == 200
    return response.json()["annotator_id"]


def next_task(client, annotator):
    response = client.get("/tasks/next", params={"annotator": annotator})
    if response.status_code == 204:
        return None
    assert response.status_code == 200
    return response.json()


def decide(client, annotator, pair_id, verdict, reason=None, expect=200):
    response = client.post(
        f"/tasks/{pair_id}/decision",
        json={"annotator": annotator, "verdict": verdict, "reason": reason},
    )
    assert response.status_code == expect, response.text
    return response.json()


class TestWorkflow:
    def test_fresh_corpus_serves_undecided_task(self, client):
        a = register(client, "alice")
        task = next_task(client, a)
        assert task["n_decisions"] == 0
        assert task["status"] == "open"
        assert len(task["image_urls"]) == 4

    def test_second_annotator_prefers_half_decided(self, client):
        a, b = register(client, "alice"), register(client, "bob")
        first = next_task(client, a)
        decide(client, a, first["pair_id"], "pass")
        seen_by_b = next_task(client, b)
        assert seen_by_b["pair_id"] == first["pair_id"]
        assert seen_by_b["n_decisions"] == 1

    def test_two_agreeing_passes_resolve(self, client):
        a, b = register(client, "alice"), register(client, "bob")
        task = next_task(client, a)
        decide(client, a, task["pair_id"], "pass")
        resolved = decide(client, b, task["pair_id"], "pass")
        assert resolved["status"] == "resolved"
        assert resolved["final_verdict"] is True

    def test_disagreement_needs_arbitration_then_majority(self, client):
        a, b, c = (register(client, n) for n in ("alice", "bob", "carol"))
        task = next_task(client, a)
        pair_id = task["pair_id"]
        decide(client, a, pair_id, "pass")
        disputed = decide(client, b, pair_id, "fail", reason="missing feet")
        assert disputed["status"] == "needs_arbitration"
        # the arbitration task goes to an uninvolved annotator first
        arb = next_task(client, c)
        assert arb["pair_id"] == pair_id
        final = decide(client, c, pair_id, "fail", reason="agree with bob")
        assert final["status"] == "resolved"
        assert final["final_verdict"] is False

    def test_involved_annotators_never_arbitrate(self, client):
        a, b = register(client, "alice"), register(client, "bob")
        task = next_task(client, a)
        pair_id = task["pair_id"]
        decide(client, a, pair_id, "pass")
        decide(client, b, pair_id, "fail", reason="off spec")
        for annotator in (a, b):
            following = next_task(client, annotator)
            assert following is None or following["pair_id"] != pair_id

    def test_duplicate_decision_rejected(self, client):
        a = register(client, "alice")
        task = next_task(client, a)
        decide(client, a, task["pair_id"], "pass")
        decide(client, a, task["pair_id"], "pass", expect=409)

    def test_fail_requires_reason(self, client):
        a = register(client, "alice")
        task = next_task(client, a)
        decide(client, a, task["pair_id"], "fail", expect=422)

    def test_unknown_annotator_and_pair(self, client):
        response = client.get("/tasks/next", params={"annotator": "ghost"})
        assert response.status_code == 404
        a = register(client, "alice")
        decide(client, a, "nope", "pass", expect=404)
        assert client.get("/pairs/nope").status_code == 404

    def test_decision_on_resolved_task_rejected(self, client):
        a, b, c = (register(client, n) for n in ("alice", "bob", "carol"))
        task = next_task(client, a)
        decide(client, a, task["pair_id"], "pass")
        decide(client, b, task["pair_id"], "pass")
        decide(client, c, task["pair_id"], "pass", expect=409)

    def test_images_served(self, client):
        a = register(client, "alice")
        task = next_task(client, a)
        response = client.get(task["image_urls"][0])
        assert response.status_code == 200
        assert response.content.startswith(b"\x89PNG")
        assert client.get("/images/../secrets.png").status_code in (404, 422)


def drain_and_decide(client, annotators, verdict_for):
    """Let two annotators process the whole queue with given verdicts."""
    a, b = annotators
    while True:
        task = next_task(client, a)
        if task is None:
            break
        decide(client, a, task["pair_id"], verdict_for(task["pair_id"]),
               reason="because" )
    while True:
        task = next_task(client, b)
        if task is None:
            break
        decide(client, b, task["pair_id"], verdict_for(task["pair_id"]),
               reason="because")


class TestStatsAndExport:
    def test_all_agree_kappa_is_one(self, client):
        a, b = register(client, "alice"), register(client, "bob")
        # both classes present, perfect agreement
        verdict_for = lambda pid: "fail" if pid.endswith("0") else "pass"
        drain_and_decide(client, (a, b), verdict_for)
        stats = client.get("/stats/agreement").json()
        assert stats["resolved_tasks"] == 6
        assert stats["percent_agreement"] == 1.0
        assert stats["human_kappa"] == pytest.approx(1.0)

    def test_single_class_is_insufficient_for_kappa(self, client):
        a, b = register(client, "alice"), register(client, "bob")
        drain_and_decide(client, (a, b), lambda pid: "pass")
        stats = client.get("/stats/agreement").json()
        assert stats["percent_agreement"] == 1.0
        assert stats["human_kappa"] is None

    def test_machine_human_kappa_present(self, client):
        a, b = register(client, "alice"), register(client, "bob")
        # human verdict mirrors the machine verdict: fine=True for even pairs
        verdict_for = lambda pid: "pass" if int(pid.split("-")[1]) % 2 == 0 else "fail"
        drain_and_decide(client, (a, b), verdict_for)
        stats = client.get("/stats/agreement").json()
        assert stats["machine_human_kappa"] == pytest.approx(1.0)

    def test_no_data_yields_nulls(self, client):
        stats = client.get("/stats/agreement").json()
        assert stats["resolved_tasks"] == 0
        assert stats["percent_agreement"] is None
        assert stats["human_kappa"] is None

    def test_export_contains_only_resolved_passes(self, client):
        a, b = register(client, "alice"), register(client, "bob")
        verdict_for = lambda pid: "pass" if int(pid.split("-")[1]) < 2 else "fail"
        drain_and_decide(client, (a, b), verdict_for)
        body = client.get("/export").text
        records = [json.loads(line) for line in body.splitlines()]
        assert {r["instruction"]["id"] for r in records} == {"pair-0", "pair-1"}
        assert all(r["verdicts"]["human"] is True for r in records)
        # idempotent
        assert client.get("/export").text == body

    def test_export_empty_when_nothing_resolved(self, client):
        assert client.get("/export").text == ""

    def test_qc_sample_is_read_only_slice(self, client):
        a, b = register(client, "alice"), register(client, "bob")
        drain_and_decide(client, (a, b), lambda pid: "pass")
        sample = client.get("/qc/sample", params={"fraction": 0.3, "seed": 1}).json()
        assert len(sample) == 2  # 30% of 6, rounded
        again = client.get("/qc/sample", params={"fraction": 0.3, "seed": 1}).json()
        assert sample == again


class TestDbUnit:
    def test_majority_transition_table(self):
        from cadforge.review.db import ReviewDb as Db

        assert Db._transition(["pass"]) == ("open", None)
        assert Db._transition(["pass", "pass"]) == ("resolved", True)
        assert Db._transition(["fail", "fail"]) == ("resolved", False)
        assert Db._transition(["pass", "fail"]) == ("needs_arbitration", None)
        assert Db._transition(["pass", "fail", "fail"]) == ("resolved", False)
        assert Db._transition(["fail", "pass", "pass"]) == ("resolved", True)

    def test_import_is_idempotent(self, tmp_path):
        records = [make_pair_record(0)]
        db = ReviewDb(tmp_path / "db.sqlite3")
        assert db.import_pairs(records) == 1
        assert db.import_pairs(records) == 0
