import json

import pytest

from cadforge.backends import (
    Backend,
    BackendConfig,
    BackendError,
    EmptyCompletion,
    ImagesEvidence,
    MockModelBackend,
    ModeMismatch,
    ReplayBackend,
    ScriptEvidence,
    ScriptedBackend,
    TransportError,
    UnparseableVerdict,
    extract_code_block,
    generate_script,
    judge_criteria,
    record_fixture,
    verify_pair,
)
from cadforge.bench import Criterion
from cadforge.render import solid_png


@pytest.fixture
def images(tmp_path):
    paths = []
    for i in range(4):
        path = tmp_path / f"view_{i + 1}.png"
        path.write_bytes(solid_png((i, i, i)))
        paths.append(str(path))
    return paths


def image_criteria(n=4):
    return [
        Criterion(id=f"c{i}", dimension="Spat", sub_dimension="Space", text=f"check {i}", mode="image")
        for i in range(n)
    ]


def test_extract_code_block():
    text = "Sure!\n```python\nimport bpy\n```\nDone."
    assert extract_code_block(text) == "import bpy"
    assert extract_code_block("no fence here") == "no fence here"


def test_generate_script_passthrough():
    backend = ScriptedBackend(["```python\nimport bpy\nbpy.ops.mesh.primitive_cube_add()\n```"])
    script = generate_script(backend, "make a cube")
    assert script == "import bpy\nbpy.ops.mesh.primitive_cube_add()"


def test_generate_script_requires_instruction():
    with pytest.raises(ValueError):
        generate_script(ScriptedBackend(["x"]), "")


def test_retry_exhaustion_counts_calls():
    backend = ScriptedBackend([TransportError("bad json")] * 10, BackendConfig(max_retries=3))
    with pytest.raises(BackendError):
        backend.complete([{"role": "user", "content": "hi"}])
    assert backend.calls == 4  # 1 + retries


def test_transient_failure_recovers():
    backend = ScriptedBackend([TransportError("hiccup"), "ok"], BackendConfig(max_retries=3))
    assert backend.complete([{"role": "user", "content": "hi"}]) == "ok"
    assert backend.calls == 2


def test_empty_completion():
    backend = ScriptedBackend([""])
    with pytest.raises(EmptyCompletion):
        backend.complete([{"role": "user", "content": "hi"}])


def test_verify_pair_parses_verdict(images):
    assert verify_pair(ScriptedBackend(['{"match": true}']), "a cube", images) is True
    assert verify_pair(ScriptedBackend(['{"match": false}']), "a cube", images) is False


def test_verify_pair_reprompts_once(images):
    backend = ScriptedBackend(["hmm, looks fine to me", '{"match": true}'])
    assert verify_pair(backend, "a cube", images) is True
    assert backend.calls == 2


def test_verify_pair_unparseable_after_reprompt(images):
    backend = ScriptedBackend(["garbage", "more garbage"])
    with pytest.raises(UnparseableVerdict):
        verify_pair(backend, "a cube", images)


def test_verify_pair_needs_four_images(images):
    with pytest.raises(ValueError):
        verify_pair(ScriptedBackend(['{"match": true}']), "a cube", images[:3])


def test_verify_pair_attaches_images_base64(images):
    backend = ScriptedBackend(['{"match": true}'])
    verify_pair(backend, "a cube", images)
    request, task = backend.requests[0]
    assert task == "verify_pair"
    assert len(request["messages"][0]["image_attachments"]) == 4


def test_judge_criteria_scores_in_order(images):
    criteria = image_criteria(4)
    backend = ScriptedBackend([json.dumps({"scores": {"c0": 1, "c1": 0, "c2": 1, "c3": true_ish()}})])
    verdict = judge_criteria(backend, "a cube", ImagesEvidence(images), criteria)
    assert [entry["score"] for entry in verdict.per_criterion] == [1, 0, 1, 1]
    assert [entry["criterion_id"] for entry in verdict.per_criterion] == ["c0", "c1", "c2", "c3"]


def true_ish():
    return True  # exercised coercion: JSON true -> score 1


def test_judge_criteria_mode_mismatch(images):
    criteria = image_criteria(1)
    with pytest.raises(ModeMismatch):
        judge_criteria(ScriptedBackend(["{}"]), "a cube", ScriptEvidence("import bpy"), criteria)
    script_criterion = Criterion(
        id="s0", dimension="Attr", sub_dimension="Color", text="is red", mode="script"
    )
    with pytest.raises(ModeMismatch):
        judge_criteria(ScriptedBackend(["{}"]), "a cube", ImagesEvidence(images), [script_criterion])


def test_judge_criteria_rejects_nonbinary_then_reprompts(images):
    criteria = image_criteria(1)
    backend = ScriptedBackend([json.dumps({"scores": {"c0": 0.7}}), json.dumps({"scores": {"c0": 1}})])
    verdict = judge_criteria(backend, "a cube", ImagesEvidence(images), criteria)
    assert verdict.per_criterion == [{"criterion_id": "c0", "score": 1}]
    assert backend.calls == 2


def test_judge_criteria_requires_all_ids(images):
    criteria = image_criteria(2)
    backend = ScriptedBackend([json.dumps({"scores": {"c0": 1}}), json.dumps({"scores": {"c0": 1}})])
    with pytest.raises(UnparseableVerdict):
        judge_criteria(backend, "a cube", ImagesEvidence(images), criteria)


def test_replay_backend_round_trips(tmp_path, images):
    fixtures = {}
    live = ScriptedBackend(['{"match": true}'])
    verify_pair(live, "a cube", images)
    request, task = live.requests[0]
    record_fixture(fixtures, {"model": "replay", "messages": request["messages"], "temperature": 0.0}, task, '{"match": true}')
    path = tmp_path / "fixtures.json"
    path.write_text(json.dumps(fixtures))
    replay = ReplayBackend(path)
    assert verify_pair(replay, "a cube", images) is True


def test_replay_backend_missing_fixture(tmp_path):
    path = tmp_path / "fixtures.json"
    path.write_text("{}")
    backend = ReplayBackend(path)
    with pytest.raises(BackendError):
        backend.complete([{"role": "user", "content": "unknown"}])


def test_scripted_backend_callable():
    backend = ScriptedBackend(lambda request, task: f"task={task}")
    assert backend.complete([{"role": "user", "content": "x"}], task="generate_script") == "task=generate_script"


def test_mock_backend_determinism(images):
    a = MockModelBackend(seed=3)
    b = MockModelBackend(seed=3)
    msg = [{"role": "user", "content": "Instruction:\nmake a chair"}]
    assert a.complete(msg, task="generate_script") == b.complete(msg, task="generate_script")
    assert a.complete(msg, task="expand_instructions") == b.complete(msg, task="expand_instructions")


def test_mock_backend_expansion_is_valid_json():
    backend = MockModelBackend(seed=0)
    payload = json.loads(backend.complete([{"role": "user", "content": "go"}], task="expand_instructions"))
    assert len(payload) == 10
    assert all({"text", "category", "type", "object_name"} <= set(item) for item in payload)


def test_backend_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(temperature=-1).validate()
    with pytest.raises(ValueError):
        BackendConfig(max_retries=-1).validate()


def test_base_backend_requires_send():
    backend = Backend()
    with pytest.raises(NotImplementedError):
        backend.complete([{"role": "user", "content": "x"}])
