"""Clients for text-generation and multimodal-judge models, plus mocks.

All backends speak one chat-style contract: a list of messages goes in,
completion text comes out.  Transport failures are retried up to
``max_retries`` times before surfacing as BackendError; judge-style
operations get one reprompt before giving up on unparseable output.

Mocks: ScriptedBackend replays a programmed response sequence,
ReplayBackend serves canned responses keyed by request digest, and
MockModelBackend fabricates deterministic pipeline behavior for
end-to-end runs without a live model.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import requests

from cadforge import prompts


class BackendError(RuntimeError):
    """A backend call failed after exhausting its retries."""


class EmptyCompletion(BackendError):
    """The backend replied without content."""


class TransportError(RuntimeError):
    """A single attempt failed; retried internally."""


class UnparseableVerdict(RuntimeError):
    """Judge output stayed unparseable after the reprompt."""


class ModeMismatch(ValueError):
    """Criterion evaluation mode does not fit the supplied evidence."""


@dataclass
class BackendConfig:
    endpoint_url: str = ""
    model_id: str = "mock"
    auth_token_env: str | None = None
    temperature: float = 0.0
    max_retries: int = 3
    request_timeout_ms: int = 60_000
    max_in_flight: int = 4

    def validate(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class Backend:
    """Shared retry/limit machinery; subclasses implement ``_send``."""

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig()
        self.config.validate()
        self.calls = 0
        self._gate = threading.BoundedSemaphore(self.config.max_in_flight)
        self._lock = threading.Lock()

    @property
    def model_id(self) -> str:
        return self.config.model_id

    def complete(self, messages: list[dict], *, temperature: float | None = None, task: str | None = None) -> str:
        request = {
            "model": self.config.model_id,
            "messages": messages,
            "temperature": self.config.temperature if temperature is None else temperature,
        }
        last: Exception | None = None
        for _ in range(1 + self.config.max_retries):
            with self._gate:
                with self._lock:
                    self.calls += 1
                try:
                    content = self._send(request, task)
                except TransportError as exc:
                    last = exc
                    continue
            if not content:
                raise EmptyCompletion(f"backend {self.model_id} returned no content")
            return content
        raise BackendError(f"backend {self.model_id} failed after {1 + self.config.max_retries} attempts: {last}")

    def _send(self, request: dict, task: str | None) -> str:
        raise NotImplementedError


class HttpBackend(Backend):
    """JSON-over-HTTP chat endpoint: request {model, messages, temperature},
    response {content}.  Auth token comes from the configured env var."""

    def __init__(self, config: BackendConfig, session: requests.Session | None = None):
        super().__init__(config)
        if not config.endpoint_url:
            raise ValueError("HttpBackend needs an endpoint_url")
        self._session = session or requests.Session()

    def _send(self, request: dict, task: str | None) -> str:
        headers = {}
        if self.config.auth_token_env:
            token = os.environ.get(self.config.auth_token_env)
            if not token:
                raise BackendError(f"auth env var {self.config.auth_token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        try:
            response = self._session.post(
                self.config.endpoint_url,
                json=request,
                headers=headers,
                timeout=self.config.request_timeout_ms / 1000.0,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code != 200:
            raise TransportError(f"HTTP {response.status_code}")
        try:
            payload = response.json()
        except ValueError as exc:
            raise TransportError(f"malformed JSON response: {exc}") from exc
        content = payload.get("content")
        return content if isinstance(content, str) else ""


class ScriptedBackend(Backend):
    """Replays a programmed sequence; entries may be exceptions to raise."""

    def __init__(self, responses: Sequence[str | Exception] | Callable[[dict, str | None], str],
                 config: BackendConfig | None = None):
        super().__init__(config)
        self._responder = responses if callable(responses) else None
        self._queue = list(responses) if not callable(responses) else []
        self.requests: list[tuple[dict, str | None]] = []

    def _send(self, request: dict, task: str | None) -> str:
        self.requests.append((request, task))
        if self._responder is not None:
            return self._responder(request, task)
        if not self._queue:
            raise TransportError("scripted responses exhausted")
        item = self._queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def request_digest(request: dict, task: str | None) -> str:
    payload = json.dumps({"request": request, "task": task}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ReplayBackend(Backend):
    """Serves canned responses from a fixtures file keyed by request digest."""

    def __init__(self, fixtures_path: str | Path, config: BackendConfig | None = None):
        super().__init__(config or BackendConfig(model_id="replay"))
        self.fixtures = json.loads(Path(fixtures_path).read_text(encoding="utf-8"))

    def _send(self, request: dict, task: str | None) -> str:
        digest = request_digest(request, task)
        if digest not in self.fixtures:
            raise BackendError(f"no replay fixture for request digest {digest[:12]}")
        return self.fixtures[digest]


def record_fixture(fixtures: dict, request: dict, task: str | None, response: str) -> None:
    fixtures[request_digest(request, task)] = response


# ---------------------------------------------------------------------------
# Deterministic pipeline mock


_MOCK_NOUNS = (
    "lamp", "vase", "bridge", "gear", "mug", "rocket", "bench", "antenna",
    "drone", "kettle", "easel", "turbine", "anvil", "compass", "ladder",
    "barrel", "prism", "whisk", "tripod", "gazebo", "sled", "hinge", "flask",
)
_MOCK_ADJS = ("red", "blue", "green", "matte", "glossy", "slender", "chunky")
_MOCK_FEATURES = (
    "hexagonal", "ribbed", "tapered", "woven", "beveled", "split",
    "fluted", "hollow", "stacked", "curved", "domed",
)
# Short templates with three independently cycling slots: same-template
# candidates almost always differ in at least two tokens, which keeps the
# LCS similarity against earlier acceptances below the 0.8 cutoff.
_MOCK_PATTERNS = (
    "Design a {adj} {noun} with a {feature} base.",
    "Model one {adj} {noun} featuring {feature} edges.",
    "Build a tiny {adj} {noun} around a {feature} core.",
    "Construct an industrial {noun}, {adj} finish, {feature} trim.",
    "Sketch a playful {adj} {noun} shaped like a {feature}.",
    "A minimalist {adj} {noun} holding one {feature} rod.",
)
_MOCK_KINDS = ("cube", "uv_sphere", "cylinder", "cone")


def _hash_int(*parts: str) -> int:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class MockModelBackend(Backend):
    """Task-aware deterministic stand-in for every model role.

    Responses are pure functions of (seed, request, internal counter), so
    rerunning an identical call sequence reproduces identical bytes.
    """

    def __init__(self, seed: int = 0, config: BackendConfig | None = None):
        super().__init__(config or BackendConfig(model_id=f"mock-{seed}"))
        self.seed = seed
        self._counter = 0

    def _send(self, request: dict, task: str | None) -> str:
        prompt = _last_user_text(request["messages"])
        if task == "expand_instructions":
            return self._expand()
        if task == "generate_script":
            return self._script(prompt)
        if task in ("verify_pair", "filter_coarse", "filter_fine"):
            return self._verdict(prompt, task or "verify_pair")
        if task == "judge_criteria":
            return self._judge(prompt)
        return "ok"

    def _expand(self) -> str:
        from cadforge.datagen import CATEGORIES, ITYPES

        candidates = []
        for _ in range(10):
            n = self._counter + self.seed
            self._counter += 1
            noun = _MOCK_NOUNS[n % len(_MOCK_NOUNS)]
            text = _MOCK_PATTERNS[n % len(_MOCK_PATTERNS)].format(
                adj=_MOCK_ADJS[n % len(_MOCK_ADJS)],
                noun=noun,
                feature=_MOCK_FEATURES[n % len(_MOCK_FEATURES)],
            )
            candidates.append(
                {
                    "text": text,
                    "category": CATEGORIES[n % len(CATEGORIES)],
                    "type": ITYPES[n % len(ITYPES)],
                    "object_name": noun,
                }
            )
        return json.dumps(candidates)

    def _script(self, prompt: str) -> str:
        h = _hash_int("script", str(self.seed), prompt)
        if h % 8 == 0:
            # A deliberately unrunnable script: exercises the error path.
            return "```python\ndef broken(:\n```"
        lines = ["import bpy"]
        for i in range(1 + h % 3):
            kind = _MOCK_KINDS[(h + i) % len(_MOCK_KINDS)]
            size = 0.5 + ((h >> (4 * i)) % 16) / 8.0
            if kind == "cube":
                args = f"size={size:g}"
            elif kind == "uv_sphere":
                args = f"radius={size / 2:g}"
            elif kind == "cylinder":
                args = f"radius={size / 3:g}, depth={size:g}"
            else:
                args = f"radius1={size / 2:g}, depth={size:g}"
            lines.append(f"bpy.ops.mesh.primitive_{kind}_add({args}, location=({i}, 0, 0))")
        body = "\n".join(lines)
        return f"Here is the script.\n```python\n{body}\n```"

    def _verdict(self, prompt: str, task: str) -> str:
        h = _hash_int("verdict", task, str(self.seed), prompt)
        rate = {"verify_pair": 5, "filter_coarse": 10, "filter_fine": 20}[task]
        threshold = {"verify_pair": 4, "filter_coarse": 7, "filter_fine": 17}[task]
        return json.dumps({"match": h % rate < threshold})

    def _judge(self, prompt: str) -> str:
        ids = re.findall(r"^- \[([^\]]+)\]", prompt, re.M)
        scores = {cid: 1 if _hash_int("judge", str(self.seed), cid, prompt) % 4 else 0 for cid in ids}
        return json.dumps({"scores": scores})


def _last_user_text(messages: list[dict]) -> str:
    for message in reversed(messages):
        if message.get("role") == "user":
            return message.get("content", "")
    return ""


# ---------------------------------------------------------------------------
# Operations


@dataclass
class JudgeVerdict:
    per_criterion: list[dict]  # [{"criterion_id": ..., "score": 0|1}]
    raw_response: str


@dataclass
class ImagesEvidence:
    paths: list[str]


@dataclass
class ScriptEvidence:
    text: str


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def extract_code_block(text: str) -> str:
    """First fenced code block, or the whole text when there is none."""
    match = _FENCE_RE.search(text)
    return match.group(1).strip("\n") if match else text


def _extract_json(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    match = _FENCE_RE.search(text)
    if match:
        try:
            return json.loads(match.group(1))
        except json.JSONDecodeError:
            pass
    for opener, closer in (("{", "}"), ("[", "]")):
        start, end = text.find(opener), text.rfind(closer)
        if 0 <= start < end:
            try:
                return json.loads(text[start : end + 1])
            except json.JSONDecodeError:
                continue
    raise ValueError("no JSON payload found")


def _attach_images(text: str, image_paths: Sequence[str | Path]) -> dict:
    attachments = [base64.b64encode(Path(p).read_bytes()).decode("ascii") for p in image_paths]
    return {"role": "user", "content": text, "image_attachments": attachments}


DEFAULT_ONE_SHOT = (
    "Create a single cube of edge length 2 sitting on the origin.",
    'import bpy\nbpy.ops.mesh.primitive_cube_add(size=2.0, location=(0.0, 0.0, 1.0))\n',
)


def generate_script(backend: Backend, instruction: str, one_shot: tuple[str, str] = DEFAULT_ONE_SHOT) -> str:
    """Stage-one synthesis: instruction plus one-shot example -> bpy script."""
    if not instruction:
        raise ValueError("instruction must be non-empty")
    prompt = prompts.GENERATE_SCRIPT.render(
        example_instruction=one_shot[0], example_script=one_shot[1], instruction=instruction
    )
    response = backend.complete([{"role": "user", "content": prompt}], task="generate_script")
    return extract_code_block(response)


def _parse_match(text: str) -> bool | None:
    try:
        payload = _extract_json(text)
    except ValueError:
        return None
    if isinstance(payload, dict) and isinstance(payload.get("match"), bool):
        return payload["match"]
    return None


def _binary_verdict(backend: Backend, message: dict, reprompt_message: dict, task: str) -> bool:
    response = backend.complete([message], task=task)
    verdict = _parse_match(response)
    if verdict is not None:
        return verdict
    retry = backend.complete(
        [message, {"role": "assistant", "content": response}, reprompt_message], task=task
    )
    verdict = _parse_match(retry)
    if verdict is not None:
        return verdict
    raise UnparseableVerdict(f"no binary verdict after reprompt: {retry[:200]!r}")


def verify_pair(backend: Backend, instruction: str, images: Sequence[str | Path]) -> bool:
    """True when the judge says the four renders match the instruction."""
    if len(images) != 4:
        raise ValueError(f"expected 4 images, got {len(images)}")
    for path in images:
        if not Path(path).is_file():
            raise ValueError(f"image not readable: {path}")
    message = _attach_images(prompts.VERIFY_PAIR.render(instruction=instruction), images)
    reprompt = _attach_images(prompts.VERIFY_PAIR_REPROMPT.render(instruction=instruction), images)
    return _binary_verdict(backend, message, reprompt, task="verify_pair")


def _parse_scores(text: str, criteria) -> list[dict] | None:
    try:
        payload = _extract_json(text)
    except ValueError:
        return None
    if not isinstance(payload, dict):
        return None
    scores = payload.get("scores", payload)
    if not isinstance(scores, dict):
        return None
    out = []
    for criterion in criteria:
        if criterion.id not in scores:
            return None
        value = scores[criterion.id]
        if value is True or value == 1:
            score = 1
        elif value is False or value == 0:
            score = 0
        else:
            return None
        out.append({"criterion_id": criterion.id, "score": score})
    return out


def judge_criteria(backend: Backend, instruction: str, evidence, criteria) -> JudgeVerdict:
    """Score every criterion 0/1 from images or from the script text."""
    if not criteria:
        raise ValueError("criteria must be non-empty")
    for criterion in criteria:
        wanted = "image" if isinstance(evidence, ImagesEvidence) else "script"
        if criterion.mode != wanted:
            raise ModeMismatch(
                f"criterion {criterion.id!r} has mode {criterion.mode!r} but evidence is {wanted}"
            )
    block = prompts.criteria_block(criteria)
    if isinstance(evidence, ImagesEvidence):
        message = _attach_images(
            prompts.JUDGE_IMAGES.render(instruction=instruction, criteria=block), evidence.paths
        )
    elif isinstance(evidence, ScriptEvidence):
        message = {
            "role": "user",
            "content": prompts.JUDGE_SCRIPT.render(
                instruction=instruction, criteria=block, script=evidence.text
            ),
        }
    else:
        raise TypeError(f"unknown evidence type {type(evidence).__name__}")

    response = backend.complete([message], task="judge_criteria")
    parsed = _parse_scores(response, criteria)
    if parsed is None:
        reprompt = {"role": "user", "content": prompts.JUDGE_REPROMPT.render(criteria=block)}
        retry = backend.complete(
            [message, {"role": "assistant", "content": response}, reprompt], task="judge_criteria"
        )
        parsed = _parse_scores(retry, criteria)
        if parsed is None:
            raise UnparseableVerdict(f"judge output unparseable after reprompt: {retry[:200]!r}")
        response = retry
    return JudgeVerdict(per_criterion=parsed, raw_response=response)
