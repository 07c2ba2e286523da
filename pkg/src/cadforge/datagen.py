"""Instruction expansion and dataset-pair construction.

Expansion grows a seed set by repeatedly asking a backend for ten fresh
candidates, rejecting near-duplicates (word-level LCS similarity >= 0.8
against everything already kept) and steering the model away from
over-represented object names via a prompt-injected avoid list.
Accepted instructions then flow through script generation, rendering,
and the image/instruction verification gate into DatasetPairs.
"""

from __future__ import annotations

import logging
import random
import re
import tempfile
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from cadforge import backends as be
from cadforge import prompts
from cadforge import render as render_mod

log = logging.getLogger(__name__)

CATEGORIES = (
    "Tech", "Music", "Animal", "Furn", "Transport", "Office", "Food", "MedLab",
    "Fashion", "Graphics", "Recre", "Tools", "Travel", "Power", "Cuisine", "Home",
)
ITYPES = ("Verbal", "Look", "Use", "Deco", "Feel", "Comp", "Feat", "Design")
LENGTH_CLASSES = ("VS", "S", "M", "L", "E")

_WORD_RE = re.compile(r"[a-z0-9']+")


class QuotaStall(RuntimeError):
    """Twenty consecutive expansion rounds accepted nothing."""


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def similarity(a: str, b: str) -> float:
    """F-measure of the longest common subsequence over word tokens.

    Symmetric, 1.0 on identical texts, 0.0 when token-disjoint.  Two empty
    texts count as identical.
    """
    ta, tb = tokenize(a), tokenize(b)
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    prev = [0] * (len(tb) + 1)
    for x in ta:
        current = [0]
        for j, y in enumerate(tb, start=1):
            if x == y:
                current.append(prev[j - 1] + 1)
            else:
                current.append(max(prev[j], current[-1]))
        prev = current
    lcs = prev[-1]
    return 2.0 * lcs / (len(ta) + len(tb))


def classify_length(text: str) -> str:
    """Word-count buckets: VS <=10, S 11-20, M 21-40, L 41-70, E >70."""
    words = len(tokenize(text))
    if words <= 10:
        return "VS"
    if words <= 20:
        return "S"
    if words <= 40:
        return "M"
    if words <= 70:
        return "L"
    return "E"


def normalize_name(text: str) -> str:
    """Lowercase, collapse whitespace, strip plural 's' from words > 3 chars."""
    words = text.lower().split()
    out = []
    for word in words:
        if len(word) > 3 and word.endswith("s"):
            word = word[:-1]
        out.append(word)
    return " ".join(out)


@dataclass
class InstructionRecord:
    id: str
    text: str
    category: str
    itype: str
    length_class: str
    object_name: str
    extra: dict = field(default_factory=dict, repr=False)

    def validate(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.itype not in ITYPES:
            raise ValueError(f"unknown instruction type {self.itype!r}")
        if self.length_class not in LENGTH_CLASSES:
            raise ValueError(f"unknown length class {self.length_class!r}")
        if self.length_class != classify_length(self.text):
            raise ValueError(
                f"length class {self.length_class!r} inconsistent with text ({classify_length(self.text)})"
            )

    def to_json(self) -> dict:
        record = {
            "id": self.id,
            "text": self.text,
            "category": self.category,
            "itype": self.itype,
            "length_class": self.length_class,
            "object_name": self.object_name,
        }
        record.update(self.extra)
        return record

    @classmethod
    def from_json(cls, data: dict) -> "InstructionRecord":
        known = {"id", "text", "category", "itype", "length_class", "object_name"}
        record = cls(
            id=str(data["id"]),
            text=data["text"],
            category=data["category"],
            itype=data["itype"],
            length_class=data.get("length_class") or classify_length(data["text"]),
            object_name=data.get("object_name") or normalize_name(data["text"]),
            extra={k: v for k, v in data.items() if k not in known},
        )
        record.validate()
        return record


@dataclass
class Verdicts:
    coarse: bool | None = None
    fine: bool | None = None
    human: bool | None = None

    def to_json(self) -> dict:
        return {"coarse": self.coarse, "fine": self.fine, "human": self.human}


@dataclass
class DatasetPair:
    instruction: InstructionRecord
    script: str | None
    images: list[str] | None
    verdicts: Verdicts = field(default_factory=Verdicts)
    provenance: str = "generated"
    error: str | None = None
    extra: dict = field(default_factory=dict, repr=False)

    def validate(self) -> None:
        self.instruction.validate()
        if self.images is not None and len(self.images) != 4:
            raise ValueError("a rendered pair carries exactly 4 image paths")
        if not _valid_provenance(self.provenance):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def to_json(self) -> dict:
        record = {
            "instruction": self.instruction.to_json(),
            "script": self.script,
            "images": self.images,
            "verdicts": self.verdicts.to_json(),
            "provenance": self.provenance,
        }
        if self.error is not None:
            record["error"] = self.error
        record.update(self.extra)
        return record

    @classmethod
    def from_json(cls, data: dict) -> "DatasetPair":
        known = {"instruction", "script", "images", "verdicts", "provenance", "error"}
        verdicts = data.get("verdicts") or {}
        pair = cls(
            instruction=InstructionRecord.from_json(data["instruction"]),
            script=data.get("script"),
            images=data.get("images"),
            verdicts=Verdicts(
                coarse=verdicts.get("coarse"),
                fine=verdicts.get("fine"),
                human=verdicts.get("human"),
            ),
            provenance=data.get("provenance", "generated"),
            error=data.get("error"),
            extra={k: v for k, v in data.items() if k not in known},
        )
        pair.validate()
        return pair


def _valid_provenance(value: str) -> bool:
    return value in ("seed", "generated") or bool(re.fullmatch(r"self_improve_iter:\d+", value))


def self_improve_provenance(iteration: int) -> str:
    return f"self_improve_iter:{iteration}"


# ---------------------------------------------------------------------------
# Expansion


def _parse_candidates(response: str) -> list[dict]:
    try:
        payload = be._extract_json(response)
    except ValueError:
        return []
    if not isinstance(payload, list):
        return []
    out = []
    for item in payload:
        if isinstance(item, dict) and isinstance(item.get("text"), str) and item["text"].strip():
            out.append(item)
    return out


def expand_instructions(
    seeds: list[InstructionRecord],
    backend: be.Backend,
    target: int,
    avoid_threshold: int = 5,
    *,
    rng: random.Random | None = None,
    batch_size: int = 10,
    max_rounds: int = 500,
    exemplars_per_round: int = 4,
    similarity_cutoff: float = 0.8,
) -> list[InstructionRecord]:
    """Grow the instruction set to ``target`` accepted records.

    Raises QuotaStall after 20 consecutive rounds with zero acceptances.
    """
    if not seeds:
        raise ValueError("seeds must be non-empty")
    if target < 1:
        raise ValueError("target must be >= 1")
    rng = rng or random.Random(0)
    accepted: list[InstructionRecord] = []
    name_counts: Counter[str] = Counter()
    avoid: set[str] = set()
    empty_rounds = 0

    for round_no in range(max_rounds):
        if len(accepted) >= target:
            break
        pool = seeds + accepted
        exemplars = rng.sample(pool, min(exemplars_per_round, len(pool)))
        prompt = prompts.EXPAND_INSTRUCTIONS.render(
            exemplars="\n".join(f"- {r.text}" for r in exemplars),
            count=batch_size,
            avoid_names=", ".join(sorted(avoid)) if avoid else "(none)",
            categories=", ".join(CATEGORIES),
            itypes=", ".join(ITYPES),
        )
        response = backend.complete([{"role": "user", "content": prompt}], task="expand_instructions")
        accepted_this_round = 0
        for candidate in _parse_candidates(response):
            if len(accepted) >= target:
                break
            text = candidate["text"].strip()
            reference = seeds + accepted
            if any(similarity(text, r.text) >= similarity_cutoff for r in reference):
                continue
            category = candidate.get("category", "")
            itype = candidate.get("type", candidate.get("itype", ""))
            if category not in CATEGORIES or itype not in ITYPES:
                log.debug("dropping candidate with bad labels: %r/%r", category, itype)
                continue
            name = normalize_name(str(candidate.get("object_name", "")) or text)
            record = InstructionRecord(
                id=f"gen-{len(accepted):05d}",
                text=text,
                category=category,
                itype=itype,
                length_class=classify_length(text),
                object_name=name,
            )
            accepted.append(record)
            accepted_this_round += 1
            name_counts[name] += 1
            if name_counts[name] >= avoid_threshold:
                avoid.add(name)
        if accepted_this_round == 0:
            empty_rounds += 1
            if empty_rounds >= 20:
                raise QuotaStall(f"no candidates accepted for {empty_rounds} consecutive rounds")
        else:
            empty_rounds = 0
    return accepted


# ---------------------------------------------------------------------------
# Pair construction


def build_pairs(
    instructions: list[InstructionRecord],
    gen_backend: be.Backend,
    renderer,
    verifier_backend: be.Backend | None,
    run_dir,
    *,
    one_shot: tuple[str, str] = be.DEFAULT_ONE_SHOT,
    workers: int = 4,
    provenance: str = "generated",
    work_dir=None,
) -> list[DatasetPair]:
    """Generate, render, and verify one pair per instruction.

    Failures never abort the batch: render errors leave a pair without
    images (the negative pool), backend errors are recorded on the pair.
    Output order matches input order.
    """
    work_root = Path(work_dir) if work_dir is not None else Path(tempfile.mkdtemp(prefix="cadforge-render-"))

    def build_one(index: int, instruction: InstructionRecord) -> DatasetPair:
        pair = DatasetPair(instruction=instruction, script=None, images=None, provenance=provenance)
        try:
            pair.script = be.generate_script(gen_backend, instruction.text, one_shot)
        except be.BackendError as exc:
            pair.error = f"generation: {exc}"
            return pair
        out_dir = work_root / f"pair_{index:05d}"
        out_dir.mkdir(parents=True, exist_ok=True)
        outcome = renderer.render(pair.script, out_dir)
        if not isinstance(outcome, render_mod.Rendered):
            return pair  # kept without images: negative-pool candidate
        pair.images = run_dir.store_images(outcome.image_paths)
        if verifier_backend is not None:
            try:
                pair.verdicts.fine = be.verify_pair(
                    verifier_backend, instruction.text, [run_dir.resolve(p) for p in pair.images]
                )
            except (be.BackendError, be.UnparseableVerdict) as exc:
                pair.error = f"verification: {exc}"
        return pair

    if workers <= 1 or len(instructions) <= 1:
        return [build_one(i, ins) for i, ins in enumerate(instructions)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(build_one, i, ins) for i, ins in enumerate(instructions)]
        return [f.result() for f in futures]
