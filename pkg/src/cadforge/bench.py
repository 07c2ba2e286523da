"""Benchmark runner and scoring core.

Samples carry per-sample binary criteria tagged with a dimension
(Attr/Spat/Inst), a sub-dimension, and an evaluation mode: criteria
about color, size, and texture are judged from the script text, the
rest from the four renders.  Scores aggregate hierarchically
(criteria -> sub-dimension -> dimension -> overall) with macro
averaging across samples; a sample whose script cannot produce an
image scores 0 on every criterion and stays in every denominator.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from cadforge import backends as be
from cadforge import render as render_mod

DIMENSIONS: dict[str, tuple[str, ...]] = {
    "Attr": ("Shape", "Color", "Size", "Proportion", "Texture"),
    "Spat": ("Space", "Contact"),
    "Inst": ("Execute",),
}
SUBDIM_TO_DIM = {sub: dim for dim, subs in DIMENSIONS.items() for sub in subs}
SCRIPT_MODE_SUBDIMS = frozenset({"Color", "Size", "Texture"})
SOURCES = ("sim", "wild")


class EmptyCriteria(ValueError):
    pass


class PerfectChance(ValueError):
    """Chance agreement is exactly 1 while observed agreement is not."""


@dataclass
class Criterion:
    id: str
    dimension: str
    sub_dimension: str
    text: str
    mode: str

    def validate(self) -> None:
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension {self.dimension!r}")
        if self.sub_dimension not in DIMENSIONS[self.dimension]:
            raise ValueError(
                f"sub-dimension {self.sub_dimension!r} does not belong to {self.dimension}"
            )
        expected_mode = "script" if self.sub_dimension in SCRIPT_MODE_SUBDIMS else "image"
        if self.mode != expected_mode:
            raise ValueError(
                f"criterion {self.id!r}: sub-dimension {self.sub_dimension} requires mode {expected_mode!r}"
            )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "dimension": self.dimension,
            "sub_dimension": self.sub_dimension,
            "text": self.text,
            "mode": self.mode,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Criterion":
        crit = cls(
            id=str(data["id"]),
            dimension=data["dimension"],
            sub_dimension=data["sub_dimension"],
            text=data.get("text", ""),
            mode=data.get(
                "mode", "script" if data["sub_dimension"] in SCRIPT_MODE_SUBDIMS else "image"
            ),
        )
        crit.validate()
        return crit


@dataclass
class BenchSample:
    id: str
    instruction: str
    source: str
    criteria: list[Criterion]
    extra: dict = field(default_factory=dict, repr=False)

    def validate(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if not self.criteria:
            raise ValueError(f"sample {self.id!r} has no criteria")
        present = {c.dimension for c in self.criteria}
        missing = set(DIMENSIONS) - present
        if missing:
            raise ValueError(f"sample {self.id!r} lacks criteria for {sorted(missing)}")
        for criterion in self.criteria:
            criterion.validate()

    def to_json(self) -> dict:
        record = {
            "id": self.id,
            "instruction": self.instruction,
            "source": self.source,
            "criteria": [c.to_json() for c in self.criteria],
        }
        record.update(self.extra)
        return record

    @classmethod
    def from_json(cls, data: dict) -> "BenchSample":
        known = {"id", "instruction", "source", "criteria"}
        sample = cls(
            id=str(data["id"]),
            instruction=data["instruction"],
            source=data["source"],
            criteria=[Criterion.from_json(c) for c in data["criteria"]],
            extra={k: v for k, v in data.items() if k not in known},
        )
        sample.validate()
        return sample


@dataclass
class SampleResult:
    sample_id: str
    script: str | None
    render: str  # rendered | syntax_error | timeout | skipped
    scores: dict[str, int]
    syntax_error: bool
    undecided: str | None = None
    images: list[str] | None = None

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "script": self.script,
            "render": self.render,
            "scores": self.scores,
            "syntax_error": self.syntax_error,
            "undecided": self.undecided,
            "images": self.images,
        }


# ---------------------------------------------------------------------------
# Scoring primitives


def sub_dim_score(scores: list[int]) -> float:
    """Mean of binary criterion scores within one sub-dimension."""
    if not scores:
        raise EmptyCriteria("sub-dimension has no criteria")
    return sum(scores) / len(scores)


def dim_score(sub_scores: list[float]) -> float:
    """Mean of sub-dimension scores within one dimension."""
    if not sub_scores:
        raise EmptyCriteria("dimension has no sub-dimension scores")
    return sum(sub_scores) / len(sub_scores)


def overall(dim_scores: list[float]) -> float:
    """Mean over the three dimension scores."""
    if len(dim_scores) != 3:
        raise ValueError(f"expected 3 dimension scores, got {len(dim_scores)}")
    return sum(dim_scores) / 3.0


def std_dev(dim_scores: list[float]) -> float:
    """Population standard deviation of the dimension scores."""
    if len(dim_scores) != 3:
        raise ValueError(f"expected 3 dimension scores, got {len(dim_scores)}")
    mean = sum(dim_scores) / 3.0
    return math.sqrt(sum((d - mean) ** 2 for d in dim_scores) / 3.0)


def e_syntax(n_error: int, n_total: int) -> float:
    """Percentage of samples whose script produced no image."""
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    if not 0 <= n_error <= n_total:
        raise ValueError("n_error must be within [0, n_total]")
    return 100.0 * n_error / n_total


def cohen_kappa(confusion: tuple[tuple[float, float], tuple[float, float]]) -> float:
    """Chance-corrected agreement from a 2x2 proportion matrix.

    Rows are rater A (pass, fail), columns rater B.  Entries must be
    nonnegative and sum to 1.  When chance agreement is exactly 1 the
    statistic degenerates: perfect observed agreement maps to 1,
    anything else raises PerfectChance.
    """
    (a, b), (c, d) = confusion
    cells = (a, b, c, d)
    if any(x < 0 for x in cells):
        raise ValueError("confusion entries must be nonnegative")
    total = sum(cells)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"confusion proportions must sum to 1, got {total}")
    p_o = a + d
    row_pass, row_fail = a + b, c + d
    col_pass, col_fail = a + c, b + d
    p_e = row_pass * col_pass + row_fail * col_fail
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise PerfectChance("chance agreement is exactly 1")
    return (p_o - p_e) / (1.0 - p_e)


def counts_to_confusion(counts: tuple[int, int, int, int]) -> tuple[tuple[float, float], tuple[float, float]]:
    """(both-pass, A-pass/B-fail, A-fail/B-pass, both-fail) counts -> proportions."""
    total = sum(counts)
    if total == 0:
        raise ValueError("no observations")
    a, b, c, d = (x / total for x in counts)
    return ((a, b), (c, d))


# ---------------------------------------------------------------------------
# Aggregation


@dataclass
class SplitReport:
    dim_scores: dict[str, float]
    avg: float
    sd: float
    e_syntax: float
    flat_score: float
    sub_dimension: dict[str, float]
    n_samples: int
    n_syntax_errors: int
    n_undecided: int

    def to_json(self) -> dict:
        return {
            "dim_scores": self.dim_scores,
            "avg": self.avg,
            "sd": self.sd,
            "e_syntax": self.e_syntax,
            "flat_score": self.flat_score,
            "sub_dimension": self.sub_dimension,
            "n_samples": self.n_samples,
            "n_syntax_errors": self.n_syntax_errors,
            "n_undecided": self.n_undecided,
        }


@dataclass
class BenchReport:
    splits: dict[str, SplitReport]

    def to_json(self) -> dict:
        return {name: split.to_json() for name, split in self.splits.items()}

    def to_markdown(self) -> str:
        lines = [
            "| Split | Attr | Spat | Inst | Avg | SD | E_syntax | Samples | Undecided |",
            "|---|---|---|---|---|---|---|---|---|",
        ]
        for name in sorted(self.splits):
            s = self.splits[name]
            lines.append(
                f"| {name} | {s.dim_scores['Attr']:.3f} | {s.dim_scores['Spat']:.3f} "
                f"| {s.dim_scores['Inst']:.3f} | {s.avg:.3f} | {s.sd:.3f} "
                f"| {s.e_syntax:.1f}% | {s.n_samples} | {s.n_undecided} |"
            )
        return "\n".join(lines) + "\n"


def _aggregate_split(samples: list[BenchSample], results: dict[str, SampleResult]) -> SplitReport:
    decided = [s for s in samples if results[s.id].undecided is None]
    n_undecided = len(samples) - len(decided)
    per_subdim_means: dict[str, list[float]] = {}
    flat_scores: list[int] = []
    n_errors = 0
    for sample in decided:
        result = results[sample.id]
        if result.syntax_error:
            n_errors += 1
        by_subdim: dict[str, list[int]] = {}
        for criterion in sample.criteria:
            score = result.scores.get(criterion.id, 0)
            by_subdim.setdefault(criterion.sub_dimension, []).append(score)
            flat_scores.append(score)
        for sub, scores in by_subdim.items():
            per_subdim_means.setdefault(sub, []).append(sub_dim_score(scores))

    sub_scores = {sub: sum(vals) / len(vals) for sub, vals in per_subdim_means.items()}
    dims = {}
    for dim, subs in DIMENSIONS.items():
        present = [sub_scores[sub] for sub in subs if sub in sub_scores]
        dims[dim] = dim_score(present) if present else 0.0
    dim_values = [dims["Attr"], dims["Spat"], dims["Inst"]]
    return SplitReport(
        dim_scores=dims,
        avg=overall(dim_values),
        sd=std_dev(dim_values),
        e_syntax=e_syntax(n_errors, len(decided)) if decided else 0.0,
        flat_score=sum(flat_scores) / len(flat_scores) if flat_scores else 0.0,
        sub_dimension=sub_scores,
        n_samples=len(decided),
        n_syntax_errors=n_errors,
        n_undecided=n_undecided,
    )


def aggregate(samples: list[BenchSample], results: dict[str, SampleResult]) -> BenchReport:
    splits = {}
    for source in SOURCES:
        subset = [s for s in samples if s.source == source]
        if subset:
            splits[source] = _aggregate_split(subset, results)
    return BenchReport(splits=splits)


# ---------------------------------------------------------------------------
# Runner


def _judge_sample(judge_backend, sample: BenchSample, script: str, image_paths) -> dict[str, int]:
    scores: dict[str, int] = {}
    image_criteria = [c for c in sample.criteria if c.mode == "image"]
    script_criteria = [c for c in sample.criteria if c.mode == "script"]
    if image_criteria:
        verdict = be.judge_criteria(
            judge_backend, sample.instruction, be.ImagesEvidence(list(image_paths)), image_criteria
        )
        scores.update({e["criterion_id"]: e["score"] for e in verdict.per_criterion})
    if script_criteria:
        verdict = be.judge_criteria(
            judge_backend, sample.instruction, be.ScriptEvidence(script), script_criteria
        )
        scores.update({e["criterion_id"]: e["score"] for e in verdict.per_criterion})
    return scores


def run_bench(
    samples: list[BenchSample],
    model_backend: be.Backend,
    judge_backend: be.Backend,
    renderer,
    one_shot: tuple[str, str] = be.DEFAULT_ONE_SHOT,
    *,
    run_dir=None,
    workers: int = 4,
    work_dir=None,
) -> tuple[list[SampleResult], BenchReport]:
    """Three stages per sample: generate, render, judge; then aggregate."""
    import tempfile

    if not samples:
        raise ValueError("samples must be non-empty")
    for sample in samples:
        sample.validate()
    work_root = Path(work_dir) if work_dir is not None else Path(tempfile.mkdtemp(prefix="cadforge-bench-"))

    def run_one(index: int, sample: BenchSample) -> SampleResult:
        zero = {c.id: 0 for c in sample.criteria}
        try:
            script = be.generate_script(model_backend, sample.instruction, one_shot)
        except be.BackendError as exc:
            return SampleResult(sample.id, None, "skipped", {}, False, undecided=f"generation: {exc}")
        out_dir = work_root / f"sample_{index:05d}"
        outcome = renderer.render(script, out_dir)
        if isinstance(outcome, render_mod.RenderSyntaxError):
            return SampleResult(sample.id, script, "syntax_error", zero, True)
        if isinstance(outcome, render_mod.RenderTimeout):
            # No image produced: observationally the same failure class.
            return SampleResult(sample.id, script, "timeout", zero, True)
        image_paths = outcome.image_paths
        stored = None
        if run_dir is not None:
            stored = run_dir.store_images(image_paths)
            image_paths = [run_dir.resolve(p) for p in stored]
        try:
            scores = _judge_sample(judge_backend, sample, script, image_paths)
        except (be.BackendError, be.UnparseableVerdict) as exc:
            return SampleResult(sample.id, script, "rendered", {}, False, undecided=f"judge: {exc}", images=stored)
        return SampleResult(sample.id, script, "rendered", scores, False, images=stored)

    if workers <= 1 or len(samples) <= 1:
        results = [run_one(i, s) for i, s in enumerate(samples)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_one, i, s) for i, s in enumerate(samples)]
            results = [f.result() for f in futures]
    report = aggregate(samples, {r.sample_id: r for r in results})
    return results, report


def write_report(report: BenchReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "report.md").write_text(report.to_markdown(), encoding="utf-8")
