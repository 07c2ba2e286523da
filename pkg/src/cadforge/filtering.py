"""Two-stage quality gate over instruction/render pairs.

The cheap coarse filter always runs; the expensive fine filter runs only
on a coarse pass, and the pair survives only when both agree.  Backend
failures leave the pair undecided: it is excluded from training data and
counted separately rather than silently passed or dropped.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from cadforge import backends as be
from cadforge import prompts
from cadforge.datagen import DatasetPair


class FilterUndecided(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} filter failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class FilterDecision:
    coarse: bool
    fine: bool | None
    final: bool
    coarse_latency_ms: float
    fine_latency_ms: float | None

    def validate(self) -> None:
        if (self.fine is not None) != self.coarse:
            raise ValueError("fine verdict is present iff coarse passed")
        if self.final != (self.coarse and self.fine is True):
            raise ValueError("final must equal coarse AND fine")

    def to_json(self, with_timings: bool = False) -> dict:
        """Verdict record; timings are wall-clock noise and stay out of
        persisted records so reruns stay byte-identical."""
        record = {"coarse": self.coarse, "fine": self.fine, "final": self.final}
        if with_timings:
            record["coarse_latency_ms"] = self.coarse_latency_ms
            record["fine_latency_ms"] = self.fine_latency_ms
        return record


@dataclass
class StagePrecision:
    tp: int
    fp: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp)

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "precision": self.precision}


@dataclass
class PrecisionReport:
    coarse: StagePrecision | None
    fine: StagePrecision | None
    cascade: StagePrecision | None

    def to_json(self) -> dict:
        return {
            stage: (value.to_json() if value is not None else None)
            for stage, value in (("coarse", self.coarse), ("fine", self.fine), ("cascade", self.cascade))
        }


def _stage_verdict(backend: be.Backend, instruction: str, image_paths, task: str) -> tuple[bool, float]:
    message = be._attach_images(prompts.FILTER_VERDICT.render(instruction=instruction), image_paths)
    reprompt = be._attach_images(
        prompts.VERIFY_PAIR_REPROMPT.render(instruction=instruction), image_paths
    )
    started = time.monotonic()
    verdict = be._binary_verdict(backend, message, reprompt, task=task)
    return verdict, (time.monotonic() - started) * 1000.0


def cascade(
    pair: DatasetPair,
    coarse_backend: be.Backend,
    fine_backend: be.Backend,
    *,
    resolve=None,
) -> FilterDecision:
    """Evaluate one pair; the fine backend is consulted only on coarse pass.

    ``resolve`` maps the pair's stored image paths to readable files
    (e.g. RunDir.resolve); identity by default.
    """
    if pair.images is None or len(pair.images) != 4:
        raise ValueError("cascade filter needs a pair with 4 rendered images")
    paths = [resolve(p) if resolve else p for p in pair.images]
    try:
        coarse, coarse_ms = _stage_verdict(coarse_backend, pair.instruction.text, paths, "filter_coarse")
    except (be.BackendError, be.UnparseableVerdict) as exc:
        raise FilterUndecided("coarse", exc) from exc
    if not coarse:
        decision = FilterDecision(coarse=False, fine=None, final=False,
                                  coarse_latency_ms=coarse_ms, fine_latency_ms=None)
        decision.validate()
        return decision
    try:
        fine, fine_ms = _stage_verdict(fine_backend, pair.instruction.text, paths, "filter_fine")
    except (be.BackendError, be.UnparseableVerdict) as exc:
        raise FilterUndecided("fine", exc) from exc
    decision = FilterDecision(coarse=True, fine=fine, final=fine,
                              coarse_latency_ms=coarse_ms, fine_latency_ms=fine_ms)
    decision.validate()
    return decision


def precision_report(decisions: list[tuple[FilterDecision, bool]]) -> PrecisionReport:
    """Per-stage precision over the pairs where that stage emitted a positive.

    A stage with zero positives has undefined precision and is reported
    as absent.
    """
    if not decisions:
        raise ValueError("precision report needs at least one decision")

    def stage(selector) -> StagePrecision | None:
        tp = fp = 0
        for decision, gold in decisions:
            if selector(decision):
                if gold:
                    tp += 1
                else:
                    fp += 1
        if tp + fp == 0:
            return None
        return StagePrecision(tp=tp, fp=fp)

    return PrecisionReport(
        coarse=stage(lambda d: d.coarse),
        fine=stage(lambda d: d.fine is True),
        cascade=stage(lambda d: d.final),
    )
