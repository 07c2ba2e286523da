"""Iterative self-improvement orchestration.

Each iteration collects cascade-approved pairs generated by the current
model, trains a successor, and evaluates it on the validation set.  The
loop stops the first time validation loss regresses, returning the
previous model; the first iteration always proceeds (the prior loss is
taken as +inf).  Every iteration's state is persisted before the next
begins, so a killed loop resumes to the identical final model under the
same seeds and mocks.
"""

from __future__ import annotations

import json
import logging
import math
import random
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from cadforge import backends as be
from cadforge import datagen
from cadforge import store
from cadforge.filtering import FilterUndecided, cascade

log = logging.getLogger(__name__)

STARVATION_WINDOW = 500


class Starvation(RuntimeError):
    """The cascade filter accepted nothing across the sliding window."""


@dataclass
class ModelHandle:
    id: str
    backend: be.Backend
    lineage: list[str] = field(default_factory=list)


class TrainerInterface(Protocol):
    def train(self, model: ModelHandle, pairs: list[datagen.DatasetPair]) -> ModelHandle: ...

    def evaluate(self, model: ModelHandle, validation_set: list[datagen.DatasetPair]) -> float: ...

    def load(self, model_id: str, lineage: list[str]) -> ModelHandle: ...


def _next_handle(model: ModelHandle, backend_factory) -> ModelHandle:
    root = model.lineage[0] if model.lineage else model.id
    step = len(model.lineage) + 1
    new_id = f"{root}-iter{step}"
    return ModelHandle(id=new_id, backend=backend_factory(new_id), lineage=model.lineage + [model.id])


class ScriptedTrainer:
    """Mock trainer: losses are a pure function of the iteration index."""

    def __init__(self, losses: list[float], backend_factory=None):
        self.losses = list(losses)
        self.backend_factory = backend_factory or (lambda model_id: be.MockModelBackend(seed=_stable_seed(model_id)))
        self.train_calls = 0

    def train(self, model: ModelHandle, pairs) -> ModelHandle:
        self.train_calls += 1
        return _next_handle(model, self.backend_factory)

    def evaluate(self, model: ModelHandle, validation_set) -> float:
        step = len(model.lineage)  # trained models carry their iteration in the lineage length
        if step < 1 or step > len(self.losses):
            raise ValueError(f"no scripted loss for iteration {step}")
        return self.losses[step - 1]

    def load(self, model_id: str, lineage: list[str]) -> ModelHandle:
        return ModelHandle(id=model_id, backend=self.backend_factory(model_id), lineage=list(lineage))


def _stable_seed(text: str) -> int:
    import hashlib

    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")


class ExternalTrainer:
    """Shell-command trainer contract.

    The command is invoked as ``<command...> <pairs.jsonl>`` and must
    print two lines to stdout: the new model id, then the validation
    loss.  Loss semantics belong to the external tool.
    """

    def __init__(self, command: list[str], backend_factory):
        self.command = list(command)
        self.backend_factory = backend_factory
        self.train_calls = 0
        self._losses: dict[str, float] = {}
        self._pairs_path: Path | None = None

    def set_pairs_path(self, path: str | Path) -> None:
        self._pairs_path = Path(path)

    def train(self, model: ModelHandle, pairs) -> ModelHandle:
        if self._pairs_path is None:
            raise RuntimeError("pairs path not set before training")
        self.train_calls += 1
        result = subprocess.run(
            self.command + [str(self._pairs_path)], capture_output=True, text=True, check=True
        )
        lines = [line.strip() for line in result.stdout.splitlines() if line.strip()]
        if len(lines) < 2:
            raise RuntimeError(f"trainer output must carry a model id and a loss, got {result.stdout!r}")
        model_id, loss = lines[0], float(lines[1])
        self._losses[model_id] = loss
        return ModelHandle(id=model_id, backend=self.backend_factory(model_id), lineage=model.lineage + [model.id])

    def evaluate(self, model: ModelHandle, validation_set) -> float:
        if model.id not in self._losses:
            raise RuntimeError(f"no recorded loss for model {model.id!r}")
        return self._losses[model.id]

    def load(self, model_id: str, lineage: list[str]) -> ModelHandle:
        return ModelHandle(id=model_id, backend=self.backend_factory(model_id), lineage=list(lineage))


@dataclass
class CascadeBackends:
    coarse: be.Backend
    fine: be.Backend


@dataclass
class LoopConfig:
    run_dir: Path
    instructions: list[datagen.InstructionRecord]
    renderer: object
    filters: CascadeBackends
    verifier: be.Backend | None = None
    collect_threshold: int = 20
    max_iterations: int = 8
    seed: int = 0
    one_shot: tuple[str, str] = be.DEFAULT_ONE_SHOT


def collect_training_data(
    model: ModelHandle,
    instructions: list[datagen.InstructionRecord],
    renderer,
    filters: CascadeBackends,
    threshold: int,
    *,
    iteration: int,
    run: store.RunDir,
    rng: random.Random,
    one_shot: tuple[str, str] = be.DEFAULT_ONE_SHOT,
    decisions_path: Path | None = None,
    work_dir=None,
) -> list[datagen.DatasetPair]:
    """Collect exactly ``threshold`` cascade-passed pairs from the model.

    The instruction stream is resampled (with replacement) when shorter
    than the attempt budget.  Raises Starvation when a 500-attempt
    sliding window accepts nothing.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    if not instructions:
        raise ValueError("instruction stream must be non-empty")
    provenance = datagen.self_improve_provenance(iteration)
    collected: list[datagen.DatasetPair] = []
    window: list[bool] = []
    attempts = 0
    while len(collected) < threshold:
        instruction = instructions[rng.randrange(len(instructions))]
        attempts += 1
        pair = datagen.build_pairs(
            [instruction], model.backend, renderer, None, run,
            one_shot=one_shot, workers=1, provenance=provenance,
            work_dir=Path(work_dir) / f"attempt_{attempts:06d}" if work_dir else None,
        )[0]
        accepted = False
        record = pair.to_json()
        if pair.images is not None:
            try:
                decision = cascade(pair, filters.coarse, filters.fine, resolve=run.resolve)
                pair.verdicts.coarse = decision.coarse
                pair.verdicts.fine = decision.fine if decision.fine is not None else pair.verdicts.fine
                accepted = decision.final
                record = pair.to_json() | {"decision": decision.to_json()}
            except FilterUndecided as exc:
                record = pair.to_json() | {"decision": None, "undecided": str(exc)}
        if decisions_path is not None:
            store.append_record(decisions_path, record)
        if accepted:
            collected.append(pair)
        window.append(accepted)
        if len(window) > STARVATION_WINDOW:
            window.pop(0)
        if len(window) >= STARVATION_WINDOW and not any(window):
            raise Starvation(f"no pair accepted in the last {STARVATION_WINDOW} attempts")
    return collected


def _state_path(run_dir: Path, iteration: int) -> Path:
    return run_dir / f"iter_{iteration}" / "state.json"


def _load_completed_state(run_dir: Path) -> dict | None:
    latest = None
    for state_file in sorted(run_dir.glob("iter_*/state.json")):
        data = json.loads(state_file.read_text(encoding="utf-8"))
        if data.get("completed") and (latest is None or data["iteration"] > latest["iteration"]):
            latest = data
    return latest


def run_loop(base: ModelHandle, trainer: TrainerInterface, validation_set, cfg: LoopConfig) -> ModelHandle:
    """Iterate collect -> train -> evaluate until loss regresses.

    Returns the model at the end of the longest non-increasing loss
    prefix (the previous model on first regress, the last model when
    max_iterations completes without one).
    """
    if not validation_set:
        raise ValueError("validation_set must be non-empty")
    if cfg.max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    state = _load_completed_state(run_dir)
    if state is None:
        current = base
        prev_loss = math.inf  # first iteration always proceeds
        loss_history: list[float] = []
        start = 1
    else:
        log.info("resuming from completed iteration %d", state["iteration"])
        if state.get("stopped"):
            return trainer.load(state["returned_model_id"], state["returned_lineage"])
        loss_history = list(state["loss_history"])
        start = state["iteration"] + 1
        current = trainer.load(state["model_id"], state["lineage"])
        prev_loss = loss_history[-1]

    for iteration in range(start, cfg.max_iterations + 1):
        iter_dir = run_dir / f"iter_{iteration}"
        if iter_dir.exists() and not (iter_dir / "state.json").exists():
            shutil.rmtree(iter_dir)  # leftovers from a run killed mid-iteration
        iter_dir.mkdir(parents=True, exist_ok=True)
        with store.RunDir(iter_dir) as run:
            pairs = collect_training_data(
                current,
                cfg.instructions,
                cfg.renderer,
                cfg.filters,
                cfg.collect_threshold,
                iteration=iteration,
                run=run,
                rng=random.Random(f"{cfg.seed}:{iteration}"),
                one_shot=cfg.one_shot,
                decisions_path=iter_dir / "decisions.jsonl",
                work_dir=iter_dir / "work",
            )
            pairs_path = iter_dir / "pairs.jsonl"
            for pair in pairs:
                store.append_record(pairs_path, pair.to_json())
        if isinstance(trainer, ExternalTrainer):
            trainer.set_pairs_path(pairs_path)
        trained = trainer.train(current, pairs)
        loss = trainer.evaluate(trained, validation_set)
        loss_history.append(loss)
        regressed = loss > prev_loss
        returned = current if regressed else trained
        _state_path(run_dir, iteration).write_text(
            json.dumps(
                {
                    "iteration": iteration,
                    "completed": True,
                    "model_id": trained.id,
                    "lineage": trained.lineage,
                    "previous_model_id": current.id,
                    "previous_lineage": current.lineage,
                    "loss_history": loss_history,
                    "stopped": regressed,
                    "returned_model_id": returned.id,
                    "returned_lineage": returned.lineage,
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
        if regressed:
            log.info("loss regressed (%.4f > %.4f); returning %s", loss, prev_loss, current.id)
            return current
        current = trained
        prev_loss = loss
    return current
