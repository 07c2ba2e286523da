import json
import random

import pytest

from cadforge.backends import MockModelBackend, ScriptedBackend
from cadforge.datagen import CATEGORIES, ITYPES, InstructionRecord, classify_length
from cadforge.render import MockRenderer
from cadforge.selfimprove import (
    CascadeBackends,
    ExternalTrainer,
    LoopConfig,
    ModelHandle,
    ScriptedTrainer,
    Starvation,
    collect_training_data,
    run_loop,
)
from cadforge.store import RunDir, load_records


def make_instructions(n=6):
    out = []
    for i in range(n):
        text = f"Model object number {i} with {i + 1} parts and a {i + 2} cm base."
        out.append(
            InstructionRecord(
                id=f"ins-{i}", text=text, category=CATEGORIES[i % 16], itype=ITYPES[i % 8],
                length_class=classify_length(text), object_name=f"object {i}",
            )
        )
    return out


def always(value: bool) -> ScriptedBackend:
    return ScriptedBackend(lambda request, task: json.dumps({"match": value}))


def base_model(seed=0):
    return ModelHandle(id="base", backend=MockModelBackend(seed=seed), lineage=[])


def loop_config(tmp_path, threshold=3, max_iterations=8, seed=7):
    return LoopConfig(
        run_dir=tmp_path / "loop",
        instructions=make_instructions(),
        renderer=MockRenderer(),
        filters=CascadeBackends(coarse=always(True), fine=always(True)),
        collect_threshold=threshold,
        max_iterations=max_iterations,
        seed=seed,
    )


VALIDATION = [object()]  # opaque to the scripted trainer


class TestCollect:
    def test_collects_exactly_threshold(self, tmp_path):
        with RunDir(tmp_path / "run") as run:
            pairs = collect_training_data(
                base_model(), make_instructions(), MockRenderer(),
                CascadeBackends(coarse=always(True), fine=always(True)),
                threshold=5, iteration=2, run=run, rng=random.Random(1),
                decisions_path=tmp_path / "run" / "decisions.jsonl",
                work_dir=tmp_path / "work",
            )
        assert len(pairs) == 5
        assert all(p.provenance == "self_improve_iter:2" for p in pairs)
        assert all(p.verdicts.coarse and p.verdicts.fine for p in pairs)
        decisions = load_records(tmp_path / "run" / "decisions.jsonl")
        assert len(decisions) >= 5

    def test_half_pass_rate_still_fills(self, tmp_path):
        flips = iter([True, False] * 200)

        def coarse_responder(request, task):
            return json.dumps({"match": next(flips)})

        with RunDir(tmp_path / "run") as run:
            pairs = collect_training_data(
                base_model(), make_instructions(), MockRenderer(),
                CascadeBackends(coarse=ScriptedBackend(coarse_responder), fine=always(True)),
                threshold=4, iteration=1, run=run, rng=random.Random(2),
                work_dir=tmp_path / "work",
            )
        assert len(pairs) == 4

    def test_zero_pass_rate_starves(self, tmp_path):
        with RunDir(tmp_path / "run") as run:
            with pytest.raises(Starvation):
                collect_training_data(
                    base_model(), make_instructions(), MockRenderer(),
                    CascadeBackends(coarse=always(False), fine=always(True)),
                    threshold=1, iteration=1, run=run, rng=random.Random(3),
                    work_dir=tmp_path / "work",
                )

    def test_threshold_precondition(self, tmp_path):
        with RunDir(tmp_path / "run") as run:
            with pytest.raises(ValueError):
                collect_training_data(
                    base_model(), make_instructions(), MockRenderer(),
                    CascadeBackends(coarse=always(True), fine=always(True)),
                    threshold=0, iteration=1, run=run, rng=random.Random(0),
                )


class TestRunLoop:
    def test_regress_on_third_iteration_returns_m2(self, tmp_path):
        trainer = ScriptedTrainer([0.9, 0.7, 0.75])
        final = run_loop(base_model(), trainer, VALIDATION, loop_config(tmp_path))
        assert final.id == "base-iter2"
        assert trainer.train_calls == 3

    def test_monotone_losses_run_to_max_iterations(self, tmp_path):
        trainer = ScriptedTrainer([0.9, 0.8, 0.7, 0.6])
        final = run_loop(base_model(), trainer, VALIDATION, loop_config(tmp_path, max_iterations=4))
        assert final.id == "base-iter4"
        assert trainer.train_calls == 4

    def test_immediate_regress_returns_m1(self, tmp_path):
        trainer = ScriptedTrainer([0.5, 0.6])
        final = run_loop(base_model(), trainer, VALIDATION, loop_config(tmp_path))
        assert final.id == "base-iter1"
        assert trainer.train_calls == 2

    def test_first_iteration_always_proceeds(self, tmp_path):
        # a huge first loss must not stop the loop before iteration 1 trains
        trainer = ScriptedTrainer([99.0, 100.0])
        final = run_loop(base_model(), trainer, VALIDATION, loop_config(tmp_path))
        assert final.id == "base-iter1"

    def test_state_persisted_per_iteration(self, tmp_path):
        cfg = loop_config(tmp_path)
        run_loop(base_model(), ScriptedTrainer([0.9, 0.7, 0.75]), VALIDATION, cfg)
        for i in (1, 2, 3):
            iter_dir = cfg.run_dir / f"iter_{i}"
            assert (iter_dir / "state.json").is_file()
            assert (iter_dir / "pairs.jsonl").is_file()
            assert (iter_dir / "decisions.jsonl").is_file()
        state = json.loads((cfg.run_dir / "iter_3" / "state.json").read_text())
        assert state["stopped"] is True
        assert state["returned_model_id"] == "base-iter2"

    def test_crash_resume_reproduces_final_model(self, tmp_path):
        losses = [0.9, 0.7, 0.75]

        class CrashingTrainer(ScriptedTrainer):
            def train(self, model, pairs):
                if self.train_calls == 1:
                    raise KeyboardInterrupt("killed between iterations")
                return super().train(model, pairs)

        cfg = loop_config(tmp_path)
        with pytest.raises(KeyboardInterrupt):
            run_loop(base_model(), CrashingTrainer(losses), VALIDATION, cfg)
        # only iteration 1 completed
        assert (cfg.run_dir / "iter_1" / "state.json").is_file()
        assert not (cfg.run_dir / "iter_2" / "state.json").exists()

        resumed = run_loop(base_model(), ScriptedTrainer(losses), VALIDATION, cfg)

        fresh_cfg = loop_config(tmp_path / "fresh")
        fresh = run_loop(base_model(), ScriptedTrainer(losses), VALIDATION, fresh_cfg)
        assert resumed.id == fresh.id == "base-iter2"

        # resuming a finished run returns the same model without retraining
        trainer = ScriptedTrainer(losses)
        again = run_loop(base_model(), trainer, VALIDATION, cfg)
        assert again.id == "base-iter2"
        assert trainer.train_calls == 0

    def test_validation_set_required(self, tmp_path):
        with pytest.raises(ValueError):
            run_loop(base_model(), ScriptedTrainer([0.5]), [], loop_config(tmp_path))


class TestExternalTrainer:
    def test_shell_contract(self, tmp_path):
        script = tmp_path / "trainer.py"
        script.write_text(
            "import sys\n"
            "pairs = open(sys.argv[1]).read().count('\\n')\n"
            "print('ext-model-%d' % pairs)\n"
            "print(0.25)\n"
        )
        import sys

        trainer = ExternalTrainer([sys.executable, str(script)],
                                  backend_factory=lambda mid: MockModelBackend(seed=1))
        pairs_path = tmp_path / "pairs.jsonl"
        pairs_path.write_text('{"a":1}\n{"b":2}\n')
        trainer.set_pairs_path(pairs_path)
        model = trainer.train(base_model(), [])
        assert model.id == "ext-model-2"
        assert trainer.evaluate(model, VALIDATION) == 0.25
