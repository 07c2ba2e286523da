"""Single entry point: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 stage error, 2 usage error.  Configuration
layers as file (< $CADFORGE_CONFIG < --config) then flags; every
subcommand honors --seed for reproducible runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from cadforge import bench as bench_mod
from cadforge import complexity
from cadforge import config as config_mod
from cadforge import datagen
from cadforge import filtering
from cadforge import render as render_mod
from cadforge import selfimprove as si
from cadforge import store
from cadforge.scene import ParsedScene, ParseMalformed, ParseUnsupported, parse_script, scene_to_json

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cadforge", description=__doc__)
    parser.add_argument("--config", help="JSON config file (default: $CADFORGE_CONFIG)")
    parser.add_argument("--seed", type=int, help="run seed, overrides config rng_seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="interpret a restricted bpy script into scene IR JSON")
    p.add_argument("script", help="script file")

    p = sub.add_parser("metrics", help="complexity metrics for a script")
    p.add_argument("script", help="script file")
    p.add_argument("--resolution", type=int, default=complexity.DEFAULT_RESOLUTION,
                   help="voxel grid resolution per axis")
    p.add_argument("--samples", type=int, default=complexity.DEFAULT_SAMPLES_PER_UNIT,
                   help="Monte-Carlo samples per unit")

    p = sub.add_parser("render", help="render a script via the external renderer")
    p.add_argument("script", help="script file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--timeout-ms", type=int, help="render timeout override")

    p = sub.add_parser("datagen", help="expand seed instructions and build validated pairs")
    p.add_argument("--seeds", required=True, help="seed instructions JSONL")
    p.add_argument("--target", type=int, help="number of instructions to reach")
    p.add_argument("--avoid-threshold", type=int, help="name count before avoid-listing")
    p.add_argument("--workers", type=int, help="parallel pair builders")
    p.add_argument("--out", required=True, help="run directory to create")

    p = sub.add_parser("filter", help="apply the cascade filter to a pairs file")
    p.add_argument("--pairs", required=True, help="DatasetPair JSONL (image paths relative to its directory)")
    p.add_argument("--out", required=True, help="output JSONL with appended decisions")

    p = sub.add_parser("selfimprove", help="run the iterative self-improvement loop")
    p.add_argument("--run-dir", help="loop state directory")
    p.add_argument("--instructions", help="instruction JSONL override")
    p.add_argument("--collect-threshold", type=int, help="pairs collected per iteration")
    p.add_argument("--max-iterations", type=int, help="iteration safety bound")

    p = sub.add_parser("bench", help="run the benchmark and aggregate scores")
    p.add_argument("--samples", required=True, help="BenchSample JSONL")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--workers", type=int, help="parallel sample pipelines")

    p = sub.add_parser("review-serve", help="serve the human review API (and UI when built)")
    p.add_argument("--db", help="sqlite database path")
    p.add_argument("--port", type=int, help="listen port")
    p.add_argument("--pairs", help="DatasetPair JSONL to import as open tasks")
    p.add_argument("--images-root", help="directory image paths resolve against")
    p.add_argument("--static-dir", help="directory of built UI assets to serve")

    p = sub.add_parser("report", help="print the report for a finished bench run")
    p.add_argument("--run", required=True, help="bench run directory")
    return parser


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _load_scene(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StageError(f"cannot read script: {exc}") from exc
    outcome = parse_script(text)
    if isinstance(outcome, ParseMalformed):
        raise StageError(f"malformed script (line {outcome.line}): {outcome.reason}")
    if isinstance(outcome, ParseUnsupported):
        raise StageError(f"unsupported construct (line {outcome.line}): {outcome.reason}")
    return outcome


def _cmd_parse(args, config, seed) -> int:
    outcome = parse_script(Path(args.script).read_text(encoding="utf-8"))
    if isinstance(outcome, ParsedScene):
        payload = scene_to_json(outcome.scene)
        if outcome.warnings:
            payload["warnings"] = outcome.warnings
        _emit(payload)
        return 0
    kind = "malformed" if isinstance(outcome, ParseMalformed) else "unsupported"
    _emit({"error": kind, "reason": outcome.reason, "line": outcome.line})
    return 1


def _cmd_metrics(args, config, seed) -> int:
    outcome = _load_scene(args.script)
    try:
        report = complexity.analyze(
            outcome.scene, resolution=args.resolution, samples_per_unit=args.samples, seed=seed
        )
    except complexity.ZeroUnitsError as exc:
        raise StageError(str(exc)) from exc
    _emit(report.to_json())
    return 0


def _cmd_render(args, config, seed) -> int:
    spec = dict(config["render"])
    if args.timeout_ms:
        spec["timeout_ms"] = args.timeout_ms
    renderer = config_mod.build_renderer(spec)
    script = Path(args.script).read_text(encoding="utf-8")
    try:
        outcome = renderer.render(script, args.out)
    except render_mod.EnvError as exc:
        raise StageError(str(exc)) from exc
    if isinstance(outcome, render_mod.Rendered):
        _emit({"rendered": outcome.image_paths})
        return 0
    if isinstance(outcome, render_mod.RenderTimeout):
        _emit({"error": "timeout", "elapsed_ms": outcome.elapsed_ms})
    else:
        _emit({"error": "syntax_error", "exit_code": outcome.exit_code,
               "stderr_excerpt": outcome.stderr_excerpt})
    return 1


def _load_instructions(path: str) -> list[datagen.InstructionRecord]:
    records = store.load_records(path)
    return [datagen.InstructionRecord.from_json(r) for r in records]


def _cmd_datagen(args, config, seed) -> int:
    section = config["datagen"]
    target = args.target or section["target"]
    avoid_threshold = args.avoid_threshold or section["avoid_threshold"]
    workers = args.workers or section["workers"]
    seeds = _load_instructions(args.seeds)
    model = config_mod.build_backend(config["backends"]["model"])
    verifier = config_mod.build_backend(config["backends"]["judge"])
    renderer = config_mod.build_renderer(config["render"])

    with store.RunDir(args.out) as run:
        store.write_manifest(run.path, store.new_manifest("datagen", config, seed))
        instructions = datagen.expand_instructions(
            seeds, model, target=target, avoid_threshold=avoid_threshold, rng=random.Random(seed)
        )
        instructions_path = run.path / "instructions.jsonl"
        for record in instructions:
            store.append_record(instructions_path, record.to_json())
        pairs = datagen.build_pairs(
            instructions, model, renderer, verifier, run, workers=workers,
            work_dir=run.path / "work",
        )
        pairs_path = run.path / "pairs.jsonl"
        for pair in pairs:
            store.append_record(pairs_path, pair.to_json())
    kept = sum(1 for p in pairs if p.verdicts.fine)
    print(f"datagen: {len(instructions)} instructions, {len(pairs)} pairs, {kept} verified",
          file=sys.stderr)
    return 0


def _cmd_filter(args, config, seed) -> int:
    coarse = config_mod.build_backend(config["backends"]["coarse"])
    fine = config_mod.build_backend(config["backends"]["fine"])
    base = Path(args.pairs).parent
    records = store.load_records(args.pairs)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if out_path.exists():
        out_path.unlink()
    n_pass = n_undecided = 0
    for record in records:
        pair = datagen.DatasetPair.from_json(record)
        if pair.images is None:
            store.append_record(out_path, record | {"decision": None, "undecided": "no rendered images"})
            continue
        try:
            decision = filtering.cascade(pair, coarse, fine, resolve=lambda p: base / p)
        except filtering.FilterUndecided as exc:
            n_undecided += 1
            store.append_record(out_path, record | {"decision": None, "undecided": str(exc)})
            continue
        n_pass += 1 if decision.final else 0
        store.append_record(out_path, record | {"decision": decision.to_json()})
    print(f"filter: {len(records)} pairs, {n_pass} passed, {n_undecided} undecided", file=sys.stderr)
    return 0


def _cmd_selfimprove(args, config, seed) -> int:
    section = config["selfimprove"]
    instructions_file = args.instructions or section["instructions_file"]
    if not instructions_file:
        raise StageError("selfimprove needs instructions (--instructions or config)")
    instructions = _load_instructions(instructions_file)
    validation: list = instructions
    if section["validation_file"]:
        validation = store.load_records(section["validation_file"])
    cfg = si.LoopConfig(
        run_dir=Path(args.run_dir or section["run_dir"]),
        instructions=instructions,
        renderer=config_mod.build_renderer(config["render"]),
        filters=si.CascadeBackends(
            coarse=config_mod.build_backend(config["backends"]["coarse"]),
            fine=config_mod.build_backend(config["backends"]["fine"]),
        ),
        collect_threshold=args.collect_threshold or section["collect_threshold"],
        max_iterations=args.max_iterations or section["max_iterations"],
        seed=seed,
    )
    trainer = config_mod.build_trainer(section["trainer"])
    base = si.ModelHandle(
        id="base", backend=config_mod.build_backend(config["backends"]["model"]), lineage=[]
    )
    try:
        final = si.run_loop(base, trainer, validation, cfg)
    except (si.Starvation, RuntimeError) as exc:
        raise StageError(str(exc)) from exc
    _emit({"final_model": final.id, "lineage": final.lineage})
    return 0


def _cmd_bench(args, config, seed) -> int:
    workers = args.workers or config["bench"]["workers"]
    samples = [bench_mod.BenchSample.from_json(r) for r in store.load_records(args.samples)]
    model = config_mod.build_backend(config["backends"]["model"])
    judge = config_mod.build_backend(config["backends"]["judge"])
    renderer = config_mod.build_renderer(config["render"])
    with store.RunDir(args.out) as run:
        store.write_manifest(run.path, store.new_manifest("bench", config, seed))
        results, report = bench_mod.run_bench(
            samples, model, judge, renderer, run_dir=run, workers=workers,
            work_dir=run.path / "work",
        )
        results_path = run.path / "results.jsonl"
        for result in results:
            store.append_record(results_path, result.to_json())
        bench_mod.write_report(report, run.path)
    print(report.to_markdown(), end="")
    return 0


def _cmd_review_serve(args, config, seed) -> int:
    import uvicorn

    from cadforge.review import create_app

    section = config["review"]
    db_path = args.db or section["db"]
    port = args.port or section["port"]
    app = create_app(
        db_path=db_path,
        images_root=args.images_root or (str(Path(args.pairs).parent) if args.pairs else "."),
        static_dir=args.static_dir or section["static_dir"],
    )
    if args.pairs:
        from cadforge.review.db import ReviewDb

        ReviewDb(db_path).import_pairs(store.load_records(args.pairs))
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="info")
    return 0


def _cmd_report(args, config, seed) -> int:
    path = Path(args.run) / "report.md"
    if not path.is_file():
        raise StageError(f"no report.md under {args.run}")
    print(path.read_text(encoding="utf-8"), end="")
    return 0


_COMMANDS = {
    "parse": _cmd_parse,
    "metrics": _cmd_metrics,
    "render": _cmd_render,
    "datagen": _cmd_datagen,
    "filter": _cmd_filter,
    "selfimprove": _cmd_selfimprove,
    "bench": _cmd_bench,
    "review-serve": _cmd_review_serve,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        config = config_mod.load_config(args.config)
    except config_mod.ConfigError as exc:
        print(f"cadforge: {exc}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else config["rng_seed"]
    try:
        return _COMMANDS[args.command](args, config, seed)
    except StageError as exc:
        print(f"cadforge {args.command}: {exc}", file=sys.stderr)
        return 1
    except (store.LockHeld, store.SchemaError, store.ManifestExists, OSError) as exc:
        print(f"cadforge {args.command}: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
