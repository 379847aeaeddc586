"""``stackgrasp`` command line: synth, train, eval, infer, plan, grad-check, render.

Exit codes: 0 success, 1 usage, 2 data (unreadable or invalid input, bad
checkpoint, cyclic relations), 3 numeric-check failure.
"""

from __future__ import annotations

import os
import sys

# thread caps must be in place before numpy loads its BLAS
_threads = os.environ.get("STACKGRASP_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
from pathlib import Path  # noqa: E402
from typing import Optional, Sequence  # noqa: E402

from .data import ParseError, ValidationError, eval_transform, load_scene, save_scene, synth_series  # noqa: E402
from .data.images import write_png  # noqa: E402
from .metrics import ScenePrediction, evaluate  # noqa: E402
from .net import (  # noqa: E402
    ConfigError,
    DataError,
    ModelConfig,
    dump_config,
    init_params,
    load_config,
    predict_scene,
    prediction_from_pairs,
    train_stage1,
    train_stage2,
)
from .net.infer import relation_graph  # noqa: E402
from .planner import (  # noqa: E402
    CycleError,
    RelationGraph,
    break_cycles_weakest_edge,
    build_graph,
    full_clearing_order,
    grasp_order_for_target,
)
from .render import render_svg  # noqa: E402
from .scene import Relation, SceneAnnotation  # noqa: E402
from .tensor import CheckpointError, ParamStore  # noqa: E402

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("stackgrasp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _echo_config(title: str, items: dict) -> None:
    """Resolved settings go to stderr so stdout stays machine-readable."""
    print(f"# {title}", file=sys.stderr)
    for k, v in items.items():
        print(f"#   {k} = {v}", file=sys.stderr)


def _echo_model_config(cfg: ModelConfig) -> None:
    print("# model config", file=sys.stderr)
    for line in dump_config(cfg).splitlines():
        print(f"#   {line}", file=sys.stderr)


def _resolve_config(path: Optional[str], ckpt: Optional[str] = None) -> ModelConfig:
    """Explicit --config, else the config saved next to the checkpoint, else defaults."""
    if path:
        return load_config(path)
    if ckpt and Path(ckpt + ".cfg").exists():
        return load_config(ckpt + ".cfg")
    return ModelConfig()


def _load_params(cfg: ModelConfig, ckpt: str) -> ParamStore:
    ps = init_params(cfg)
    try:
        ps.load(ckpt)
    except FileNotFoundError:
        raise CheckpointError(f"{ckpt}: no such checkpoint") from None
    return ps


def _load_dir(data: str, with_pixels: bool = True) -> list[SceneAnnotation]:
    root = Path(data)
    if not root.is_dir():
        raise DataError(f"{data}: not a directory")
    return [load_scene(p, with_pixels=with_pixels) for p in sorted(root.glob("*.json"))]


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    _echo_config(
        "synth",
        {"out": args.out, "count": args.count, "seed": args.seed, "min_objects": args.min_objects, "max_objects": args.max_objects},
    )
    if not 2 <= args.min_objects <= args.max_objects <= 5:
        raise UsageError("object counts must satisfy 2 <= min-objects <= max-objects <= 5")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for k, (seed, scene) in enumerate(
        synth_series(args.count, args.seed, min_objects=args.min_objects, max_objects=args.max_objects)
    ):
        stem = f"scene_{k:04d}"
        scene = scene.replace(image_ref=f"{stem}.png")
        write_png(out / f"{stem}.png", scene.pixels)
        save_scene(scene, out / f"{stem}.json")
        manifest.append(f"{stem}.json {stem}.png {seed}\n")
    (out / "manifest.txt").write_text("".join(manifest), encoding="utf-8")
    print(f"wrote {args.count} scenes to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    if args.stage == 2 and not args.init:
        raise UsageError("stage 2 needs --init with a stage-1 checkpoint")
    cfg = _resolve_config(args.config)
    overrides = {k: v for k, v in (("iterations", args.iterations), ("seed", args.seed)) if v is not None}
    cfg = cfg.replace(**overrides)
    _echo_config("train", {"stage": args.stage, "data": args.data, "out": args.out, "init": args.init})
    _echo_model_config(cfg)
    scenes = _load_dir(args.data)

    def progress(it, vals):
        if args.verbose and (it % 50 == 0 or it == cfg.iterations - 1):
            log.info("iter %d total %.5f", it, vals["total"])

    if args.stage == 1:
        ps, tlog = train_stage1(scenes, cfg, progress=progress)
    else:
        ps, tlog = train_stage2(scenes, cfg, _load_params(cfg, args.init), progress=progress)
    ps.save(args.out)
    Path(args.out + ".cfg").write_text(dump_config(cfg), encoding="utf-8")
    log_path = args.log or str(Path(args.out).with_suffix(".csv"))
    tlog.save(log_path)
    first, last = tlog.rows[0]["total"], tlog.rows[-1]["total"]
    print(f"stage {args.stage}: total loss {first:.5f} -> {last:.5f}; checkpoint {args.out}; log {log_path}")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _predict(scene: SceneAnnotation, ps: ParamStore, cfg: ModelConfig) -> tuple[ScenePrediction, SceneAnnotation]:
    """Prediction plus the ground truth in model coordinates (resize only)."""
    gt, img = eval_transform(scene, scene.pixels, tuple(cfg.input_hw))
    return prediction_from_pairs(*predict_scene(img, ps, cfg)), gt


def cmd_eval(args) -> int:
    if not args.oracle and not args.ckpt:
        raise UsageError("eval needs --ckpt, or --oracle to score ground truth against itself")
    cfg = _resolve_config(args.config, args.ckpt)
    _echo_config("eval", {"data": args.data, "ckpt": args.ckpt, "oracle": args.oracle, "report": args.report})
    _echo_model_config(cfg)
    scenes = _load_dir(args.data, with_pixels=not args.oracle)
    if not scenes:
        raise DataError(f"{args.data}: no scene files to evaluate")
    if args.oracle:
        pairs = [(ScenePrediction.from_ground_truth(s), s) for s in scenes]
    else:
        ps = _load_params(cfg, args.ckpt)
        pairs = [_predict(s, ps, cfg) for s in scenes]
    report = evaluate(pairs)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.table())
    return EXIT_OK


# ---------------------------------------------------------------- infer / plan


def _graph_or_break(graph: RelationGraph, mode: Optional[str]) -> tuple[RelationGraph, list[int]]:
    if mode == "weakest-edge":
        graph, removed = break_cycles_weakest_edge(graph)
        for a, b in removed:
            print(f"# removed edge {a} -> {b} to break a cycle", file=sys.stderr)
    return graph, full_clearing_order(graph)


def _predicted_scene(scene: SceneAnnotation, objs, grasps, pairs, image_ref: str) -> SceneAnnotation:
    pred = prediction_from_pairs(objs, grasps, pairs)
    rels = [Relation(a, b, k) for (a, b), k in sorted(pred.relations.items())]
    return SceneAnnotation(
        width=scene.width, height=scene.height, objects=list(objs), grasps=list(grasps), relations=rels, image_ref=image_ref
    )


def cmd_infer(args) -> int:
    if bool(args.image) == bool(args.scene):
        raise UsageError("infer needs exactly one of --image or --scene")
    cfg = _resolve_config(args.config, args.ckpt)
    _echo_config("infer", {"image": args.image, "scene": args.scene, "ckpt": args.ckpt, "out": args.out})
    _echo_model_config(cfg)
    ps = _load_params(cfg, args.ckpt)
    if args.scene:
        src = load_scene(args.scene, with_pixels=True)
        image_ref = src.image_ref
    else:
        from .data.images import read_png

        px = read_png(args.image)
        src = SceneAnnotation(px.shape[1], px.shape[0], [], [], [], image_ref=str(args.image), pixels=px)
        image_ref = str(args.image)
    base, img = eval_transform(src, src.pixels, tuple(cfg.input_hw))
    objs, grasps, pairs = predict_scene(img, ps, cfg)
    pred = _predicted_scene(base, objs, grasps, pairs, image_ref)
    graph, order = _graph_or_break(relation_graph(objs, pairs), args.break_cycles)
    if args.out:
        save_scene(pred, args.out)
    tree = graph.to_json(order)
    if args.tree:
        Path(args.tree).write_text(tree + "\n", encoding="utf-8")
    print(tree)
    return EXIT_OK


def cmd_plan(args) -> int:
    _echo_config("plan", {"scene": args.scene, "target": args.target, "break_cycles": args.break_cycles, "ckpt": args.ckpt})
    scene = load_scene(args.scene, with_pixels=bool(args.ckpt))
    if args.ckpt:
        cfg = _resolve_config(args.config, args.ckpt)
        _echo_model_config(cfg)
        base, img = eval_transform(scene, scene.pixels, tuple(cfg.input_hw))
        _, _, pairs = predict_scene(img, _load_params(cfg, args.ckpt), cfg, objects=base.objects)
        graph = relation_graph(scene.objects, pairs)
    else:
        graph = build_graph(scene.objects, scene.relations)
    graph, order = _graph_or_break(graph, args.break_cycles)
    print(graph.to_json(order))
    if args.target is not None:
        if args.target not in graph.nodes:
            raise DataError(f"target {args.target} is not an object of {args.scene}")
        print(json.dumps({"target": args.target, "order": grasp_order_for_target(graph, args.target)}))
    return EXIT_OK


# ---------------------------------------------------------------- render


def cmd_render(args) -> int:
    _echo_config("render", {"scene": args.scene, "pred": args.pred, "out": args.out})
    scene = load_scene(args.scene, validate=False)
    pred = load_scene(args.pred, validate=False) if args.pred else None
    Path(args.out).write_text(render_svg(scene, pred), encoding="utf-8")
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- grad-check


def cmd_grad_check(args) -> int:
    from contextlib import nullcontext

    from .net.checks import end_to_end_check
    from .tensor.suite import corrupt_backward, run_suite

    cfg = _resolve_config(args.config)
    _echo_config("grad-check", {"seed": args.seed, "seeds": args.seeds, "corrupt": args.corrupt})
    _echo_model_config(cfg)
    try:
        ctx = corrupt_backward(args.corrupt) if args.corrupt else nullcontext()
    except KeyError as e:
        raise UsageError(str(e)) from None
    with ctx:
        reports = run_suite(seeds=args.seeds, first_seed=args.seed)
        if not args.ops_only:
            reports += end_to_end_check(base=cfg, seed=args.seed)
    for r in reports:
        print(r.line())
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stackgrasp", description="Grasp detection and manipulation-order planning for stacked objects.")
    p.add_argument("--verbose", action="store_true", help="log progress with timestamps to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic stacked-block scenes")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--min-objects", type=int, default=2)
    s.add_argument("--max-objects", type=int, default=5)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train stage 1 (detector) or stage 2 (grasp + relation heads)")
    s.add_argument("--stage", type=int, choices=(1, 2), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--init", help="stage-1 checkpoint (required for stage 2)")
    s.add_argument("--log", help="CSV loss log (default: checkpoint path with .csv)")
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score predictions on a scene directory")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt")
    s.add_argument("--config")
    s.add_argument("--report")
    s.add_argument("--oracle", action="store_true", help="use ground truth as the predictions")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="run the full pipeline on one image")
    s.add_argument("--image")
    s.add_argument("--scene")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--config")
    s.add_argument("--out", help="predicted scene JSON")
    s.add_argument("--tree", help="relation tree JSON")
    s.add_argument("--break-cycles", choices=("weakest-edge",))
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("plan", help="relation tree and grasp order for a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--target", type=int)
    s.add_argument("--break-cycles", choices=("weakest-edge",))
    s.add_argument("--ckpt", help="predict relations with this model instead of using the annotation")
    s.add_argument("--config")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("grad-check", help="finite-difference verification of every op and the full loss")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--ops-only", action="store_true", help="skip the end-to-end model check")
    s.add_argument("--corrupt", metavar="OP", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("render", help="draw a scene (and optionally predictions) as SVG")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--pred")
    s.set_defaults(func=cmd_render)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required (synth, train, eval, infer, plan, grad-check, render)")
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CycleError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ParseError, ValidationError, DataError, CheckpointError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        where = f" ({e.filename})" if getattr(e, "filename", None) else ""
        print(f"error: {e.strerror or e}{where}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
