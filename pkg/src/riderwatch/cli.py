"""Command line entry point: ``riderwatch <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import EngineConfig, load_config
from .evaluation import evaluate_modes
from .pipeline import ViolationEngine, dumps_overlay, emit_overlay
from .records import RecordError, read_records, split_videos, write_records
from .regressors import (AmodalRegressor, EnclosingTrapeziumModel, TrapeziumRegressor,
                         amodal_fill, augment_trapezium_trainset, build_trapezium_trainset,
                         train_amodal)
from .synth import GenerationError, SceneConfig, generate_corpus

log = logging.getLogger("riderwatch")


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _config(args) -> EngineConfig:
    overrides = {"seed": args.seed} if args.seed is not None else {}
    try:
        return load_config(args.config, **overrides)
    except OSError as e:
        raise InputError(f"{args.config}: {e.strerror or e}") from None
    except (TypeError, ValueError) as e:
        raise InputError(f"{args.config}: {e}") from None


def _read(path, errors: list | None = None):
    try:
        return read_records(path, errors)
    except OSError as e:
        raise InputError(f"{path}: {e.strerror or e}") from None
    except RecordError as e:
        raise InputError(f"{path}: {e}") from None


def _load_model(cls, path):
    try:
        return cls.load(path)
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"{path}: cannot load model: {e}") from None


def _dump_json(path, doc) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_synth(args) -> int:
    cfg = SceneConfig(
        n_instances=args.n_instances, n_frames=args.n_frames, seed=args.seed or 0,
        crowding=args.crowding, occlusion_prob=args.occlusion, jitter=args.jitter,
        false_positive_rate=args.fp_rate, false_negative_rate=args.fn_rate,
        no_helmet_prob=args.no_helmet,
    )
    streams = generate_corpus(cfg, args.n_scenes)
    write_records(args.ground_truth, streams.ground_truth)
    if args.detections:
        write_records(args.detections, streams.detections)
    return 0


def _train_params(cfg: EngineConfig, args) -> dict:
    params = cfg.regressor_params()
    if args.epochs is not None:
        params["epochs"] = args.epochs
    if args.learning_rate is not None:
        params["learning_rate"] = args.learning_rate
    return params


def cmd_train_trapezium(args) -> int:
    cfg = _config(args)
    X, Y, skipped = build_trapezium_trainset(_read(args.data))
    if len(X) == 0:
        raise InputError(f"{args.data}: no labelled instances")
    copies = args.augment_copies if args.augment_copies is not None else cfg.train_augment_copies
    if copies:
        X, Y = augment_trapezium_trainset(X, Y, copies, seed=cfg.seed)
    model = TrapeziumRegressor(**_train_params(cfg, args)).fit(X, Y)
    model.save(args.out)
    log.info("trained on %d rows (%d labels skipped), final loss %.6g", len(X), skipped, model.loss_curve_[-1])
    return 0


def cmd_train_amodal(args) -> int:
    cfg = _config(args)
    try:
        model = train_amodal(_read(args.data), **_train_params(cfg, args))
    except ValueError as e:
        raise InputError(f"{args.data}: {e}") from None
    model.save(args.out)
    return 0


def cmd_fill_amodal(args) -> int:
    cfg = _config(args)
    model = _load_model(AmodalRegressor, args.amodal_model)
    errors: list = []
    recs = _read(args.detections, errors)
    write_records(args.out, amodal_fill(recs, model, cfg.amodal_iou_threshold, cfg.min_box_area))
    return _report_errors(args.detections, errors)


def _report_errors(path, errors) -> int:
    for e in errors:
        print(f"error: {path}: {e}", file=sys.stderr)
    return 1 if errors else 0


def cmd_run(args) -> int:
    cfg = _config(args)
    trap = _load_model(TrapeziumRegressor, args.trap_model) if args.trap_model else EnclosingTrapeziumModel()
    amodal = _load_model(AmodalRegressor, args.amodal_model) if args.amodal_model else None
    errors: list = []
    recs = _read(args.detections, errors)
    reports, overlay = {}, []
    for video in split_videos(recs):
        engine = ViolationEngine(trap, cfg, amodal)
        outputs = engine.run(video)
        reports[video[0].video] = engine.finalize().to_dict()
        overlay.extend(emit_overlay(outputs))
    if len(reports) == 1:
        doc = next(iter(reports.values()))
    else:
        keys = ("triple_riding_count", "helmet_violation_rider_count", "helmet_violation_instance_count")
        doc = {k: sum(r[k] for r in reports.values()) for k in keys}
        doc["videos"] = reports
    doc["input_errors"] = len(errors)
    _dump_json(args.report, doc)
    if args.overlay:
        Path(args.overlay).write_text(dumps_overlay(overlay))
    return _report_errors(args.detections, errors)


def cmd_eval(args) -> int:
    cfg = _config(args)
    trap = _load_model(TrapeziumRegressor, args.trap_model) if args.trap_model else EnclosingTrapeziumModel()
    amodal = _load_model(AmodalRegressor, args.amodal_model) if args.amodal_model else None
    gt = _read(args.ground_truth)
    dets = _read(args.detections)
    modes = args.modes.split(",") if args.modes else [cfg.association_mode]
    try:
        doc = evaluate_modes(gt, dets, trap, cfg, modes, amodal)
    except ValueError as e:
        raise InputError(str(e)) from None
    _dump_json(args.out, doc)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riderwatch", description="Motorcycle riding-violation counting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--threads", type=int, default=None, help="cap numeric library threads")
        sp.set_defaults(func=func)
        return sp

    sp = add("synth", cmd_synth, "generate synthetic ground truth and detections")
    sp.add_argument("--ground-truth", required=True)
    sp.add_argument("--detections")
    sp.add_argument("--n-scenes", type=int, default=1)
    sp.add_argument("--n-frames", type=int, default=60)
    sp.add_argument("--n-instances", type=int, default=3)
    sp.add_argument("--crowding", type=float, default=0.0)
    sp.add_argument("--occlusion", type=float, default=0.0)
    sp.add_argument("--jitter", type=float, default=0.0)
    sp.add_argument("--fp-rate", type=float, default=0.0)
    sp.add_argument("--fn-rate", type=float, default=0.0)
    sp.add_argument("--no-helmet", type=float, default=0.3)

    for name, func, what in (("train-trapezium", cmd_train_trapezium, "trapezium regressor"),
                             ("train-amodal", cmd_train_amodal, "amodal rider-box regressor")):
        sp = add(name, func, f"train the {what} from ground-truth records")
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--config")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--learning-rate", type=float)
        if name == "train-trapezium":
            sp.add_argument("--augment-copies", type=int)

    sp = add("fill-amodal", cmd_fill_amodal, "complete missing rider boxes from head boxes")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--amodal-model", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")

    sp = add("run", cmd_run, "process a detection stream into a violation report")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--trap-model", help="trained trapezium regressor; default is the enclosing trapezium")
    sp.add_argument("--amodal-model")
    sp.add_argument("--config")
    sp.add_argument("--report", default="-")
    sp.add_argument("--overlay")

    sp = add("eval", cmd_eval, "score a detection stream against ground truth")
    sp.add_argument("--ground-truth", required=True)
    sp.add_argument("--detections", required=True)
    sp.add_argument("--trap-model")
    sp.add_argument("--amodal-model")
    sp.add_argument("--config")
    sp.add_argument("--modes", help="comma-separated association modes")
    sp.add_argument("--out", default="-")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (InputError, GenerationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
