"""
Command-line entry point wiring every stage: data, training, generation,
prediction, completion, scoring and rendering.
"""
import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.analytics import compare_reports, score_sequences
from src.config import RunConfig, load_run_config, settings
from src.dataset import (
    dataset_to_dataframe,
    export_dataframe_to_csv,
    generate_dataset,
    ingest_sequences,
    load_sequences,
    make_s2i_pairs,
    save_sequences,
)
from src.features import (
    chimeric_batch,
    class_mean_poses,
    class_motion_summary,
    nearest_mean_classify,
    shuffle_frames,
)
from src.exceptions import (
    CheckpointError,
    ConfigError,
    ConstraintError,
    DatasetError,
    InfeasibleStartError,
    NonFiniteError,
    PoseForgeError,
    ShapeError,
)
from src.logging_config import configure_logging
from src.models import ClassId, ConstraintSet, Dataset, PoseSequence, Split
from src.modeling.classifier import ActionClassifier, train_classifier
from src.modeling.inverter import CompletionResult, InversionModels, complete, predict
from src.modeling.pose_gan import SinglePoseGenerator, train_single_pose
from src.modeling.seq_gan import SequenceDiscriminator, SequenceGenerator, generate_batch, train_sequence
from src.modeling.skel2img import train_s2i
from src.modeling.train import save_history
from src.plots import create_loss_curves, create_score_comparison, create_timestep_curve, save_figure_html
from src.services.checkpoint import (
    CheckpointKind,
    load_checkpoint,
    pack_classifier,
    pack_pose_gan,
    pack_seq_gan,
    pack_transformer,
    save_checkpoint,
    unpack_classifier,
    unpack_pose_gan,
    unpack_seq_gan,
    unpack_transformer,
)
from src.services.render import render_animation

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4
EXIT_DATA = 5
EXIT_NUMERIC = 6


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the process exit code."""
    if isinstance(exc, (ConfigError, ConstraintError, ShapeError)):
        return EXIT_CONFIG
    if isinstance(exc, CheckpointError):
        return EXIT_CHECKPOINT
    if isinstance(exc, DatasetError):
        return EXIT_DATA
    if isinstance(exc, (NonFiniteError, InfeasibleStartError, FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_FAILURE


def _pin(value: str) -> Any:
    if value == "last":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"pin must be a frame index or 'last', got '{value}'")


def _assignment(value: str) -> Tuple[str, Any]:
    key, sep, raw = value.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got '{value}'")
    try:
        return key, json.loads(raw)
    except ValueError:
        return key, raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poseforge", description="Pose-sequence generation, completion and rendering.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="Random seed (overrides config and POSEFORGE_SEED)")
    common.add_argument("--out", help="Output directory for run artifacts")
    common.add_argument("--set", dest="overrides", action="append", type=_assignment, default=[],
                        metavar="KEY=VALUE", help="Override a config value, e.g. pose_gan.steps=200")
    common.add_argument("--log-level", help="Log level")
    common.add_argument("--log-format", choices=["json", "text"], help="Log record format")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Generate or ingest the sequence dataset")
    p.add_argument("--per-class", type=int, help="Sequences per class")
    p.add_argument("--length", type=int, help="Frames per sequence (sets dims.T)")
    p.add_argument("--source", help="Ingest this sequence file instead of generating")
    p.add_argument("--csv", help="Also export the frames as CSV")

    for name, text in [
        ("train-pose", "Train the single-pose generator"),
        ("train-seq", "Train the sequence generator"),
        ("train-s2i", "Train the skeleton-to-image transformer"),
        ("train-clf", "Train the evaluation classifier"),
    ]:
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--plot", action="store_true", help="Write the loss curves as HTML")

    p = sub.add_parser("generate", parents=[common], help="Sample sequences from the generators")
    p.add_argument("--count", type=int, default=16, help="Number of sequences")
    p.add_argument("--length", type=int, help="Frames per sequence (default dims.T)")
    p.add_argument("--class", dest="class_name", help="Class to generate (default: cycle through all)")
    p.add_argument("--output", help="Sequence file to write")

    for name, text in [("predict", "Continue a sequence from its first frames"), ("complete", "Fill a sequence around pinned frames")]:
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--input", required=True, help="Sequence file holding the source sequence")
        p.add_argument("--index", type=int, default=0, help="Sequence to use from the file")
        p.add_argument("--class", dest="class_name", help="Conditioning class (default: the sequence's class)")
        p.add_argument("--output", help="Sequence file to write")
        if name == "predict":
            p.add_argument("--frames", type=int, default=4, help="Leading frames given as constraints")
        else:
            p.add_argument("--pin", action="append", type=_pin, help="Pinned frame index or 'last' (repeatable)")

    p = sub.add_parser("score", parents=[common], help="Inception Scores of a sequence file")
    p.add_argument("--input", help="Sequence file (default: the dataset's test split)")
    p.add_argument("--classifier", help="Classifier checkpoint (default: run path, trained if missing)")
    p.add_argument("--splits", type=int, default=10, help="Splits for the score spread")
    p.add_argument("--compare-real", action="store_true", help="Also score the dataset's test split")
    p.add_argument("--analogs", action="store_true", help="Also score frame-shuffled and class-spliced test sequences")
    p.add_argument("--plot", action="store_true", help="Write the per-timestep curve and the score comparison as HTML")

    p = sub.add_parser("render", parents=[common], help="Write PNG frames and a GIF")
    p.add_argument("--input", required=True, help="Sequence file")
    p.add_argument("--index", type=int, default=0, help="Sequence to render")
    p.add_argument("--pixels", action="store_true", help="Also render through the transformer")
    p.add_argument("--transformer", help="Transformer checkpoint (default: run path)")
    p.add_argument("--size", type=int, help="Image side in pixels")
    p.add_argument("--pdf", action="store_true", help="Also write a contact-sheet PDF of the frames")
    p.add_argument("--output", help="Output directory")
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = dict(args.overrides)
    if args.out:
        overrides["paths.output_dir"] = args.out
    if args.command == "gen-data":
        overrides["dims.T"] = args.length
        overrides["data.per_class"] = args.per_class
        overrides["data.source"] = args.source
    return load_run_config(args.config, overrides)


def _path(cfg: RunConfig, name: str) -> str:
    return cfg.paths.resolve(name)


def _output(cfg: RunConfig, value: Optional[str], default: str) -> str:
    if value:
        return value
    return os.path.join(cfg.paths.output_dir or settings.OUTPUT_DIR, default)


def _class_id(cfg: RunConfig, name: str) -> ClassId:
    if name not in cfg.data.classes:
        raise ConfigError(f"unknown class '{name}', expected one of {cfg.data.classes}")
    return ClassId(cfg.data.classes.index(name), cfg.dims.C)


def _load_dataset(cfg: RunConfig) -> Dataset:
    """The run dataset with the configured vocabulary, checked against the dims."""
    loaded = load_sequences(_path(cfg, "dataset"))
    ds = Dataset(loaded.sequences, list(cfg.data.classes))
    if ds.class_count != cfg.dims.C:
        raise ConfigError(f"dataset has classes {ds.classes}, config lists {cfg.data.classes}")
    lengths = {seq.length for seq in ds.sequences}
    if lengths != {cfg.dims.T}:
        raise ConfigError(f"dataset sequence lengths {sorted(lengths)} do not match T={cfg.dims.T}")
    if ds.sequences[0].joint_count != cfg.dims.J:
        raise ConfigError(f"dataset poses have {ds.sequences[0].joint_count} joints, J={cfg.dims.J}")
    return ds


def _pick(path: str, index: int) -> PoseSequence:
    ds = load_sequences(path)
    if not 0 <= index < len(ds):
        raise DatasetError(f"{path} holds {len(ds)} sequences, index {index} requested")
    return ds.sequences[index]


def _g0(cfg: RunConfig) -> SinglePoseGenerator:
    dims = {"J": cfg.dims.J, "m": cfg.dims.m, "C": cfg.dims.C}
    generator, _ = unpack_pose_gan(load_checkpoint(_path(cfg, "pose_gan"), CheckpointKind.POSE_GAN, dims))
    return generator


def _sequence_models(cfg: RunConfig) -> Tuple[SinglePoseGenerator, SequenceGenerator, SequenceDiscriminator]:
    dims = {"J": cfg.dims.J, "m": cfg.dims.m, "n": cfg.dims.n, "C": cfg.dims.C}
    ckpt = load_checkpoint(_path(cfg, "seq_gan"), CheckpointKind.SEQ_GAN, dims)
    generator, discriminator = unpack_seq_gan(ckpt)
    return _g0(cfg), generator, discriminator


def _histories(cfg: RunConfig, name: str, history: pd.DataFrame, plot: bool) -> None:
    target = _output(cfg, None, f"{name}_history.csv")
    save_history(history, target)
    if plot:
        save_figure_html(create_loss_curves(history, title=f"{name} losses"), target.replace(".csv", ".html"))


def cmd_gen_data(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    if cfg.data.source:
        ds = ingest_sequences(cfg.data.source, cfg.skeleton, cfg.data.fps, cfg.data.reference_length)
    else:
        ds = generate_dataset(
            cfg.motion_specs(),
            per_class=cfg.data.per_class,
            length=cfg.dims.T,
            seed=seed,
            skeleton=cfg.skeleton,
            fps=cfg.data.fps,
            test_fraction=cfg.data.test_fraction,
            reference_length=cfg.data.reference_length,
        )
    save_sequences(ds, _path(cfg, "dataset"))
    if args.csv:
        export_dataframe_to_csv(dataset_to_dataframe(ds), args.csv)
    export_dataframe_to_csv(class_motion_summary(ds), _output(cfg, None, "class_summary.csv"))
    logger.info("dataset_written", extra={"record": {"sequences": len(ds), "classes": ds.classes}})


def cmd_train_pose(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    poses, labels = _load_dataset(cfg).split(Split.TRAIN).labeled_frames()
    result = train_single_pose(poses, labels, cfg.dims.C, cfg.pose_gan, seed)
    save_checkpoint(_path(cfg, "pose_gan"), pack_pose_gan(result.generator, result.critic))
    _histories(cfg, "pose_gan", result.history, args.plot)


def cmd_train_seq(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    train = _load_dataset(cfg).split(Split.TRAIN)
    result = train_sequence(train, _g0(cfg), cfg.seq_gan, seed)
    save_checkpoint(_path(cfg, "seq_gan"), pack_seq_gan(result.generator, result.discriminator))
    _histories(cfg, "seq_gan", result.history, args.plot)


def cmd_train_s2i(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    pairs = make_s2i_pairs(_load_dataset(cfg), cfg.skeleton, cfg.dims.w, cfg.data.s2i_pairs, seed)
    result = train_s2i(pairs, cfg.s2i, seed)
    save_checkpoint(_path(cfg, "s2i"), pack_transformer(result.transformer))
    _histories(cfg, "s2i", result.history, args.plot)


def cmd_train_clf(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    ds = _load_dataset(cfg)
    result = train_classifier(ds, cfg.classifier, seed)
    save_checkpoint(_path(cfg, "classifier"), pack_classifier(result.classifier))
    _histories(cfg, "classifier", result.history, args.plot)
    # single-frame baseline for the learned classifier
    poses, labels = ds.split(Split.TRAIN).labeled_frames()
    test_poses, test_labels = ds.split(Split.TEST).labeled_frames()
    means = class_mean_poses(poses, labels, cfg.dims.C)
    baseline = float(np.mean(nearest_mean_classify(test_poses, means) == test_labels))
    print(json.dumps({"accuracy": result.accuracy, "nearest_mean_frame_accuracy": baseline}))


def cmd_generate(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    if args.count < 1:
        raise ConfigError("--count must be at least 1")
    length = args.length or cfg.dims.T
    if length < 2:
        raise ConfigError("--length must be at least 2")
    g0, generator, _ = _sequence_models(cfg)
    if args.class_name:
        labels = np.full(args.count, _class_id(cfg, args.class_name).index)
    else:
        labels = np.arange(args.count) % cfg.dims.C
    frames, _ = generate_batch(np.random.default_rng(seed), generator, g0, labels, length)
    sequences = [PoseSequence(f, cfg.data.classes[c], cfg.data.fps) for f, c in zip(frames, labels)]
    target = _output(cfg, args.output, "generated.jsonl")
    save_sequences(Dataset(sequences, list(cfg.data.classes)), target)
    logger.info("sequences_generated", extra={"record": {"count": args.count, "length": length, "path": target}})


def _write_completion(cfg: RunConfig, result: CompletionResult, output: Optional[str], default: str) -> None:
    target = _output(cfg, output, default)
    save_sequences(Dataset([result.sequence], list(cfg.data.classes)), target)
    summary = {
        "path": target,
        "objective": result.objective,
        "initial_objective": result.initial_objective,
        "converged": result.converged,
    }
    print(json.dumps(summary))


def _inversion_inputs(args: argparse.Namespace, cfg: RunConfig) -> Tuple[PoseSequence, str, InversionModels]:
    seq = _pick(args.input, args.index)
    name = args.class_name or seq.class_name
    g0, generator, discriminator = _sequence_models(cfg)
    models = InversionModels(g0=g0, generator=generator, discriminator=discriminator, length=cfg.dims.T)
    if seq.joint_count != cfg.dims.J:
        raise ConfigError(f"input poses have {seq.joint_count} joints, J={cfg.dims.J}")
    return seq, name, models


def cmd_predict(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    seq, name, models = _inversion_inputs(args, cfg)
    if not 1 <= args.frames <= seq.length:
        raise ConstraintError(f"--frames must lie in [1, {seq.length}], got {args.frames}")
    result = predict(seq.frames[: args.frames], _class_id(cfg, name), models, cfg.inversion, seed, class_name=name)
    _write_completion(cfg, result, args.output, "predicted.jsonl")


def resolve_pins(pins: Optional[Sequence[Any]], length: int) -> List[int]:
    """Frame indices for ``--pin`` values; 'last' is T-1 and the default pins both ends."""
    pins = pins or [0, "last"]
    return [length - 1 if pin == "last" else int(pin) for pin in pins]


def cmd_complete(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    seq, name, models = _inversion_inputs(args, cfg)
    indices = resolve_pins(args.pin, cfg.dims.T)
    if any(not 0 <= i < min(seq.length, cfg.dims.T) for i in indices):
        raise ConstraintError(f"pinned frames {indices} outside the {min(seq.length, cfg.dims.T)} available")
    constraints = ConstraintSet.from_frames(seq.frames, indices, _class_id(cfg, name))
    result = complete(constraints, models, cfg.inversion, seed, class_name=name)
    _write_completion(cfg, result, args.output, "completed.jsonl")


def _classifier(args: argparse.Namespace, cfg: RunConfig, seed: int) -> ActionClassifier:
    dims = {"J": cfg.dims.J, "C": cfg.dims.C}
    path = args.classifier or _path(cfg, "classifier")
    if args.classifier or os.path.exists(path):
        return unpack_classifier(load_checkpoint(path, CheckpointKind.CLASSIFIER, dims))
    logger.info("classifier_missing", extra={"record": {"path": path, "action": "training"}})
    result = train_classifier(_load_dataset(cfg), cfg.classifier, seed)
    save_checkpoint(path, pack_classifier(result.classifier))
    return result.classifier


def cmd_score(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    clf = _classifier(args, cfg, seed)
    if args.input:
        frames = load_sequences(args.input).stacked()
    else:
        frames = _load_dataset(cfg).split(Split.TEST).stacked()
    reports = {"input": score_sequences(frames, clf, args.splits)}
    if args.compare_real or args.analogs:
        real = _load_dataset(cfg).split(Split.TEST)
        if args.compare_real:
            reports["real"] = score_sequences(real.stacked(), clf, args.splits)
        if args.analogs:
            rng = np.random.default_rng(seed)
            reports["shuffled"] = score_sequences(shuffle_frames(real.stacked(), rng), clf, args.splits)
            reports["spliced"] = score_sequences(chimeric_batch(real.stacked(), real.labels(), rng), clf, args.splits)
        export_dataframe_to_csv(compare_reports(reports), _output(cfg, None, "score_comparison.csv"))
    target = _output(cfg, None, "score.json")
    os.makedirs(os.path.dirname(target) or ".", exist_ok=True)
    with open(target, "w", encoding="utf-8") as handle:
        handle.write(reports["input"].model_dump_json(indent=2))
    if args.plot:
        save_figure_html(create_timestep_curve(reports), target.replace(".json", "_timesteps.html"))
        if len(reports) > 1:
            save_figure_html(create_score_comparison(reports), _output(cfg, None, "score_comparison.html"))
    print(reports["input"].model_dump_json())


def cmd_render(args: argparse.Namespace, cfg: RunConfig, seed: int) -> None:
    seq = _pick(args.input, args.index)
    transformer = None
    if args.pixels:
        path = args.transformer or _path(cfg, "s2i")
        dims = {"J": cfg.dims.J, "w": cfg.dims.w, "h": cfg.dims.h}
        transformer = unpack_transformer(load_checkpoint(path, CheckpointKind.S2I, dims))
    files = render_animation(
        seq,
        cfg.skeleton,
        _output(cfg, args.output, "render"),
        transformer=transformer,
        pixels=args.pixels,
        size=args.size,
        contact_sheet=args.pdf,
    )
    print(files.model_dump_json())


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-pose": cmd_train_pose,
    "train-seq": cmd_train_seq,
    "train-s2i": cmd_train_s2i,
    "train-clf": cmd_train_clf,
    "generate": cmd_generate,
    "predict": cmd_predict,
    "complete": cmd_complete,
    "score": cmd_score,
    "render": cmd_render,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse ``argv``, run one subcommand and return its exit code.

    Args:
        argv: Arguments without the program name

    Returns:
        int: 0 on success, otherwise the code of the failure class
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    configure_logging(args.log_level or settings.LOG_LEVEL, args.log_format or settings.LOG_FORMAT)
    try:
        cfg = _config(args)
        seed = cfg.resolved_seed(args.seed)
        logger.info("command_started", extra={"record": {"command": args.command, "seed": seed}})
        COMMANDS[args.command](args, cfg, seed)
    except (PoseForgeError, FloatingPointError, OSError) as exc:
        code = exit_code_for(exc)
        logger.debug("command_failed", exc_info=True)
        print(f"poseforge {args.command}: error: {exc}", file=sys.stderr)
        return code
    logger.info("command_finished", extra={"record": {"command": args.command}})
    return EXIT_OK


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
