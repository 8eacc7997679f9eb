"""Command-line entry point: synth, train, eval, predict, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Flag values override config-file values, which override built-in defaults;
the fully resolved configuration is written next to any file outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import data as data_mod
from . import trainer as trainer_mod
from .errors import ConfigError, ConvqaError
from .image import load_features
from .metrics import load_taxonomy, score_report
from .model import ModelConfig, load_checkpoint
from .sentence import SentenceEncoderConfig
from .trainer import TrainConfig, gradient_check, tiny_config

SYNTH_DEFAULTS = {
    "samples": 1000,
    "seed": 0,
    "objects": 5,
    "colors": 5,
    "max_objects": 3,
    "feature_dim": 64,
    "noise": 0.05,
    "out": None,
}

TRAIN_DEFAULTS = {
    "triplets": None,
    "features": None,
    "eval_triplets": None,
    "out": None,
    "mode": "full",
    "epochs": 50,
    "lr": TrainConfig.learning_rate,
    "batch_size": 100,
    "seed": 0,
    "lr_decay": 1.0,
    "eval_every": 0,
    "checkpoint_every": 0,
    "max_len": 38,
    "embed_dim": 50,
    "feature_maps": "300,400,400",
    "joint_dim": 400,
    "fusion_maps": 400,
    "dropout": 0.1,
    "activation": "relu",
    "answer_classes": 0,
    "threads": 1,
}

EVAL_DEFAULTS = {
    "checkpoint": None,
    "triplets": None,
    "features": None,
    "taxonomy": None,
    "shuffle_questions": None,
    "threads": 1,
}


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    resolved = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        for key, value in file_cfg.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
            resolved[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _write_run_config(out_dir: Path, resolved: dict) -> None:
    serializable = {k: (str(v) if isinstance(v, Path) else v) for k, v in resolved.items()}
    with open(out_dir / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(serializable, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve(args, SYNTH_DEFAULTS)
    if not cfg["out"]:
        raise ConfigError("synth requires --out")
    spec = data_mod.SyntheticSpec(
        num_object_types=int(cfg["objects"]),
        num_colors=int(cfg["colors"]),
        max_scene_objects=int(cfg["max_objects"]),
        feature_dim=int(cfg["feature_dim"]),
        noise=float(cfg["noise"]),
    )
    dataset = data_mod.generate_synthetic(spec, int(cfg["samples"]), int(cfg["seed"]))
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    data_mod.save_triplets(dataset.triplets, out_dir / "triplets.tsv")
    from .image import save_features

    save_features(dataset.features, out_dir / "features.tsv")
    scenes = {
        image_id: [dataclasses.asdict(obj) for obj in scene]
        for image_id, scene in dataset.scenes.items()
    }
    with open(out_dir / "scenes.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"spec": dataclasses.asdict(spec), "scenes": scenes},
            fh, sort_keys=True, indent=2,
        )
        fh.write("\n")
    _write_run_config(out_dir, cfg)
    print(
        f"wrote {len(dataset.triplets)} triplets, {len(dataset.features)} features, "
        f"{len(scenes)} scenes to {out_dir}"
    )
    return 0


def _model_config_from(cfg: dict, vocab_size: int, num_classes: int, feature_dim: int) -> ModelConfig:
    try:
        feature_maps = tuple(int(m) for m in str(cfg["feature_maps"]).split(","))
    except ValueError:
        raise ConfigError(f"bad feature map list {cfg['feature_maps']!r}") from None
    sentence = SentenceEncoderConfig(
        max_len=int(cfg["max_len"]),
        embed_dim=int(cfg["embed_dim"]),
        feature_maps=feature_maps,
        activation=str(cfg["activation"]),
    )
    return ModelConfig(
        vocab_size=vocab_size,
        num_classes=num_classes,
        sentence=sentence,
        joint_dim=int(cfg["joint_dim"]),
        fusion_maps=int(cfg["fusion_maps"]),
        feature_dim=feature_dim,
        dropout=float(cfg["dropout"]),
        mode=str(cfg["mode"]),
        activation=str(cfg["activation"]),
        seed=int(cfg["seed"]),
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args, TRAIN_DEFAULTS)
    for required in ("triplets", "out"):
        if not cfg[required]:
            raise ConfigError(f"train requires --{required}")
    mode = str(cfg["mode"])
    if mode not in ("full", "concat", "language"):
        raise ConfigError(f"--mode must be full, concat, or language, got {mode!r}")
    if mode != "language" and not cfg["features"]:
        raise ConfigError(f"mode {mode!r} requires --features")

    train_set = data_mod.load_triplets(cfg["triplets"])
    features = load_features(cfg["features"]) if mode != "language" else None
    vocab, answers = data_mod.build_vocabs(train_set)
    if int(cfg["answer_classes"]) > 0:
        answers = data_mod.truncate_answer_classes(train_set, int(cfg["answer_classes"]))
        train_set = [t for t in train_set if t.answer in answers]
        if not train_set:
            raise ConfigError("answer-class truncation removed every training sample")
    eval_set = data_mod.load_triplets(cfg["eval_triplets"]) if cfg["eval_triplets"] else None

    feature_dim = features.feature_dim if features is not None else 1
    model_config = _model_config_from(cfg, len(vocab), len(answers), feature_dim)
    train_config = TrainConfig(
        batch_size=int(cfg["batch_size"]),
        learning_rate=float(cfg["lr"]),
        epochs=int(cfg["epochs"]),
        seed=int(cfg["seed"]),
        checkpoint_every=int(cfg["checkpoint_every"]),
        eval_every=int(cfg["eval_every"]),
        lr_decay=float(cfg["lr_decay"]),
    )

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(out_dir, cfg)
    _, log = trainer_mod.train(
        train_set,
        features,
        vocab,
        answers,
        model_config,
        train_config,
        eval_set=eval_set,
        checkpoint_path=out_dir / "checkpoint.bin",
        log_path=out_dir / "train_log.jsonl",
        threads=int(cfg["threads"]),
    )
    final = log[-1]["mean_loss"] if log else float("nan")
    print(f"trained {train_config.epochs} epochs, final mean loss {final:.6f}")
    print(f"checkpoint: {out_dir / 'checkpoint.bin'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, EVAL_DEFAULTS)
    for required in ("checkpoint", "triplets"):
        if not cfg[required]:
            raise ConfigError(f"eval requires --{required}")
    params, model_config, vocab_list, answer_list = load_checkpoint(cfg["checkpoint"])
    vocab = data_mod.Vocab.from_list(vocab_list)
    answers = data_mod.AnswerVocab.from_list(answer_list)
    triplets = data_mod.load_triplets(cfg["triplets"])
    if cfg["shuffle_questions"] is not None:
        triplets = data_mod.shuffle_question_words(triplets, int(cfg["shuffle_questions"]))
    features = None
    if model_config.uses_image:
        if not cfg["features"]:
            raise ConfigError(f"mode {model_config.mode!r} requires --features")
        features = load_features(cfg["features"])
    predictions = trainer_mod.predict_answers(
        triplets, features, params, model_config, vocab, answers,
        threads=int(cfg["threads"]),
    )
    tree = load_taxonomy(cfg["taxonomy"]) if cfg["taxonomy"] else None
    report = score_report(predictions, [t.answer for t in triplets], tree)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    params, model_config, vocab_list, answer_list = load_checkpoint(args.checkpoint)
    vocab = data_mod.Vocab.from_list(vocab_list)
    answers = data_mod.AnswerVocab.from_list(answer_list)
    tokens = data_mod.tokenize(args.question)
    if not tokens:
        raise ConfigError("question is empty after tokenization")
    feature = None
    if model_config.uses_image:
        if not args.features or not args.image_id:
            raise ConfigError(
                f"mode {model_config.mode!r} requires --features and --image-id"
            )
        feature = load_features(args.features).get(args.image_id)
    from .model import predict_sample

    index = predict_sample(vocab.encode(tokens), feature, params, model_config)
    print(answers.answer_of(index))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    modes = ("full", "concat", "language") if args.mode == "all" else (args.mode,)
    all_passed = True
    for mode in modes:
        worst = None
        for offset in range(args.seeds):
            config = tiny_config(mode, seed=args.seed + offset)
            report = gradient_check(
                config,
                seed=args.seed + offset,
                threshold=args.threshold,
                corrupt=args.corrupt_backward,
            )
            if worst is None or report.max_rel_error > worst.max_rel_error:
                worst = report
        print(worst.summary())
        all_passed = all_passed and worst.passed
    return 0 if all_passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convqa",
        description="Multimodal convolutional question answering over image features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--objects", type=int, help="number of object types")
    p.add_argument("--colors", type=int, help="number of colors")
    p.add_argument("--max-objects", type=int, dest="max_objects")
    p.add_argument("--feature-dim", type=int, dest="feature_dim")
    p.add_argument("--noise", type=float)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a triplet dataset")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--triplets", help="training triplet file")
    p.add_argument("--features", help="image feature file")
    p.add_argument("--eval-triplets", dest="eval_triplets")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=["full", "concat", "language"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr-decay", type=float, dest="lr_decay")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--feature-maps", dest="feature_maps", help="e.g. 300,400,400")
    p.add_argument("--joint-dim", type=int, dest="joint_dim")
    p.add_argument("--fusion-maps", type=int, dest="fusion_maps")
    p.add_argument("--dropout", type=float)
    p.add_argument("--activation", choices=["relu", "sigmoid"])
    p.add_argument("--answer-classes", type=int, dest="answer_classes",
                   help="keep only the N most frequent answer classes")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a triplet file")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--checkpoint")
    p.add_argument("--triplets")
    p.add_argument("--features")
    p.add_argument("--taxonomy", help="taxonomy file enabling WUPS scores")
    p.add_argument("--shuffle-questions", type=int, dest="shuffle_questions",
                   metavar="SEED", help="reshuffle question words before scoring")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="answer one question")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--image-id", dest="image_id")
    p.add_argument("--features")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="verify backward passes against finite differences")
    p.add_argument("--mode", choices=["all", "full", "concat", "language"], default="all")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--corrupt-backward", action="store_true", dest="corrupt_backward",
                   help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvqaError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
