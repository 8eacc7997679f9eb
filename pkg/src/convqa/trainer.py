"""Minibatch SGD training loop, evaluation, and the gradient-check harness.

Everything here is deterministic given the seeds: epoch shuffles are derived
from (seed, epoch), dropout masks from (seed, epoch, 1) in sample order, and
batch gradients are combined by a fixed-topology pairwise reduction, so two
runs with the same inputs produce bit-identical parameters.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import AnswerVocab, Triplet, Vocab
from .errors import ConfigError, ShapeError
from .image import ImageFeatureStore
from .metrics import accuracy as accuracy_metric
from .model import (
    ModelConfig,
    ModelParams,
    flatten_params,
    forward_sample,
    init_params,
    locate_param,
    loss_and_gradients,
    loss_for_sample,
    num_params,
    save_checkpoint,
    unflatten_params,
)
from .numeric import finite_difference_gradient, relative_errors
from .sentence import SentenceEncoderConfig


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    learning_rate: float = 0.1
    epochs: int = 50
    seed: int = 0
    checkpoint_every: int = 0  # epochs between rolling checkpoints; 0 = final only
    eval_every: int = 0        # epochs between eval passes; 0 = never
    lr_decay: float = 1.0      # per-epoch multiplicative decay

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epoch count must be >= 0, got {self.epochs}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr decay must be in (0, 1], got {self.lr_decay}")


def sgd_step(params_vec: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """Plain gradient step: theta - lr * grad."""
    params_vec = np.asarray(params_vec, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params_vec.shape != grad.shape:
        raise ShapeError(
            f"sgd_step: params of shape {params_vec.shape} vs gradient "
            f"of shape {grad.shape}"
        )
    return params_vec - lr * grad


def encode_dataset(
    triplets: Sequence[Triplet],
    vocab: Vocab,
    answer_vocab: AnswerVocab | None,
    features: ImageFeatureStore | None,
    config: ModelConfig,
) -> list[tuple]:
    """Turn triplets into (token_ids, feature_or_None, target_or_None) tuples."""
    encoded = []
    for t in triplets:
        ids = vocab.encode(t.question)
        feature = None
        if config.uses_image:
            if features is None:
                raise ValueError(f"mode {config.mode!r} requires an image feature store")
            feature = features.get(t.image_id)
        target = None
        if answer_vocab is not None:
            target = answer_vocab.class_of(t.answer)
        encoded.append((ids, feature, target))
    return encoded


def predict_answers(
    triplets: Sequence[Triplet],
    features: ImageFeatureStore | None,
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocab,
    answer_vocab: AnswerVocab,
    threads: int = 1,
) -> list[str]:
    """Answer strings for each sample, in input order."""
    encoded = encode_dataset(triplets, vocab, None, features, config)

    def one(item) -> str:
        ids, feature, _ = item
        probs, _ = forward_sample(ids, feature, params, config)
        return answer_vocab.answer_of(int(np.argmax(probs)))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, encoded))
    return [one(item) for item in encoded]


def evaluate(
    triplets: Sequence[Triplet],
    features: ImageFeatureStore | None,
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocab,
    answer_vocab: AnswerVocab,
    threads: int = 1,
) -> dict:
    """Accuracy (and predictions) of the model on a labelled set."""
    predictions = predict_answers(
        triplets, features, params, config, vocab, answer_vocab, threads
    )
    truths = [t.answer for t in triplets]
    return {
        "n": len(triplets),
        "accuracy": accuracy_metric(predictions, truths),
        "predictions": predictions,
    }


def train(
    train_set: Sequence[Triplet],
    features: ImageFeatureStore | None,
    vocab: Vocab,
    answer_vocab: AnswerVocab,
    model_config: ModelConfig,
    train_config: TrainConfig,
    eval_set: Sequence[Triplet] | None = None,
    checkpoint_path=None,
    log_path=None,
    threads: int = 1,
) -> tuple[ModelParams, list[dict]]:
    """Epochs of seeded shuffled minibatches; returns final params and the log.

    Each log entry carries the epoch, the mean training loss, evaluation
    accuracy when the cadence fires, and a wall-time field (the only
    non-deterministic value).
    """
    if not train_set:
        raise ValueError("training set is empty")
    encoded = encode_dataset(train_set, vocab, answer_vocab, features, model_config)
    params = init_params(model_config)
    theta = flatten_params(params, model_config)
    n = len(encoded)
    log: list[dict] = []
    started = time.time()
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(train_config.epochs):
            order = np.random.default_rng([train_config.seed, epoch]).permutation(n)
            dropout_rng = np.random.default_rng([train_config.seed, epoch, 1])
            lr = train_config.learning_rate * train_config.lr_decay**epoch
            loss_total = 0.0
            for start in range(0, n, train_config.batch_size):
                batch = [encoded[i] for i in order[start:start + train_config.batch_size]]
                loss, grad = loss_and_gradients(
                    batch, params, model_config, rng=dropout_rng, threads=threads
                )
                theta = sgd_step(theta, grad, lr)
                params = unflatten_params(theta, model_config)
                loss_total += loss * len(batch)
            entry = {"epoch": epoch + 1, "mean_loss": loss_total / n}
            if (
                eval_set is not None
                and train_config.eval_every
                and (epoch + 1) % train_config.eval_every == 0
            ):
                result = evaluate(
                    eval_set, features, params, model_config, vocab, answer_vocab, threads
                )
                entry["accuracy"] = result["accuracy"]
            entry["wall_time"] = round(time.time() - started, 3)
            log.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                log_fh.flush()
            if (
                checkpoint_path
                and train_config.checkpoint_every
                and (epoch + 1) % train_config.checkpoint_every == 0
            ):
                save_checkpoint(
                    checkpoint_path, params, model_config,
                    vocab.to_list(), answer_vocab.to_list(),
                )
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(
            checkpoint_path, params, model_config, vocab.to_list(), answer_vocab.to_list()
        )
    return params, log


# -- gradient checking ---------------------------------------------------------

@dataclass
class GradCheckReport:
    mode: str
    max_rel_error: float
    worst_group: str
    worst_offset: int
    n_params: int
    threshold: float = 1e-3

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} mode={self.mode} max_rel_error={self.max_rel_error:.3e} "
            f"worst={self.worst_group}[{self.worst_offset}] over {self.n_params} params"
        )


def tiny_config(mode: str, seed: int = 0) -> ModelConfig:
    """Smallest configuration whose conv/pool arithmetic still supports all
    three wirings (fusion needs two question segments, hence max_len 23)."""
    return ModelConfig(
        vocab_size=12,
        num_classes=3,
        sentence=SentenceEncoderConfig(
            max_len=23, embed_dim=4, feature_maps=(6, 6, 6), receptive_field=3
        ),
        joint_dim=6,
        fusion_maps=6,
        feature_dim=5,
        dropout=0.0,
        mode=mode,
        seed=seed,
    )


def gradient_check(
    config: ModelConfig,
    seed: int = 0,
    h: float = 1e-5,
    threshold: float = 1e-3,
    corrupt: bool = False,
) -> GradCheckReport:
    """Compare the analytic gradient with the finite-difference oracle on one
    random sample.  Requires dropout to be off so the loss is deterministic.

    ``corrupt`` deliberately perturbs the analytic gradient; it exists so the
    harness can prove it would catch a broken backward pass.
    """
    if config.dropout != 0.0:
        raise ConfigError("gradient check needs dropout == 0 for a deterministic loss")
    rng = np.random.default_rng(seed)
    length = int(rng.integers(3, config.sentence.max_len + 1))
    token_ids = rng.integers(1, config.vocab_size, size=length).tolist()
    feature = rng.normal(size=config.feature_dim) if config.uses_image else None
    target = int(rng.integers(config.num_classes))

    # Perturb away from the zero-bias init: finite differences are only
    # trustworthy at points where no unit sits exactly on a ReLU kink or an
    # exact max-pooling tie between distinct windows.
    theta = flatten_params(init_params(config), config)
    theta = theta + 0.1 * rng.standard_normal(theta.shape)
    params = unflatten_params(theta, config)
    _, analytic = loss_and_gradients([(token_ids, feature, target)], params, config)
    if corrupt:
        analytic = analytic * 1.01 + 1e-4

    def loss_at(vec: np.ndarray) -> float:
        return loss_for_sample(
            token_ids, feature, target, unflatten_params(vec, config), config
        )

    numeric = finite_difference_gradient(loss_at, theta, h)
    errors = relative_errors(analytic, numeric)
    worst = int(np.argmax(errors))
    group, offset = locate_param(config, worst)
    return GradCheckReport(
        mode=config.mode,
        max_rel_error=float(errors[worst]),
        worst_group=group,
        worst_offset=offset,
        n_params=num_params(config),
        threshold=threshold,
    )
