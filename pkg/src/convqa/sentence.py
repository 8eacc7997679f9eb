"""Sentence encoder: word embeddings through three convolution + pooling stages.

A question is right-padded to a fixed maximum length, embedded, and pushed
through three stacked stages of valid 1-D convolution followed by stride-2
max-pooling.  The result is a short sequence of semantic segments (by default
3 positions of 400 features under the 38-token configuration) that the
multimodal fusion layer consumes in consecutive pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, QuestionTooLongError, ShapeError
from .layers import (
    ConvLayerParams,
    EmbeddingTable,
    conv1d_backward,
    conv1d_forward,
    embed_backward,
    embed_forward,
    maxpool_backward,
    maxpool_forward,
)

PAD_ID = 0
UNK_ID = 1

NUM_STAGES = 3


@dataclass(frozen=True)
class SentenceEncoderConfig:
    max_len: int = 38
    embed_dim: int = 50
    feature_maps: tuple[int, int, int] = (300, 400, 400)
    receptive_field: int = 3
    activation: str = "relu"

    def __post_init__(self):
        if len(self.feature_maps) != NUM_STAGES:
            raise ConfigError(
                f"sentence encoder uses exactly {NUM_STAGES} stages, "
                f"got feature maps {self.feature_maps}"
            )
        if self.max_len < 1 or self.embed_dim < 1 or self.receptive_field < 1:
            raise ConfigError("sentence encoder dimensions must be positive")
        self.stage_lengths()  # raises when the conv/pool arithmetic breaks down

    def stage_lengths(self) -> list[int]:
        """Sequence lengths through the stack: [input, conv1, pool1, ..., pool3]."""
        lengths = [self.max_len]
        length = self.max_len
        for stage in range(NUM_STAGES):
            if length < self.receptive_field:
                raise ConfigError(
                    f"max_len {self.max_len} leaves stage {stage + 1} with length "
                    f"{length}, below receptive field {self.receptive_field}"
                )
            length = length - self.receptive_field + 1
            lengths.append(length)
            length = math.ceil(length / 2)
            lengths.append(length)
        return lengths

    @property
    def output_positions(self) -> int:
        """Number of semantic segments produced for a max-length question."""
        return self.stage_lengths()[-1]

    @property
    def output_dim(self) -> int:
        return self.feature_maps[-1]


def pad_or_reject(token_ids, max_len: int) -> list[int]:
    """Right-pad with the reserved padding id; reject empty or over-long input."""
    ids = list(token_ids)
    if len(ids) == 0:
        raise ValueError("question has no tokens")
    if len(ids) > max_len:
        raise QuestionTooLongError(
            f"question of length {len(ids)} exceeds the maximum of {max_len}"
        )
    return ids + [PAD_ID] * (max_len - len(ids))


def _validate_stack(table: EmbeddingTable, stack, config: SentenceEncoderConfig):
    if len(stack) != NUM_STAGES:
        raise ConfigError(f"expected {NUM_STAGES} conv stages, got {len(stack)}")
    if table.embed_dim != config.embed_dim:
        raise ShapeError(
            f"embedding dim {table.embed_dim} does not match config {config.embed_dim}"
        )
    dim = config.embed_dim
    for stage, params in enumerate(stack):
        if params.receptive_field != config.receptive_field:
            raise ConfigError(
                f"stage {stage + 1} receptive field {params.receptive_field} "
                f"differs from config {config.receptive_field}"
            )
        if params.input_dim != dim:
            raise ShapeError(
                f"stage {stage + 1} expects input dim {params.input_dim}, "
                f"but the previous stage produces {dim}"
            )
        if params.feature_maps != config.feature_maps[stage]:
            raise ShapeError(
                f"stage {stage + 1} has {params.feature_maps} feature maps, "
                f"config says {config.feature_maps[stage]}"
            )
        dim = params.feature_maps


def encode_question_forward(
    token_ids,
    table: EmbeddingTable,
    stack: list[ConvLayerParams],
    config: SentenceEncoderConfig,
):
    """Pad, embed, and run the conv/pool stack.

    Returns ``(positions, cache)`` where positions is a
    ``(output_positions, output_dim)`` array of question segments.
    """
    _validate_stack(table, stack, config)
    padded = pad_or_reject(token_ids, config.max_len)
    seq, embed_cache = embed_forward(padded, table)
    conv_caches = []
    pool_caches = []
    for params in stack:
        seq, c_cache = conv1d_forward(seq, params)
        seq, p_cache = maxpool_forward(seq)
        conv_caches.append(c_cache)
        pool_caches.append(p_cache)
    cache = (embed_cache, conv_caches, pool_caches)
    return seq, cache


def encode_question_backward(grad_positions: np.ndarray, cache):
    """Returns (grad_table, [(grad_weights, grad_biases)] per stage)."""
    embed_cache, conv_caches, pool_caches = cache
    grad = np.asarray(grad_positions, dtype=np.float64)
    stage_grads: list[tuple[np.ndarray, np.ndarray]] = []
    for c_cache, p_cache in zip(reversed(conv_caches), reversed(pool_caches)):
        grad = maxpool_backward(grad, p_cache)
        grad, grad_w, grad_b = conv1d_backward(grad, c_cache)
        stage_grads.append((grad_w, grad_b))
    grad_table = embed_backward(grad, embed_cache)
    stage_grads.reverse()
    return grad_table, stage_grads
