"""Full predictor: encoders, fusion, dropout, and the softmax head.

Three wirings share the sentence encoder:

* ``full``     : sentence segments + mapped image through the multimodal
                 convolution, then dropout, classifier, softmax.
* ``concat``   : ablation that pools the question segments and concatenates
                 them with the mapped image, skipping the fusion unit.
* ``language`` : question-only; the pooled segments go straight to the
                 classifier and the image path does not exist.

This module also owns the canonical flattened parameter layout used by the
optimizer, the finite-difference harness, and the checkpoint format.  The
padding embedding row is a structural constant (all zeros), so it is not part
of the flattened parameter vector and never receives updates.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError, ShapeError
from .fusion import (
    MultimodalConvParams,
    fuse_backward,
    fuse_concat_backward,
    fuse_concat_forward,
    fuse_forward,
    pool_positions_backward,
    pool_positions_forward,
)
from .image import map_image_backward, map_image_forward
from .layers import (
    ConvLayerParams,
    DenseParams,
    EmbeddingTable,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_mask as make_dropout_mask,
    softmax,
    softmax_nll,
    softmax_nll_backward,
)
from .numeric import as_tensor, read_tensor, write_tensor
from .sentence import (
    NUM_STAGES,
    SentenceEncoderConfig,
    encode_question_backward,
    encode_question_forward,
)

MODES = ("full", "concat", "language")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_classes: int
    sentence: SentenceEncoderConfig = field(default_factory=SentenceEncoderConfig)
    joint_dim: int = 400
    fusion_maps: int = 400
    feature_dim: int = 4096
    dropout: float = 0.1
    mode: str = "full"
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 answer classes, got {self.num_classes}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocabulary must include pad, unk and words, got size {self.vocab_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.joint_dim != self.sentence.feature_maps[-1]:
            raise ConfigError(
                f"joint_dim {self.joint_dim} must equal the last sentence stage "
                f"({self.sentence.feature_maps[-1]} feature maps)"
            )
        if self.mode == "full" and self.sentence.output_positions < 2:
            raise ConfigError(
                f"full mode needs at least 2 question segments, but max_len "
                f"{self.sentence.max_len} yields {self.sentence.output_positions}"
            )
        if self.mode != "language" and self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be positive, got {self.feature_dim}")

    @property
    def classifier_input_dim(self) -> int:
        if self.mode == "full":
            return self.fusion_maps
        if self.mode == "concat":
            return 2 * self.joint_dim
        return self.joint_dim

    @property
    def uses_image(self) -> bool:
        return self.mode != "language"


@dataclass
class ModelParams:
    """All trainable parameters; unused components are None for ablation modes."""

    embedding: EmbeddingTable
    conv_stack: list[ConvLayerParams]
    image_map: DenseParams | None
    fusion: MultimodalConvParams | None
    classifier: DenseParams


# -- parameter layout, init, flatten/unflatten ---------------------------------

def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    r = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-r, r, size=(rows, cols))


def param_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list defining the flattened parameter order.

    The embedding entry covers rows 1..V-1 only; row 0 is the frozen padding
    row and stays out of the optimization variables.
    """
    s = config.sentence
    layout: list[tuple[str, tuple[int, ...]]] = [
        ("embedding", (config.vocab_size - 1, s.embed_dim)),
    ]
    dim = s.embed_dim
    for stage, maps in enumerate(s.feature_maps, start=1):
        layout.append((f"conv{stage}.weights", (maps, s.receptive_field * dim)))
        layout.append((f"conv{stage}.biases", (maps,)))
        dim = maps
    if config.uses_image:
        layout.append(("image_map.weights", (config.joint_dim, config.feature_dim)))
        layout.append(("image_map.bias", (config.joint_dim,)))
    if config.mode == "full":
        layout.append(("fusion.weights", (config.fusion_maps, 3 * config.joint_dim)))
        layout.append(("fusion.biases", (config.fusion_maps,)))
    layout.append(("classifier.weights", (config.num_classes, config.classifier_input_dim)))
    layout.append(("classifier.bias", (config.num_classes,)))
    return layout


def num_params(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(config))


def init_params(config: ModelConfig) -> ModelParams:
    """Seeded initialization: Glorot-uniform weights, zero biases,
    embedding rows uniform on [-0.1, 0.1] with a zero padding row."""
    rng = np.random.default_rng(config.seed)
    s = config.sentence
    table = np.zeros((config.vocab_size, s.embed_dim))
    table[1:] = rng.uniform(-0.1, 0.1, size=(config.vocab_size - 1, s.embed_dim))
    embedding = EmbeddingTable(table)

    conv_stack = []
    dim = s.embed_dim
    for maps in s.feature_maps:
        weights = _glorot(rng, maps, s.receptive_field * dim)
        conv_stack.append(
            ConvLayerParams(weights, np.zeros(maps), s.receptive_field, config.activation)
        )
        dim = maps

    image_map = None
    if config.uses_image:
        image_map = DenseParams(
            _glorot(rng, config.joint_dim, config.feature_dim),
            np.zeros(config.joint_dim),
            config.activation,
        )

    fusion = None
    if config.mode == "full":
        fusion = MultimodalConvParams(
            _glorot(rng, config.fusion_maps, 3 * config.joint_dim),
            np.zeros(config.fusion_maps),
            config.activation,
        )

    classifier = DenseParams(
        _glorot(rng, config.num_classes, config.classifier_input_dim),
        np.zeros(config.num_classes),
        "identity",
    )
    return ModelParams(embedding, conv_stack, image_map, fusion, classifier)


def _param_arrays(params: ModelParams, config: ModelConfig) -> list[np.ndarray]:
    """Arrays in layout order (the embedding sans its padding row)."""
    arrays = [params.embedding.vectors[1:]]
    for stage in params.conv_stack:
        arrays.extend([stage.weights, stage.biases])
    if config.uses_image:
        if params.image_map is None:
            raise ConfigError("mode expects image mapping parameters but none are present")
        arrays.extend([params.image_map.weights, params.image_map.bias])
    if config.mode == "full":
        if params.fusion is None:
            raise ConfigError("full mode expects fusion parameters but none are present")
        arrays.extend([params.fusion.weights, params.fusion.biases])
    arrays.extend([params.classifier.weights, params.classifier.bias])
    return arrays


def flatten_params(params: ModelParams, config: ModelConfig) -> np.ndarray:
    layout = param_layout(config)
    arrays = _param_arrays(params, config)
    for (name, shape), arr in zip(layout, arrays):
        if arr.shape != shape:
            raise ShapeError(f"parameter {name} has shape {arr.shape}, expected {shape}")
    return np.concatenate([arr.ravel() for arr in arrays])


def unflatten_params(vector: np.ndarray, config: ModelConfig) -> ModelParams:
    vector = as_tensor(vector)
    layout = param_layout(config)
    total = num_params(config)
    if vector.shape != (total,):
        raise ShapeError(f"parameter vector has shape {vector.shape}, expected ({total},)")
    pieces = {}
    offset = 0
    for name, shape in layout:
        size = int(np.prod(shape))
        pieces[name] = vector[offset:offset + size].reshape(shape).copy()
        offset += size

    s = config.sentence
    table = np.zeros((config.vocab_size, s.embed_dim))
    table[1:] = pieces["embedding"]
    conv_stack = [
        ConvLayerParams(
            pieces[f"conv{i}.weights"],
            pieces[f"conv{i}.biases"],
            s.receptive_field,
            config.activation,
        )
        for i in range(1, NUM_STAGES + 1)
    ]
    image_map = None
    if config.uses_image:
        image_map = DenseParams(
            pieces["image_map.weights"], pieces["image_map.bias"], config.activation
        )
    fusion = None
    if config.mode == "full":
        fusion = MultimodalConvParams(
            pieces["fusion.weights"], pieces["fusion.biases"], config.activation
        )
    classifier = DenseParams(
        pieces["classifier.weights"], pieces["classifier.bias"], "identity"
    )
    return ModelParams(EmbeddingTable(table), conv_stack, image_map, fusion, classifier)


def locate_param(config: ModelConfig, flat_index: int) -> tuple[str, int]:
    """Map a flattened coordinate to (parameter group, offset within group)."""
    offset = 0
    for name, shape in param_layout(config):
        size = int(np.prod(shape))
        if flat_index < offset + size:
            return name, flat_index - offset
        offset += size
    raise IndexError(f"flat index {flat_index} beyond {offset} parameters")


# -- forward / backward ----------------------------------------------------------

@dataclass
class ForwardCache:
    sentence: object
    qt: np.ndarray
    image: object | None
    fusion: object | None
    dropout_mask: np.ndarray | None
    classifier: object
    logits: np.ndarray
    probs: np.ndarray


def forward_sample(
    token_ids,
    feature: np.ndarray | None,
    params: ModelParams,
    config: ModelConfig,
    dropout_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate one sample; pass a dropout mask only during training.

    Returns the answer distribution and the cached activations needed by
    :func:`backward_sample`.
    """
    qt, s_cache = encode_question_forward(
        token_ids, params.embedding, params.conv_stack, config.sentence
    )

    image_cache = None
    fusion_cache = None
    if config.mode == "language":
        hidden, fusion_cache = pool_positions_forward(qt)
    else:
        if feature is None:
            raise ValueError(f"mode {config.mode!r} requires an image feature")
        feature = as_tensor(feature)
        if feature.shape != (config.feature_dim,):
            raise ShapeError(
                f"image feature has shape {feature.shape}, expected ({config.feature_dim},)"
            )
        image_vec, image_cache = map_image_forward(feature, params.image_map)
        if config.mode == "full":
            hidden, fusion_cache = fuse_forward(qt, image_vec, params.fusion)
        else:
            hidden, fusion_cache = fuse_concat_forward(qt, image_vec)

    if dropout_mask is not None:
        if dropout_mask.shape != hidden.shape:
            raise ShapeError(
                f"dropout mask of shape {dropout_mask.shape} does not match "
                f"classifier input of shape {hidden.shape}"
            )
        dropped = hidden * dropout_mask
    else:
        dropped = hidden

    logits, c_cache = dense_forward(dropped, params.classifier)
    probs = softmax(logits)
    cache = ForwardCache(
        sentence=s_cache,
        qt=qt,
        image=image_cache,
        fusion=fusion_cache,
        dropout_mask=dropout_mask,
        classifier=c_cache,
        logits=logits,
        probs=probs,
    )
    return probs, cache


def backward_sample(
    target: int, cache: ForwardCache, params: ModelParams, config: ModelConfig
) -> np.ndarray:
    """Gradient of the per-sample loss in the flattened parameter layout."""
    d_logits = softmax_nll_backward(cache.probs, target)
    d_dropped, grad_cls_w, grad_cls_b = dense_backward(d_logits, cache.classifier)
    d_hidden = dropout_backward(d_dropped, cache.dropout_mask)

    grad_image_pair = None
    grad_fusion_pair = None
    if config.mode == "language":
        d_qt = pool_positions_backward(d_hidden, cache.fusion)
    elif config.mode == "full":
        d_qt, d_image_vec, grad_fw, grad_fb = fuse_backward(d_hidden, cache.fusion)
        grad_fusion_pair = (grad_fw, grad_fb)
        grad_image_pair = map_image_backward(d_image_vec, cache.image)
    else:
        d_qt, d_image_vec = fuse_concat_backward(d_hidden, cache.fusion)
        grad_image_pair = map_image_backward(d_image_vec, cache.image)

    grad_table, stage_grads = encode_question_backward(d_qt, cache.sentence)

    chunks = [grad_table[1:].ravel()]
    for grad_w, grad_b in stage_grads:
        chunks.extend([grad_w.ravel(), grad_b])
    if grad_image_pair is not None:
        chunks.extend([grad_image_pair[0].ravel(), grad_image_pair[1]])
    if grad_fusion_pair is not None:
        chunks.extend([grad_fusion_pair[0].ravel(), grad_fusion_pair[1]])
    chunks.extend([grad_cls_w.ravel(), grad_cls_b])
    return np.concatenate(chunks)


def loss_for_sample(
    token_ids,
    feature: np.ndarray | None,
    target: int,
    params: ModelParams,
    config: ModelConfig,
    dropout_mask: np.ndarray | None = None,
) -> float:
    probs, cache = forward_sample(token_ids, feature, params, config, dropout_mask)
    _, loss = softmax_nll(cache.logits, target)
    return loss


def predict_sample(
    token_ids, feature: np.ndarray | None, params: ModelParams, config: ModelConfig
) -> int:
    """Most probable answer class; ties break toward the lowest index."""
    probs, _ = forward_sample(token_ids, feature, params, config)
    return int(np.argmax(probs))


def tree_sum(items: Sequence):
    """Fixed-topology pairwise reduction; result is independent of how the
    per-item work was scheduled."""
    items = list(items)
    if not items:
        raise ValueError("tree_sum of empty sequence")
    while len(items) > 1:
        paired = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            paired.append(items[-1])
        items = paired
    return items[0]


def loss_and_gradients(
    batch: Sequence[tuple],
    params: ModelParams,
    config: ModelConfig,
    rng: np.random.Generator | None = None,
    threads: int = 1,
) -> tuple[float, np.ndarray]:
    """Mean NLL and mean flattened gradient over a batch.

    Batch items are ``(token_ids, feature_or_None, target_class)``.  Dropout
    masks are drawn from ``rng`` in sample order before any evaluation, so
    the result does not depend on worker scheduling.
    """
    if len(batch) == 0:
        raise ValueError("loss_and_gradients: empty batch")
    for token_ids, _, target in batch:
        if not 0 <= target < config.num_classes:
            raise ValueError(
                f"target class {target} outside {config.num_classes} classes"
            )

    masks: list[np.ndarray | None]
    if config.dropout > 0.0:
        if rng is None:
            raise ValueError("dropout is active but no rng was provided")
        masks = [
            make_dropout_mask((config.classifier_input_dim,), config.dropout, rng)
            for _ in batch
        ]
    else:
        masks = [None] * len(batch)

    def one(index: int) -> tuple[float, np.ndarray]:
        token_ids, feature, target = batch[index]
        probs, cache = forward_sample(token_ids, feature, params, config, masks[index])
        _, loss = softmax_nll(cache.logits, target)
        grad = backward_sample(target, cache, params, config)
        return loss, grad

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(batch))))
    else:
        results = [one(i) for i in range(len(batch))]

    n = len(batch)
    mean_loss = tree_sum([loss for loss, _ in results]) / n
    mean_grad = tree_sum([grad for _, grad in results]) / n
    return float(mean_loss), mean_grad


# -- checkpoint io ----------------------------------------------------------------

def config_to_dict(config: ModelConfig) -> dict:
    s = config.sentence
    return {
        "vocab_size": config.vocab_size,
        "num_classes": config.num_classes,
        "sentence": {
            "max_len": s.max_len,
            "embed_dim": s.embed_dim,
            "feature_maps": list(s.feature_maps),
            "receptive_field": s.receptive_field,
            "activation": s.activation,
        },
        "joint_dim": config.joint_dim,
        "fusion_maps": config.fusion_maps,
        "feature_dim": config.feature_dim,
        "dropout": config.dropout,
        "mode": config.mode,
        "activation": config.activation,
        "seed": config.seed,
    }


def config_from_dict(payload: dict) -> ModelConfig:
    try:
        s = payload["sentence"]
        sentence = SentenceEncoderConfig(
            max_len=int(s["max_len"]),
            embed_dim=int(s["embed_dim"]),
            feature_maps=tuple(int(m) for m in s["feature_maps"]),
            receptive_field=int(s["receptive_field"]),
            activation=str(s["activation"]),
        )
        return ModelConfig(
            vocab_size=int(payload["vocab_size"]),
            num_classes=int(payload["num_classes"]),
            sentence=sentence,
            joint_dim=int(payload["joint_dim"]),
            fusion_maps=int(payload["fusion_maps"]),
            feature_dim=int(payload["feature_dim"]),
            dropout=float(payload["dropout"]),
            mode=str(payload["mode"]),
            activation=str(payload["activation"]),
            seed=int(payload["seed"]),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"checkpoint config is malformed: {exc}") from None


def save_checkpoint(
    path,
    params: ModelParams,
    config: ModelConfig,
    question_vocab: list[str],
    answer_vocab: list[str],
) -> None:
    """Binary checkpoint: version, JSON header, then tensor blocks in layout order.

    The header carries the model configuration plus both vocabularies so a
    checkpoint is self-contained for evaluation and prediction.
    """
    header = {
        "config": config_to_dict(config),
        "question_vocab": list(question_vocab),
        "answer_vocab": list(answer_vocab),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    write_tensor(buf, params.embedding.vectors)
    for stage in params.conv_stack:
        write_tensor(buf, stage.weights)
        write_tensor(buf, stage.biases)
    if config.uses_image:
        write_tensor(buf, params.image_map.weights)
        write_tensor(buf, params.image_map.bias)
    if config.mode == "full":
        write_tensor(buf, params.fusion.weights)
        write_tensor(buf, params.fusion.biases)
    write_tensor(buf, params.classifier.weights)
    write_tensor(buf, params.classifier.bias)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(
    path, expected_config: ModelConfig | None = None
) -> tuple[ModelParams, ModelConfig, list[str], list[str]]:
    """Load a checkpoint; reject it when it does not match ``expected_config``."""
    with open(path, "rb") as fh:
        version = struct.unpack("<I", fh.read(4))[0]
        if version != CHECKPOINT_VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        blob_len = struct.unpack("<I", fh.read(4))[0]
        try:
            header = json.loads(fh.read(blob_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: bad checkpoint header ({exc})") from None
        config = config_from_dict(header["config"])
        if expected_config is not None and config != expected_config:
            raise ConfigError(
                f"{path}: checkpoint config does not match the requested config"
            )
        question_vocab = [str(w) for w in header["question_vocab"]]
        answer_vocab = [str(a) for a in header["answer_vocab"]]

        def tensor(shape):
            arr = read_tensor(fh)
            if arr.shape != shape:
                raise ParseError(
                    f"{path}: tensor of shape {arr.shape} where {shape} was expected"
                )
            return arr

        s = config.sentence
        table = tensor((config.vocab_size, s.embed_dim))
        conv_stack = []
        dim = s.embed_dim
        for maps in s.feature_maps:
            weights = tensor((maps, s.receptive_field * dim))
            biases = tensor((maps,))
            conv_stack.append(
                ConvLayerParams(weights, biases, s.receptive_field, config.activation)
            )
            dim = maps
        image_map = None
        if config.uses_image:
            image_map = DenseParams(
                tensor((config.joint_dim, config.feature_dim)),
                tensor((config.joint_dim,)),
                config.activation,
            )
        fusion = None
        if config.mode == "full":
            fusion = MultimodalConvParams(
                tensor((config.fusion_maps, 3 * config.joint_dim)),
                tensor((config.fusion_maps,)),
                config.activation,
            )
        classifier = DenseParams(
            tensor((config.num_classes, config.classifier_input_dim)),
            tensor((config.num_classes,)),
            "identity",
        )
    params = ModelParams(EmbeddingTable(table), conv_stack, image_map, fusion, classifier)
    return params, config, question_vocab, answer_vocab
