"""Layer primitives and their gradient transforms.

Each operation is a pure function pair: ``*_forward`` returns the output plus
an opaque cache, and the matching ``*_backward`` turns an upstream gradient
into gradients for the inputs and parameters.  The network topology is fixed,
so composition happens explicitly in the encoder and model modules rather
than through a dynamic autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SequenceTooShortError, ShapeError, VocabularyError
from .numeric import as_tensor


# -- activations ------------------------------------------------------------

def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _relu_grad(out: np.ndarray) -> np.ndarray:
    # derivative w.r.t. the preactivation, expressed through the output
    return (out > 0.0).astype(np.float64)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = as_tensor(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_grad(out: np.ndarray) -> np.ndarray:
    return out * (1.0 - out)


def identity(z: np.ndarray) -> np.ndarray:
    return z


def _identity_grad(out: np.ndarray) -> np.ndarray:
    return np.ones_like(out)


ACTIVATIONS = {
    "relu": (relu, _relu_grad),
    "sigmoid": (sigmoid, _sigmoid_grad),
    "identity": (identity, _identity_grad),
}


def activation_pair(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None


# -- embedding lookup --------------------------------------------------------

@dataclass
class EmbeddingTable:
    """Trainable word embeddings, one row per vocabulary entry.

    Row 0 belongs to the padding token; it is held at zero and excluded from
    parameter updates by the model module.
    """

    vectors: np.ndarray  # (vocab_size, embed_dim)

    def __post_init__(self):
        self.vectors = as_tensor(self.vectors)
        if self.vectors.ndim != 2:
            raise ShapeError(f"embedding table must be a matrix, got shape {self.vectors.shape}")

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.vectors.shape[1]


def embed_forward(token_ids, table: EmbeddingTable):
    """Row lookup per token: (L,) ids -> (L, embed_dim) vectors."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError(f"embed_forward: token ids must be a non-empty sequence, got shape {ids.shape}")
    for pos, tid in enumerate(ids):
        if not 0 <= tid < table.vocab_size:
            raise VocabularyError(
                f"token id {int(tid)} at position {pos} outside vocabulary of size {table.vocab_size}"
            )
    out = table.vectors[ids]
    cache = (ids, table.vocab_size, table.embed_dim)
    return out, cache


def embed_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    """Scatter upstream gradients into table rows (repeat ids accumulate)."""
    ids, vocab_size, embed_dim = cache
    grad_table = np.zeros((vocab_size, embed_dim))
    np.add.at(grad_table, ids, as_tensor(grad_out))
    return grad_table


# -- 1-D convolution ----------------------------------------------------------

@dataclass
class ConvLayerParams:
    """Shared-weight convolution unit over a sequence of feature vectors.

    ``weights`` has one row per feature map; each row spans the concatenation
    of ``receptive_field`` consecutive input positions.
    """

    weights: np.ndarray  # (feature_maps, receptive_field * d_in)
    biases: np.ndarray   # (feature_maps,)
    receptive_field: int = 3
    activation: str = "relu"

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.biases = as_tensor(self.biases)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise ShapeError("conv params: weights must be a matrix and biases a vector")
        if self.biases.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"conv params: {self.weights.shape[0]} feature maps but "
                f"{self.biases.shape[0]} biases"
            )
        if self.receptive_field < 1 or self.weights.shape[1] % self.receptive_field:
            raise ShapeError(
                f"conv params: weight columns {self.weights.shape[1]} not divisible "
                f"by receptive field {self.receptive_field}"
            )
        activation_pair(self.activation)

    @property
    def feature_maps(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1] // self.receptive_field


def _windows(seq: np.ndarray, width: int) -> np.ndarray:
    # (L, d) -> (L - width + 1, width * d), one flattened window per position
    length, dim = seq.shape
    positions = length - width + 1
    view = np.lib.stride_tricks.sliding_window_view(seq, (width, dim))
    return view.reshape(positions, width * dim)


def conv1d_forward(seq: np.ndarray, params: ConvLayerParams):
    """Valid (unpadded) convolution: (L, d_in) -> (L - rf + 1, feature_maps)."""
    seq = as_tensor(seq)
    if seq.ndim != 2:
        raise ShapeError(f"conv1d: input must be (length, dim), got shape {seq.shape}")
    if seq.shape[1] != params.input_dim:
        raise ShapeError(
            f"conv1d: input dim {seq.shape[1]} does not match weights "
            f"expecting {params.input_dim}"
        )
    if seq.shape[0] < params.receptive_field:
        raise SequenceTooShortError(
            f"conv1d: sequence of length {seq.shape[0]} shorter than "
            f"receptive field {params.receptive_field}"
        )
    act, _ = activation_pair(params.activation)
    win = _windows(seq, params.receptive_field)
    out = act(win @ params.weights.T + params.biases)
    cache = (win, out, seq.shape, params)
    return out, cache


def conv1d_backward(grad_out: np.ndarray, cache):
    """Returns (grad_seq, grad_weights, grad_biases)."""
    win, out, seq_shape, params = cache
    _, act_grad = activation_pair(params.activation)
    d_pre = as_tensor(grad_out) * act_grad(out)
    grad_w = d_pre.T @ win
    grad_b = d_pre.sum(axis=0)
    grad_win = d_pre @ params.weights
    positions = win.shape[0]
    grad_seq = np.zeros(seq_shape)
    gw = grad_win.reshape(positions, params.receptive_field, seq_shape[1])
    for offset in range(params.receptive_field):
        grad_seq[offset:offset + positions] += gw[:, offset]
    return grad_seq, grad_w, grad_b


# -- width-2 max-pooling -------------------------------------------------------

def maxpool_forward(seq: np.ndarray):
    """Stride-2 max over consecutive pairs: (L, F) -> (ceil(L/2), F).

    An odd final element is copied through.  Ties route to the earlier
    position so the backward pass is deterministic.
    """
    seq = as_tensor(seq)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ValueError(f"maxpool: input must be a non-empty (length, maps) array, got shape {seq.shape}")
    length, maps = seq.shape
    pairs = length // 2
    body = seq[: 2 * pairs].reshape(pairs, 2, maps)
    winner = body.argmax(axis=1)  # first max wins on ties
    pooled = np.take_along_axis(body, winner[:, None, :], axis=1)[:, 0, :]
    if length % 2:
        pooled = np.concatenate([pooled, seq[-1:]], axis=0)
    cache = (length, maps, winner)
    return pooled, cache


def maxpool_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    length, maps, winner = cache
    grad_out = as_tensor(grad_out)
    pairs = length // 2
    grad_seq = np.zeros((length, maps))
    body = grad_seq[: 2 * pairs].reshape(pairs, 2, maps)
    np.put_along_axis(body, winner[:, None, :], grad_out[:pairs, None, :], axis=1)
    if length % 2:
        grad_seq[-1] = grad_out[-1]
    return grad_seq


# -- fully connected mapping ---------------------------------------------------

@dataclass
class DenseParams:
    weights: np.ndarray  # (d_out, d_in)
    bias: np.ndarray     # (d_out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.bias = as_tensor(self.bias)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("dense params: weights must be a matrix and bias a vector")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"dense params: bias of length {self.bias.shape[0]} does not match "
                f"{self.weights.shape[0]} output rows"
            )
        activation_pair(self.activation)


def dense_forward(x: np.ndarray, params: DenseParams):
    x = as_tensor(x)
    if x.ndim != 1 or x.shape[0] != params.weights.shape[1]:
        raise ShapeError(
            f"dense: input of shape {x.shape} does not match weights of shape "
            f"{params.weights.shape}"
        )
    act, _ = activation_pair(params.activation)
    out = act(params.weights @ x + params.bias)
    cache = (x, out, params)
    return out, cache


def dense_backward(grad_out: np.ndarray, cache):
    """Returns (grad_x, grad_weights, grad_bias)."""
    x, out, params = cache
    _, act_grad = activation_pair(params.activation)
    d_pre = as_tensor(grad_out) * act_grad(out)
    return params.weights.T @ d_pre, np.outer(d_pre, x), d_pre


# -- inverted dropout ----------------------------------------------------------

def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability p, survivors scaled 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = rng.random(shape) >= p
    return keep.astype(np.float64) / (1.0 - p)


def dropout_forward(x: np.ndarray, p: float, train: bool, rng: np.random.Generator | None = None):
    """Evaluation mode is the identity; training applies an inverted mask."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout_forward: training mode with p > 0 needs an rng")
    mask = dropout_mask(x.shape, p, rng)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    grad_out = as_tensor(grad_out)
    return grad_out if mask is None else grad_out * mask


# -- softmax / negative log likelihood ------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax via max subtraction."""
    z = as_tensor(logits) - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def softmax_nll(logits: np.ndarray, target: int):
    """Returns (probs, loss) where loss is the negative log likelihood of target."""
    logits = as_tensor(logits)
    k = logits.shape[0]
    if logits.ndim != 1 or k < 2:
        raise ValueError(f"softmax_nll: need at least 2 logits, got shape {logits.shape}")
    if not 0 <= target < k:
        raise ValueError(f"softmax_nll: target {target} outside {k} classes")
    z = logits - logits.max()
    e = np.exp(z)
    lse = np.log(e.sum())
    probs = e / e.sum()
    loss = float(lse - z[target])
    return probs, loss


def softmax_nll_backward(probs: np.ndarray, target: int) -> np.ndarray:
    """Gradient of the loss w.r.t. the logits: probs - one_hot(target)."""
    grad = probs.copy()
    grad[target] -= 1.0
    return grad
